//! Energy-negotiated bundle transfer between a Field Aggregation Node (FAN)
//! and a Data Mule (DM).
//!
//! One *round* is: both ends estimate their spendable energy, negotiate how
//! many bundles the poorer side can afford and over which local link, the
//! FAN sends that many bundles, the DM relays each one over GPRS and ACKs it
//! after server delivery, and the FAN deletes what was acknowledged. Rounds
//! repeat while energy, queue and contact window allow. Bundles still
//! unacknowledged when the contact closes go back to the head of the queue,
//! which gives at-least-once delivery.
//!
//! The node types are sans-IO state machines: they never look at a clock or
//! a radio. [`contact_round`] and [`run_contact`] drive them sequentially
//! for protocol-level use; the simulator in [`crate::sim`] drives the same
//! machines from its event queue.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{Bundle, BundleId};
use crate::energy::{EnergyError, EnergyStore, ENERGY_EPSILON_J};
use crate::links::{Cost, GprsModel, LinkModels, PhaseCost, PhaseCostTable, Technology};

/// Fixed latency between energy estimation and the negotiated outcome.
pub const NEGOTIATION_LATENCY_S: f64 = 6.0;
pub const DEFAULT_ELIGIBILITY_THRESHOLD: f64 = 0.2;
/// SOM shutdown (60 J) plus modem startup (25 J).
pub const DEFAULT_DM_RESERVE_J: f64 = 85.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("outcome commits {n} bundles but only {queued} are queued")]
    OutcomeExceedsQueue { n: usize, queued: usize },
    #[error(
        "outcome does not match the head of the queue (expected bundle {expected}, found {found})"
    )]
    StaleOutcome { expected: BundleId, found: BundleId },
    #[error("bundle {0} is already known to this node")]
    DuplicateBundle(BundleId),
    #[error("invalid negotiation inputs: {0}")]
    InvalidInputs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "FAN")]
    Fan,
    #[serde(rename = "DM")]
    Dm,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Fan => "FAN",
            NodeKind::Dm => "DM",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub node: NodeKind,
    pub available: f64,
}

/// Spendable energy: usable energy minus the reserve, never negative.
pub fn estimate_energy(node: NodeKind, store: &EnergyStore, reserve: f64) -> EnergyEstimate {
    EnergyEstimate {
        node,
        available: (store.usable_energy() - reserve.max(0.0)).max(0.0),
    }
}

/// Per-link quality on `[0, 1]`, derived from signal strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelQuality {
    pub wifi: f64,
    pub bluetooth: f64,
}

impl Default for ChannelQuality {
    fn default() -> Self {
        Self {
            wifi: 1.0,
            bluetooth: 1.0,
        }
    }
}

impl ChannelQuality {
    pub fn get(&self, tech: Technology) -> f64 {
        match tech {
            Technology::WiFi => self.wifi,
            Technology::Bluetooth => self.bluetooth,
            Technology::Gprs => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (k, v) in [("wifi", self.wifi), ("bluetooth", self.bluetooth)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("channel quality {k}={v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Optional advertised data rates (bytes/s). Carried in the negotiation for
/// completeness; the latency curves already determine transfer time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRateHint {
    pub wifi: Option<f64>,
    pub bluetooth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationInputs {
    pub e_dm: f64,
    pub e_fan: f64,
    pub data_rate_hint: DataRateHint,
    /// Carried but not used in the decision.
    pub transmit_power: f64,
    pub channel_quality: ChannelQuality,
}

impl NegotiationInputs {
    pub fn new(e_dm: f64, e_fan: f64, channel_quality: ChannelQuality) -> Self {
        Self {
            e_dm,
            e_fan,
            data_rate_hint: DataRateHint::default(),
            transmit_power: 1.0,
            channel_quality,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.e_dm >= 0.0) || !(self.e_fan >= 0.0) {
            return Err(ProtocolError::InvalidInputs(format!(
                "energies must be >= 0 (e_dm={}, e_fan={})",
                self.e_dm, self.e_fan
            )));
        }
        self.channel_quality
            .validate()
            .map_err(ProtocolError::InvalidInputs)
    }
}

/// Per-bundle cost oracle used by negotiation.
pub trait BundleCosts {
    /// Seconds to move `bundle` over `tech` at the given channel quality.
    fn transfer_time(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64;
    fn fan_cost(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64;
    fn dm_cost(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64;
}

fn scaled_time(links: &LinkModels, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
    match links.transfer_time(tech, bundle.size) {
        Ok(t) if quality > 0.0 => t / quality,
        _ => f64::INFINITY,
    }
}

fn link_energy(links: &LinkModels, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
    match links.link(tech) {
        Ok(l) => l.active_watts * scaled_time(links, tech, bundle, quality),
        Err(_) => f64::INFINITY,
    }
}

/// Both ends pay the link energy; the mule also pays the GPRS relay.
#[derive(Debug, Clone, Default)]
pub struct LinkCosts {
    pub links: LinkModels,
    pub gprs: GprsModel,
}

impl BundleCosts for LinkCosts {
    fn transfer_time(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
        scaled_time(&self.links, tech, bundle, quality)
    }

    fn fan_cost(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
        link_energy(&self.links, tech, bundle, quality)
    }

    fn dm_cost(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
        link_energy(&self.links, tech, bundle, quality)
            + self.gprs.relay_cost(bundle.packets).joules
    }
}

/// The mule pays its whole duty cycle per bundle (the phase table already
/// contains the DTN send/receive phase); the FAN pays the link energy.
#[derive(Debug, Clone)]
pub struct ChainCosts {
    pub links: LinkModels,
    pub gprs: GprsModel,
    pub duty: DutyCycle,
}

impl Default for ChainCosts {
    fn default() -> Self {
        Self {
            links: LinkModels::default(),
            gprs: GprsModel::default(),
            duty: DutyCycle::from_table(&PhaseCostTable::default()),
        }
    }
}

impl BundleCosts for ChainCosts {
    fn transfer_time(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
        scaled_time(&self.links, tech, bundle, quality)
    }

    fn fan_cost(&self, tech: Technology, bundle: &Bundle, quality: f64) -> f64 {
        link_energy(&self.links, tech, bundle, quality)
    }

    fn dm_cost(&self, _tech: Technology, bundle: &Bundle, _quality: f64) -> f64 {
        self.duty.cost(bundle, &self.gprs).joules
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BundleCost {
    pub id: BundleId,
    pub fan_j: f64,
    pub dm_j: f64,
    pub transfer_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationOutcome {
    pub n: usize,
    /// `None` when nothing is feasible.
    pub tech: Option<Technology>,
    /// Costs of the committed queue prefix, in queue order.
    pub costs: Vec<BundleCost>,
}

impl NegotiationOutcome {
    pub fn none() -> Self {
        Self {
            n: 0,
            tech: None,
            costs: Vec::new(),
        }
    }

    pub fn per_bundle_dm_cost(&self) -> f64 {
        self.costs.first().map_or(0.0, |c| c.dm_j)
    }

    pub fn per_bundle_fan_cost(&self) -> f64 {
        self.costs.first().map_or(0.0, |c| c.fan_j)
    }

    pub fn total_dm(&self) -> f64 {
        self.costs.iter().map(|c| c.dm_j).sum()
    }

    pub fn total_fan(&self) -> f64 {
        self.costs.iter().map(|c| c.fan_j).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.costs.iter().map(|c| c.transfer_s).sum()
    }
}

struct Candidate {
    tech: Technology,
    costs: Vec<BundleCost>,
    /// Scale-free capacity: bundles affordable at the queue's mean costs.
    score: f64,
    time: f64,
}

fn ratio(budget: f64, cost: f64) -> f64 {
    if cost <= 0.0 {
        f64::INFINITY
    } else {
        budget / cost
    }
}

fn candidate(
    inputs: &NegotiationInputs,
    pending: &[Bundle],
    costs: &dyn BundleCosts,
    tech: Technology,
) -> Candidate {
    let q = inputs.channel_quality.get(tech);
    let (mut spent_dm, mut spent_fan) = (0.0, 0.0);
    let mut committed = Vec::new();
    let (mut sum_dm, mut sum_fan) = (0.0, 0.0);
    let mut feasible = true;
    for b in pending {
        let c = BundleCost {
            id: b.id,
            fan_j: costs.fan_cost(tech, b, q),
            dm_j: costs.dm_cost(tech, b, q),
            transfer_s: costs.transfer_time(tech, b, q),
        };
        sum_dm += c.dm_j;
        sum_fan += c.fan_j;
        if feasible
            && c.fan_j.is_finite()
            && c.dm_j.is_finite()
            && spent_dm + c.dm_j <= inputs.e_dm
            && spent_fan + c.fan_j <= inputs.e_fan
        {
            spent_dm += c.dm_j;
            spent_fan += c.fan_j;
            committed.push(c);
        } else {
            feasible = false;
        }
    }
    let score = if pending.is_empty() {
        0.0
    } else {
        let k = pending.len() as f64;
        ratio(inputs.e_dm, sum_dm / k).min(ratio(inputs.e_fan, sum_fan / k))
    };
    let time = committed.iter().map(|c| c.transfer_s).sum();
    Candidate {
        tech,
        costs: committed,
        score,
        time,
    }
}

/// Decide how many queued bundles to move this round and over which link.
///
/// For every eligible link the committed count is the longest queue prefix
/// whose cumulative costs fit both budgets. The link with the largest count
/// wins; ties go to the larger scale-free capacity, then the shorter total
/// transfer time, then Wi-Fi before Bluetooth.
pub fn negotiate(
    inputs: &NegotiationInputs,
    pending: &[Bundle],
    costs: &dyn BundleCosts,
    eligibility_threshold: f64,
) -> NegotiationOutcome {
    let mut best: Option<Candidate> = None;
    for tech in Technology::LOCAL {
        let q = inputs.channel_quality.get(tech);
        if !(q > 0.0 && q >= eligibility_threshold) {
            continue;
        }
        let c = candidate(inputs, pending, costs, tech);
        if c.costs.is_empty() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let n = (c.costs.len(), b.costs.len());
                n.0 > n.1
                    || (n.0 == n.1
                        && (c.score > b.score || (c.score == b.score && c.time < b.time)))
            }
        };
        if better {
            best = Some(c);
        }
    }
    match best {
        Some(c) => NegotiationOutcome {
            n: c.costs.len(),
            tech: Some(c.tech),
            costs: c.costs,
        },
        None => NegotiationOutcome::none(),
    }
}

/// Messages exchanged between the nodes. Field order is part of the trace
/// format.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum Message {
    #[serde(rename = "NEG_REQ")]
    NegReq {
        e_dm: f64,
        channel_qualities: ChannelQuality,
    },
    #[serde(rename = "NEG_RESP")]
    NegResp { n: usize, tech: Option<Technology> },
    #[serde(rename = "BUNDLE")]
    Bundle { id: BundleId, size: u64 },
    #[serde(rename = "ACK")]
    Ack { id: BundleId },
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::NegReq {
                e_dm,
                channel_qualities,
            } => write!(
                f,
                "NEG_REQ{{e_dm={e_dm},channel_qualities={{wifi={},bluetooth={}}}}}",
                channel_qualities.wifi, channel_qualities.bluetooth
            ),
            Message::NegResp { n, tech } => {
                write!(
                    f,
                    "NEG_RESP{{n={n},tech={}}}",
                    tech.map_or("", |t| t.as_str())
                )
            }
            Message::Bundle { id, size } => write!(f, "BUNDLE{{id={id},size={size}}}"),
            Message::Ack { id } => write!(f, "ACK{{id={id}}}"),
        }
    }
}

/// A bundle the FAN has put on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct SendAction {
    pub bundle: Bundle,
    pub energy_j: f64,
    pub transfer_s: f64,
    /// FAN voltage right after paying for this send.
    pub voltage: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckDisposition {
    Deleted,
    Duplicate,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct FanNode {
    queue: VecDeque<Bundle>,
    awaiting_ack: Vec<Bundle>,
    deleted: BTreeSet<BundleId>,
    store: EnergyStore,
    reserve: f64,
}

impl FanNode {
    pub fn new(store: EnergyStore, reserve: f64) -> Self {
        Self {
            queue: VecDeque::new(),
            awaiting_ack: Vec::new(),
            deleted: BTreeSet::new(),
            store,
            reserve,
        }
    }

    pub fn offer(&mut self, bundle: Bundle) -> Result<(), ProtocolError> {
        let id = bundle.id;
        if self.deleted.contains(&id)
            || self.queue.iter().any(|b| b.id == id)
            || self.awaiting_ack.iter().any(|b| b.id == id)
        {
            return Err(ProtocolError::DuplicateBundle(id));
        }
        self.queue.push_back(bundle);
        Ok(())
    }

    pub fn queue(&self) -> &VecDeque<Bundle> {
        &self.queue
    }

    pub fn awaiting_ack(&self) -> impl Iterator<Item = BundleId> + '_ {
        self.awaiting_ack.iter().map(|b| b.id)
    }

    pub fn deleted(&self) -> &BTreeSet<BundleId> {
        &self.deleted
    }

    pub fn store(&self) -> &EnergyStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut EnergyStore {
        &mut self.store
    }

    pub fn reserve(&self) -> f64 {
        self.reserve
    }

    pub fn estimate(&self) -> EnergyEstimate {
        estimate_energy(NodeKind::Fan, &self.store, self.reserve)
    }

    /// Queue bundles eligible at `now` (created at or before it), in order.
    pub fn pending_at(&self, now: f64) -> Vec<Bundle> {
        self.queue
            .iter()
            .take_while(|b| b.created_at <= now)
            .cloned()
            .collect()
    }

    /// Send the first `outcome.n` queued bundles and await their ACKs.
    pub fn begin_contact(
        &mut self,
        outcome: &NegotiationOutcome,
    ) -> Result<Vec<SendAction>, ProtocolError> {
        if outcome.n > self.queue.len() {
            return Err(ProtocolError::OutcomeExceedsQueue {
                n: outcome.n,
                queued: self.queue.len(),
            });
        }
        for (b, c) in self.queue.iter().zip(&outcome.costs) {
            if b.id != c.id {
                return Err(ProtocolError::StaleOutcome {
                    expected: c.id,
                    found: b.id,
                });
            }
        }
        let total = outcome.total_fan();
        let available = self.store.usable_energy();
        if total > available + ENERGY_EPSILON_J {
            return Err(EnergyError::InsufficientEnergy {
                requested: total,
                available,
            }
            .into());
        }
        let mut out = Vec::with_capacity(outcome.n);
        for c in &outcome.costs {
            let bundle = self.queue.pop_front().expect("checked above");
            self.store.discharge("bundle send", c.fan_j)?;
            out.push(SendAction {
                bundle: bundle.clone(),
                energy_j: c.fan_j,
                transfer_s: c.transfer_s,
                voltage: self.store.voltage(),
            });
            self.awaiting_ack.push(bundle);
        }
        Ok(out)
    }

    /// Delete an acknowledged bundle; repeated or unknown ACKs are ignored.
    pub fn on_ack(&mut self, id: BundleId) -> AckDisposition {
        if let Some(pos) = self.awaiting_ack.iter().position(|b| b.id == id) {
            self.awaiting_ack.remove(pos);
            self.deleted.insert(id);
            AckDisposition::Deleted
        } else if self.deleted.contains(&id) {
            AckDisposition::Duplicate
        } else {
            AckDisposition::Unknown
        }
    }

    /// Put unacknowledged bundles back at the head of the queue, oldest first.
    pub fn requeue_unacked(&mut self) -> Vec<BundleId> {
        let ids = self.awaiting_ack.iter().map(|b| b.id).collect();
        for b in self.awaiting_ack.drain(..).rev() {
            self.queue.push_front(b);
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
enum DutyPhase {
    Fixed(PhaseCost),
    GprsFlush,
}

/// Ordered work the mule performs for each received bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycle(Vec<DutyPhase>);

impl DutyCycle {
    /// GPRS relay only.
    pub fn relay_only() -> Self {
        Self(vec![DutyPhase::GprsFlush])
    }

    /// Phases from a cost table. The relay is appended if the table has no
    /// GPRS row, since a received bundle must always be uploaded.
    pub fn from_table(table: &PhaseCostTable) -> Self {
        let mut phases: Vec<DutyPhase> = table
            .rows()
            .iter()
            .map(|p| {
                if p.gprs_flush {
                    DutyPhase::GprsFlush
                } else {
                    DutyPhase::Fixed(p.clone())
                }
            })
            .collect();
        if !phases.contains(&DutyPhase::GprsFlush) {
            phases.push(DutyPhase::GprsFlush);
        }
        Self(phases)
    }

    /// Time and energy of one cycle carrying `bundle`.
    pub fn cost(&self, bundle: &Bundle, gprs: &GprsModel) -> Cost {
        self.0
            .iter()
            .map(|p| match p {
                DutyPhase::Fixed(p) => Cost {
                    seconds: p.seconds,
                    joules: p.joules,
                },
                DutyPhase::GprsFlush => gprs.relay_cost(bundle.packets),
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DmStep {
    Phase { label: String, cost: Cost },
    Flush { packets: u64, cost: Cost },
    Ack { id: BundleId },
}

impl DmStep {
    pub fn cost(&self) -> Cost {
        match self {
            DmStep::Phase { cost, .. } | DmStep::Flush { cost, .. } => *cost,
            DmStep::Ack { .. } => Cost::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DmNode {
    store: EnergyStore,
    reserve: f64,
    duty: DutyCycle,
    gprs: GprsModel,
    inbox: Vec<BundleId>,
    gprs_pending: u64,
    /// Energy promised to planned but not yet performed steps.
    committed: f64,
}

impl DmNode {
    pub fn new(store: EnergyStore, reserve: f64, duty: DutyCycle, gprs: GprsModel) -> Self {
        Self {
            store,
            reserve,
            duty,
            gprs,
            inbox: Vec::new(),
            gprs_pending: 0,
            committed: 0.0,
        }
    }

    pub fn store(&self) -> &EnergyStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut EnergyStore {
        &mut self.store
    }

    pub fn reserve(&self) -> f64 {
        self.reserve
    }

    pub fn inbox(&self) -> &[BundleId] {
        &self.inbox
    }

    pub fn gprs_pending(&self) -> u64 {
        self.gprs_pending
    }

    pub fn committed(&self) -> f64 {
        self.committed
    }

    /// Spendable energy net of reserve and already-planned work.
    pub fn estimate(&self) -> EnergyEstimate {
        EnergyEstimate {
            node: NodeKind::Dm,
            available: (self.store.usable_energy() - self.committed - self.reserve).max(0.0),
        }
    }

    /// Plan the duty cycle for a received bundle: its phases, one GPRS flush
    /// per buffer (the last one possibly partial), then the ACK. The plan's
    /// energy is committed immediately and paid step by step via
    /// [`DmNode::perform`].
    pub fn receive_bundle(&mut self, bundle: &Bundle) -> Result<Vec<DmStep>, ProtocolError> {
        let mut steps = Vec::new();
        for phase in &self.duty.0 {
            match phase {
                DutyPhase::Fixed(p) => steps.push(DmStep::Phase {
                    label: p.label.clone(),
                    cost: Cost {
                        seconds: p.seconds,
                        joules: p.joules,
                    },
                }),
                DutyPhase::GprsFlush => {
                    for k in self.gprs.flush_sizes(bundle.packets) {
                        steps.push(DmStep::Flush {
                            packets: k,
                            cost: self.gprs.buffer_cost(k).expect("flush sizes are >= 1"),
                        });
                    }
                }
            }
        }
        let total: f64 = steps.iter().map(|s| s.cost().joules).sum();
        let available = self.store.usable_energy() - self.committed;
        if total > available + ENERGY_EPSILON_J {
            return Err(EnergyError::InsufficientEnergy {
                requested: total,
                available: available.max(0.0),
            }
            .into());
        }
        steps.push(DmStep::Ack { id: bundle.id });
        self.inbox.push(bundle.id);
        self.gprs_pending += bundle.packets;
        self.committed += total;
        Ok(steps)
    }

    /// Pay for one planned step. Returns the energy drawn.
    pub fn perform(&mut self, step: &DmStep) -> Result<f64, ProtocolError> {
        let (label, joules) = match step {
            DmStep::Phase { label, cost } => (label.as_str(), cost.joules),
            DmStep::Flush { packets, cost } => {
                self.gprs_pending = self.gprs_pending.saturating_sub(*packets);
                ("GPRS flush", cost.joules)
            }
            DmStep::Ack { .. } => return Ok(0.0),
        };
        self.store.discharge(label, joules)?;
        self.committed = (self.committed - joules).max(0.0);
        Ok(joules)
    }

    pub fn end_contact(&mut self) {
        self.inbox.clear();
    }
}

/// Everything a round needs besides the two nodes.
pub struct RoundContext<'a> {
    pub costs: &'a dyn BundleCosts,
    pub channel_quality: ChannelQuality,
    pub eligibility_threshold: f64,
    pub negotiation_latency_s: f64,
    pub transmit_power: f64,
    pub data_rate_hint: DataRateHint,
}

impl<'a> RoundContext<'a> {
    pub fn new(costs: &'a dyn BundleCosts) -> Self {
        Self {
            costs,
            channel_quality: ChannelQuality::default(),
            eligibility_threshold: DEFAULT_ELIGIBILITY_THRESHOLD,
            negotiation_latency_s: NEGOTIATION_LATENCY_S,
            transmit_power: 1.0,
            data_rate_hint: DataRateHint::default(),
        }
    }

    pub fn inputs(&self, fan: &FanNode, dm: &DmNode) -> NegotiationInputs {
        NegotiationInputs {
            e_dm: dm.estimate().available,
            e_fan: fan.estimate().available,
            data_rate_hint: self.data_rate_hint,
            transmit_power: self.transmit_power,
            channel_quality: self.channel_quality,
        }
    }

    pub fn negotiate(&self, fan: &FanNode, dm: &DmNode, now: f64) -> NegotiationOutcome {
        let pending = fan.pending_at(now);
        negotiate(
            &self.inputs(fan, dm),
            &pending,
            self.costs,
            self.eligibility_threshold,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub outcome: NegotiationOutcome,
    pub messages: Vec<Message>,
    /// Bundles whose GPRS upload completed.
    pub server_delivered: Vec<BundleId>,
    pub deleted: Vec<BundleId>,
    pub elapsed_s: f64,
}

/// One sequential negotiate → transfer → relay → ACK round.
///
/// `link` decides the fate of each BUNDLE and ACK message (true = delivered);
/// negotiation messages are always delivered.
pub fn contact_round(
    fan: &mut FanNode,
    dm: &mut DmNode,
    ctx: &RoundContext<'_>,
    now: f64,
    link: &mut dyn FnMut(&Message) -> bool,
) -> Result<RoundReport, ProtocolError> {
    let inputs = ctx.inputs(fan, dm);
    inputs.validate()?;
    let mut messages = vec![Message::NegReq {
        e_dm: inputs.e_dm,
        channel_qualities: inputs.channel_quality,
    }];
    let outcome = negotiate(
        &inputs,
        &fan.pending_at(now),
        ctx.costs,
        ctx.eligibility_threshold,
    );
    messages.push(Message::NegResp {
        n: outcome.n,
        tech: outcome.tech,
    });
    let mut elapsed = ctx.negotiation_latency_s;
    let mut server_delivered = Vec::new();
    let mut deleted = Vec::new();
    for send in fan.begin_contact(&outcome)? {
        let msg = Message::Bundle {
            id: send.bundle.id,
            size: send.bundle.size,
        };
        elapsed += send.transfer_s;
        let arrived = link(&msg);
        messages.push(msg);
        if !arrived {
            continue;
        }
        for step in dm.receive_bundle(&send.bundle)? {
            elapsed += step.cost().seconds;
            dm.perform(&step)?;
            if let DmStep::Ack { id } = step {
                server_delivered.push(id);
                let ack = Message::Ack { id };
                let ok = link(&ack);
                messages.push(ack);
                if ok && fan.on_ack(id) == AckDisposition::Deleted {
                    deleted.push(id);
                }
            }
        }
    }
    Ok(RoundReport {
        outcome,
        messages,
        server_delivered,
        deleted,
        elapsed_s: elapsed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactReport {
    pub rounds: Vec<RoundReport>,
    pub requeued: Vec<BundleId>,
    pub elapsed_s: f64,
}

/// Repeat rounds while the FAN has bundles, the DM can still afford one,
/// and another negotiation fits in the window; then requeue whatever was
/// not acknowledged.
pub fn run_contact(
    fan: &mut FanNode,
    dm: &mut DmNode,
    ctx: &RoundContext<'_>,
    start: f64,
    window_s: f64,
    link: &mut dyn FnMut(&Message) -> bool,
) -> Result<ContactReport, ProtocolError> {
    let mut rounds = Vec::new();
    let mut elapsed = 0.0;
    loop {
        let report = contact_round(fan, dm, ctx, start + elapsed, link)?;
        elapsed += report.elapsed_s;
        let n = report.outcome.n;
        rounds.push(report);
        if n == 0
            || fan.queue().is_empty()
            || elapsed + ctx.negotiation_latency_s > window_s
            || ctx.negotiate(fan, dm, start + elapsed).n == 0
        {
            break;
        }
    }
    let requeued = fan.requeue_unacked();
    dm.end_contact();
    Ok(ContactReport {
        rounds,
        requeued,
        elapsed_s: elapsed,
    })
}
