//! Deterministic discrete-event simulation of a mule's rides and contacts.
//!
//! Events execute in `(time, seq)` order. Rides charge the mule's bank when
//! they end. Each contact opens with a protocol round; a round waits out the
//! negotiation latency, then the FAN sends the committed bundles back to
//! back. The mule works through its duty cycle for each received bundle in
//! arrival order (one cycle at a time), uploads over GPRS and ACKs. When
//! every bundle of a round is resolved, another round starts if the window,
//! queue and energy allow. At contact end unacknowledged bundles are
//! requeued.
//!
//! BUNDLE and ACK messages are lost independently with the scenario's loss
//! probability, drawn from a ChaCha stream seeded by the run seed. Messages
//! arriving after the contact closed are lost as well.

mod queue;
pub mod scenario;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bundle::{Bundle, BundleId};
use crate::energy::{EnergyLedger, EnergyStore};
use crate::links::Technology;
use crate::protocol::{
    AckDisposition, ChainCosts, ChannelQuality, DmNode, DmStep, DutyCycle, FanNode,
    NegotiationOutcome, NodeKind, ProtocolError, RoundContext,
};

pub use queue::{EventQueue, Scheduled};
pub use scenario::{ConfigError, Scenario};
pub use trace::{
    compute_metrics, read_csv, to_csv_string, write_csv, EventKind, Metrics, TraceError,
    TraceRecord,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("protocol error at t={time}s: {source}")]
    Protocol { time: f64, source: ProtocolError },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// One Bernoulli draw; `true` means the message is lost. Always consumes
/// exactly one value from the stream.
pub fn apply_loss<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    let u: f64 = rng.random();
    u < p
}

/// Salt for the GPRS-failure stream so it never perturbs message losses.
const GPRS_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub ledger: EnergyLedger,
    pub initial_stored: f64,
    pub final_stored: f64,
    pub final_voltage: Option<f64>,
    /// Relative mismatch between store state and ledger.
    pub conservation_error: f64,
}

impl NodeSummary {
    fn of(store: &EnergyStore) -> Self {
        Self {
            ledger: store.ledger().clone(),
            initial_stored: store.initial_stored(),
            final_stored: store.stored_energy(),
            final_voltage: store.voltage(),
            conservation_error: store.conservation_error(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
    pub delivered_bytes: u64,
    pub dm: NodeSummary,
    pub fan: NodeSummary,
    /// Bundle ids still held by the FAN at the end, queue order.
    pub fan_queue: Vec<BundleId>,
}

impl RunReport {
    /// Energy spent by both nodes per delivered byte (0 when nothing arrived).
    pub fn energy_per_delivered_byte(&self) -> f64 {
        if self.delivered_bytes == 0 {
            0.0
        } else {
            (self.metrics.dm_energy_consumed_j + self.metrics.fan_energy_consumed_j)
                / self.delivered_bytes as f64
        }
    }

    pub fn trace_csv(&self) -> String {
        to_csv_string(&self.trace)
    }

    pub fn metrics_document(&self) -> String {
        use crate::format::sig6;
        self.metrics.to_document(&[
            ("scenario_seed", self.seed.to_string()),
            ("delivered_bytes", self.delivered_bytes.to_string()),
            (
                "energy_per_delivered_byte_j",
                sig6(self.energy_per_delivered_byte()),
            ),
            (
                "dm_final_voltage_v",
                self.dm.final_voltage.map_or(String::new(), sig6),
            ),
        ])
    }
}

#[derive(Debug)]
enum Ev {
    Offer(Bundle),
    RideStart(usize),
    RideEnd(usize),
    ContactStart(usize),
    ContactEnd,
    RoundStart(usize),
    NegotiationDone {
        contact: usize,
        round: usize,
        outcome: NegotiationOutcome,
    },
    Send {
        contact: usize,
        round: usize,
        idx: usize,
    },
    Arrive {
        contact: usize,
        round: usize,
        bundle: Bundle,
        lost: bool,
    },
    ChainStart {
        chain: usize,
    },
    Step {
        chain: usize,
        step: DmStep,
    },
    RoundCheck {
        contact: usize,
    },
}

struct Chain {
    contact: usize,
    round: usize,
    bundle: BundleId,
    failed: bool,
}

struct PendingSend {
    bundle: Bundle,
    energy_j: f64,
    transfer_s: f64,
    voltage: Option<f64>,
}

struct Round {
    contact: usize,
    tech: Option<Technology>,
    sends: Vec<PendingSend>,
    outstanding: usize,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    costs: ChainCosts,
    fan: FanNode,
    dm: DmNode,
    dynamo: crate::energy::Dynamo,
    rides: Vec<scenario::ResolvedRide>,
    queue: EventQueue<Ev>,
    trace: Vec<TraceRecord>,
    loss_rng: ChaCha8Rng,
    gprs_rng: ChaCha8Rng,
    open_contact: Option<usize>,
    rounds: Vec<Round>,
    chains: Vec<Chain>,
    dm_free_at: f64,
    now: f64,
}

/// Run a scenario to quiescence (or its horizon).
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunReport, SimError> {
    scenario.validate()?;
    let dm_cap = scenario.capacitor.build("capacitor")?;
    let fan_store = match &scenario.fan_capacitor {
        Some(c) => EnergyStore::capacitor(c.build("fan_capacitor")?),
        None => EnergyStore::unlimited(),
    };
    let duty = DutyCycle::from_table(&scenario.phase_table);
    let costs = ChainCosts {
        links: scenario.links.clone(),
        gprs: scenario.gprs.clone(),
        duty: duty.clone(),
    };
    let mut sim = Sim {
        scenario,
        costs,
        fan: FanNode::new(fan_store, scenario.negotiation.fan_reserve_j),
        dm: DmNode::new(
            EnergyStore::capacitor(dm_cap),
            scenario.negotiation.dm_reserve_j,
            duty,
            scenario.gprs.clone(),
        ),
        dynamo: scenario.dynamo.build()?,
        rides: scenario.rides_resolved(),
        queue: EventQueue::default(),
        trace: Vec::new(),
        loss_rng: ChaCha8Rng::seed_from_u64(seed),
        gprs_rng: ChaCha8Rng::seed_from_u64(seed ^ GPRS_STREAM_SALT),
        open_contact: None,
        rounds: Vec::new(),
        chains: Vec::new(),
        dm_free_at: 0.0,
        now: 0.0,
    };
    sim.schedule_inputs();
    sim.run_loop()?;

    let metrics = compute_metrics(&sim.trace)?;
    let sizes: BTreeMap<BundleId, u64> = scenario
        .workload
        .iter()
        .map(|b| (b.id, b.size_bytes))
        .collect();
    let delivered_bytes = sim
        .trace
        .iter()
        .filter(|r| r.event == EventKind::ServerDelivered)
        .filter_map(|r| r.bundle_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|id| sizes.get(&id).copied().unwrap_or(0))
        .sum();
    Ok(RunReport {
        seed,
        metrics,
        delivered_bytes,
        dm: NodeSummary::of(sim.dm.store()),
        fan: NodeSummary::of(sim.fan.store()),
        fan_queue: sim.fan.queue().iter().map(|b| b.id).collect(),
        trace: sim.trace,
    })
}

impl Sim<'_> {
    fn schedule_inputs(&mut self) {
        let mut bundles = self.scenario.bundles();
        // stable: equal creation times keep workload order
        bundles.sort_by(|a, b| a.created_at.total_cmp(&b.created_at));
        for b in bundles {
            self.queue.push(b.created_at, Ev::Offer(b));
        }
        for (i, r) in self.rides.iter().enumerate() {
            self.queue.push(r.start, Ev::RideStart(i));
        }
        for (i, c) in self.scenario.contacts.iter().enumerate() {
            self.queue.push(c.start_s, Ev::ContactStart(i));
        }
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        let horizon = self.scenario.horizon_s.unwrap_or(f64::INFINITY);
        while let Some(ev) = self.queue.pop() {
            if ev.time > horizon {
                break;
            }
            self.now = ev.time;
            self.handle(ev.payload)
                .map_err(|source| SimError::Protocol {
                    time: self.now,
                    source,
                })?;
        }
        Ok(())
    }

    fn record(
        &mut self,
        node: NodeKind,
        event: EventKind,
        bundle_id: Option<BundleId>,
        tech: Option<Technology>,
        energy_delta: f64,
    ) {
        let cap_voltage = match node {
            NodeKind::Dm => self.dm.store().voltage(),
            NodeKind::Fan => self.fan.store().voltage(),
        };
        self.trace.push(TraceRecord {
            time: self.now,
            node,
            event,
            bundle_id,
            tech,
            energy_delta,
            cap_voltage,
        });
    }

    fn contact_end(&self, c: usize) -> f64 {
        let c = &self.scenario.contacts[c];
        c.start_s + c.max_duration_s
    }

    fn is_open(&self, c: usize) -> bool {
        self.open_contact == Some(c) && self.now < self.contact_end(c)
    }

    fn quality(&self, c: usize) -> ChannelQuality {
        self.scenario.contacts[c]
            .channel_quality
            .unwrap_or(self.scenario.negotiation.channel_quality)
    }

    fn round_context(&self, c: usize) -> RoundContext<'_> {
        let n = &self.scenario.negotiation;
        RoundContext {
            costs: &self.costs,
            channel_quality: self.quality(c),
            eligibility_threshold: n.eligibility_threshold,
            negotiation_latency_s: n.latency_s,
            transmit_power: n.transmit_power,
            data_rate_hint: n.data_rate_hint,
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), ProtocolError> {
        match ev {
            Ev::Offer(b) => {
                let id = b.id;
                self.fan.offer(b)?;
                self.record(NodeKind::Fan, EventKind::BundleOffered, Some(id), None, 0.0);
            }
            Ev::RideStart(i) => {
                self.record(NodeKind::Dm, EventKind::RideStart, None, None, 0.0);
                self.queue.push(self.rides[i].end(), Ev::RideEnd(i));
            }
            Ev::RideEnd(i) => {
                let r = self.rides[i];
                let power = self.dynamo.power(r.speed_kmh);
                let (stored, _shed) =
                    self.dm
                        .store_mut()
                        .charge(power, r.duration, self.dynamo.efficiency)?;
                self.record(NodeKind::Dm, EventKind::RideEnd, None, None, stored);
            }
            Ev::ContactStart(c) => {
                self.open_contact = Some(c);
                self.record(NodeKind::Dm, EventKind::ContactStart, None, None, 0.0);
                self.queue.push(self.contact_end(c), Ev::ContactEnd);
                self.queue.push(self.now, Ev::RoundStart(c));
            }
            Ev::ContactEnd => {
                for id in self.fan.requeue_unacked() {
                    self.record(NodeKind::Fan, EventKind::Requeued, Some(id), None, 0.0);
                }
                self.dm.end_contact();
                self.open_contact = None;
                self.record(NodeKind::Dm, EventKind::ContactEnd, None, None, 0.0);
            }
            Ev::RoundStart(c) => {
                if !self.is_open(c) {
                    return Ok(());
                }
                let ctx = self.round_context(c);
                let inputs = ctx.inputs(&self.fan, &self.dm);
                inputs.validate()?;
                let mut outcome = ctx.negotiate(&self.fan, &self.dm, self.now);
                let done = self.now + self.scenario.negotiation.latency_s;
                // commit only transfers that finish inside the window
                let end = self.contact_end(c);
                let mut t = done;
                let keep = outcome
                    .costs
                    .iter()
                    .take_while(|cst| {
                        t += cst.transfer_s;
                        t < end
                    })
                    .count();
                outcome.costs.truncate(keep);
                outcome.n = keep;
                if keep == 0 {
                    outcome.tech = None;
                }
                let round = self.rounds.len();
                self.rounds.push(Round {
                    contact: c,
                    tech: outcome.tech,
                    sends: Vec::new(),
                    outstanding: 0,
                });
                self.queue.push(
                    done,
                    Ev::NegotiationDone {
                        contact: c,
                        round,
                        outcome,
                    },
                );
            }
            Ev::NegotiationDone {
                contact,
                round,
                outcome,
            } => {
                let tech = outcome.tech;
                self.record(NodeKind::Dm, EventKind::NegotiationDone, None, tech, 0.0);
                if !self.is_open(contact) || outcome.n == 0 {
                    return Ok(());
                }
                let sends = self.fan.begin_contact(&outcome)?;
                let mut t = self.now;
                let r = &mut self.rounds[round];
                r.outstanding = sends.len();
                for (idx, s) in sends.into_iter().enumerate() {
                    self.queue.push(
                        t,
                        Ev::Send {
                            contact,
                            round,
                            idx,
                        },
                    );
                    t += s.transfer_s;
                    r.sends.push(PendingSend {
                        bundle: s.bundle,
                        energy_j: s.energy_j,
                        transfer_s: s.transfer_s,
                        voltage: s.voltage,
                    });
                }
            }
            Ev::Send {
                contact,
                round,
                idx,
            } => {
                let r = &self.rounds[round];
                let tech = r.tech;
                let s = &r.sends[idx];
                let (bundle, energy, transfer, voltage) =
                    (s.bundle.clone(), s.energy_j, s.transfer_s, s.voltage);
                self.trace.push(TraceRecord {
                    time: self.now,
                    node: NodeKind::Fan,
                    event: EventKind::BundleSent,
                    bundle_id: Some(bundle.id),
                    tech,
                    energy_delta: -energy,
                    cap_voltage: voltage,
                });
                let lost = apply_loss(&mut self.loss_rng, self.scenario.loss);
                self.queue.push(
                    self.now + transfer,
                    Ev::Arrive {
                        contact,
                        round,
                        bundle,
                        lost,
                    },
                );
            }
            Ev::Arrive {
                contact,
                round,
                bundle,
                lost,
            } => {
                let tech = self.rounds[round].tech;
                if lost || !self.is_open(contact) {
                    self.record(
                        NodeKind::Dm,
                        EventKind::BundleLost,
                        Some(bundle.id),
                        tech,
                        0.0,
                    );
                    self.resolve(round);
                    return Ok(());
                }
                self.record(
                    NodeKind::Dm,
                    EventKind::BundleReceived,
                    Some(bundle.id),
                    tech,
                    0.0,
                );
                let steps = self.dm.receive_bundle(&bundle)?;
                let chain = self.chains.len();
                self.chains.push(Chain {
                    contact,
                    round,
                    bundle: bundle.id,
                    failed: false,
                });
                let start = self.now.max(self.dm_free_at);
                self.queue.push(start, Ev::ChainStart { chain });
                let mut t = start;
                for step in steps {
                    if let DmStep::Flush { .. } = step {
                        t = self.after_blackout(t);
                    }
                    t += step.cost().seconds;
                    self.queue.push(t, Ev::Step { chain, step });
                }
                self.dm_free_at = t;
            }
            Ev::ChainStart { chain } => {
                let id = self.chains[chain].bundle;
                self.record(NodeKind::Dm, EventKind::ChainStart, Some(id), None, 0.0);
            }
            Ev::Step { chain, step } => self.step(chain, step)?,
            Ev::RoundCheck { contact } => {
                if !self.is_open(contact) || self.fan.pending_at(self.now).is_empty() {
                    return Ok(());
                }
                if self.now + self.scenario.negotiation.latency_s >= self.contact_end(contact) {
                    return Ok(());
                }
                if self
                    .round_context(contact)
                    .negotiate(&self.fan, &self.dm, self.now)
                    .n
                    > 0
                {
                    self.queue.push(self.now, Ev::RoundStart(contact));
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, chain: usize, step: DmStep) -> Result<(), ProtocolError> {
        let id = self.chains[chain].bundle;
        match step {
            DmStep::Phase { .. } => {
                let j = self.dm.perform(&step)?;
                self.record(NodeKind::Dm, EventKind::PhaseCost, Some(id), None, -j);
            }
            DmStep::Flush { .. } => {
                let j = self.dm.perform(&step)?;
                self.record(
                    NodeKind::Dm,
                    EventKind::PhaseCost,
                    Some(id),
                    Some(Technology::Gprs),
                    -j,
                );
                if apply_loss(&mut self.gprs_rng, self.scenario.gprs_failure) {
                    self.chains[chain].failed = true;
                    self.record(
                        NodeKind::Dm,
                        EventKind::FlushFailed,
                        Some(id),
                        Some(Technology::Gprs),
                        0.0,
                    );
                }
            }
            DmStep::Ack { .. } => {
                let Chain {
                    contact,
                    round,
                    failed,
                    ..
                } = self.chains[chain];
                if !failed {
                    self.record(
                        NodeKind::Dm,
                        EventKind::ServerDelivered,
                        Some(id),
                        Some(Technology::Gprs),
                        0.0,
                    );
                    let tech = self.rounds[round].tech;
                    self.record(NodeKind::Dm, EventKind::AckSent, Some(id), tech, 0.0);
                    let lost = apply_loss(&mut self.loss_rng, self.scenario.loss);
                    if lost || !self.is_open(contact) {
                        self.record(NodeKind::Fan, EventKind::AckLost, Some(id), tech, 0.0);
                    } else {
                        self.record(NodeKind::Fan, EventKind::AckDelivered, Some(id), tech, 0.0);
                        match self.fan.on_ack(id) {
                            AckDisposition::Deleted => self.record(
                                NodeKind::Fan,
                                EventKind::FanDelete,
                                Some(id),
                                None,
                                0.0,
                            ),
                            AckDisposition::Duplicate | AckDisposition::Unknown => self.record(
                                NodeKind::Fan,
                                EventKind::AckIgnored,
                                Some(id),
                                None,
                                0.0,
                            ),
                        }
                    }
                }
                self.resolve(round);
            }
        }
        Ok(())
    }

    fn after_blackout(&self, mut t: f64) -> f64 {
        // windows may chain; repeat until t is in coverage
        loop {
            let shifted = self
                .scenario
                .gprs_blackouts
                .iter()
                .filter(|w| t >= w.start_s && t < w.end_s)
                .map(|w| w.end_s)
                .fold(t, f64::max);
            if shifted == t {
                return t;
            }
            t = shifted;
        }
    }

    fn resolve(&mut self, round: usize) {
        let r = &mut self.rounds[round];
        r.outstanding = r.outstanding.saturating_sub(1);
        if r.outstanding == 0 {
            let contact = r.contact;
            self.queue.push(self.now, Ev::RoundCheck { contact });
        }
    }
}

/// Scenario files shipped with the crate.
pub mod bundled {
    pub const PAPER_SINGLE_BUNDLE: &str = include_str!("../../scenarios/paper-single-bundle.json");
    pub const PAPER_TABLE2_LATENCY: &str =
        include_str!("../../scenarios/paper-table2-latency.json");
    pub const LOSSY_MULTI_CONTACT: &str = include_str!("../../scenarios/lossy-multi-contact.json");

    pub const ALL: [(&str, &str); 3] = [
        ("paper-single-bundle", PAPER_SINGLE_BUNDLE),
        ("paper-table2-latency", PAPER_TABLE2_LATENCY),
        ("lossy-multi-contact", LOSSY_MULTI_CONTACT),
    ];

    pub fn get(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }
}
