//! Trace records, their CSV form, and metrics folded from a trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use thiserror::Error;

use crate::bundle::BundleId;
use crate::format::sig6;
use crate::links::Technology;
use crate::protocol::NodeKind;

pub const TRACE_HEADER: [&str; 7] = [
    "time_s",
    "node",
    "event",
    "bundle_id",
    "tech",
    "energy_delta_j",
    "cap_voltage_v",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at record {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace I/O: {0}")]
    Io(#[from] io::Error),
}

fn malformed(index: usize, reason: impl Into<String>) -> TraceError {
    TraceError::MalformedTrace {
        index,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    BundleOffered,
    RideStart,
    RideEnd,
    ContactStart,
    NegotiationDone,
    BundleSent,
    BundleLost,
    BundleReceived,
    ChainStart,
    PhaseCost,
    FlushFailed,
    ServerDelivered,
    AckSent,
    AckLost,
    AckDelivered,
    AckIgnored,
    FanDelete,
    Requeued,
    ContactEnd,
}

impl EventKind {
    const ALL: [EventKind; 19] = [
        EventKind::BundleOffered,
        EventKind::RideStart,
        EventKind::RideEnd,
        EventKind::ContactStart,
        EventKind::NegotiationDone,
        EventKind::BundleSent,
        EventKind::BundleLost,
        EventKind::BundleReceived,
        EventKind::ChainStart,
        EventKind::PhaseCost,
        EventKind::FlushFailed,
        EventKind::ServerDelivered,
        EventKind::AckSent,
        EventKind::AckLost,
        EventKind::AckDelivered,
        EventKind::AckIgnored,
        EventKind::FanDelete,
        EventKind::Requeued,
        EventKind::ContactEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::BundleOffered => "BundleOffered",
            EventKind::RideStart => "RideStart",
            EventKind::RideEnd => "RideEnd",
            EventKind::ContactStart => "ContactStart",
            EventKind::NegotiationDone => "NegotiationDone",
            EventKind::BundleSent => "BundleSent",
            EventKind::BundleLost => "BundleLost",
            EventKind::BundleReceived => "BundleReceived",
            EventKind::ChainStart => "ChainStart",
            EventKind::PhaseCost => "PhaseCost",
            EventKind::FlushFailed => "FlushFailed",
            EventKind::ServerDelivered => "ServerDelivered",
            EventKind::AckSent => "AckSent",
            EventKind::AckLost => "AckLost",
            EventKind::AckDelivered => "AckDelivered",
            EventKind::AckIgnored => "AckIgnored",
            EventKind::FanDelete => "FanDelete",
            EventKind::Requeued => "Requeued",
            EventKind::ContactEnd => "ContactEnd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub node: NodeKind,
    pub event: EventKind,
    pub bundle_id: Option<BundleId>,
    pub tech: Option<Technology>,
    /// Energy entering (+) or leaving (−) the node's store.
    pub energy_delta: f64,
    /// Store voltage after the event; empty for an unconstrained store.
    pub cap_voltage: Option<f64>,
}

/// Write the trace as CSV. Floats use Rust's shortest round-trip form, so
/// [`read_csv`] recovers every value bit for bit.
pub fn write_csv<W: io::Write>(records: &[TraceRecord], out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            r.time.to_string(),
            r.node.as_str().to_owned(),
            r.event.as_str().to_owned(),
            opt(r.bundle_id.map(|b| b.to_string())),
            opt(r.tech.map(|t| t.as_str().to_owned())),
            (r.energy_delta + 0.0).to_string(),
            opt(r.cap_voltage.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(malformed(
            0,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let f = |k: usize| row.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64, TraceError> {
            f(k).parse::<f64>()
                .map_err(|_| malformed(i, format!("bad number {:?} in {}", f(k), TRACE_HEADER[k])))
        };
        let node = match f(1) {
            "FAN" => NodeKind::Fan,
            "DM" => NodeKind::Dm,
            other => return Err(malformed(i, format!("unknown node {other:?}"))),
        };
        let event = EventKind::parse(f(2))
            .ok_or_else(|| malformed(i, format!("unknown event {:?}", f(2))))?;
        let bundle_id = match f(3) {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| malformed(i, format!("bad bundle id {s:?}")))?,
            ),
        };
        let tech = match f(4) {
            "" => None,
            s => Some(
                Technology::parse(s).ok_or_else(|| malformed(i, format!("unknown tech {s:?}")))?,
            ),
        };
        let cap_voltage = match f(6) {
            "" => None,
            _ => Some(num(6)?),
        };
        out.push(TraceRecord {
            time: num(0)?,
            node,
            event,
            bundle_id,
            tech,
            energy_delta: num(5)?,
            cap_voltage,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub bundles_offered: u64,
    pub bundles_delivered: u64,
    pub bundles_deleted: u64,
    pub mean_latency_s: f64,
    pub max_latency_s: f64,
    pub rounds: u64,
    pub messages_lost: u64,
    pub dm_energy_consumed_j: f64,
    pub dm_energy_harvested_j: f64,
    pub fan_energy_consumed_j: f64,
    /// Sum over duty cycles of (last phase end − cycle start).
    pub dm_chain_time_s: f64,
    pub dm_chain_energy_j: f64,
}

impl Metrics {
    /// Flat `key=value` document, numbers at six significant digits.
    pub fn to_document(&self, extra: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        let rows: [(&str, String); 12] = [
            ("bundles_offered", self.bundles_offered.to_string()),
            ("bundles_delivered", self.bundles_delivered.to_string()),
            ("bundles_deleted", self.bundles_deleted.to_string()),
            ("mean_latency_s", sig6(self.mean_latency_s)),
            ("max_latency_s", sig6(self.max_latency_s)),
            ("rounds", self.rounds.to_string()),
            ("messages_lost", self.messages_lost.to_string()),
            ("dm_energy_consumed_j", sig6(self.dm_energy_consumed_j)),
            ("dm_energy_harvested_j", sig6(self.dm_energy_harvested_j)),
            ("fan_energy_consumed_j", sig6(self.fan_energy_consumed_j)),
            ("dm_chain_time_s", sig6(self.dm_chain_time_s)),
            ("dm_chain_energy_j", sig6(self.dm_chain_energy_j)),
        ];
        for (k, v) in rows {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

/// Fold a trace into metrics, rejecting traces that violate clock order or
/// causality (send → server delivery → ACK → deletion).
pub fn compute_metrics(trace: &[TraceRecord]) -> Result<Metrics, TraceError> {
    let mut m = Metrics::default();
    let mut last_time = f64::NEG_INFINITY;
    let mut last_sent: BTreeMap<BundleId, f64> = BTreeMap::new();
    let mut server: BTreeSet<BundleId> = BTreeSet::new();
    let mut acked: BTreeSet<BundleId> = BTreeSet::new();
    let mut deleted: BTreeSet<BundleId> = BTreeSet::new();
    let mut latencies = Vec::new();
    let mut chain: Option<(f64, f64)> = None;

    for (i, r) in trace.iter().enumerate() {
        if !r.time.is_finite() || r.time < last_time {
            return Err(malformed(i, format!("time {} after {}", r.time, last_time)));
        }
        last_time = r.time;
        let need_id = || {
            r.bundle_id
                .ok_or_else(|| malformed(i, format!("{} without bundle id", r.event)))
        };
        match r.node {
            NodeKind::Dm if r.energy_delta < 0.0 => m.dm_energy_consumed_j -= r.energy_delta,
            NodeKind::Dm => m.dm_energy_harvested_j += r.energy_delta,
            NodeKind::Fan => m.fan_energy_consumed_j -= r.energy_delta.min(0.0),
        }
        match r.event {
            EventKind::BundleOffered => m.bundles_offered += 1,
            EventKind::NegotiationDone => m.rounds += 1,
            EventKind::BundleSent => {
                last_sent.insert(need_id()?, r.time);
            }
            EventKind::BundleLost | EventKind::AckLost => m.messages_lost += 1,
            EventKind::ChainStart => {
                if let Some((s, e)) = chain.take() {
                    m.dm_chain_time_s += e - s;
                }
                chain = Some((r.time, r.time));
            }
            EventKind::PhaseCost => {
                if r.node == NodeKind::Dm {
                    m.dm_chain_energy_j -= r.energy_delta;
                    match &mut chain {
                        Some((_, end)) => *end = r.time,
                        None => return Err(malformed(i, "PhaseCost outside a duty cycle")),
                    }
                }
            }
            EventKind::ServerDelivered => {
                let id = need_id()?;
                let sent = *last_sent.get(&id).ok_or_else(|| {
                    malformed(i, format!("bundle {id} delivered before it was sent"))
                })?;
                if server.insert(id) {
                    latencies.push(r.time - sent);
                }
            }
            EventKind::AckDelivered => {
                let id = need_id()?;
                if !server.contains(&id) {
                    return Err(malformed(
                        i,
                        format!("ACK for bundle {id} before server delivery"),
                    ));
                }
                acked.insert(id);
            }
            EventKind::FanDelete => {
                let id = need_id()?;
                if !acked.contains(&id) {
                    return Err(malformed(i, format!("bundle {id} deleted without an ACK")));
                }
                if !deleted.insert(id) {
                    return Err(malformed(i, format!("bundle {id} deleted twice")));
                }
            }
            _ => {}
        }
    }
    if let Some((s, e)) = chain {
        m.dm_chain_time_s += e - s;
    }
    m.bundles_delivered = server.len() as u64;
    m.bundles_deleted = deleted.len() as u64;
    if !latencies.is_empty() {
        m.mean_latency_s = latencies.iter().sum::<f64>() / latencies.len() as f64;
        m.max_latency_s = latencies.iter().copied().fold(0.0, f64::max);
    }
    Ok(m)
}
