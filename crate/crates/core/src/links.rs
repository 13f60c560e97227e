//! Latency and energy models for the three radios.
//!
//! Local transfers (Bluetooth, Wi-Fi) are modelled by piecewise-linear
//! latency curves through measured `(bytes, seconds)` anchors and a constant
//! active power. GPRS upload is modelled per buffer flush: the radio-on cost
//! is amortised over the buffered packets, so the energy per packet is
//! `a/B + b + c·B` for a buffer of `B` packets.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{Bundle, DEFAULT_PACKET_BYTES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("{0} has no latency model (GPRS uses the buffer model)")]
    UnknownTechnology(Technology),
    #[error("invalid GPRS buffer of {0} packets")]
    InvalidBuffer(u64),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid latency anchors: {0}")]
    InvalidAnchors(String),
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technology {
    #[serde(rename = "bluetooth")]
    Bluetooth,
    #[serde(rename = "wifi")]
    WiFi,
    #[serde(rename = "gprs")]
    Gprs,
}

impl Technology {
    /// FAN↔DM links in negotiation preference order.
    pub const LOCAL: [Technology; 2] = [Technology::WiFi, Technology::Bluetooth];

    pub fn is_local(self) -> bool {
        !matches!(self, Technology::Gprs)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Bluetooth => "Bluetooth",
            Technology::WiFi => "WiFi",
            Technology::Gprs => "GPRS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Bluetooth" | "bluetooth" => Some(Technology::Bluetooth),
            "WiFi" | "wifi" => Some(Technology::WiFi),
            "GPRS" | "gprs" => Some(Technology::Gprs),
            _ => None,
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Measured one-bundle latencies, `(bytes, seconds)`.
pub const BLUETOOTH_ANCHORS: [(u64, f64); 3] =
    [(5_000, 5.0), (1_000_000, 90.0), (3_000_000, 280.0)];
pub const WIFI_ANCHORS: [(u64, f64); 3] = [(5_000, 7.0), (1_000_000, 7.0), (3_000_000, 20.0)];

/// Wi-Fi active power from the DTN send/receive phase: 42 J over 13 s.
pub const WIFI_ACTIVE_WATTS: f64 = 42.0 / 13.0;
/// No measured Bluetooth energy exists; this default is a placeholder.
pub const BLUETOOTH_ACTIVE_WATTS: f64 = 0.3;

/// Piecewise-linear latency curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct LatencyAnchors(Vec<(u64, f64)>);

impl LatencyAnchors {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self, LinkError> {
        if points.len() < 2 {
            return Err(LinkError::InvalidAnchors(format!(
                "need at least two anchors, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(LinkError::InvalidAnchors(format!(
                    "sizes must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(LinkError::InvalidAnchors(format!(
                    "times must be non-decreasing ({} then {})",
                    w[0].1, w[1].1
                )));
            }
        }
        if let Some((s, t)) = points.iter().find(|(_, t)| !(t.is_finite() && *t > 0.0)) {
            return Err(LinkError::InvalidAnchors(format!(
                "time {t} at {s} bytes must be positive"
            )));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.0
    }

    /// Clamp below the first anchor, interpolate between anchors, extend the
    /// last segment's slope above the final anchor.
    pub fn eval(&self, size: u64) -> f64 {
        let pts = &self.0;
        match pts.binary_search_by_key(&size, |p| p.0) {
            Ok(i) => pts[i].1,
            Err(0) => pts[0].1,
            Err(i) => {
                let (lo, hi) = if i == pts.len() {
                    (pts[i - 2], pts[i - 1])
                } else {
                    (pts[i - 1], pts[i])
                };
                let frac = (size - lo.0) as f64 / (hi.0 - lo.0) as f64;
                lo.1 + frac * (hi.1 - lo.1)
            }
        }
    }
}

impl TryFrom<Vec<(u64, f64)>> for LatencyAnchors {
    type Error = LinkError;
    fn try_from(v: Vec<(u64, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LatencyAnchors> for Vec<(u64, f64)> {
    fn from(a: LatencyAnchors) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLink {
    pub anchors: LatencyAnchors,
    pub active_watts: f64,
}

/// Bluetooth and Wi-Fi models for the FAN↔DM hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModels {
    pub bluetooth: LocalLink,
    pub wifi: LocalLink,
}

impl Default for LinkModels {
    fn default() -> Self {
        Self {
            bluetooth: LocalLink {
                anchors: LatencyAnchors(BLUETOOTH_ANCHORS.to_vec()),
                active_watts: BLUETOOTH_ACTIVE_WATTS,
            },
            wifi: LocalLink {
                anchors: LatencyAnchors(WIFI_ANCHORS.to_vec()),
                active_watts: WIFI_ACTIVE_WATTS,
            },
        }
    }
}

impl LinkModels {
    pub fn link(&self, tech: Technology) -> Result<&LocalLink, LinkError> {
        match tech {
            Technology::Bluetooth => Ok(&self.bluetooth),
            Technology::WiFi => Ok(&self.wifi),
            Technology::Gprs => Err(LinkError::UnknownTechnology(tech)),
        }
    }

    pub fn transfer_time(&self, tech: Technology, size: u64) -> Result<f64, LinkError> {
        Ok(self.link(tech)?.anchors.eval(size))
    }

    pub fn transfer_energy(&self, tech: Technology, size: u64) -> Result<f64, LinkError> {
        let link = self.link(tech)?;
        Ok(link.active_watts * link.anchors.eval(size))
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        for (name, link) in [("bluetooth", &self.bluetooth), ("wifi", &self.wifi)] {
            LatencyAnchors::new(link.anchors.0.clone())?;
            if !(link.active_watts >= 0.0 && link.active_watts.is_finite()) {
                return Err(LinkError::InvalidParameter {
                    name: "active_watts",
                    reason: format!("{name}: {} must be >= 0", link.active_watts),
                });
            }
        }
        Ok(())
    }
}

/// Time and energy of one unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cost {
    pub seconds: f64,
    pub joules: f64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            seconds: self.seconds + o.seconds,
            joules: self.joules + o.joules,
        }
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Buffered GPRS upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprsModel {
    pub packet_bytes: u32,
    /// Radio-on cost amortised over the buffer (J).
    pub epp_a: f64,
    /// Per-packet floor (J).
    pub epp_b: f64,
    /// Per-packet growth per buffered packet (J).
    pub epp_c: f64,
    #[serde(rename = "t_setup_s")]
    pub t_setup: f64,
    #[serde(rename = "t_per_packet_s")]
    pub t_per_packet: f64,
    /// Operating buffer size; partial buffers flush at bundle end.
    pub buffer_packets: u64,
}

impl Default for GprsModel {
    fn default() -> Self {
        Self {
            packet_bytes: DEFAULT_PACKET_BYTES,
            epp_a: 2.5,
            epp_b: 0.6,
            epp_c: 0.001,
            t_setup: 6.0,
            t_per_packet: 0.5,
            buffer_packets: 50,
        }
    }
}

impl GprsModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        let bad =
            |name: &'static str, reason: String| Err(LinkError::InvalidParameter { name, reason });
        if self.packet_bytes == 0 {
            return bad("packet_bytes", "must be > 0".into());
        }
        if self.buffer_packets == 0 {
            return Err(LinkError::InvalidBuffer(0));
        }
        for (name, v) in [
            ("epp_a", self.epp_a),
            ("epp_b", self.epp_b),
            ("epp_c", self.epp_c),
            ("t_setup_s", self.t_setup),
            ("t_per_packet_s", self.t_per_packet),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("{v} must be >= 0"));
            }
        }
        if self.epp_a + self.epp_b + self.epp_c <= 0.0 {
            return bad("epp_a", "energy-per-packet curve must be positive".into());
        }
        Ok(())
    }

    pub fn energy_per_packet(&self, buffer: u64) -> Result<f64, LinkError> {
        if buffer < 1 {
            return Err(LinkError::InvalidBuffer(buffer));
        }
        let b = buffer as f64;
        Ok(self.epp_a / b + self.epp_b + self.epp_c * b)
    }

    /// Time and energy of one flush of `buffer` packets.
    pub fn buffer_cost(&self, buffer: u64) -> Result<Cost, LinkError> {
        if buffer < 1 {
            return Err(LinkError::InvalidBuffer(buffer));
        }
        let b = buffer as f64;
        Ok(Cost {
            seconds: self.t_setup + b * self.t_per_packet,
            // B·(a/B + b + c·B), expanded so the 50-packet case is exact
            joules: self.epp_a + self.epp_b * b + self.epp_c * b * b,
        })
    }

    /// Integer argmin of the energy-per-packet curve; ties go to the smaller buffer.
    pub fn optimal_buffer(&self, min: u64, max: u64) -> Result<u64, LinkError> {
        if min < 1 {
            return Err(LinkError::InvalidBuffer(min));
        }
        if max < min {
            return Err(LinkError::InvalidBuffer(max));
        }
        let mut best = (min, self.energy_per_packet(min)?);
        for b in min + 1..=max {
            let e = self.energy_per_packet(b)?;
            if e < best.1 {
                best = (b, e);
            }
        }
        Ok(best.0)
    }

    pub fn packets_for(&self, size: u64) -> u64 {
        size.div_ceil(u64::from(self.packet_bytes))
    }

    /// Flush sizes for `packets`: full buffers, then one partial remainder.
    pub fn flush_sizes(&self, packets: u64) -> Vec<u64> {
        let full = packets / self.buffer_packets;
        let rest = packets % self.buffer_packets;
        let mut v = vec![self.buffer_packets; full as usize];
        if rest > 0 {
            v.push(rest);
        }
        v
    }

    /// Total cost of relaying `packets` over GPRS.
    pub fn relay_cost(&self, packets: u64) -> Cost {
        self.flush_sizes(packets)
            .into_iter()
            .map(|k| self.buffer_cost(k).expect("flush sizes are >= 1"))
            .sum()
    }
}

/// One phase of the mule's duty cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseCost {
    pub label: String,
    pub joules: f64,
    pub seconds: f64,
    /// Marks the GPRS upload phase. Its listed figures describe one full
    /// buffer; at run time it is replaced by the GPRS model's flush costs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gprs_flush: bool,
}

impl PhaseCost {
    pub fn new(label: &str, joules: f64, seconds: f64) -> Self {
        Self {
            label: label.to_owned(),
            joules,
            seconds,
            gprs_flush: false,
        }
    }
}

/// Ordered mule duty cycle for one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseCostTable(pub Vec<PhaseCost>);

impl Default for PhaseCostTable {
    /// Measured single-bundle chain over Wi-Fi with GPRS upload.
    fn default() -> Self {
        let mut gprs = PhaseCost::new("GPRS transmission to the server", 35.0, 31.0);
        gprs.gprs_flush = true;
        Self(vec![
            PhaseCost::new("Powering up the SOM and GPRS module", 77.0, 30.0),
            PhaseCost::new("Auto-login on SOM", 86.0, 30.0),
            PhaseCost::new("DTN communication (send and receive)", 42.0, 13.0),
            PhaseCost::new("Bundle transfer from SOM to GPRS", 42.0, 14.0),
            PhaseCost::new("SOM shutdown", 60.0, 15.0),
            PhaseCost::new("Siemens TC65 startup", 25.0, 60.0),
            gprs,
        ])
    }
}

impl PhaseCostTable {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn rows(&self) -> &[PhaseCost] {
        &self.0
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        for p in &self.0 {
            if !(p.joules >= 0.0
                && p.joules.is_finite()
                && p.seconds >= 0.0
                && p.seconds.is_finite())
            {
                return Err(LinkError::InvalidParameter {
                    name: "phase_table",
                    reason: format!(
                        "phase '{}' must have non-negative joules and seconds",
                        p.label
                    ),
                });
            }
        }
        Ok(())
    }

    /// Sum of the listed rows, taken at face value.
    pub fn totals(&self) -> Cost {
        self.0
            .iter()
            .map(|p| Cost {
                seconds: p.seconds,
                joules: p.joules,
            })
            .sum()
    }
}

/// One mule duty cycle carrying `bundle`: every fixed phase once, and each
/// GPRS-flush phase expanded into the flushes the bundle needs.
pub fn bundle_chain_cost(bundle: &Bundle, table: &PhaseCostTable, gprs: &GprsModel) -> Cost {
    table
        .rows()
        .iter()
        .map(|p| {
            if p.gprs_flush {
                gprs.relay_cost(bundle.packets)
            } else {
                Cost {
                    seconds: p.seconds,
                    joules: p.joules,
                }
            }
        })
        .sum()
}

/// Least-squares fit of `a/B + b + c·B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveFit {
    pub epp_a: f64,
    pub epp_b: f64,
    pub epp_c: f64,
    /// Euclidean norm of the residual vector.
    pub residual: f64,
}

impl CurveFit {
    pub fn eval(&self, buffer: u64) -> f64 {
        let b = buffer as f64;
        self.epp_a / b + self.epp_b + self.epp_c * b
    }

    /// Brute-force integer argmin over `[min, max]`, ties to the smaller buffer.
    pub fn argmin(&self, min: u64, max: u64) -> u64 {
        let mut best = (min, self.eval(min));
        for b in min + 1..=max {
            let e = self.eval(b);
            if e < best.1 {
                best = (b, e);
            }
        }
        best.0
    }

    /// Apply the coefficients to an existing model.
    pub fn apply(&self, base: &GprsModel) -> GprsModel {
        GprsModel {
            epp_a: self.epp_a,
            epp_b: self.epp_b,
            epp_c: self.epp_c,
            ..base.clone()
        }
    }
}

pub fn fit_gprs_curve(samples: &[(u64, f64)]) -> Result<CurveFit, LinkError> {
    if samples.len() < 3 {
        return Err(LinkError::DegenerateFit(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    if let Some((b, _)) = samples.iter().find(|(b, _)| *b == 0) {
        return Err(LinkError::InvalidBuffer(*b));
    }
    let n = samples.len();
    let design = DMatrix::from_fn(n, 3, |r, c| {
        let b = samples[r].0 as f64;
        match c {
            0 => 1.0 / b,
            1 => 1.0,
            _ => b,
        }
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-12 {
        return Err(LinkError::DegenerateFit(
            "normal system is singular (need 3 distinct buffer sizes)".into(),
        ));
    }
    let coef = svd
        .solve(&y, smax * 1e-12)
        .map_err(|e| LinkError::DegenerateFit(e.to_string()))?;
    let residual = (&design * &coef - &y).norm();
    Ok(CurveFit {
        epp_a: coef[0],
        epp_b: coef[1],
        epp_c: coef[2],
        residual,
    })
}

/// One row of a buffer-size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub buffer_packets: u64,
    pub energy_per_packet_j: f64,
    pub total_time_s: f64,
    pub total_energy_j: f64,
}

pub fn sweep_buffer(gprs: &GprsModel, min: u64, max: u64) -> Result<Vec<SweepRow>, LinkError> {
    if min < 1 {
        return Err(LinkError::InvalidBuffer(min));
    }
    if max < min {
        return Err(LinkError::InvalidBuffer(max));
    }
    (min..=max)
        .map(|b| {
            let cost = gprs.buffer_cost(b)?;
            Ok(SweepRow {
                buffer_packets: b,
                energy_per_packet_j: gprs.energy_per_packet(b)?,
                total_time_s: cost.seconds,
                total_energy_j: cost.joules,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    const MB: u64 = 1_000_000;

    #[test]
    fn latency_passes_through_anchors() {
        let m = LinkModels::default();
        for (s, t) in BLUETOOTH_ANCHORS {
            assert_eq!(m.transfer_time(Technology::Bluetooth, s).unwrap(), t);
        }
        for (s, t) in WIFI_ANCHORS {
            assert_eq!(m.transfer_time(Technology::WiFi, s).unwrap(), t);
        }
    }

    #[test]
    fn latency_interpolates_and_clamps() {
        let m = LinkModels::default();
        assert_eq!(
            m.transfer_time(Technology::Bluetooth, 2 * MB).unwrap(),
            185.0
        );
        assert_eq!(m.transfer_time(Technology::WiFi, 1_000).unwrap(), 7.0);
        // last segment slope 13 s per 2 MB
        assert_eq!(m.transfer_time(Technology::WiFi, 5 * MB).unwrap(), 33.0);
        assert_eq!(
            m.transfer_time(Technology::Gprs, 10),
            Err(LinkError::UnknownTechnology(Technology::Gprs))
        );
    }

    #[test]
    fn transfer_energy_examples() {
        let m = LinkModels::default();
        // 7 + 13·(s − 1 MB)/2 MB = 13  ⇒  s = 1 MB + 12/13 MB
        let s = MB + 12 * MB / 13;
        let e = m.transfer_energy(Technology::WiFi, s).unwrap();
        assert!((e - 42.0).abs() < 1e-4, "{e}");
        let e = m.transfer_energy(Technology::WiFi, 3 * MB).unwrap();
        assert!((e - 64.615_384_615).abs() < 1e-6);
        let e = m.transfer_energy(Technology::Bluetooth, 1).unwrap();
        assert!((e - 1.5).abs() < 1e-12);
        assert!(m.transfer_energy(Technology::Gprs, 1).is_err());
    }

    #[test]
    fn anchors_validation() {
        assert!(LatencyAnchors::new(vec![(10, 1.0)]).is_err());
        assert!(LatencyAnchors::new(vec![(10, 1.0), (10, 2.0)]).is_err());
        assert!(LatencyAnchors::new(vec![(10, 1.0), (20, 0.0)]).is_err());
        assert!(LatencyAnchors::new(vec![(10, 0.0), (20, 1.0)]).is_err());
        assert!(LatencyAnchors::new(vec![(10, 1.0), (20, 2.0)]).is_ok());
        let bad: Result<LatencyAnchors, _> = serde_json::from_str("[[5, 1.0], [1, 2.0]]");
        assert!(bad.is_err());
    }

    #[test]
    fn energy_per_packet_examples() {
        let g = GprsModel::default();
        assert!((g.energy_per_packet(50).unwrap() - 0.7).abs() < 1e-9);
        assert!((g.energy_per_packet(1).unwrap() - 3.101).abs() < 1e-9);
        assert!((g.energy_per_packet(100).unwrap() - 0.725).abs() < 1e-9);
        assert_eq!(g.energy_per_packet(0), Err(LinkError::InvalidBuffer(0)));
    }

    #[test]
    fn optimal_buffer_examples() {
        let g = GprsModel::default();
        assert_eq!(g.optimal_buffer(1, 200).unwrap(), 50);
        assert_eq!(g.optimal_buffer(60, 200).unwrap(), 60);
        assert_eq!(g.optimal_buffer(50, 50).unwrap(), 50);
        assert_eq!(g.optimal_buffer(1, 10_000).unwrap(), 50);
    }

    #[test]
    fn brute_force_argmin_over_wide_range() {
        // independent scan, evaluating the closed form directly
        let g = GprsModel::default();
        let f = |b: f64| g.epp_a / b + g.epp_b + g.epp_c * b;
        let best = (1..=10_000u64)
            .min_by(|x, y| f(*x as f64).partial_cmp(&f(*y as f64)).unwrap())
            .unwrap();
        assert_eq!(best, 50);
    }

    #[test]
    fn buffer_cost_examples() {
        let g = GprsModel::default();
        assert_eq!(
            g.buffer_cost(50).unwrap(),
            Cost {
                seconds: 31.0,
                joules: 35.0
            }
        );
        let c = g.buffer_cost(1).unwrap();
        assert_eq!(c.seconds, 6.5);
        assert!((c.joules - 3.101).abs() < 1e-12);
        assert_eq!(g.buffer_cost(0), Err(LinkError::InvalidBuffer(0)));
    }

    #[test]
    fn flush_plan_splits_full_and_partial_buffers() {
        let g = GprsModel::default();
        assert_eq!(g.flush_sizes(50), vec![50]);
        assert_eq!(g.flush_sizes(100), vec![50, 50]);
        assert_eq!(g.flush_sizes(1), vec![1]);
        assert_eq!(g.flush_sizes(120), vec![50, 50, 20]);
    }

    #[test]
    fn chain_cost_examples() {
        let g = GprsModel::default();
        let t = PhaseCostTable::default();
        assert_eq!(
            t.totals(),
            Cost {
                seconds: 193.0,
                joules: 367.0
            }
        );
        let c = bundle_chain_cost(&Bundle::new(1, 1600, 0.0), &t, &g);
        assert_eq!(
            c,
            Cost {
                seconds: 193.0,
                joules: 367.0
            }
        );
        let c = bundle_chain_cost(&Bundle::new(1, 3200, 0.0), &t, &g);
        assert_eq!(
            c,
            Cost {
                seconds: 224.0,
                joules: 402.0
            }
        );
        let c = bundle_chain_cost(&Bundle::new(1, 1600, 0.0), &PhaseCostTable::empty(), &g);
        assert_eq!(c, Cost::default());
    }

    fn synthetic(g: &GprsModel, bs: &[u64]) -> Vec<(u64, f64)> {
        bs.iter()
            .map(|&b| (b, g.energy_per_packet(b).unwrap()))
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_coefficients() {
        let g = GprsModel::default();
        let fit = fit_gprs_curve(&synthetic(&g, &[1, 10, 50, 100])).unwrap();
        assert!((fit.epp_a - 2.5).abs() < 1e-6);
        assert!((fit.epp_b - 0.6).abs() < 1e-6);
        assert!((fit.epp_c - 0.001).abs() < 1e-6);
        assert!(fit.residual < 1e-9);
        assert_eq!(fit.argmin(1, 10_000), 50);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let g = GprsModel::default();
        assert!(matches!(
            fit_gprs_curve(&synthetic(&g, &[10, 50])),
            Err(LinkError::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_gprs_curve(&[(10, 1.0), (10, 1.1), (50, 0.7), (50, 0.71)]),
            Err(LinkError::DegenerateFit(_))
        ));
    }

    #[test]
    fn fit_from_anchor_and_flanks() {
        let g = GprsModel::default();
        let samples = vec![
            (10, g.energy_per_packet(10).unwrap()),
            (50, 0.7),
            (100, g.energy_per_packet(100).unwrap()),
        ];
        let fit = fit_gprs_curve(&samples).unwrap();
        assert!(fit.argmin(1, 10_000).abs_diff(50) <= 1);
    }

    #[test]
    fn noisy_fit_keeps_argmin_near_truth() {
        let g = GprsModel::default();
        let truth = 50u64;
        let noise = Normal::new(0.0, 0.001).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let bs: Vec<u64> = (1..=200).collect();
        for _ in 0..200 {
            let samples: Vec<(u64, f64)> = bs
                .iter()
                .map(|&b| (b, g.energy_per_packet(b).unwrap() + noise.sample(&mut rng)))
                .collect();
            let fit = fit_gprs_curve(&samples).unwrap();
            let got = fit.argmin(1, 10_000);
            assert!(got.abs_diff(truth) <= 5, "fitted argmin {got}");
        }
    }

    #[test]
    fn sweep_rows_match_model() {
        let g = GprsModel::default();
        let rows = sweep_buffer(&g, 1, 200).unwrap();
        assert_eq!(rows.len(), 200);
        let best = rows
            .iter()
            .min_by(|a, b| {
                a.energy_per_packet_j
                    .partial_cmp(&b.energy_per_packet_j)
                    .unwrap()
            })
            .unwrap();
        assert_eq!(best.buffer_packets, 50);
        assert!(sweep_buffer(&g, 0, 3).is_err());
        assert!(sweep_buffer(&g, 5, 3).is_err());
        assert_eq!(sweep_buffer(&g, 50, 50).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn transfer_time_is_monotone(a in 1u64..6_000_000, d in 0u64..6_000_000) {
            let m = LinkModels::default();
            for tech in Technology::LOCAL {
                let t1 = m.transfer_time(tech, a).unwrap();
                let t2 = m.transfer_time(tech, a + d).unwrap();
                prop_assert!(t2 >= t1);
            }
        }
    }
}
