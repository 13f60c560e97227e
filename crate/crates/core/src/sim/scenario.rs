use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleId};
use crate::energy::{self, Dynamo, Supercapacitor};
use crate::links::{GprsModel, LinkModels, PhaseCostTable};
use crate::protocol::{
    ChannelQuality, DataRateHint, DEFAULT_DM_RESERVE_J, DEFAULT_ELIGIBILITY_THRESHOLD,
    NEGOTIATION_LATENCY_S,
};

/// A scenario that failed to parse or validate, with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, e.g. `capacitor.capacitance_f`.
    pub key: String,
    /// 1-based line and column when the error came from the parser.
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            position: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((line, col)) = self.position {
            write!(f, "line {line} column {col}: ")?;
        }
        if self.key.is_empty() || self.key == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "key `{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitorConfig {
    pub capacitance_f: f64,
    /// Starting voltage; defaults to `v_cutoff` (empty bank).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_init: Option<f64>,
    pub v_max: f64,
    pub v_cutoff: f64,
}

impl Default for CapacitorConfig {
    fn default() -> Self {
        Self {
            capacitance_f: energy::DEFAULT_CAPACITANCE_F,
            v_init: None,
            v_max: energy::DEFAULT_V_MAX,
            v_cutoff: energy::DEFAULT_V_CUTOFF,
        }
    }
}

impl CapacitorConfig {
    pub fn build(&self, prefix: &str) -> Result<Supercapacitor, ConfigError> {
        let key = |k: &str| format!("{prefix}.{k}");
        if !(self.capacitance_f > 0.0 && self.capacitance_f.is_finite()) {
            return Err(ConfigError::new(
                key("capacitance_f"),
                format!("must be > 0, got {}", self.capacitance_f),
            ));
        }
        if !(self.v_cutoff >= 0.0 && self.v_cutoff.is_finite()) {
            return Err(ConfigError::new(
                key("v_cutoff"),
                format!("must be >= 0, got {}", self.v_cutoff),
            ));
        }
        if !(self.v_max > self.v_cutoff && self.v_max.is_finite()) {
            return Err(ConfigError::new(
                key("v_max"),
                format!(
                    "must exceed v_cutoff ({}), got {}",
                    self.v_cutoff, self.v_max
                ),
            ));
        }
        let v = self.v_init.unwrap_or(self.v_cutoff);
        if !(v >= self.v_cutoff && v <= self.v_max) {
            return Err(ConfigError::new(
                key("v_init"),
                format!("must lie in [{}, {}], got {v}", self.v_cutoff, self.v_max),
            ));
        }
        Supercapacitor::new(self.capacitance_f, v, self.v_max, self.v_cutoff)
            .map_err(|e| ConfigError::new(prefix, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamoConfig {
    pub watts_per_kmh: f64,
    pub max_watts: f64,
    pub efficiency: f64,
}

impl Default for DynamoConfig {
    fn default() -> Self {
        let d = Dynamo::default();
        Self {
            watts_per_kmh: d.power_per_speed,
            max_watts: d.max_power,
            efficiency: d.efficiency,
        }
    }
}

impl DynamoConfig {
    pub fn build(&self) -> Result<Dynamo, ConfigError> {
        if !(self.watts_per_kmh >= 0.0 && self.watts_per_kmh.is_finite()) {
            return Err(ConfigError::new(
                "dynamo.watts_per_kmh",
                format!("must be >= 0, got {}", self.watts_per_kmh),
            ));
        }
        if !(self.max_watts >= 0.0 && self.max_watts.is_finite()) {
            return Err(ConfigError::new(
                "dynamo.max_watts",
                format!("must be >= 0, got {}", self.max_watts),
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(ConfigError::new(
                "dynamo.efficiency",
                format!("must be in (0, 1], got {}", self.efficiency),
            ));
        }
        Dynamo::new(self.watts_per_kmh, self.max_watts, self.efficiency)
            .map_err(|e| ConfigError::new("dynamo", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegotiationConfig {
    pub latency_s: f64,
    pub eligibility_threshold: f64,
    pub dm_reserve_j: f64,
    pub fan_reserve_j: f64,
    pub channel_quality: ChannelQuality,
    pub transmit_power: f64,
    pub data_rate_hint: DataRateHint,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        Self {
            latency_s: NEGOTIATION_LATENCY_S,
            eligibility_threshold: DEFAULT_ELIGIBILITY_THRESHOLD,
            dm_reserve_j: DEFAULT_DM_RESERVE_J,
            fan_reserve_j: 0.0,
            channel_quality: ChannelQuality::default(),
            transmit_power: 1.0,
            data_rate_hint: DataRateHint::default(),
        }
    }
}

/// One leg of riding. Legs without `start_s` follow the previous leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RideLeg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    pub speed_kmh: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contact {
    pub start_s: f64,
    pub max_duration_s: f64,
    /// Overrides `negotiation.channel_quality` for this contact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_quality: Option<ChannelQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub id: BundleId,
    pub size_bytes: u64,
    #[serde(default)]
    pub created_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

/// Everything a run needs. Every section is optional and falls back to the
/// calibrated defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// The mule's bank.
    pub capacitor: CapacitorConfig,
    /// The FAN's bank; absent means an unconstrained supply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fan_capacitor: Option<CapacitorConfig>,
    pub dynamo: DynamoConfig,
    pub links: LinkModels,
    pub gprs: GprsModel,
    pub phase_table: PhaseCostTable,
    pub negotiation: NegotiationConfig,
    pub rides: Vec<RideLeg>,
    pub contacts: Vec<Contact>,
    pub workload: Vec<BundleSpec>,
    /// Independent loss probability for every BUNDLE and ACK message.
    pub loss: f64,
    /// Probability that a GPRS flush fails to reach the server.
    pub gprs_failure: f64,
    /// Intervals without GPRS coverage; flushes wait for coverage.
    pub gprs_blackouts: Vec<Window>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            seed: None,
            capacitor: CapacitorConfig::default(),
            fan_capacitor: None,
            dynamo: DynamoConfig::default(),
            links: LinkModels::default(),
            gprs: GprsModel::default(),
            phase_table: PhaseCostTable::default(),
            negotiation: NegotiationConfig::default(),
            rides: Vec::new(),
            contacts: Vec::new(),
            workload: Vec::new(),
            loss: 0.0,
            gprs_failure: 0.0,
            gprs_blackouts: Vec::new(),
            horizon_s: None,
        }
    }
}

/// A ride leg with its start resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedRide {
    pub start: f64,
    pub speed_kmh: f64,
    pub duration: f64,
}

impl ResolvedRide {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

fn non_negative(key: String, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            key,
            format!("must be a finite value >= 0, got {v}"),
        ))
    }
}

fn probability(key: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::new(
            key,
            format!("probability must be in [0, 1], got {p}"),
        ))
    }
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            ConfigError {
                key,
                position: Some((inner.line(), inner.column())),
                message: inner.to_string(),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, super::SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::SimError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn rides_resolved(&self) -> Vec<ResolvedRide> {
        let mut t = 0.0;
        self.rides
            .iter()
            .map(|leg| {
                let start = leg.start_s.unwrap_or(t);
                t = start + leg.duration_s;
                ResolvedRide {
                    start,
                    speed_kmh: leg.speed_kmh,
                    duration: leg.duration_s,
                }
            })
            .collect()
    }

    pub fn bundles(&self) -> Vec<Bundle> {
        self.workload
            .iter()
            .map(|b| {
                Bundle::with_packet_size(b.id, b.size_bytes, b.created_at_s, self.gprs.packet_bytes)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.capacitor.build("capacitor")?;
        if let Some(fc) = &self.fan_capacitor {
            fc.build("fan_capacitor")?;
        }
        self.dynamo.build()?;
        self.links
            .validate()
            .map_err(|e| ConfigError::new("links", e.to_string()))?;
        self.gprs.validate().map_err(|e| {
            let key = match &e {
                crate::links::LinkError::InvalidParameter { name, .. } => format!("gprs.{name}"),
                crate::links::LinkError::InvalidBuffer(_) => "gprs.buffer_packets".into(),
                _ => "gprs".into(),
            };
            ConfigError::new(key, e.to_string())
        })?;
        self.phase_table
            .validate()
            .map_err(|e| ConfigError::new("phase_table", e.to_string()))?;

        let n = &self.negotiation;
        non_negative("negotiation.latency_s".into(), n.latency_s)?;
        probability("negotiation.eligibility_threshold", n.eligibility_threshold)?;
        non_negative("negotiation.dm_reserve_j".into(), n.dm_reserve_j)?;
        non_negative("negotiation.fan_reserve_j".into(), n.fan_reserve_j)?;
        n.channel_quality
            .validate()
            .map_err(|m| ConfigError::new("negotiation.channel_quality", m))?;

        probability("loss", self.loss)?;
        probability("gprs_failure", self.gprs_failure)?;
        if let Some(h) = self.horizon_s {
            non_negative("horizon_s".into(), h)?;
        }

        let rides = self.rides_resolved();
        for (i, r) in rides.iter().enumerate() {
            non_negative(format!("rides[{i}].start_s"), r.start)?;
            non_negative(format!("rides[{i}].speed_kmh"), r.speed_kmh)?;
            non_negative(format!("rides[{i}].duration_s"), r.duration)?;
        }
        for (i, c) in self.contacts.iter().enumerate() {
            non_negative(format!("contacts[{i}].start_s"), c.start_s)?;
            if !(c.max_duration_s > 0.0 && c.max_duration_s.is_finite()) {
                return Err(ConfigError::new(
                    format!("contacts[{i}].max_duration_s"),
                    format!("must be > 0, got {}", c.max_duration_s),
                ));
            }
            if let Some(q) = &c.channel_quality {
                q.validate()
                    .map_err(|m| ConfigError::new(format!("contacts[{i}].channel_quality"), m))?;
            }
        }
        let mut windows: Vec<(f64, f64, String)> = self
            .contacts
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    c.start_s,
                    c.start_s + c.max_duration_s,
                    format!("contacts[{i}]"),
                )
            })
            .collect();
        windows.extend(
            rides
                .iter()
                .enumerate()
                .filter(|(_, r)| r.duration > 0.0)
                .map(|(i, r)| (r.start, r.end(), format!("rides[{i}]"))),
        );
        for (i, a) in windows.iter().enumerate() {
            for b in &windows[i + 1..] {
                if overlaps((a.0, a.1), (b.0, b.1)) {
                    return Err(ConfigError::new(a.2.clone(), format!("overlaps {}", b.2)));
                }
            }
        }
        for (i, w) in self.gprs_blackouts.iter().enumerate() {
            non_negative(format!("gprs_blackouts[{i}].start_s"), w.start_s)?;
            if !(w.end_s > w.start_s && w.end_s.is_finite()) {
                return Err(ConfigError::new(
                    format!("gprs_blackouts[{i}].end_s"),
                    "must exceed start_s",
                ));
            }
        }

        let mut ids = BTreeSet::new();
        for (i, b) in self.workload.iter().enumerate() {
            if b.size_bytes == 0 {
                return Err(ConfigError::new(
                    format!("workload[{i}].size_bytes"),
                    "must be > 0",
                ));
            }
            non_negative(format!("workload[{i}].created_at_s"), b.created_at_s)?;
            if !ids.insert(b.id) {
                return Err(ConfigError::new(
                    format!("workload[{i}].id"),
                    format!("duplicate bundle id {}", b.id),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.capacitor.build("capacitor").unwrap().usable_energy(), 0.0);
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let err = Scenario::from_json(r#"{"capacitor": {"capacitance": 5}}"#).unwrap_err();
        assert!(err.key.starts_with("capacitor"), "{err}");
        assert!(err.message.contains("unknown field"), "{err}");
        assert!(err.position.is_some());
    }

    #[test]
    fn negative_capacitance_names_the_key() {
        let err = Scenario::from_json(r#"{"capacitor": {"capacitance_f": -1}}"#).unwrap_err();
        assert_eq!(err.key, "capacitor.capacitance_f");
        assert!(err.to_string().contains("capacitor.capacitance_f"));
    }

    #[test]
    fn wrong_type_reports_line() {
        let err = Scenario::from_json("{\n  \"loss\": \"high\"\n}").unwrap_err();
        assert_eq!(err.key, "loss");
        assert_eq!(err.position.map(|p| p.0), Some(2));
    }

    #[test]
    fn structural_checks() {
        let bad = [
            (r#"{"loss": 1.5}"#, "loss"),
            (
                r#"{"contacts": [{"start_s": 0, "max_duration_s": 100}, {"start_s": 50, "max_duration_s": 100}]}"#,
                "contacts[0]",
            ),
            (
                r#"{"rides": [{"speed_kmh": 13, "duration_s": 100}], "contacts": [{"start_s": 50, "max_duration_s": 10}]}"#,
                "contacts[0]",
            ),
            (
                r#"{"workload": [{"id": 1, "size_bytes": 10}, {"id": 1, "size_bytes": 20}]}"#,
                "workload[1].id",
            ),
            (
                r#"{"workload": [{"id": 1, "size_bytes": 0}]}"#,
                "workload[0].size_bytes",
            ),
            (r#"{"gprs": {"buffer_packets": 0}}"#, "gprs.buffer_packets"),
            (r#"{"gprs": {"epp_a": -2}}"#, "gprs.epp_a"),
            (r#"{"capacitor": {"v_init": 9}}"#, "capacitor.v_init"),
            (r#"{"dynamo": {"efficiency": 0}}"#, "dynamo.efficiency"),
        ];
        for (doc, key) in bad {
            let err = Scenario::from_json(doc).unwrap_err();
            assert_eq!(err.key, key, "{doc}: {err}");
        }
    }

    #[test]
    fn ride_legs_chain_without_explicit_starts() {
        let s = Scenario::from_json(
            r#"{"rides": [{"speed_kmh": 13, "duration_s": 100}, {"speed_kmh": 10, "duration_s": 50}, {"start_s": 1000, "speed_kmh": 5, "duration_s": 1}]}"#,
        )
        .unwrap();
        let r = s.rides_resolved();
        assert_eq!((r[0].start, r[1].start, r[2].start), (0.0, 100.0, 1000.0));
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let s = Scenario {
            name: "x".into(),
            workload: vec![BundleSpec {
                id: 3,
                size_bytes: 1600,
                created_at_s: 0.0,
            }],
            ..Scenario::default()
        };
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
