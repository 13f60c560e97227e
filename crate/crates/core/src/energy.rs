//! Supercapacitor energy buffer and bicycle-dynamo harvesting.
//!
//! All quantities are plain `f64` in SI units (farads, volts, watts,
//! seconds, joules). Stored energy is `½·C·V²`; the *usable* energy is the
//! part above the cutoff voltage, `½·C·(V² − V_cutoff²)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack (joules) allowed when a draw equals the usable energy up to
/// floating-point rounding.
pub const ENERGY_EPSILON_J: f64 = 1e-9;

/// Default usable window for the supercapacitor bank.
pub const DEFAULT_V_MAX: f64 = 5.0;
pub const DEFAULT_V_CUTOFF: f64 = 2.0;
pub const DEFAULT_CAPACITANCE_F: f64 = 100.0;

/// Dynamo operating point: 2.9 W measured while cycling at 13 km/h.
pub const DYNAMO_ANCHOR_WATTS: f64 = 2.9;
pub const DYNAMO_ANCHOR_KMH: f64 = 13.0;
pub const DEFAULT_DYNAMO_MAX_WATTS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("insufficient energy: requested {requested} J, usable {available} J")]
    InsufficientEnergy { requested: f64, available: f64 },
    #[error("dynamo produces no power at {speed_kmh} km/h")]
    NoHarvest { speed_kmh: f64 },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> EnergyError {
    EnergyError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// An ideal supercapacitor with a usable voltage window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supercapacitor {
    capacitance: f64,
    voltage: f64,
    v_max: f64,
    v_cutoff: f64,
}

/// Result of [`Supercapacitor::charge`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub cap: Supercapacitor,
    pub stored: f64,
    pub shed: f64,
}

impl Supercapacitor {
    pub fn new(
        capacitance: f64,
        voltage: f64,
        v_max: f64,
        v_cutoff: f64,
    ) -> Result<Self, EnergyError> {
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(invalid("capacitance", format!("{capacitance} must be > 0")));
        }
        if !(v_cutoff.is_finite() && v_cutoff >= 0.0) {
            return Err(invalid("v_cutoff", format!("{v_cutoff} must be >= 0")));
        }
        if !(v_max.is_finite() && v_max > v_cutoff) {
            return Err(invalid(
                "v_max",
                format!("{v_max} must exceed v_cutoff {v_cutoff}"),
            ));
        }
        if !(voltage >= v_cutoff && voltage <= v_max) {
            return Err(invalid(
                "voltage",
                format!("{voltage} outside [{v_cutoff}, {v_max}]"),
            ));
        }
        Ok(Self {
            capacitance,
            voltage,
            v_max,
            v_cutoff,
        })
    }

    /// Default 5 V / 2 V window, starting empty (at cutoff).
    pub fn with_capacitance(capacitance: f64) -> Result<Self, EnergyError> {
        Self::new(
            capacitance,
            DEFAULT_V_CUTOFF,
            DEFAULT_V_MAX,
            DEFAULT_V_CUTOFF,
        )
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn v_cutoff(&self) -> f64 {
        self.v_cutoff
    }

    /// Total stored energy `½·C·V²`.
    pub fn stored_energy(&self) -> f64 {
        0.5 * self.capacitance * self.voltage * self.voltage
    }

    /// Energy available above the cutoff voltage.
    pub fn usable_energy(&self) -> f64 {
        let e =
            0.5 * self.capacitance * (self.voltage * self.voltage - self.v_cutoff * self.v_cutoff);
        e.max(0.0)
    }

    /// Room left before `v_max`.
    pub fn headroom(&self) -> f64 {
        let e = 0.5 * self.capacitance * (self.v_max * self.v_max - self.voltage * self.voltage);
        e.max(0.0)
    }

    /// Usable energy of a full bank.
    pub fn capacity(&self) -> f64 {
        0.5 * self.capacitance * (self.v_max * self.v_max - self.v_cutoff * self.v_cutoff)
    }

    fn with_energy_delta(&self, delta: f64) -> Self {
        let v2 = self.voltage * self.voltage + 2.0 * delta / self.capacitance;
        let voltage = v2.max(0.0).sqrt().clamp(self.v_cutoff, self.v_max);
        Self { voltage, ..*self }
    }

    /// Accept `efficiency·power·duration` joules; anything beyond `v_max` is shed.
    pub fn charge(
        &self,
        power: f64,
        duration: f64,
        efficiency: f64,
    ) -> Result<Charge, EnergyError> {
        if !(power >= 0.0 && power.is_finite()) {
            return Err(invalid("power", format!("{power} must be >= 0")));
        }
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(invalid("duration", format!("{duration} must be >= 0")));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(invalid(
                "efficiency",
                format!("{efficiency} must be in (0, 1]"),
            ));
        }
        let incoming = efficiency * power * duration;
        let headroom = self.headroom();
        if incoming >= headroom {
            let cap = Self {
                voltage: self.v_max,
                ..*self
            };
            return Ok(Charge {
                cap,
                stored: headroom,
                shed: incoming - headroom,
            });
        }
        Ok(Charge {
            cap: self.with_energy_delta(incoming),
            stored: incoming,
            shed: 0.0,
        })
    }

    /// Draw `energy` joules from the usable window.
    pub fn discharge(&self, energy: f64) -> Result<Supercapacitor, EnergyError> {
        if !(energy >= 0.0 && energy.is_finite()) {
            return Err(invalid("energy", format!("{energy} must be >= 0")));
        }
        let available = self.usable_energy();
        if energy > available + ENERGY_EPSILON_J {
            return Err(EnergyError::InsufficientEnergy {
                requested: energy,
                available,
            });
        }
        if energy == 0.0 {
            return Ok(*self);
        }
        Ok(self.with_energy_delta(-energy))
    }
}

/// Linear-in-speed bicycle dynamo with a power clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamo {
    pub power_per_speed: f64,
    pub max_power: f64,
    pub efficiency: f64,
}

impl Default for Dynamo {
    fn default() -> Self {
        Self {
            power_per_speed: DYNAMO_ANCHOR_WATTS / DYNAMO_ANCHOR_KMH,
            max_power: DEFAULT_DYNAMO_MAX_WATTS,
            efficiency: 1.0,
        }
    }
}

impl Dynamo {
    pub fn new(power_per_speed: f64, max_power: f64, efficiency: f64) -> Result<Self, EnergyError> {
        if !(power_per_speed >= 0.0 && power_per_speed.is_finite()) {
            return Err(invalid(
                "watts_per_kmh",
                format!("{power_per_speed} must be >= 0"),
            ));
        }
        if !(max_power >= 0.0 && max_power.is_finite()) {
            return Err(invalid("max_watts", format!("{max_power} must be >= 0")));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(invalid(
                "efficiency",
                format!("{efficiency} must be in (0, 1]"),
            ));
        }
        Ok(Self {
            power_per_speed,
            max_power,
            efficiency,
        })
    }

    /// Electrical output at `speed_kmh` (before conversion efficiency).
    pub fn power(&self, speed_kmh: f64) -> f64 {
        (self.power_per_speed * speed_kmh.max(0.0)).min(self.max_power)
    }
}

/// Seconds of riding at `speed_kmh` needed to bank `target` joules.
pub fn time_to_harvest(target: f64, speed_kmh: f64, dynamo: &Dynamo) -> Result<f64, EnergyError> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(invalid("target", format!("{target} must be >= 0")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let effective = dynamo.efficiency * dynamo.power(speed_kmh);
    if effective <= 0.0 {
        return Err(EnergyError::NoHarvest { speed_kmh });
    }
    Ok(target / effective)
}

/// Smallest capacitance whose `[v_cutoff, v_max]` window holds `target` joules.
pub fn required_capacitance(target: f64, v_max: f64, v_cutoff: f64) -> Result<f64, EnergyError> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(invalid("target", format!("{target} must be >= 0")));
    }
    if !(v_cutoff >= 0.0 && v_max > v_cutoff && v_max.is_finite()) {
        return Err(invalid(
            "v_max",
            format!("window requires v_max > v_cutoff >= 0, got {v_max} / {v_cutoff}"),
        ));
    }
    Ok(2.0 * target / (v_max * v_max - v_cutoff * v_cutoff))
}

/// Running account of everything that entered or left a store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Raw `power·duration` offered by the harvester.
    pub total_harvested: f64,
    /// `efficiency·power·duration`, i.e. what reached the store terminals.
    pub effective_harvested: f64,
    pub total_shed: f64,
    pub total_discharged: f64,
    pub per_phase: Vec<(String, f64)>,
}

impl EnergyLedger {
    /// Net change the ledger predicts for the stored energy.
    pub fn net(&self) -> f64 {
        self.effective_harvested - self.total_shed - self.total_discharged
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Capacitor(Supercapacitor),
    Unlimited,
}

/// A node's energy store together with its ledger.
///
/// `Unlimited` stands in for a mains- or battery-backed node whose budget
/// never constrains negotiation; draws are still recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyStore {
    cell: Cell,
    initial_stored: f64,
    ledger: EnergyLedger,
}

impl EnergyStore {
    pub fn capacitor(cap: Supercapacitor) -> Self {
        Self {
            cell: Cell::Capacitor(cap),
            initial_stored: cap.stored_energy(),
            ledger: EnergyLedger::default(),
        }
    }

    pub fn unlimited() -> Self {
        Self {
            cell: Cell::Unlimited,
            initial_stored: 0.0,
            ledger: EnergyLedger::default(),
        }
    }

    pub fn is_unlimited(&self) -> bool {
        matches!(self.cell, Cell::Unlimited)
    }

    pub fn supercapacitor(&self) -> Option<&Supercapacitor> {
        match &self.cell {
            Cell::Capacitor(c) => Some(c),
            Cell::Unlimited => None,
        }
    }

    pub fn voltage(&self) -> Option<f64> {
        self.supercapacitor().map(Supercapacitor::voltage)
    }

    pub fn usable_energy(&self) -> f64 {
        match &self.cell {
            Cell::Capacitor(c) => c.usable_energy(),
            Cell::Unlimited => f64::INFINITY,
        }
    }

    /// Stored energy; the unlimited store reports its net ledger balance.
    pub fn stored_energy(&self) -> f64 {
        match &self.cell {
            Cell::Capacitor(c) => c.stored_energy(),
            Cell::Unlimited => self.initial_stored + self.ledger.net(),
        }
    }

    pub fn initial_stored(&self) -> f64 {
        self.initial_stored
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    /// Returns `(stored, shed)`.
    pub fn charge(
        &mut self,
        power: f64,
        duration: f64,
        efficiency: f64,
    ) -> Result<(f64, f64), EnergyError> {
        match &mut self.cell {
            Cell::Capacitor(c) => {
                let res = c.charge(power, duration, efficiency)?;
                *c = res.cap;
                self.ledger.total_harvested += power * duration;
                self.ledger.effective_harvested += efficiency * power * duration;
                self.ledger.total_shed += res.shed;
                Ok((res.stored, res.shed))
            }
            Cell::Unlimited => {
                // nothing to fill; everything offered is shed
                let incoming = efficiency * power * duration;
                self.ledger.total_harvested += power * duration;
                self.ledger.effective_harvested += incoming;
                self.ledger.total_shed += incoming;
                Ok((0.0, incoming))
            }
        }
    }

    pub fn discharge(&mut self, label: &str, energy: f64) -> Result<(), EnergyError> {
        if let Cell::Capacitor(c) = &mut self.cell {
            *c = c.discharge(energy)?;
        } else if !(energy >= 0.0 && energy.is_finite()) {
            return Err(invalid("energy", format!("{energy} must be >= 0")));
        }
        self.ledger.total_discharged += energy;
        self.ledger.per_phase.push((label.to_owned(), energy));
        Ok(())
    }

    /// Relative mismatch between the store state and its ledger.
    pub fn conservation_error(&self) -> f64 {
        let actual = self.stored_energy() - self.initial_stored;
        let predicted = self.ledger.net();
        let scale = self
            .initial_stored
            .abs()
            .max(self.ledger.effective_harvested)
            .max(self.ledger.total_discharged)
            .max(1.0);
        (actual - predicted).abs() / scale
    }
}
