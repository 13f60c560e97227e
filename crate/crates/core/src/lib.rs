//! Energy-negotiated delay-tolerant bundle transfer between a dynamo-powered
//! data mule and a field aggregation node.
//!
//! - [`energy`]: supercapacitor store, dynamo harvesting, energy ledger.
//! - [`links`]: Bluetooth/Wi-Fi latency curves, GPRS buffer model, duty-cycle
//!   phase costs and curve calibration.
//! - [`protocol`]: negotiation and the FAN/DM state machines.
//! - [`sim`]: deterministic discrete-event simulator, traces and metrics.

pub mod bundle;
pub mod energy;
pub mod format;
pub mod links;
pub mod protocol;
pub mod sim;

pub use bundle::{Bundle, BundleId, DEFAULT_PACKET_BYTES};
pub use energy::{Dynamo, EnergyError, EnergyLedger, EnergyStore, Supercapacitor};
pub use links::{Cost, GprsModel, LinkError, LinkModels, PhaseCost, PhaseCostTable, Technology};
pub use protocol::{
    negotiate, BundleCosts, ChainCosts, ChannelQuality, DmNode, FanNode, LinkCosts, Message,
    NegotiationInputs, NegotiationOutcome, NodeKind, ProtocolError,
};
pub use sim::{compute_metrics, run, Metrics, RunReport, Scenario, SimError, TraceRecord};
