use serde::{Deserialize, Serialize};

/// GPRS packets are fixed at 32 bytes.
pub const DEFAULT_PACKET_BYTES: u32 = 32;

pub type BundleId = u64;

/// A unit of application data moving FAN → DM → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub id: BundleId,
    pub size: u64,
    pub packets: u64,
    pub created_at: f64,
}

impl Bundle {
    pub fn new(id: BundleId, size: u64, created_at: f64) -> Self {
        Self::with_packet_size(id, size, created_at, DEFAULT_PACKET_BYTES)
    }

    pub fn with_packet_size(id: BundleId, size: u64, created_at: f64, packet_bytes: u32) -> Self {
        assert!(size > 0, "bundle size must be positive");
        assert!(packet_bytes > 0, "packet size must be positive");
        Self {
            id,
            size,
            packets: size.div_ceil(u64::from(packet_bytes)),
            created_at,
        }
    }
}
