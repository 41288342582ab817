//! Point-to-point wireless link model.
//!
//! Latency is payload bits divided by the Shannon rate
//! `B * log2(1 + 10^(SNR/10))` of a link with bandwidth `B` Hz and
//! received SNR in dB.

use crate::error::{CovError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub snr_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        // 5 MHz at 10 dB.
        Self {
            bandwidth_hz: 5e6,
            snr_db: 10.0,
        }
    }
}

impl ChannelConfig {
    /// Achievable rate in bits per second.
    pub fn rate_bps(&self) -> f64 {
        self.bandwidth_hz * (1.0 + 10f64.powf(self.snr_db / 10.0)).log2()
    }
}

/// Transmission latency in seconds for a payload of `bits`.
pub fn latency(bits: u64, channel: &ChannelConfig) -> Result<f64> {
    if channel.bandwidth_hz <= 0.0 {
        return Err(CovError::InvalidChannel);
    }
    Ok(bits as f64 / channel.rate_bps())
}
