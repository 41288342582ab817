//! Payload-size accounting for the uplink/downlink exchange.
//!
//! Bit counts follow the transmission model exactly: drafted tokens carry
//! an ID plus one draft logit each, gated context tokens carry IDs only,
//! and the downlink is either (accepted length, bonus token) or (rejection
//! position, full-vocabulary target logits). Frame type/length bytes are
//! tracked separately as overhead so the payload metric stays reproducible.

use serde::{Deserialize, Serialize};

/// Bit widths for every payload field. Logits default to float16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadConfig {
    /// Bits per token ID (32 covers VLM vocabularies above 100k).
    pub b_id: u64,
    /// Bits per transmitted draft logit.
    pub b_logit: u64,
    /// Bits per transmitted target logit.
    pub b_logit_tar: u64,
    /// Bits for the accepted-length field.
    pub b_acc: u64,
    /// Bits for the bonus token.
    pub b_bonus: u64,
    /// Bits for the rejection position.
    pub b_rej: u64,
}

impl Default for PayloadConfig {
    fn default() -> Self {
        Self {
            b_id: 32,
            b_logit: 16,
            b_logit_tar: 16,
            b_acc: 16,
            b_bonus: 32,
            b_rej: 16,
        }
    }
}

/// Which downlink branch a round took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownlinkKind {
    /// All drafted tokens accepted; the edge returns one bonus token.
    Accept,
    /// First rejection; the edge returns the full target logit vector.
    Reject { vocab_size: u64 },
    /// Coupled-correction ablation: the edge returns the corrected token.
    Correct,
}

/// Uplink payload bits: drafted tokens carry ID + one draft logit, gated
/// context tokens carry IDs only.
pub fn uplink_bits(n_draft: u64, n_gated: u64, cfg: &PayloadConfig) -> u64 {
    (n_draft + n_gated) * cfg.b_id + n_draft * cfg.b_logit
}

/// Uplink payload bits when full-vocabulary draft logits must be uploaded
/// per drafted position (the decoupled-correction-off ablation).
pub fn uplink_bits_full_logits(n_draft: u64, n_gated: u64, vocab_size: u64, cfg: &PayloadConfig) -> u64 {
    (n_draft + n_gated) * cfg.b_id + n_draft * vocab_size * cfg.b_logit
}

/// Downlink payload bits per outcome branch.
pub fn downlink_bits(kind: DownlinkKind, cfg: &PayloadConfig) -> u64 {
    match kind {
        DownlinkKind::Accept => cfg.b_acc + cfg.b_bonus,
        DownlinkKind::Reject { vocab_size } => cfg.b_rej + vocab_size * cfg.b_logit_tar,
        DownlinkKind::Correct => cfg.b_acc + cfg.b_bonus,
    }
}

/// One recorded interaction round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub s_up_bits: u64,
    pub s_down_bits: u64,
    pub t_comm_s: f64,
}

/// Cumulative uplink/downlink accounting for one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PayloadLedger {
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// Gated-context ID bits, reported separately so strict drafted-token
    /// accounting can be extracted.
    pub gated_context_bits: u64,
    /// Frame type/length bytes, outside the payload metric.
    pub overhead_bits: u64,
    pub rounds: Vec<RoundRecord>,
}

impl PayloadLedger {
    pub fn record_round(&mut self, s_up: u64, s_down: u64, t_comm_s: f64) {
        self.uplink_bits += s_up;
        self.downlink_bits += s_down;
        self.rounds.push(RoundRecord {
            s_up_bits: s_up,
            s_down_bits: s_down,
            t_comm_s,
        });
    }

    pub fn record_gated_context(&mut self, bits: u64) {
        self.gated_context_bits += bits;
    }

    pub fn record_overhead(&mut self, bits: u64) {
        self.overhead_bits += bits;
    }

    pub fn total_bits(&self) -> u64 {
        self.uplink_bits + self.downlink_bits
    }

    pub fn total_megabytes(&self) -> f64 {
        self.total_bits() as f64 / 8.0 / 1e6
    }

    pub fn total_t_comm_s(&self) -> f64 {
        self.rounds.iter().map(|r| r.t_comm_s).sum()
    }

    /// Cumulative totals must equal the sum of per-round records.
    pub fn is_consistent(&self) -> bool {
        let up: u64 = self.rounds.iter().map(|r| r.s_up_bits).sum();
        let down: u64 = self.rounds.iter().map(|r| r.s_down_bits).sum();
        up == self.uplink_bits && down == self.downlink_bits
    }
}
