//! Experiment runner: episode driving, speedup/communication/cost
//! metrics, CSV/JSON report serialization, and the enumeration oracle
//! used to certify the speculative-sampling identity.

mod episode;
mod oracle;

pub use episode::{
    build_world, edge_handle, make_device, make_edge, run_device_episode, run_episode, serve_edge,
    EpisodeOutput, LoopbackChannel, RejectionTrace, RemoteChannel, VerifierChannel, World,
};
pub use oracle::{exactness_oracle, table_model, DistFn};

use crate::error::{CovError, Result};
use serde::{Deserialize, Serialize};

/// Proxy API pricing: $0.80 per million tokens, input and output.
pub const PRICE_IN_PER_M: f64 = 0.80;
pub const PRICE_OUT_PER_M: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Metrics from the modeled virtual clock (default; wall-clock of
    /// toy models says nothing about real VLM latencies).
    Modeled,
    WallClock,
}

/// Modeled compute latencies. Real model latencies are out of scope, so
/// speedups are computed against these stand-ins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    /// Seconds per draft-model forward pass on the device.
    pub device_token_s: f64,
    /// Seconds per verification round on the edge.
    pub edge_round_s: f64,
    pub mode: ClockMode,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            device_token_s: 0.020,
            edge_round_s: 0.120,
            mode: ClockMode::Modeled,
        }
    }
}

/// Per-round detail for the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDetail {
    pub k: usize,
    pub n_acc: usize,
    pub s_up_bits: u64,
    pub s_down_bits: u64,
    pub t_comm_s: f64,
    pub branch_hit: bool,
}

/// Outcome of one full episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub committed_text: Vec<u32>,
    pub tokens_per_second: f64,
    pub speedup_vs_edge_only: f64,
    pub comm_megabytes: f64,
    pub cost_reduction_pct: f64,
    pub acceptance_rate: f64,
    pub rounds: u64,
    pub gated_fraction: f64,
    /// Modeled episode duration.
    pub modeled_time_s: f64,
    /// Modeled device idle time (verification waits not covered by
    /// branch planning).
    pub idle_s: f64,
    /// Measured wall time; excluded from determinism comparisons.
    pub wall_time_s: f64,
    pub rounds_detail: Vec<RoundDetail>,
}

/// API cost in dollars for one generation.
pub fn api_cost(prefill_tokens: u64, decode_tokens: u64, price_in: f64, price_out: f64) -> f64 {
    (prefill_tokens as f64 * price_in + decode_tokens as f64 * price_out) / 1e6
}

/// Percentage cost reduction against an edge-only baseline generating
/// `baseline_tokens` with the same prefill.
pub fn cost_reduction(
    prefill_tokens: u64,
    decode_tokens_target_side: u64,
    baseline_tokens: u64,
    price_in: f64,
    price_out: f64,
) -> Result<f64> {
    let baseline = api_cost(prefill_tokens, baseline_tokens, price_in, price_out);
    if baseline <= 0.0 {
        return Err(CovError::DegenerateBaseline);
    }
    let system = api_cost(prefill_tokens, decode_tokens_target_side, price_in, price_out);
    Ok(100.0 * (baseline - system) / baseline)
}

/// CSV schema, one row per run.
pub const CSV_HEADER: &str = "run_id,seed,gamma,lambda,B_vis,k_min,k_max,F0,rho,snr_db,\
bandwidth_hz,agreement,tps,speedup,comm_mb,cost_red_pct,acceptance_rate,rounds,gated_fraction";

pub fn csv_row(report: &RunReport, cfg: &crate::config::ExperimentConfig) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        report.run_id,
        report.seed,
        cfg.engine.gamma,
        cfg.selection.lambda,
        cfg.selection.b_vis,
        cfg.controller.k_min,
        cfg.controller.k_max,
        cfg.branching.f0,
        cfg.branching.rho,
        cfg.channel.snr_db,
        cfg.channel.bandwidth_hz,
        cfg.model.agreement,
        report.tokens_per_second,
        report.speedup_vs_edge_only,
        report.comm_megabytes,
        report.cost_reduction_pct,
        report.acceptance_rate,
        report.rounds,
        report.gated_fraction
    )
}
