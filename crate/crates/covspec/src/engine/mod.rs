//! Protocol state machines: the device drafting loop with margin gating,
//! edge verification, decoupled residual correction, draft-length
//! adaptation, and parallel branching. Engine code is transport-agnostic;
//! the harness moves messages between the two roles.

mod branching;
mod controller;
mod device;
mod edge;

pub use branching::{fanout, Branch, BranchPlan, PredraftedToken};
pub use controller::{ControllerConfig, LengthController};
pub use device::{CommitKind, DeviceRole, DeviceStats, DraftSegment};
pub use edge::{acceptance_decision, EdgeRole, EdgeStats, FullOutcome};

use crate::error::{CovError, Result};
use crate::probcore::{sample, ProbDist, SeededRng};
use serde::{Deserialize, Serialize};

/// Per-token gate decision against the margin threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub margin: f64,
    pub gamma: f64,
    /// True when the token must go through edge verification.
    pub verify: bool,
}

impl GateDecision {
    pub fn new(margin: f64, gamma: f64) -> Self {
        Self {
            margin,
            gamma,
            verify: margin < gamma,
        }
    }
}

/// Verification result for one uplinked segment.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    /// Accepted prefix length, in [0, k].
    pub accepted_len: usize,
    pub payload: OutcomePayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomePayload {
    /// Full accept: one extra token sampled from the target model.
    BonusToken(u32),
    /// First rejection: full-vocabulary target logits at that position,
    /// as the float16 codes that travel on the wire.
    TargetLogits(Vec<u16>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Margin threshold; tokens with margin >= gamma commit locally.
    /// Values above 1 disable gating entirely.
    pub gamma: f64,
    /// Argmax everywhere instead of sampling (deterministic runs).
    pub greedy: bool,
    pub max_new_tokens: usize,
    pub eos_token: Option<u32>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            greedy: false,
            max_new_tokens: 1024,
            eos_token: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(CovError::ConfigError("gamma must be finite and >= 0".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(CovError::ConfigError("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Picks a token from `dist`: argmax under greedy decoding, otherwise an
/// inverse-CDF draw from `rng`.
pub(crate) fn pick_token(dist: &ProbDist, greedy: bool, rng: &mut SeededRng) -> u32 {
    if greedy {
        dist.argmax()
    } else {
        sample(dist, rng)
    }
}

/// Residual correction at a rejected position: samples from
/// max(p_t - p_d, 0) normalized. When quantization makes the residual
/// vanish, falls back to sampling from `p_t` directly.
pub fn residual_correct(
    p_t: &ProbDist,
    p_d: &ProbDist,
    greedy: bool,
    rng: &mut SeededRng,
) -> Result<u32> {
    match crate::probcore::residual_dist(p_t, p_d) {
        Ok(res) => Ok(pick_token(&res, greedy, rng)),
        Err(CovError::EmptyResidual) => Ok(pick_token(p_t, greedy, rng)),
        Err(e) => Err(e),
    }
}
