//! Adaptive draft-length control.
//!
//! An exponential moving average of token-level acceptance outcomes
//! drives a hierarchical rule: shrink the draft length when acceptance
//! drops, grow it when acceptance is reliable and the rejection-case
//! transmission latency is small, hold it otherwise. Updates are
//! multiplicative with half-even rounding and clipped to [k_min, k_max].

use crate::error::{CovError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Whether the draft length adapts at all.
    pub enabled: bool,
    /// EMA smoothing factor, in (0, 1).
    pub eta: f64,
    /// Shrink when the EMA falls to or below this.
    pub p_low: f64,
    /// Grow only when the EMA reaches this and latency allows.
    pub p_up: f64,
    /// Reference rejection-latency threshold in seconds.
    pub t_ref_s: f64,
    /// Multiplicative scaling factor, > 1.
    pub scale: f64,
    pub k_init: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            eta: 0.1,
            p_low: 0.4,
            p_up: 0.8,
            t_ref_s: 0.050,
            scale: 2.0,
            k_init: 4,
            k_min: 1,
            k_max: 16,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(CovError::ConfigError("eta outside (0, 1)".into()));
        }
        if self.p_low >= self.p_up {
            return Err(CovError::ConfigError("p_low must be below p_up".into()));
        }
        if self.scale <= 1.0 {
            return Err(CovError::ConfigError("scale must exceed 1".into()));
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(CovError::ConfigError("need 1 <= k_min <= k_max".into()));
        }
        if self.k_init < self.k_min || self.k_init > self.k_max {
            return Err(CovError::ConfigError("k_init outside [k_min, k_max]".into()));
        }
        Ok(())
    }
}

/// Runtime state of the draft-length controller.
#[derive(Debug, Clone)]
pub struct LengthController {
    cfg: ControllerConfig,
    p_hat: f64,
    k: usize,
}

impl LengthController {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            p_hat: 1.0,
            k: cfg.k_init,
        })
    }

    /// Resumes a controller from checkpointed state.
    pub fn resume(cfg: ControllerConfig, p_hat: f64, k: usize) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..=1.0).contains(&p_hat) {
            return Err(CovError::ConfigError("p_hat outside [0, 1]".into()));
        }
        if k < cfg.k_min || k > cfg.k_max {
            return Err(CovError::ConfigError("k outside [k_min, k_max]".into()));
        }
        Ok(Self { cfg, p_hat, k })
    }

    pub fn current_k(&self) -> usize {
        self.k
    }

    pub fn p_hat(&self) -> f64 {
        self.p_hat
    }

    /// Direction of the next length change given the current EMA and the
    /// estimated rejection-case transmission latency.
    pub fn phi(&self, t_rej_estimate_s: f64) -> i32 {
        if self.p_hat <= self.cfg.p_low {
            -1
        } else if self.p_hat >= self.cfg.p_up && t_rej_estimate_s <= self.cfg.t_ref_s {
            1
        } else {
            0
        }
    }

    /// Applies one verification round's outcome: `n_acc` accepted out of
    /// `k_used` drafted tokens, then the hierarchical length update.
    /// Returns the draft length for the next round.
    pub fn update(&mut self, n_acc: usize, k_used: usize, t_rej_estimate_s: f64) -> usize {
        debug_assert!(n_acc <= k_used);
        // Accepted observations first, matching segment position order.
        for _ in 0..n_acc {
            self.p_hat = (1.0 - self.cfg.eta) * self.p_hat + self.cfg.eta;
        }
        for _ in 0..(k_used - n_acc) {
            self.p_hat *= 1.0 - self.cfg.eta;
        }
        if !self.cfg.enabled {
            return self.k;
        }
        let phi = self.phi(t_rej_estimate_s);
        let scaled = self.k as f64 * self.cfg.scale.powi(phi);
        let rounded = scaled.round_ties_even() as i64;
        self.k = rounded.clamp(self.cfg.k_min as i64, self.cfg.k_max as i64) as usize;
        self.k
    }
}
