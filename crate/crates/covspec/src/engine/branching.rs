//! Parallel branching: geometrically decaying fan-out over possible
//! verification outcomes, with continuations pre-drafted during the
//! verification wait.

use crate::error::{CovError, Result};
use crate::probcore::{LogitVector, ProbDist};

/// Fan-out schedule F_j = ceil(F_0 * rho^j) for j = 0..=k.
pub fn fanout(f0: usize, rho: f64, k: usize) -> Result<Vec<usize>> {
    if f0 < 1 {
        return Err(CovError::ConfigError("branch fan-out F_0 must be >= 1".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CovError::ConfigError("branch decay rho must be in (0, 1)".into()));
    }
    Ok((0..=k)
        .map(|j| (f0 as f64 * rho.powi(j as i32)).ceil() as usize)
        .collect())
}

/// A token drafted ahead of time, with the distribution and logits it was
/// drawn from so it can re-enter the normal gate/verify pipeline.
#[derive(Debug, Clone)]
pub struct PredraftedToken {
    pub token: u32,
    pub dist: ProbDist,
    pub logits: LogitVector,
}

/// One speculative branch: a candidate outcome token and the continuation
/// drafted behind it.
#[derive(Debug, Clone)]
pub struct Branch {
    pub candidate: u32,
    pub continuation: Vec<PredraftedToken>,
}

/// Branches for every possible verification outcome of one segment:
/// index j < k is rejection-at-position-j (candidates are correction
/// guesses), index k is full accept (candidates are bonus guesses).
#[derive(Debug, Clone)]
pub struct BranchPlan {
    /// Committed length when the planned segment started.
    pub start_pos: usize,
    pub per_outcome: Vec<Vec<Branch>>,
    /// Draft-model forward passes spent planning (candidate distribution
    /// at the full-accept position plus all continuation tokens).
    pub planning_passes: usize,
}

impl BranchPlan {
    pub fn empty(start_pos: usize, k: usize) -> Self {
        Self {
            start_pos,
            per_outcome: vec![Vec::new(); k + 1],
            planning_passes: 0,
        }
    }
}

/// Top-`count` token IDs of `dist` by probability, ties to the lower ID,
/// optionally excluding one token.
pub(crate) fn top_candidates(dist: &ProbDist, count: usize, exclude: Option<u32>) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..dist.len() as u32)
        .filter(|t| Some(*t) != exclude)
        .collect();
    idx.sort_by(|&a, &b| {
        dist.get(b)
            .partial_cmp(&dist.get(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(count);
    idx
}
