//! Visual token selection for device-side drafting.
//!
//! The pipeline scores every visual token by query relevance (max cosine
//! against the query keywords) and by activity (mean hidden-state change
//! over the last K prefill layers), blends the two after min-max
//! normalization, keeps the M highest-scoring tokens, and then reduces
//! redundancy by keeping the B_vis tokens with the largest subspace
//! energies under a rank-r truncated SVD of their final-layer hidden
//! states.

pub mod svd;

use crate::error::{CovError, Result};
use crate::models::{Query, VisualTokenSet};
use serde::{Deserialize, Serialize};

pub use svd::{truncated_svd, TruncatedSvd};

/// Knobs for the selection pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Blend weight between query relevance (1) and activity (0).
    pub lambda: f64,
    /// Top-score preselection count.
    pub m: usize,
    /// Retained SVD rank.
    pub rank: usize,
    /// Final retained token count.
    pub b_vis: usize,
    /// Number of late layers used for the activity score.
    pub k_late: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        // B_vis = 64 of N = 768 tokens; the remaining knobs are heuristic.
        Self {
            lambda: 0.5,
            m: 128,
            rank: 32,
            b_vis: 64,
            k_late: 3,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n: usize, dim: usize, layers: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CovError::ConfigError("lambda outside [0, 1]".into()));
        }
        if self.m > n {
            return Err(CovError::InvalidM { m: self.m, n });
        }
        if self.b_vis == 0 || self.b_vis > self.m {
            return Err(CovError::ConfigError(format!(
                "b_vis {} outside [1, M={}]",
                self.b_vis, self.m
            )));
        }
        if self.rank == 0 || self.rank >= self.m.min(dim) {
            return Err(CovError::InvalidRank {
                rank: self.rank,
                m: self.m,
                d: dim,
            });
        }
        if self.k_late == 0 || self.k_late > layers {
            return Err(CovError::InvalidK {
                k: self.k_late,
                l: layers,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Query,
    Activity,
    Blended,
    Energy,
}

/// A per-token score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub kind: ScoreKind,
}

/// A small fixed stopword list; terms on it lose their keyword flag.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "how",
    "in", "is", "it", "its", "of", "on", "or", "that", "the", "their", "them", "there", "these",
    "this", "to", "was", "were", "what", "when", "where", "which", "who", "will", "with",
];

/// Clears the keyword flag of every stopword term.
pub fn apply_stopword_filter(query: &mut Query) {
    for (term, flag) in query.terms.iter().zip(query.keyword_mask.iter_mut()) {
        if STOPWORDS.contains(&term.to_lowercase().as_str()) {
            *flag = false;
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CovError::ZeroNormEmbedding);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Max cosine similarity between each visual token and the query keywords.
pub fn query_scores(visual: &VisualTokenSet, query: &Query) -> Result<ScoreVector> {
    let keywords = query.keyword_indices();
    if keywords.is_empty() {
        return Err(CovError::NoKeywords);
    }
    let mut values = Vec::with_capacity(visual.count());
    for e in &visual.embeddings {
        let mut best = f64::NEG_INFINITY;
        for &j in &keywords {
            best = best.max(cosine(e, &query.embeddings[j])?);
        }
        values.push(best);
    }
    Ok(ScoreVector {
        values,
        kind: ScoreKind::Query,
    })
}

/// Mean inter-layer hidden-state change over the last `k_late` layers.
pub fn activity_scores(visual: &VisualTokenSet, k_late: usize) -> Result<ScoreVector> {
    if k_late == 0 || k_late > visual.layers {
        return Err(CovError::InvalidK {
            k: k_late,
            l: visual.layers,
        });
    }
    let l = visual.layers;
    let values = visual
        .hidden_states
        .iter()
        .map(|states| {
            let mut acc = 0.0;
            for layer in (l - k_late + 1)..=l {
                let diff2: f64 = states[layer]
                    .iter()
                    .zip(&states[layer - 1])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                acc += diff2.sqrt();
            }
            acc / k_late as f64
        })
        .collect();
    Ok(ScoreVector {
        values,
        kind: ScoreKind::Activity,
    })
}

/// Min-max normalization to [0, 1]; a constant vector maps to all 0.5.
fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Normalizes both score vectors independently and blends them with
/// weight `lambda` on the query side.
pub fn blend_scores(q: &ScoreVector, a: &ScoreVector, lambda: f64) -> ScoreVector {
    debug_assert_eq!(q.values.len(), a.values.len());
    let qn = min_max_normalize(&q.values);
    let an = min_max_normalize(&a.values);
    ScoreVector {
        values: qn
            .iter()
            .zip(&an)
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect(),
        kind: ScoreKind::Blended,
    }
}

/// Indices of the M largest scores, ties broken toward the lower index,
/// returned in ascending index order.
pub fn preselect_top_m(scores: &ScoreVector, m: usize) -> Result<Vec<usize>> {
    let n = scores.values.len();
    if m > n {
        return Err(CovError::InvalidM { m, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.values[b]
            .partial_cmp(&scores.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps the `b_vis` preselected tokens with the largest rank-r subspace
/// energies. Returns positions into the preselected list, ascending.
pub fn svd_energy_select(
    representations: &[Vec<f64>],
    rank: usize,
    b_vis: usize,
) -> Result<Vec<usize>> {
    let m = representations.len();
    if b_vis > m {
        return Err(CovError::ConfigError(format!(
            "b_vis {b_vis} exceeds preselected count {m}"
        )));
    }
    if b_vis == m {
        return Ok((0..m).collect());
    }
    let svd = truncated_svd(representations, rank)?;
    let energies = svd.energies();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..b_vis].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Full pipeline: query scores, activity scores, blend, top-M preselect,
/// SVD energy reduction to B_vis token indices (ascending, into [0, N)).
pub fn select_visual_tokens(
    visual: &VisualTokenSet,
    query: &Query,
    config: &SelectionConfig,
) -> Result<Vec<usize>> {
    config.validate(visual.count(), visual.dim, visual.layers)?;
    let q = query_scores(visual, query)?;
    let a = activity_scores(visual, config.k_late)?;
    let blended = blend_scores(&q, &a, config.lambda);
    let preselected = preselect_top_m(&blended, config.m)?;
    if config.b_vis == preselected.len() {
        return Ok(preselected);
    }
    let reps: Vec<Vec<f64>> = preselected
        .iter()
        .map(|&i| visual.final_hidden(i).to_vec())
        .collect();
    let kept = svd_energy_select(&reps, config.rank, config.b_vis)?;
    Ok(kept.into_iter().map(|p| preselected[p]).collect())
}
