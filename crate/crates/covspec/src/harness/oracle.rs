//! Exhaustive-enumeration oracle for the speculative-sampling identity.
//!
//! Over tiny vocabularies the full law of the committed sequence can be
//! enumerated exactly: every draft sequence, every acceptance/rejection
//! pattern, every residual correction and bonus draw, with exact f64
//! arithmetic and no quantization. If the protocol is lossless, the
//! per-position marginals must match the target model's autoregressive
//! law exactly.

use std::collections::HashMap;

use crate::error::{CovError, Result};
use crate::probcore::{ProbDist, SeededRng};

/// A conditional next-token law: prefix of committed tokens in, full
/// distribution out.
pub type DistFn<'a> = dyn Fn(&[u32]) -> ProbDist + 'a;

const MAX_VOCAB: usize = 6;
const MAX_K: usize = 3;
const MAX_HORIZON: usize = 3;

/// Enumerates the exact committed-token law of speculative decoding with
/// draft `p_d`, target `p_t`, and draft length `k`, out to `horizon`
/// committed tokens. Returns the largest per-position total-variation
/// distance against the target's own autoregressive law; a lossless
/// protocol yields 0 up to float rounding.
pub fn exactness_oracle(
    p_d: &DistFn,
    p_t: &DistFn,
    vocab: usize,
    k: usize,
    horizon: usize,
) -> Result<f64> {
    if vocab < 2 || k == 0 || horizon == 0 {
        return Err(CovError::ConfigError(
            "oracle needs vocab >= 2, k >= 1, horizon >= 1".into(),
        ));
    }
    if vocab > MAX_VOCAB || k > MAX_K || horizon > MAX_HORIZON {
        return Err(CovError::TooLarge);
    }

    let mut joint: HashMap<Vec<u32>, f64> = HashMap::new();
    round(p_d, p_t, vocab, k, horizon, &mut Vec::new(), 1.0, &mut joint);

    let mass: f64 = joint.values().sum();
    debug_assert!((mass - 1.0).abs() < 1e-9, "law mass {mass}");

    // Target autoregressive law over the same horizon.
    let mut target_joint: HashMap<Vec<u32>, f64> = HashMap::new();
    target_law(p_t, vocab, horizon, &mut Vec::new(), 1.0, &mut target_joint);

    let mut worst = 0.0f64;
    for pos in 0..horizon {
        let spec = marginal(&joint, pos, vocab);
        let tar = marginal(&target_joint, pos, vocab);
        let tv: f64 = spec
            .iter()
            .zip(&tar)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        worst = worst.max(tv);
    }
    Ok(worst)
}

/// One verification round starting from `prefix` with weight `w`.
#[allow(clippy::too_many_arguments)]
fn round(
    p_d: &DistFn,
    p_t: &DistFn,
    vocab: usize,
    k: usize,
    horizon: usize,
    prefix: &mut Vec<u32>,
    w: f64,
    joint: &mut HashMap<Vec<u32>, f64>,
) {
    if prefix.len() >= horizon {
        *joint.entry(prefix[..horizon].to_vec()).or_insert(0.0) += w;
        return;
    }
    let k_round = k.min(horizon - prefix.len());
    cascade(p_d, p_t, vocab, k, k_round, horizon, prefix, w, joint);
}

/// Walks the draft/accept cascade. Drafting and verification share the
/// same speculative context, so the draft draw at position i and its
/// acceptance test can be enumerated in one interleaved pass.
#[allow(clippy::too_many_arguments)]
fn cascade(
    p_d: &DistFn,
    p_t: &DistFn,
    vocab: usize,
    k: usize,
    remaining: usize,
    horizon: usize,
    ctx: &mut Vec<u32>,
    w: f64,
    joint: &mut HashMap<Vec<u32>, f64>,
) {
    if w <= 0.0 {
        return;
    }
    if remaining == 0 {
        // Full accept: bonus from the target. At the horizon the bonus is
        // marginalized out (it never enters the compared positions).
        if ctx.len() >= horizon {
            *joint.entry(ctx[..horizon].to_vec()).or_insert(0.0) += w;
            return;
        }
        let pt = p_t(ctx);
        for b in 0..vocab as u32 {
            let pb = pt.get(b);
            if pb > 0.0 {
                ctx.push(b);
                round(p_d, p_t, vocab, k, horizon, ctx, w * pb, joint);
                ctx.pop();
            }
        }
        return;
    }
    let pd = p_d(ctx);
    let pt = p_t(ctx);
    // Residual at this position, shared across all rejected draft tokens.
    let residual: Vec<f64> = (0..vocab as u32)
        .map(|t| (pt.get(t) - pd.get(t)).max(0.0))
        .collect();
    let z: f64 = residual.iter().sum();
    for d in 0..vocab as u32 {
        let q = pd.get(d);
        if q <= 0.0 {
            continue;
        }
        let alpha = (pt.get(d) / q).min(1.0);
        if alpha > 0.0 {
            ctx.push(d);
            cascade(
                p_d,
                p_t,
                vocab,
                k,
                remaining - 1,
                horizon,
                ctx,
                w * q * alpha,
                joint,
            );
            ctx.pop();
        }
        let w_rej = w * q * (1.0 - alpha);
        if w_rej > 0.0 && z > 0.0 {
            for (c, &r) in residual.iter().enumerate() {
                if r > 0.0 {
                    ctx.push(c as u32);
                    round(p_d, p_t, vocab, k, horizon, ctx, w_rej * r / z, joint);
                    ctx.pop();
                }
            }
        }
    }
}

fn target_law(
    p_t: &DistFn,
    vocab: usize,
    horizon: usize,
    prefix: &mut Vec<u32>,
    w: f64,
    joint: &mut HashMap<Vec<u32>, f64>,
) {
    if prefix.len() == horizon {
        *joint.entry(prefix.clone()).or_insert(0.0) += w;
        return;
    }
    let pt = p_t(prefix);
    for t in 0..vocab as u32 {
        let p = pt.get(t);
        if p > 0.0 {
            prefix.push(t);
            target_law(p_t, vocab, horizon, prefix, w * p, joint);
            prefix.pop();
        }
    }
}

fn marginal(joint: &HashMap<Vec<u32>, f64>, pos: usize, vocab: usize) -> Vec<f64> {
    let mut m = vec![0.0; vocab];
    for (seq, &w) in joint {
        m[seq[pos] as usize] += w;
    }
    m
}

/// A deterministic random conditional law for oracle tests: each prefix
/// gets an independent seeded distribution over `vocab` tokens.
pub fn table_model(seed: u64, name: &str, vocab: usize) -> impl Fn(&[u32]) -> ProbDist {
    let name = name.to_string();
    move |prefix: &[u32]| {
        let mut rng = SeededRng::new(seed, &format!("{name}/{prefix:?}"));
        let mut weights: Vec<f64> = (0..vocab).map(|_| rng.next_uniform() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        ProbDist::new(weights).expect("positive weights normalize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(probs: Vec<f64>) -> impl Fn(&[u32]) -> ProbDist {
        move |_: &[u32]| ProbDist::new(probs.clone()).unwrap()
    }

    #[test]
    fn hand_case_single_round() {
        // p_d = (0.4, 0.6), p_t = (0.7, 0.3), k = 1, horizon = 1.
        // Draft 0 (0.4): alpha = 1, commit 0.          -> P(0) += 0.4
        // Draft 1 (0.6): alpha = 0.5; accept 0.3       -> P(1) += 0.3
        //   reject 0.3: residual = (0.3, 0)/0.3 -> 0   -> P(0) += 0.3
        // Committed law (0.7, 0.3) = target, so TV = 0.
        let p_d = constant(vec![0.4, 0.6]);
        let p_t = constant(vec![0.7, 0.3]);
        let tv = exactness_oracle(&p_d, &p_t, 2, 1, 1).unwrap();
        assert!(tv < 1e-12, "tv = {tv}");
    }

    #[test]
    fn identity_holds_for_random_tables() {
        for seed in [1u64, 7, 42] {
            for vocab in [2usize, 3, 4] {
                for k in 1..=3 {
                    for horizon in 1..=3 {
                        let p_d = table_model(seed, "draft", vocab);
                        let p_t = table_model(seed.wrapping_add(1), "target", vocab);
                        let tv = exactness_oracle(&p_d, &p_t, vocab, k, horizon).unwrap();
                        assert!(
                            tv < 1e-9,
                            "seed={seed} vocab={vocab} k={k} h={horizon}: tv={tv}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn matching_models_are_exact() {
        let p = table_model(9, "shared", 3);
        let tv = exactness_oracle(&p, &p, 3, 2, 2).unwrap();
        assert!(tv < 1e-12);
    }

    #[test]
    fn draft_alone_is_biased() {
        // Sanity that TV detects mismatch: the draft's own law differs
        // from the target's, so comparing them position-wise is nonzero.
        let p_d = constant(vec![0.4, 0.6]);
        let p_t = constant(vec![0.7, 0.3]);
        let mut draft_joint = HashMap::new();
        target_law(&p_d, 2, 1, &mut Vec::new(), 1.0, &mut draft_joint);
        let mut tar_joint = HashMap::new();
        target_law(&p_t, 2, 1, &mut Vec::new(), 1.0, &mut tar_joint);
        let a = marginal(&draft_joint, 0, 2);
        let b = marginal(&tar_joint, 0, 2);
        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!((tv - 0.3).abs() < 1e-12);
    }

    #[test]
    fn size_caps_enforced() {
        let p = constant(vec![0.5, 0.5]);
        assert!(matches!(
            exactness_oracle(&p, &p, 7, 1, 1),
            Err(CovError::TooLarge)
        ));
        assert!(matches!(
            exactness_oracle(&p, &p, 2, 4, 1),
            Err(CovError::TooLarge)
        ));
        assert!(matches!(
            exactness_oracle(&p, &p, 2, 1, 4),
            Err(CovError::TooLarge)
        ));
        assert!(exactness_oracle(&p, &p, 2, 1, 0).is_err());
    }
}
