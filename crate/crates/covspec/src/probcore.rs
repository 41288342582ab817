//! Probability and sampling primitives shared by the whole pipeline.
//!
//! Everything here is a pure function over finite-vocabulary distributions:
//! stabilized softmax, top-1/top-2 margin, the speculative acceptance
//! probability, the residual distribution used for correction, and seeded
//! inverse-CDF sampling. The acceptance/residual pair is the correctness
//! core of the protocol: accepting a drafted token with probability
//! `min(1, p_t/p_d)` and otherwise resampling from the residual reproduces
//! the target distribution exactly.

use crate::error::{CovError, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Absolute tolerance for the "probabilities sum to one" invariant.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A finite token vocabulary. Token IDs live in `[0, size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(CovError::TooFewTokens);
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, token: u32) -> bool {
        (token as usize) < self.size
    }
}

/// Unnormalized model outputs over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CovError::InvalidLogits);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A normalized probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Wraps a probability vector, checking nonnegativity and normalization.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CovError::InvalidLogits);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(CovError::InvalidLogits);
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, token: u32) -> f64 {
        self.probs[token as usize]
    }

    /// Token with the largest probability, ties to the lower ID.
    pub fn argmax(&self) -> u32 {
        let mut best = 0usize;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best as u32
    }
}

/// Stabilized softmax: subtracts the max entry before exponentiating, which
/// leaves the result unchanged in real arithmetic but avoids overflow.
pub fn softmax(logits: &LogitVector) -> Result<ProbDist> {
    if logits.is_empty() {
        return Err(CovError::InvalidLogits);
    }
    let m = logits.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.values().iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbDist {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    })
}

/// Top-1 minus top-2 probability. A tie in the top value yields 0.
pub fn margin(dist: &ProbDist) -> Result<f64> {
    if dist.len() < 2 {
        return Err(CovError::TooFewTokens);
    }
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &p in dist.probs() {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    Ok(top1 - top2)
}

/// Probability of accepting a drafted token: `min(1, p_t / p_d)`.
pub fn acceptance_prob(p_t: f64, p_d: f64) -> Result<f64> {
    if p_d <= 0.0 {
        return Err(CovError::DegenerateDraftProb);
    }
    Ok((p_t / p_d).min(1.0))
}

/// Residual distribution for correction after a rejection:
/// the renormalized positive part of `p_t - p_d`.
pub fn residual_dist(p_t: &ProbDist, p_d: &ProbDist) -> Result<ProbDist> {
    debug_assert_eq!(p_t.len(), p_d.len());
    let raw: Vec<f64> = p_t
        .probs()
        .iter()
        .zip(p_d.probs())
        .map(|(t, d)| (t - d).max(0.0))
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(CovError::EmptyResidual);
    }
    Ok(ProbDist {
        probs: raw.into_iter().map(|r| r / sum).collect(),
    })
}

/// Seeded RNG with named sub-streams. Every (seed, stream, draw-index)
/// triple yields the same value on every platform and in every transport
/// mode, which is what makes the decoupled-correction bit-equivalence
/// property testable.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeededRng {
    /// Creates the generator for a named sub-stream of `seed`.
    pub fn new(seed: u64, stream: &str) -> Self {
        let mut state = seed ^ fnv1a(stream.as_bytes());
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            seed,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives an independent sub-stream (same root seed, new name).
    pub fn fork(&self, substream: &str) -> Self {
        SeededRng::new(self.seed ^ fnv1a(substream.as_bytes()), substream)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF categorical sampling over ascending token IDs.
pub fn sample(dist: &ProbDist, rng: &mut SeededRng) -> u32 {
    let u = rng.next_uniform();
    let mut cum = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        cum += p;
        if u < cum {
            return i as u32;
        }
    }
    // Rounding may leave cum slightly below 1; the last token absorbs it.
    (dist.len() - 1) as u32
}

/// Sampling with an externally supplied uniform draw, used by enumeration
/// oracles and tests that need to pin the draw.
pub fn sample_with_uniform(dist: &ProbDist, u: f64) -> u32 {
    let mut cum = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        cum += p;
        if u < cum {
            return i as u32;
        }
    }
    (dist.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&LogitVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_overflow_stabilized() {
        let p = softmax(&LogitVector::new(vec![1000.0, 1000.0, 1000.0]).unwrap()).unwrap();
        for &x in p.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ln2() {
        let p = softmax(&LogitVector::new(vec![2.0_f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_nonfinite() {
        assert!(LogitVector::new(vec![f64::NAN, 0.0]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn margin_cases() {
        assert_eq!(margin(&dist(&[0.25; 4])).unwrap(), 0.0);
        assert_eq!(margin(&dist(&[1.0, 0.0, 0.0])).unwrap(), 1.0);
        assert!((margin(&dist(&[0.7, 0.2, 0.1])).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn margin_needs_two_tokens() {
        let d = ProbDist { probs: vec![1.0] };
        assert!(matches!(margin(&d), Err(CovError::TooFewTokens)));
    }

    #[test]
    fn acceptance_prob_cases() {
        assert_eq!(acceptance_prob(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(acceptance_prob(0.6, 0.3).unwrap(), 1.0);
        assert_eq!(acceptance_prob(0.2, 0.4).unwrap(), 0.5);
        assert!(matches!(
            acceptance_prob(0.2, 0.0),
            Err(CovError::DegenerateDraftProb)
        ));
    }

    #[test]
    fn residual_hand_cases() {
        let r = residual_dist(&dist(&[0.5, 0.3, 0.2]), &dist(&[0.2, 0.5, 0.3])).unwrap();
        assert_eq!(r.probs(), &[1.0, 0.0, 0.0]);

        let r = residual_dist(&dist(&[0.5, 0.4, 0.1]), &dist(&[0.2, 0.2, 0.6])).unwrap();
        assert!((r.probs()[0] - 0.6).abs() < 1e-12);
        assert!((r.probs()[1] - 0.4).abs() < 1e-12);
        assert_eq!(r.probs()[2], 0.0);
    }

    #[test]
    fn residual_empty_when_equal() {
        let p = dist(&[0.4, 0.6]);
        assert!(matches!(
            residual_dist(&p, &p),
            Err(CovError::EmptyResidual)
        ));
    }

    #[test]
    fn sample_one_hot() {
        let d = dist(&[0.0, 0.0, 0.0, 1.0]);
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed, "test");
            assert_eq!(sample(&d, &mut rng), 3);
        }
    }

    #[test]
    fn sample_inverse_cdf_pinned_draws() {
        let d = dist(&[0.5, 0.5]);
        assert_eq!(sample_with_uniform(&d, 0.25), 0);
        assert_eq!(sample_with_uniform(&d, 0.75), 1);
    }

    #[test]
    fn sample_empirical_frequencies() {
        let d = dist(&[0.2, 0.3, 0.5]);
        let mut rng = SeededRng::new(42, "freq");
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample(&d, &mut rng) as usize] += 1;
        }
        for (i, &expect) in [0.2, 0.3, 0.5].iter().enumerate() {
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - expect).abs() < 0.003, "token {i}: {freq}");
        }
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let mut a = SeededRng::new(7, "device/draft");
        let mut b = SeededRng::new(7, "device/draft");
        let mut c = SeededRng::new(7, "edge/verify");
        let xs: Vec<f64> = (0..8).map(|_| a.next_uniform()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.next_uniform()).collect();
        let zs: Vec<f64> = (0..8).map(|_| c.next_uniform()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    /// Single-position speculative-sampling identity: draw from p_d, accept
    /// with min(1, p_t/p_d), otherwise resample from the residual; the
    /// committed law must equal p_t. Verified by exact summation.
    fn check_identity(p_t: &ProbDist, p_d: &ProbDist) {
        let n = p_t.len();
        let mut law = vec![0.0f64; n];
        let residual = residual_dist(p_t, p_d).ok();
        for w in 0..n {
            let pd = p_d.probs()[w];
            if pd == 0.0 {
                continue;
            }
            let alpha = acceptance_prob(p_t.probs()[w], pd).unwrap();
            law[w] += pd * alpha;
            if alpha < 1.0 {
                let r = residual.as_ref().expect("rejection requires residual");
                for (lu, &ru) in law.iter_mut().zip(r.probs()) {
                    *lu += pd * (1.0 - alpha) * ru;
                }
            }
        }
        let tv: f64 = law
            .iter()
            .zip(p_t.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 1e-12, "TV = {tv}");
    }

    proptest! {
        #[test]
        fn softmax_valid_for_large_magnitudes(values in proptest::collection::vec(-1e4..1e4f64, 2..16)) {
            let p = softmax(&LogitVector::new(values).unwrap()).unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < PROB_SUM_TOL);
            prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn acceptance_monotone(p_t in 0.0..1.0f64, p_d in 0.01..1.0f64, dt in 0.0..0.5f64, dd in 0.0..0.5f64) {
            let base = acceptance_prob(p_t, p_d).unwrap();
            prop_assert!(acceptance_prob((p_t + dt).min(1.0), p_d).unwrap() >= base);
            prop_assert!(acceptance_prob(p_t, p_d + dd).unwrap() <= base);
        }

        #[test]
        fn residual_zero_where_draft_dominates(
            raw_t in proptest::collection::vec(0.01..1.0f64, 4),
            raw_d in proptest::collection::vec(0.01..1.0f64, 4),
        ) {
            let st: f64 = raw_t.iter().sum();
            let sd: f64 = raw_d.iter().sum();
            let p_t = ProbDist::new(raw_t.iter().map(|x| x / st).collect()).unwrap();
            let p_d = ProbDist::new(raw_d.iter().map(|x| x / sd).collect()).unwrap();
            if let Ok(r) = residual_dist(&p_t, &p_d) {
                for w in 0..4 {
                    if p_d.probs()[w] >= p_t.probs()[w] {
                        prop_assert_eq!(r.probs()[w], 0.0);
                    }
                }
            }
        }

        #[test]
        fn speculative_identity_holds(
            raw_t in proptest::collection::vec(0.001..1.0f64, 2..9),
            raw_d in proptest::collection::vec(0.001..1.0f64, 2..9),
        ) {
            let n = raw_t.len().min(raw_d.len());
            let st: f64 = raw_t[..n].iter().sum();
            let sd: f64 = raw_d[..n].iter().sum();
            let p_t = ProbDist::new(raw_t[..n].iter().map(|x| x / st).collect()).unwrap();
            let p_d = ProbDist::new(raw_d[..n].iter().map(|x| x / sd).collect()).unwrap();
            check_identity(&p_t, &p_d);
        }
    }
}
