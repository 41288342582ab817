//! Synthetic draft/target model pairs and synthetic visual inputs.
//!
//! Both models are pure seeded hash functions from (retained visual token
//! IDs, query terms, token prefix) to a logit vector, so the full protocol
//! is exercisable without real VLMs. An `agreement` knob in [0, 1] blends
//! the draft logits between the target's core (agreement = 1) and an
//! independent noise term (agreement = 0). The visual context enters the
//! hash through the multiset of retained token IDs, which makes the
//! acceptance-rate effect of pruning observable and cheap.

use crate::error::{CovError, Result};
use crate::probcore::{LogitVector, SeededRng, Vocabulary};
use serde::{Deserialize, Serialize};

/// Embeddings and per-layer hidden states for N visual tokens.
#[derive(Debug, Clone)]
pub struct VisualTokenSet {
    /// Per-token embedding e(v_i), length `dim`.
    pub embeddings: Vec<Vec<f64>>,
    /// Per-token hidden states h_i^(0..L), each of length `dim`;
    /// layer 0 is the input embedding.
    pub hidden_states: Vec<Vec<Vec<f64>>>,
    pub dim: usize,
    /// Number of prefill layers L (hidden_states has L+1 entries per token).
    pub layers: usize,
    /// Ground-truth indices of planted high-importance tokens.
    pub planted: Vec<usize>,
}

impl VisualTokenSet {
    pub fn count(&self) -> usize {
        self.embeddings.len()
    }

    /// Final-layer hidden state of token `i`.
    pub fn final_hidden(&self, i: usize) -> &[f64] {
        &self.hidden_states[i][self.layers]
    }
}

/// A text query: ordered terms with embeddings and a keyword mask.
#[derive(Debug, Clone)]
pub struct Query {
    pub terms: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    pub keyword_mask: Vec<bool>,
}

impl Query {
    /// Indices of terms flagged as keywords.
    pub fn keyword_indices(&self) -> Vec<usize> {
        self.keyword_mask
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds a query with seeded Gaussian term embeddings; every term is
    /// initially a keyword (apply a keyword filter to change the mask).
    pub fn synthetic(seed: u64, terms: &[&str], dim: usize) -> Self {
        let mut rng = SeededRng::new(seed, "query/embeddings");
        let embeddings = terms
            .iter()
            .map(|_| gaussian_vec(&mut rng, dim))
            .collect();
        Query {
            terms: terms.iter().map(|t| t.to_string()).collect(),
            embeddings,
            keyword_mask: vec![true; terms.len()],
        }
    }
}

/// Configuration of a synthetic draft/target pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// How closely draft logits track target logits for identical context.
    pub agreement: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            agreement: 0.85,
            seed: 1,
        }
    }
}

/// Deterministic stand-ins for the draft and target models.
#[derive(Debug, Clone)]
pub struct SyntheticModelPair {
    pub vocab: Vocabulary,
    pub agreement: f64,
    seed: u64,
}

const SALT_TARGET: u64 = 0x7a72_6765_7463_6f72;
const SALT_NOISE: u64 = 0x6e6f_6973_6563_6f72;

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h = h.rotate_left(27).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 29)
}

fn hash_str(mut h: u64, s: &str) -> u64 {
    for b in s.as_bytes() {
        h = mix(h, *b as u64);
    }
    mix(h, 0xFF)
}

fn unit_from_hash(h: u64) -> f64 {
    // Finalize and map to [0, 1).
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn gaussian_vec(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        // Box-Muller.
        let u1 = rng.next_uniform().max(1e-300);
        let u2 = rng.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        v.push(r * theta.cos());
        if v.len() < dim {
            v.push(r * theta.sin());
        }
    }
    v
}

impl SyntheticModelPair {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.agreement) {
            return Err(CovError::ConfigError(format!(
                "agreement {} outside [0, 1]",
                cfg.agreement
            )));
        }
        Ok(Self {
            vocab: Vocabulary::new(cfg.vocab_size)?,
            agreement: cfg.agreement,
            seed: cfg.seed,
        })
    }

    /// Context hash: order-insensitive in the visual IDs (sorted first),
    /// order-sensitive in query terms and prefix.
    fn context_hash(&self, visual_ids: &[usize], query: &Query, prefix: &[u32]) -> u64 {
        let mut ids: Vec<usize> = visual_ids.to_vec();
        ids.sort_unstable();
        let mut h = mix(self.seed, 0x636f_7673_7065_6331);
        for id in ids {
            h = mix(h, id as u64);
        }
        h = mix(h, 0xA5A5);
        for term in &query.terms {
            h = hash_str(h, term);
        }
        h = mix(h, 0x5A5A);
        for (i, &tok) in prefix.iter().enumerate() {
            h = mix(h, ((i as u64) << 32) | tok as u64);
        }
        h
    }

    fn core_logits(&self, ctx: u64, salt: u64) -> Vec<f64> {
        (0..self.vocab.size())
            .map(|w| unit_from_hash(mix(ctx, mix(salt, w as u64))) * 8.0 - 4.0)
            .collect()
    }

    fn check_prefix(&self, prefix: &[u32]) -> Result<()> {
        for &t in prefix {
            if !self.vocab.contains(t) {
                return Err(CovError::InvalidPrefix(t));
            }
        }
        Ok(())
    }

    /// Draft-side logits over the retained visual subset.
    pub fn draft_logits(
        &self,
        visual_ids: &[usize],
        query: &Query,
        prefix: &[u32],
    ) -> Result<LogitVector> {
        self.check_prefix(prefix)?;
        let ctx = self.context_hash(visual_ids, query, prefix);
        let core = self.core_logits(ctx, SALT_TARGET);
        let noise = self.core_logits(ctx, SALT_NOISE);
        let a = self.agreement;
        LogitVector::new(
            core.iter()
                .zip(&noise)
                .map(|(c, n)| a * c + (1.0 - a) * n)
                .collect(),
        )
    }

    /// Target-side logits; always computed over the full visual set the
    /// caller supplies and independent of the agreement knob.
    pub fn target_logits(
        &self,
        visual_ids: &[usize],
        query: &Query,
        prefix: &[u32],
    ) -> Result<LogitVector> {
        self.check_prefix(prefix)?;
        let ctx = self.context_hash(visual_ids, query, prefix);
        LogitVector::new(self.core_logits(ctx, SALT_TARGET))
    }
}

/// Generates a synthetic visual token set.
///
/// `plant_count` tokens at seeded pseudorandom positions are planted to be
/// near-copies of the planted keywords' embeddings (cosine >= 0.9) and
/// receive per-layer hidden-state increments of norm `planted_increment`;
/// all other tokens get increments of norm `base_increment`. Increment
/// norms are exact, so activity scores are controllable ground truth.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn gen_visual(
    seed: u64,
    n: usize,
    dim: usize,
    layers: usize,
    planted_keywords: &Query,
    plant_count: usize,
    base_increment: f64,
    planted_increment: f64,
) -> Result<VisualTokenSet> {
    if plant_count > n {
        return Err(CovError::InvalidPlant {
            planted: plant_count,
            n,
        });
    }
    if plant_count > 0 && planted_keywords.embeddings.is_empty() {
        return Err(CovError::NoKeywords);
    }

    let mut rng = SeededRng::new(seed, "visual/embeddings");
    let mut inc_rng = SeededRng::new(seed, "visual/increments");
    let mut pos_rng = SeededRng::new(seed, "visual/plant-positions");

    // Seeded Fisher-Yates to place planted tokens.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (pos_rng.next_uniform() * (i + 1) as f64) as usize;
        order.swap(i, j);
    }
    let mut planted: Vec<usize> = order[..plant_count].to_vec();
    planted.sort_unstable();

    let mut embeddings = Vec::with_capacity(n);
    let mut increments = vec![base_increment; n];
    for i in 0..n {
        let e = if let Some(slot) = planted.iter().position(|&p| p == i) {
            let kw = &planted_keywords.embeddings[slot % planted_keywords.embeddings.len()];
            // Keyword direction plus a small perturbation keeps cosine >= 0.9.
            let norm = kw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let noise = gaussian_vec(&mut rng, dim);
            let noise_norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            increments[i] = planted_increment;
            // Scale slightly above the typical Gaussian norm sqrt(dim) so
            // the shared keyword directions carry visible subspace energy.
            let scale = 1.25 * (dim as f64).sqrt();
            kw.iter()
                .zip(&noise)
                .map(|(k, g)| scale * (k / norm + 0.05 * g / noise_norm))
                .collect()
        } else {
            gaussian_vec(&mut rng, dim)
        };
        embeddings.push(e);
    }

    let mut hidden_states = Vec::with_capacity(n);
    for (i, e) in embeddings.iter().enumerate() {
        let mut states = Vec::with_capacity(layers + 1);
        states.push(e.clone());
        for _ in 0..layers {
            let dir = gaussian_vec(&mut inc_rng, dim);
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let prev = states.last().unwrap();
            let next: Vec<f64> = prev
                .iter()
                .zip(&dir)
                .map(|(p, d)| p + increments[i] * d / norm)
                .collect();
            states.push(next);
        }
        hidden_states.push(states);
    }

    Ok(VisualTokenSet {
        embeddings,
        hidden_states,
        dim,
        layers,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probcore::{acceptance_prob, sample, softmax, SeededRng};

    fn query(dim: usize) -> Query {
        Query::synthetic(3, &["red", "car"], dim)
    }

    fn pair(agreement: f64) -> SyntheticModelPair {
        SyntheticModelPair::new(&ModelConfig {
            vocab_size: 32,
            agreement,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn models_are_pure_functions() {
        let m = pair(0.7);
        let q = query(8);
        let full: Vec<usize> = (0..16).collect();
        let a = m.draft_logits(&full, &q, &[1, 2, 3]).unwrap();
        let b = m.draft_logits(&full, &q, &[1, 2, 3]).unwrap();
        assert_eq!(a, b);
        let t1 = m.target_logits(&full, &q, &[1, 2, 3]).unwrap();
        let t2 = m.target_logits(&full, &q, &[1, 2, 3]).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn full_agreement_matches_target_on_same_context() {
        let m = pair(1.0);
        let q = query(8);
        let ids: Vec<usize> = (0..16).collect();
        let d = m.draft_logits(&ids, &q, &[5]).unwrap();
        let t = m.target_logits(&ids, &q, &[5]).unwrap();
        assert_eq!(d, t);
    }

    #[test]
    fn prefix_order_and_visual_changes_matter() {
        let m = pair(1.0);
        let q = query(8);
        let ids: Vec<usize> = (0..16).collect();
        let a = m.target_logits(&ids, &q, &[1, 2]).unwrap();
        let b = m.target_logits(&ids, &q, &[2, 1]).unwrap();
        assert_ne!(a, b);

        let mut other = ids.clone();
        other[0] = 20;
        let c = m.target_logits(&other, &q, &[1, 2]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn visual_set_order_insensitive() {
        let m = pair(1.0);
        let q = query(8);
        let a = m.target_logits(&[3, 1, 7], &q, &[0]).unwrap();
        let b = m.target_logits(&[7, 3, 1], &q, &[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_vocab_prefix_rejected() {
        let m = pair(1.0);
        let q = query(8);
        assert!(matches!(
            m.draft_logits(&[0, 1], &q, &[999]),
            Err(CovError::InvalidPrefix(999))
        ));
    }

    #[test]
    fn zero_agreement_uncorrelated() {
        let m = pair(0.0);
        let q = query(8);
        let ids: Vec<usize> = (0..8).collect();
        // Correlation between draft and target logits across contexts.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for p in 0..400u32 {
            let prefix = [p % 32, (p / 32) % 32];
            let d = m.draft_logits(&ids, &q, &prefix).unwrap();
            let t = m.target_logits(&ids, &q, &prefix).unwrap();
            xs.extend_from_slice(d.values());
            ys.extend_from_slice(t.values());
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r = cov / (vx.sqrt() * vy.sqrt());
        assert!(r.abs() < 0.05, "correlation {r}");
    }

    /// One simulated speculative position: draft samples a token, the
    /// acceptance draw uses min(1, p_t/p_d).
    fn acceptance_rate(agreement: f64, seeds: std::ops::Range<u64>) -> f64 {
        let q = query(8);
        let ids: Vec<usize> = (0..16).collect();
        let mut accepted = 0usize;
        let mut total = 0usize;
        for seed in seeds {
            let m = SyntheticModelPair::new(&ModelConfig {
                vocab_size: 32,
                agreement,
                seed: 11,
            })
            .unwrap();
            let mut draw = SeededRng::new(seed, "test/draft");
            let mut verify = SeededRng::new(seed, "test/verify");
            let mut prefix: Vec<u32> = vec![];
            for _ in 0..50 {
                let pd = softmax(&m.draft_logits(&ids, &q, &prefix).unwrap()).unwrap();
                let pt = softmax(&m.target_logits(&ids, &q, &prefix).unwrap()).unwrap();
                let tok = sample(&pd, &mut draw);
                let alpha = acceptance_prob(pt.get(tok), pd.get(tok)).unwrap();
                if verify.next_uniform() <= alpha {
                    accepted += 1;
                }
                total += 1;
                prefix.push(tok);
            }
        }
        accepted as f64 / total as f64
    }

    #[test]
    fn acceptance_rate_nondecreasing_in_agreement() {
        let rates: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&a| acceptance_rate(a, 0..20))
            .collect();
        for w in rates.windows(2) {
            assert!(w[1] >= w[0], "rates {rates:?}");
        }
        assert_eq!(rates[4], 1.0);
    }

    #[test]
    fn gen_visual_defaults_and_ground_truth() {
        let q = query(16);
        let v = gen_visual(5, 768, 16, 4, &q, 8, 0.5, 2.0).unwrap();
        assert_eq!(v.count(), 768);
        assert_eq!(v.planted.len(), 8);
        // Planted tokens have cosine >= 0.9 with their keyword.
        for (slot, &i) in v.planted.iter().enumerate() {
            let kw = &q.embeddings[slot % q.embeddings.len()];
            let e = &v.embeddings[i];
            let dot: f64 = kw.iter().zip(e).map(|(a, b)| a * b).sum();
            let nk = kw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ne = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(dot / (nk * ne) >= 0.9);
        }
    }

    #[test]
    fn gen_visual_zero_increment_constant_states() {
        let q = query(8);
        let v = gen_visual(5, 16, 8, 3, &q, 0, 0.0, 0.0).unwrap();
        for states in &v.hidden_states {
            for layer in states.windows(2) {
                assert_eq!(layer[0], layer[1]);
            }
        }
    }

    #[test]
    fn gen_visual_plant_too_large() {
        let q = query(8);
        assert!(matches!(
            gen_visual(5, 4, 8, 2, &q, 5, 0.1, 1.0),
            Err(CovError::InvalidPlant { planted: 5, n: 4 })
        ));
    }
}
