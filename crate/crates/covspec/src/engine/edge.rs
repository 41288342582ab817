//! Edge-role state machine: target-model verification, bonus sampling,
//! and (in full-logit uplink mode) edge-side residual correction.

use super::{pick_token, residual_correct, OutcomePayload, VerificationOutcome};
use crate::comm::f16::{f16_decode, f16_encode};
use crate::error::{CovError, Result};
use crate::models::{Query, SyntheticModelPair};
use crate::probcore::{acceptance_prob, softmax, LogitVector, SeededRng};

/// Per-position accept decision: u <= min(1, p_t / p_d). A draft
/// probability that quantized to zero accepts unconditionally (the limit
/// of the rule as p_d -> 0 with p_t > 0); a zero target probability
/// rejects regardless of the draw.
pub fn acceptance_decision(p_t: f64, p_d_decoded: f64, u: f64) -> Result<bool> {
    if p_t <= 0.0 {
        // Rejection is certain, even for a draw of exactly zero.
        return Ok(false);
    }
    let alpha = if p_d_decoded <= 0.0 {
        1.0
    } else {
        acceptance_prob(p_t, p_d_decoded)?
    };
    Ok(u <= alpha)
}

#[derive(Debug, Clone, Default)]
pub struct EdgeStats {
    /// Target-model forward passes (verified positions, bonus draws, and
    /// correction positions in full-logit mode).
    pub target_passes: usize,
    pub rounds: usize,
    pub full_accepts: usize,
}

/// The edge side of the protocol. Holds the authoritative context over
/// the full visual set.
#[derive(Debug, Clone)]
pub struct EdgeRole {
    model: SyntheticModelPair,
    visual_ids: Vec<usize>,
    query: Query,
    context: Vec<u32>,
    greedy: bool,
    verify_rng: SeededRng,
    bonus_rng: SeededRng,
    correction_rng: SeededRng,
    pub stats: EdgeStats,
}

impl EdgeRole {
    pub fn new(
        model: SyntheticModelPair,
        visual_ids: Vec<usize>,
        query: Query,
        greedy: bool,
        seed: u64,
    ) -> Self {
        Self {
            model,
            visual_ids,
            query,
            context: Vec::new(),
            greedy,
            verify_rng: SeededRng::new(seed, "verify"),
            bonus_rng: SeededRng::new(seed, "bonus"),
            correction_rng: SeededRng::new(seed, "correction"),
            stats: EdgeStats::default(),
        }
    }

    pub fn context(&self) -> &[u32] {
        &self.context
    }

    pub fn vocab_size(&self) -> usize {
        self.model.vocab.size()
    }

    fn target_dist(&mut self) -> Result<(LogitVector, crate::probcore::ProbDist)> {
        let lg = self
            .model
            .target_logits(&self.visual_ids, &self.query, &self.context)?;
        self.stats.target_passes += 1;
        let dist = softmax(&lg)?;
        Ok((lg, dist))
    }

    /// Verifies one uplinked segment. Gated tokens extend the context
    /// unconditionally; drafted tokens are tested in order against the
    /// target model. Returns the bonus token on full accept, or the
    /// accepted length plus quantized target logits at the first
    /// rejection.
    pub fn verify(
        &mut self,
        gated_prefix: &[u32],
        draft_ids: &[u32],
        draft_probs_f16: &[u16],
    ) -> Result<VerificationOutcome> {
        if draft_ids.len() != draft_probs_f16.len() {
            return Err(CovError::ProtocolFault(
                "draft IDs and quantized probabilities disagree in length".into(),
            ));
        }
        self.context.extend_from_slice(gated_prefix);
        self.stats.rounds += 1;
        let mut accepted = 0;
        for (&tok, &code) in draft_ids.iter().zip(draft_probs_f16) {
            if tok as usize >= self.model.vocab.size() {
                return Err(CovError::ContextDesync);
            }
            let (lg, dist) = self.target_dist()?;
            let p_t = dist.get(tok);
            let p_d = f16_decode(code)?;
            let u = self.verify_rng.next_uniform();
            if acceptance_decision(p_t, p_d, u)? {
                self.context.push(tok);
                accepted += 1;
            } else {
                let codes: Vec<u16> = lg
                    .values()
                    .iter()
                    .map(|&v| f16_encode(v))
                    .collect::<Result<_>>()?;
                return Ok(VerificationOutcome {
                    accepted_len: accepted,
                    payload: OutcomePayload::TargetLogits(codes),
                });
            }
        }
        let (_, dist) = self.target_dist()?;
        let bonus = pick_token(&dist, self.greedy, &mut self.bonus_rng);
        self.context.push(bonus);
        self.stats.full_accepts += 1;
        Ok(VerificationOutcome {
            accepted_len: draft_ids.len(),
            payload: OutcomePayload::BonusToken(bonus),
        })
    }

    /// Full-logit uplink mode: like [`verify`](Self::verify), but draft
    /// probabilities come from the uplinked (quantized) logit vectors and
    /// the edge performs residual correction itself, returning the
    /// correction token instead of logits.
    pub fn verify_full(
        &mut self,
        gated_prefix: &[u32],
        draft_ids: &[u32],
        vocab_size: u32,
        draft_logits_f16: &[u16],
    ) -> Result<(usize, FullOutcome)> {
        let vocab = self.model.vocab.size();
        if vocab_size as usize != vocab {
            return Err(CovError::ConfigMismatch(format!(
                "uplink vocabulary {} vs model {}",
                vocab_size, vocab
            )));
        }
        if draft_logits_f16.len() != draft_ids.len() * vocab {
            return Err(CovError::ProtocolFault(
                "draft logit payload length disagrees with draft count".into(),
            ));
        }
        self.context.extend_from_slice(gated_prefix);
        self.stats.rounds += 1;
        let mut accepted = 0;
        for (i, &tok) in draft_ids.iter().enumerate() {
            if tok as usize >= vocab {
                return Err(CovError::ContextDesync);
            }
            let values: Vec<f64> = draft_logits_f16[i * vocab..(i + 1) * vocab]
                .iter()
                .map(|&c| f16_decode(c))
                .collect::<Result<_>>()?;
            let p_d_hat = softmax(&LogitVector::new(values)?)?;
            let (_, p_t_dist) = self.target_dist()?;
            let u = self.verify_rng.next_uniform();
            if acceptance_decision(p_t_dist.get(tok), p_d_hat.get(tok), u)? {
                self.context.push(tok);
                accepted += 1;
            } else {
                let correction =
                    residual_correct(&p_t_dist, &p_d_hat, self.greedy, &mut self.correction_rng)?;
                self.context.push(correction);
                return Ok((accepted, FullOutcome::Corrected(correction)));
            }
        }
        let (_, dist) = self.target_dist()?;
        let bonus = pick_token(&dist, self.greedy, &mut self.bonus_rng);
        self.context.push(bonus);
        self.stats.full_accepts += 1;
        Ok((accepted, FullOutcome::Bonus(bonus)))
    }
}

/// Outcome of a full-logit-mode round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FullOutcome {
    Bonus(u32),
    Corrected(u32),
}
