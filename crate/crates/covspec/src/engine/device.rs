//! Device-role state machine: margin-gated drafting, residual correction,
//! and branch preparation/resolution.

use std::collections::VecDeque;

use super::branching::{fanout, top_candidates, Branch, BranchPlan, PredraftedToken};
use super::{pick_token, residual_correct, EngineConfig, GateDecision};
use crate::comm::f16::{f16_decode, f16_encode};
use crate::error::{CovError, Result};
use crate::models::{Query, SyntheticModelPair};
use crate::probcore::{margin, softmax, LogitVector, ProbDist, SeededRng};

/// One round's worth of drafted tokens awaiting verification, plus the
/// locally committed tokens the edge has not seen yet.
#[derive(Debug, Clone)]
pub struct DraftSegment {
    /// Committed length when the segment started.
    pub start_pos: usize,
    pub tokens: Vec<u32>,
    /// Cached draft distribution per position (exact, device-side).
    pub dists: Vec<ProbDist>,
    /// Cached draft logits per position (for the full-logit uplink mode).
    pub logits: Vec<LogitVector>,
    /// Exact p_d of each drafted token.
    pub draft_token_probs: Vec<f64>,
    /// float16 codes of `draft_token_probs` as they travel on the wire.
    pub draft_probs_f16: Vec<u16>,
    /// Gated commits and corrections since the last uplink, in order.
    pub gated_prefix: Vec<u32>,
}

impl DraftSegment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// How each committed position was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitKind {
    /// Margin-gated local commit, never verified.
    Gated,
    /// Drafted token accepted by the edge.
    Accepted,
    /// Extra target-model token on full accept.
    Bonus,
    /// Residual-sampled replacement at a rejected position.
    Correction,
}

#[derive(Debug, Clone, Default)]
pub struct DeviceStats {
    /// Draft-model forward passes spent in the drafting loop.
    pub draft_passes: usize,
    /// Draft-model forward passes spent planning branches.
    pub planning_passes: usize,
    /// Predrafted branch tokens consumed instead of fresh passes.
    pub pending_consumed: usize,
    pub gated: usize,
    pub drafted: usize,
    pub branch_hits: usize,
    pub commit_log: Vec<CommitKind>,
}

/// The device side of the protocol.
#[derive(Debug, Clone)]
pub struct DeviceRole {
    model: SyntheticModelPair,
    visual_ids: Vec<usize>,
    query: Query,
    cfg: EngineConfig,
    committed: Vec<u32>,
    /// Locally committed tokens the edge has not been told about.
    unsynced: Vec<u32>,
    /// Matched branch continuation feeding the next drafting round.
    pending: VecDeque<PredraftedToken>,
    draft_rng: SeededRng,
    correction_rng: SeededRng,
    finished: bool,
    pub stats: DeviceStats,
}

impl DeviceRole {
    pub fn new(
        model: SyntheticModelPair,
        visual_ids: Vec<usize>,
        query: Query,
        cfg: EngineConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            visual_ids,
            query,
            cfg,
            committed: Vec::new(),
            unsynced: Vec::new(),
            pending: VecDeque::new(),
            draft_rng: SeededRng::new(seed, "draft"),
            correction_rng: SeededRng::new(seed, "correction"),
            finished: false,
            stats: DeviceStats::default(),
        })
    }

    pub fn committed(&self) -> &[u32] {
        &self.committed
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn commit(&mut self, token: u32, kind: CommitKind) {
        self.committed.push(token);
        self.stats.commit_log.push(kind);
        if self.committed.len() >= self.cfg.max_new_tokens {
            self.finished = true;
        }
        if self.cfg.eos_token == Some(token) {
            self.finished = true;
        }
    }

    /// One drafting round: gated tokens commit locally while no segment is
    /// open; the first low-margin token opens the segment, which closes at
    /// `k` tokens, at a subsequent high-margin position, or at the length
    /// limit. The returned segment carries all unsynced local commits as
    /// its gated prefix.
    pub fn draft_round(&mut self, k: usize) -> Result<DraftSegment> {
        let mut seg = DraftSegment {
            start_pos: self.committed.len(),
            tokens: Vec::new(),
            dists: Vec::new(),
            logits: Vec::new(),
            draft_token_probs: Vec::new(),
            draft_probs_f16: Vec::new(),
            gated_prefix: std::mem::take(&mut self.unsynced),
        };
        while !self.finished && seg.tokens.len() < k {
            let (logits, dist, presampled) = match self.pending.pop_front() {
                Some(p) => {
                    self.stats.pending_consumed += 1;
                    (p.logits, p.dist, Some(p.token))
                }
                None => {
                    let mut prefix = self.committed.clone();
                    prefix.extend_from_slice(&seg.tokens);
                    let lg = self.model.draft_logits(&self.visual_ids, &self.query, &prefix)?;
                    self.stats.draft_passes += 1;
                    let d = softmax(&lg)?;
                    (lg, d, None)
                }
            };
            let gate = GateDecision::new(margin(&dist)?, self.cfg.gamma);
            if !gate.verify {
                if !seg.tokens.is_empty() {
                    // A confident token after open draft positions: close
                    // the round; this distribution is stale once the
                    // verification outcome lands, so it is discarded.
                    break;
                }
                let tok = match presampled {
                    Some(t) => t,
                    None => pick_token(&dist, self.cfg.greedy, &mut self.draft_rng),
                };
                self.commit(tok, CommitKind::Gated);
                // The gated token belongs before the segment being built.
                seg.gated_prefix.push(tok);
                self.stats.gated += 1;
                continue;
            }
            let tok = match presampled {
                Some(t) => t,
                None => pick_token(&dist, self.cfg.greedy, &mut self.draft_rng),
            };
            if seg.tokens.is_empty() {
                // Gated commits may have advanced the context since the
                // round began; anchor the segment where drafting starts.
                seg.start_pos = self.committed.len();
            }
            let p_d = dist.get(tok);
            seg.draft_token_probs.push(p_d);
            seg.draft_probs_f16.push(f16_encode(p_d)?);
            seg.tokens.push(tok);
            seg.dists.push(dist);
            seg.logits.push(logits);
            self.stats.drafted += 1;
            if self.committed.len() + seg.tokens.len() >= self.cfg.max_new_tokens {
                break;
            }
        }
        // Gated commits consumed the unsynced slot into the segment; any
        // leftover predrafted tokens are stale after verification.
        self.pending.clear();
        // Tokens in gated_prefix are pending edge sync again if this
        // segment never gets uplinked (empty segment at termination);
        // callers uplink non-empty segments, whose prefix syncs there.
        if seg.tokens.is_empty() {
            self.unsynced = seg.gated_prefix.clone();
        }
        Ok(seg)
    }

    /// Commits a fully accepted segment plus the bonus token.
    pub fn commit_accept(&mut self, seg: &DraftSegment, bonus: u32) {
        for &t in &seg.tokens {
            self.commit(t, CommitKind::Accepted);
        }
        self.commit(bonus, CommitKind::Bonus);
    }

    /// Rejection path: commits the accepted prefix, then samples the
    /// correction from the residual of the dequantized target logits
    /// against the exact cached draft distribution.
    pub fn correct(
        &mut self,
        seg: &DraftSegment,
        accepted_len: usize,
        target_logits_f16: &[u16],
    ) -> Result<u32> {
        if accepted_len >= seg.tokens.len() {
            return Err(CovError::ProtocolFault(
                "full accept passed to the correction path".into(),
            ));
        }
        if target_logits_f16.len() != self.model.vocab.size() {
            return Err(CovError::ProtocolFault(format!(
                "target logits cover {} of {} vocabulary entries",
                target_logits_f16.len(),
                self.model.vocab.size()
            )));
        }
        for &t in &seg.tokens[..accepted_len] {
            self.commit(t, CommitKind::Accepted);
        }
        let values: Vec<f64> = target_logits_f16
            .iter()
            .map(|&c| f16_decode(c))
            .collect::<Result<_>>()?;
        let p_t_hat = softmax(&LogitVector::new(values)?)?;
        let correction = residual_correct(
            &p_t_hat,
            &seg.dists[accepted_len],
            self.cfg.greedy,
            &mut self.correction_rng,
        )?;
        self.commit(correction, CommitKind::Correction);
        // The edge discarded everything past the accepted prefix and does
        // not know the correction; carry it in the next gated prefix.
        self.unsynced.push(correction);
        Ok(correction)
    }

    /// Commits an edge-corrected token (full-logit uplink mode, where the
    /// edge performs residual sampling itself and already has the token).
    pub fn commit_edge_correction(&mut self, seg: &DraftSegment, accepted_len: usize, token: u32) {
        for &t in &seg.tokens[..accepted_len.min(seg.tokens.len())] {
            self.commit(t, CommitKind::Accepted);
        }
        self.commit(token, CommitKind::Correction);
    }

    /// Prepares branches for every verification outcome of `seg`, then
    /// round-robins continuation drafting until `budget` forward passes
    /// are spent. Candidates at outcome j come from the cached draft
    /// distribution at position j (excluding the drafted token); full-
    /// accept candidates are bonus guesses from a fresh pass past the
    /// segment end.
    pub fn plan_branches(
        &mut self,
        seg: &DraftSegment,
        f0: usize,
        rho: f64,
        budget: usize,
    ) -> Result<BranchPlan> {
        let k = seg.tokens.len();
        let f = fanout(f0, rho, k)?;
        let mut plan = BranchPlan::empty(seg.start_pos, k);
        if k == 0 || budget == 0 {
            return Ok(plan);
        }
        let mut budget = budget;
        #[allow(clippy::needless_range_loop)] // j walks three parallel arrays
        for j in 0..k {
            plan.per_outcome[j] = top_candidates(&seg.dists[j], f[j], Some(seg.tokens[j]))
                .into_iter()
                .map(|candidate| Branch {
                    candidate,
                    continuation: Vec::new(),
                })
                .collect();
        }
        // Bonus guesses need the draft distribution one past the segment.
        let mut bonus_prefix = self.committed.clone();
        bonus_prefix.extend_from_slice(&seg.tokens);
        let lg = self
            .model
            .draft_logits(&self.visual_ids, &self.query, &bonus_prefix)?;
        plan.planning_passes += 1;
        budget -= 1;
        let bonus_dist = softmax(&lg)?;
        plan.per_outcome[k] = top_candidates(&bonus_dist, f[k], None)
            .into_iter()
            .map(|candidate| Branch {
                candidate,
                continuation: Vec::new(),
            })
            .collect();

        // Per-branch speculative contexts and forked draw streams.
        let mut contexts: Vec<Vec<Vec<u32>>> = Vec::with_capacity(k + 1);
        let mut rngs: Vec<Vec<SeededRng>> = Vec::with_capacity(k + 1);
        for (j, branches) in plan.per_outcome.iter().enumerate() {
            let mut ctx_row = Vec::with_capacity(branches.len());
            let mut rng_row = Vec::with_capacity(branches.len());
            for b in branches {
                let mut ctx = self.committed.clone();
                ctx.extend_from_slice(&seg.tokens[..j]);
                ctx.push(b.candidate);
                ctx_row.push(ctx);
                rng_row.push(
                    self.draft_rng
                        .fork(&format!("branch/{}/{}/{}", seg.start_pos, j, b.candidate)),
                );
            }
            contexts.push(ctx_row);
            rngs.push(rng_row);
        }

        'outer: loop {
            let mut progressed = false;
            for j in 0..=k {
                for c in 0..plan.per_outcome[j].len() {
                    if budget == 0 {
                        break 'outer;
                    }
                    let ctx = &mut contexts[j][c];
                    if ctx.len() >= self.cfg.max_new_tokens {
                        continue;
                    }
                    let lg = self.model.draft_logits(&self.visual_ids, &self.query, ctx)?;
                    plan.planning_passes += 1;
                    budget -= 1;
                    progressed = true;
                    let dist = softmax(&lg)?;
                    let token = pick_token(&dist, self.cfg.greedy, &mut rngs[j][c]);
                    ctx.push(token);
                    plan.per_outcome[j][c].continuation.push(PredraftedToken {
                        token,
                        dist,
                        logits: lg,
                    });
                }
            }
            if !progressed {
                break;
            }
        }
        self.stats.planning_passes += plan.planning_passes;
        Ok(plan)
    }

    /// Matches the resolved outcome token (bonus or correction, already
    /// committed) against the plan. On a hit the branch continuation
    /// becomes the predrafted queue for the next round; otherwise plain
    /// drafting resumes.
    pub fn resolve_branches(
        &mut self,
        plan: &BranchPlan,
        outcome_pos: usize,
        token: u32,
    ) -> Result<bool> {
        if outcome_pos >= plan.per_outcome.len()
            || plan.start_pos + outcome_pos + 1 != self.committed.len()
        {
            return Err(CovError::ProtocolFault(
                "branch plan does not match the resolved outcome".into(),
            ));
        }
        self.pending.clear();
        if let Some(branch) = plan.per_outcome[outcome_pos]
            .iter()
            .find(|b| b.candidate == token)
        {
            self.pending.extend(branch.continuation.iter().cloned());
            if !branch.continuation.is_empty() {
                self.stats.branch_hits += 1;
            }
            Ok(true)
        } else {
            Ok(false)
        }
    }
}
