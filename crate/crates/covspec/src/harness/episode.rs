//! Episode driving: one device driver shared by loopback and socket
//! modes, the edge message handler, and metric assembly.

use std::time::Instant;

use super::{
    cost_reduction, ClockMode, LatencyModel, RoundDetail, RunReport, PRICE_IN_PER_M,
    PRICE_OUT_PER_M,
};
use crate::comm::codec::Message;
use crate::comm::payload::{downlink_bits, uplink_bits, uplink_bits_full_logits, DownlinkKind};
use crate::comm::{f16_encode, latency, PayloadLedger};
use crate::config::ExperimentConfig;
use crate::engine::{
    ControllerConfig, DeviceRole, EdgeRole, EngineConfig, FullOutcome, LengthController,
    OutcomePayload,
};
use crate::error::{CovError, Result};
use crate::models::{gen_visual, ModelConfig, Query, SyntheticModelPair, VisualTokenSet};
use crate::tokensel::{apply_stopword_filter, select_visual_tokens};
use crate::transport::{loopback_pair, Endpoint, LoopbackEndpoint, SocketEndpoint, VirtualClock};

/// A blocking request/response view of the verification channel. The
/// device driver is written against this, so loopback and socket modes
/// run identical protocol logic.
pub trait VerifierChannel {
    fn round_trip(&mut self, msg: Message) -> Result<Message>;
    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Loopback: both endpoints plus the edge role in one thread; every
/// message still passes through the wire codec.
pub struct LoopbackChannel {
    device_ep: LoopbackEndpoint,
    edge_ep: LoopbackEndpoint,
    pub edge: EdgeRole,
}

impl LoopbackChannel {
    pub fn new(edge: EdgeRole) -> Self {
        let (device_ep, edge_ep) = loopback_pair();
        Self {
            device_ep,
            edge_ep,
            edge,
        }
    }
}

impl VerifierChannel for LoopbackChannel {
    fn round_trip(&mut self, msg: Message) -> Result<Message> {
        self.device_ep.send(&msg)?;
        let received = self.edge_ep.recv()?;
        let reply = edge_handle(&mut self.edge, received)?;
        self.edge_ep.send(&reply)?;
        self.device_ep.recv()
    }
}

/// Socket mode: a connected endpoint to a remote edge process.
pub struct RemoteChannel<'a>(pub &'a mut SocketEndpoint);

impl VerifierChannel for RemoteChannel<'_> {
    fn round_trip(&mut self, msg: Message) -> Result<Message> {
        self.0.send(&msg)?;
        self.0.recv()
    }
}

/// Maps one uplink message to the edge's reply.
pub fn edge_handle(edge: &mut EdgeRole, msg: Message) -> Result<Message> {
    match msg {
        Message::Uplink {
            gated_ids,
            draft_ids,
            draft_probs_f16,
        } => {
            let outcome = edge.verify(&gated_ids, &draft_ids, &draft_probs_f16)?;
            Ok(match outcome.payload {
                OutcomePayload::BonusToken(b) => Message::DownlinkAccept {
                    accepted_len: outcome.accepted_len as u16,
                    bonus_id: b,
                },
                OutcomePayload::TargetLogits(codes) => Message::DownlinkReject {
                    accepted_len: outcome.accepted_len as u16,
                    target_logits_f16: codes,
                },
            })
        }
        Message::UplinkFull {
            gated_ids,
            draft_ids,
            vocab_size,
            draft_logits_f16,
        } => {
            let (accepted_len, outcome) =
                edge.verify_full(&gated_ids, &draft_ids, vocab_size, &draft_logits_f16)?;
            Ok(match outcome {
                FullOutcome::Bonus(b) => Message::DownlinkAccept {
                    accepted_len: accepted_len as u16,
                    bonus_id: b,
                },
                FullOutcome::Corrected(c) => Message::DownlinkCorrect {
                    accepted_len: accepted_len as u16,
                    correction_id: c,
                },
            })
        }
        other => Err(CovError::ProtocolFault(format!(
            "edge received non-uplink message {:#04x}",
            other.type_byte()
        ))),
    }
}

/// Serves uplinks until the peer closes the session.
pub fn serve_edge(edge: &mut EdgeRole, endpoint: &mut dyn Endpoint) -> Result<()> {
    loop {
        match endpoint.recv() {
            Ok(msg) => {
                let reply = edge_handle(edge, msg)?;
                endpoint.send(&reply)?;
            }
            Err(CovError::SessionClosed) => return Ok(()),
            Err(CovError::TransportTimeout) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Everything built from a config before an episode starts.
pub struct World {
    pub model: SyntheticModelPair,
    pub visual: VisualTokenSet,
    pub query: Query,
    pub device_visual_ids: Vec<usize>,
    pub edge_visual_ids: Vec<usize>,
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    cfg.validate()?;
    let terms: Vec<&str> = cfg.query_terms.iter().map(String::as_str).collect();
    let mut query = Query::synthetic(cfg.seed, &terms, cfg.visual.dim);
    apply_stopword_filter(&mut query);
    let visual = gen_visual(
        cfg.seed,
        cfg.visual.n,
        cfg.visual.dim,
        cfg.visual.layers,
        &query,
        cfg.visual.plant_count,
        cfg.visual.base_increment,
        cfg.visual.planted_increment,
    )?;
    let device_visual_ids = if !cfg.components.visual_reduction {
        (0..cfg.visual.n).collect()
    } else if !cfg.components.token_selection {
        // Reduction without selection: a fixed naive subset.
        (0..cfg.selection.b_vis.min(cfg.visual.n)).collect()
    } else {
        select_visual_tokens(&visual, &query, &cfg.selection)?
    };
    let model = SyntheticModelPair::new(&ModelConfig {
        seed: cfg.seed,
        ..cfg.model
    })?;
    Ok(World {
        model,
        visual,
        query,
        device_visual_ids,
        edge_visual_ids: (0..cfg.visual.n).collect(),
    })
}

/// Effective engine config after component toggles.
fn effective_engine(cfg: &ExperimentConfig) -> EngineConfig {
    EngineConfig {
        // Margins never exceed 1, so gamma = 2 disables gating.
        gamma: if cfg.components.margin_gate {
            cfg.engine.gamma
        } else {
            2.0
        },
        ..cfg.engine
    }
}

fn effective_controller(cfg: &ExperimentConfig) -> ControllerConfig {
    ControllerConfig {
        enabled: cfg.controller.enabled && cfg.components.length_adapt,
        ..cfg.controller
    }
}

pub fn make_device(cfg: &ExperimentConfig, world: &World) -> Result<DeviceRole> {
    DeviceRole::new(
        world.model.clone(),
        world.device_visual_ids.clone(),
        world.query.clone(),
        effective_engine(cfg),
        cfg.seed,
    )
}

pub fn make_edge(cfg: &ExperimentConfig, world: &World) -> EdgeRole {
    EdgeRole::new(
        world.model.clone(),
        world.edge_visual_ids.clone(),
        world.query.clone(),
        cfg.engine.greedy,
        cfg.seed,
    )
}

/// One rejected position as seen by the device, for the correction-site
/// equivalence oracle.
#[derive(Debug, Clone)]
pub struct RejectionTrace {
    pub target_logits_f16: Vec<u16>,
    pub draft_probs: Vec<f64>,
    pub correction: u32,
}

pub struct EpisodeOutput {
    pub report: RunReport,
    pub ledger: PayloadLedger,
    pub device: DeviceRole,
    pub rejections: Vec<RejectionTrace>,
}

/// Drives the device side of one episode over any channel.
pub fn run_device_episode(
    cfg: &ExperimentConfig,
    channel: &mut dyn VerifierChannel,
) -> Result<EpisodeOutput> {
    let world = build_world(cfg)?;
    let mut device = make_device(cfg, &world)?;
    let mut controller = LengthController::new(effective_controller(cfg))?;
    let lat: LatencyModel = cfg.latency;
    let dvc = cfg.components.decoupled_correction;
    let branching_on = cfg.components.branching && cfg.branching.enabled;
    let vocab = cfg.model.vocab_size as u64;

    let mut clock = VirtualClock::new();
    let mut ledger = PayloadLedger::default();
    let mut details: Vec<RoundDetail> = Vec::new();
    let mut rejections: Vec<RejectionTrace> = Vec::new();
    let mut idle_s = 0.0f64;
    let mut accepted_total = 0u64;
    let mut drafted_total = 0u64;
    let mut target_decode_tokens = 0u64;
    let wall_start = Instant::now();

    while !device.finished() {
        let passes_before = device.stats.draft_passes;
        let seg = device.draft_round(controller.current_k())?;
        let fresh = device.stats.draft_passes - passes_before;
        clock.advance(fresh as f64 * lat.device_token_s);
        if seg.is_empty() {
            break;
        }
        let n_draft = seg.len() as u64;
        let n_gated = seg.gated_prefix.len() as u64;
        let (msg, s_up) = if dvc {
            (
                Message::Uplink {
                    gated_ids: seg.gated_prefix.clone(),
                    draft_ids: seg.tokens.clone(),
                    draft_probs_f16: seg.draft_probs_f16.clone(),
                },
                uplink_bits(n_draft, n_gated, &cfg.payload),
            )
        } else {
            let mut codes = Vec::with_capacity(seg.len() * vocab as usize);
            for lg in &seg.logits {
                for &v in lg.values() {
                    codes.push(f16_encode(v)?);
                }
            }
            (
                Message::UplinkFull {
                    gated_ids: seg.gated_prefix.clone(),
                    draft_ids: seg.tokens.clone(),
                    vocab_size: vocab as u32,
                    draft_logits_f16: codes,
                },
                uplink_bits_full_logits(n_draft, n_gated, vocab, &cfg.payload),
            )
        };
        let t_up = latency(s_up, &cfg.channel)?;
        let t_down_accept = latency(downlink_bits(DownlinkKind::Accept, &cfg.payload), &cfg.channel)?;

        // Branch planning overlaps the verification wait. The budget is
        // derived from modeled time, never from wall-clock arrival, so
        // loopback and socket modes plan identically.
        let budget = if !branching_on {
            0
        } else if lat.device_token_s > 0.0 {
            let wait_est = t_up + lat.edge_round_s + t_down_accept;
            cfg.branching
                .max_budget
                .min((wait_est / lat.device_token_s).floor() as usize)
        } else {
            cfg.branching.max_budget
        };
        let plan = if budget > 0 {
            Some(device.plan_branches(&seg, cfg.branching.f0, cfg.branching.rho, budget)?)
        } else {
            None
        };

        let reply = channel.round_trip(msg)?;
        let (n_acc, outcome_pos, outcome_token, s_down) = match reply {
            Message::DownlinkAccept {
                accepted_len,
                bonus_id,
            } => {
                if accepted_len as usize != seg.len() {
                    return Err(CovError::ProtocolFault(
                        "accept reply with partial length".into(),
                    ));
                }
                device.commit_accept(&seg, bonus_id);
                (
                    seg.len(),
                    seg.len(),
                    bonus_id,
                    downlink_bits(DownlinkKind::Accept, &cfg.payload),
                )
            }
            Message::DownlinkReject {
                accepted_len,
                target_logits_f16,
            } => {
                if !dvc {
                    return Err(CovError::ProtocolFault(
                        "logit downlink in coupled-correction mode".into(),
                    ));
                }
                let al = accepted_len as usize;
                if al >= seg.len() {
                    return Err(CovError::ProtocolFault("reject reply beyond segment".into()));
                }
                let draft_probs = seg.dists[al].probs().to_vec();
                let correction = device.correct(&seg, al, &target_logits_f16)?;
                rejections.push(RejectionTrace {
                    target_logits_f16,
                    draft_probs,
                    correction,
                });
                (
                    al,
                    al,
                    correction,
                    downlink_bits(
                        DownlinkKind::Reject {
                            vocab_size: vocab,
                        },
                        &cfg.payload,
                    ),
                )
            }
            Message::DownlinkCorrect {
                accepted_len,
                correction_id,
            } => {
                if dvc {
                    return Err(CovError::ProtocolFault(
                        "edge correction in decoupled mode".into(),
                    ));
                }
                let al = accepted_len as usize;
                if al >= seg.len() {
                    return Err(CovError::ProtocolFault("correct reply beyond segment".into()));
                }
                device.commit_edge_correction(&seg, al, correction_id);
                (
                    al,
                    al,
                    correction_id,
                    downlink_bits(DownlinkKind::Correct, &cfg.payload),
                )
            }
            other => {
                return Err(CovError::ProtocolFault(format!(
                    "device received non-downlink message {:#04x}",
                    other.type_byte()
                )))
            }
        };
        let t_down = latency(s_down, &cfg.channel)?;
        ledger.record_round(s_up, s_down, t_up + t_down);
        let wait_actual = t_up + lat.edge_round_s + t_down;
        let planning_time = plan
            .as_ref()
            .map_or(0.0, |p| p.planning_passes as f64 * lat.device_token_s);
        clock.advance(wait_actual.max(planning_time));
        idle_s += (wait_actual - planning_time).max(0.0);
        // Target decode charge per round: n_acc accepted positions plus
        // either the rejected position or the bonus draw.
        target_decode_tokens += n_acc as u64 + 1;
        accepted_total += n_acc as u64;
        drafted_total += seg.len() as u64;
        let branch_hit = match &plan {
            Some(p) if !device.finished() => device.resolve_branches(p, outcome_pos, outcome_token)?,
            _ => false,
        };
        details.push(RoundDetail {
            k: seg.len(),
            n_acc,
            s_up_bits: s_up,
            s_down_bits: s_down,
            t_comm_s: t_up + t_down,
            branch_hit,
        });
        let t_rej_est = latency(
            s_up + downlink_bits(DownlinkKind::Reject { vocab_size: vocab }, &cfg.payload),
            &cfg.channel,
        )?;
        controller.update(n_acc, seg.len(), t_rej_est);
    }
    channel.close()?;

    debug_assert!(ledger.is_consistent());
    let committed = device.committed().to_vec();
    let tokens = committed.len() as u64;
    let rounds = details.len() as u64;
    let wall_time_s = wall_start.elapsed().as_secs_f64();
    let modeled_time_s = clock.now_s();
    let elapsed_for_tps = match lat.mode {
        ClockMode::Modeled => modeled_time_s,
        ClockMode::WallClock => wall_time_s,
    };
    let tokens_per_second = if elapsed_for_tps > 0.0 {
        tokens as f64 / elapsed_for_tps
    } else {
        0.0
    };
    // Edge-only baseline: one target pass per token, same latency model.
    let edge_only_tps = if lat.edge_round_s > 0.0 {
        1.0 / lat.edge_round_s
    } else {
        f64::INFINITY
    };
    let speedup_vs_edge_only = if edge_only_tps.is_finite() && edge_only_tps > 0.0 {
        tokens_per_second / edge_only_tps
    } else {
        0.0
    };
    let prefill_tokens = (cfg.visual.n + cfg.query_terms.len()) as u64;
    // The system pays the edge prefill only if it ever contacted the
    // edge; a fully gated run costs nothing on the target side.
    let cost_reduction_pct = if rounds > 0 {
        cost_reduction(
            prefill_tokens,
            target_decode_tokens,
            tokens,
            PRICE_IN_PER_M,
            PRICE_OUT_PER_M,
        )?
    } else {
        100.0
    };
    let acceptance_rate = if drafted_total > 0 {
        accepted_total as f64 / drafted_total as f64
    } else {
        1.0
    };
    let gated_fraction = if tokens > 0 {
        device.stats.gated as f64 / tokens as f64
    } else {
        0.0
    };

    let report = RunReport {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        committed_text: committed,
        tokens_per_second,
        speedup_vs_edge_only,
        comm_megabytes: ledger.total_megabytes(),
        cost_reduction_pct,
        acceptance_rate,
        rounds,
        gated_fraction,
        modeled_time_s,
        idle_s,
        wall_time_s,
        rounds_detail: details,
    };
    Ok(EpisodeOutput {
        report,
        ledger,
        device,
        rejections,
    })
}

/// Runs one full loopback episode.
pub fn run_episode(cfg: &ExperimentConfig) -> Result<EpisodeOutput> {
    let world = build_world(cfg)?;
    let edge = make_edge(cfg, &world);
    let mut channel = LoopbackChannel::new(edge);
    run_device_episode(cfg, &mut channel)
}
