//! Acceptance gate: one test per criterion, each printing a PASS line
//! (run with `--nocapture` to see them). All checks are deterministic.

use std::io::{BufRead, BufReader, Read};
use std::process::{Command, Stdio};
use std::time::Instant;

use covspec::comm::codec::{encode_message, Message};
use covspec::comm::{
    downlink_bits, f16_decode, latency, uplink_bits, ChannelConfig, DownlinkKind, PayloadConfig,
};
use covspec::config::ExperimentConfig;
use covspec::engine::{fanout, residual_correct, ControllerConfig, LengthController};
use covspec::harness::{exactness_oracle, run_episode, table_model};
use covspec::probcore::{softmax, LogitVector, ProbDist, SeededRng};
use covspec::tokensel::truncated_svd;

fn pass(n: u32, name: &str) {
    println!("ACCEPTANCE {n} ({name}): PASS");
}

/// Overrides shared between in-process runs and spawned CLI processes,
/// sized so episodes finish in milliseconds.
fn small_overrides(seed: u64) -> Vec<String> {
    vec![
        format!("seed={seed}"),
        "model.vocab_size=48".into(),
        "model.agreement=0.85".into(),
        "visual.n=64".into(),
        "visual.dim=16".into(),
        "visual.layers=3".into(),
        "plant_count=12".into(),
        "selection.m=32".into(),
        "selection.rank=8".into(),
        "selection.b_vis=16".into(),
        "engine.max_new_tokens=32".into(),
        "controller.k_max=8".into(),
    ]
}

fn small_cfg(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for spec in small_overrides(seed) {
        cfg = cfg.apply_override(&spec).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

#[test]
fn criterion_1_exactness() {
    let start = Instant::now();
    let mut rng = SeededRng::new(1, "acceptance-oracle");
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let vocab = 2 + (rng.next_uniform() * 5.0) as usize;
        let k = 1 + (rng.next_uniform() * 3.0) as usize;
        let horizon = 1 + (rng.next_uniform() * 3.0) as usize;
        let p_d = table_model(i, "draft", vocab);
        let p_t = table_model(i ^ 0x9e37, "target", vocab);
        let tv = exactness_oracle(&p_d, &p_t, vocab, k, horizon).unwrap();
        worst = worst.max(tv);
    }
    assert!(worst < 1e-12, "max TV {worst:e}");
    assert!(start.elapsed().as_secs() < 60);
    pass(1, "exactness over 200 table pairs");
}

#[test]
fn criterion_2_decoupled_correction_bit_equivalence() {
    let start = Instant::now();
    let mut total_rejections = 0usize;
    for seed in 0..100u64 {
        let mut cfg = small_cfg(seed);
        cfg.model.agreement = 0.4; // plenty of rejections
        cfg.engine.max_new_tokens = 24;
        let out = run_episode(&cfg).unwrap();
        // Reference edge-side replay: the same downlinked f16 target
        // logits, the same quantization-free draft distribution, and the
        // same seeded correction stream must reproduce every correction
        // the device committed, bit for bit.
        let mut reference_rng = SeededRng::new(cfg.seed, "correction");
        for trace in &out.rejections {
            let values: Vec<f64> = trace
                .target_logits_f16
                .iter()
                .map(|&c| f16_decode(c).unwrap())
                .collect();
            let p_t = softmax(&LogitVector::new(values).unwrap()).unwrap();
            let p_d = ProbDist::new(trace.draft_probs.clone()).unwrap();
            let reference =
                residual_correct(&p_t, &p_d, cfg.engine.greedy, &mut reference_rng).unwrap();
            assert_eq!(reference, trace.correction, "seed {seed}");
        }
        total_rejections += out.rejections.len();
    }
    assert!(total_rejections > 100, "only {total_rejections} rejections");
    assert!(start.elapsed().as_secs() < 30);
    pass(2, "device-side corrections match edge-side reference");
}

#[test]
fn criterion_3_svd_energy_conservation() {
    let mut rng = SeededRng::new(3, "acceptance-svd");
    for case in 0..10 {
        let m = 4 + (rng.next_uniform() * 60.0) as usize;
        let d = 4 + (rng.next_uniform() * 60.0) as usize;
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.next_uniform() * 2.0 - 1.0).collect())
            .collect();
        let rank = m.min(d) - 1;
        let svd = truncated_svd(&cols, rank).unwrap();
        let energy_sum: f64 = svd.energies().iter().sum();
        let sigma_sum: f64 = svd.singular_values[..svd.rank].iter().map(|s| s * s).sum();
        let rel = (energy_sum - sigma_sum).abs() / sigma_sum.max(1e-300);
        assert!(rel < 1e-9, "case {case}: rel err {rel:e}");
    }
    // Orthogonal columns: energies are the squared column norms, so the
    // top-energy ranking is exactly the top-norm ranking.
    let d = 8;
    let norms = [5.0, 1.0, 3.0, 2.0];
    let cols: Vec<Vec<f64>> = norms
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut c = vec![0.0; d];
            c[i] = n;
            c
        })
        .collect();
    let svd = truncated_svd(&cols, 3).unwrap();
    let energies = svd.energies();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| energies[b].partial_cmp(&energies[a]).unwrap());
    assert_eq!(&order[..3], &[0, 2, 3]);
    pass(3, "SVD energy conservation and orthogonal-column selection");
}

#[test]
fn criterion_4_payload_arithmetic() {
    let cfg = PayloadConfig::default();
    assert_eq!(uplink_bits(4, 0, &cfg), 192);
    assert_eq!(downlink_bits(DownlinkKind::Accept, &cfg), 48);
    assert_eq!(downlink_bits(DownlinkKind::Reject { vocab_size: 8 }, &cfg), 144);
    for n_draft in 0..=16u64 {
        let bits = uplink_bits(n_draft, 0, &cfg);
        let frame = encode_message(&Message::Uplink {
            gated_ids: vec![],
            draft_ids: (0..n_draft as u32).collect(),
            draft_probs_f16: vec![0x3C00; n_draft as usize],
        });
        // Body = payload bytes plus the two u16 count fields.
        assert_eq!(frame.len() as u64 - 5, bits.div_ceil(8) + 4);
    }
    let mut w = 2u64;
    while w <= 1024 {
        let bits = downlink_bits(DownlinkKind::Reject { vocab_size: w }, &cfg);
        let frame = encode_message(&Message::DownlinkReject {
            accepted_len: 0,
            target_logits_f16: vec![0; w as usize],
        });
        // Body = payload bytes plus the u32 logit-count field.
        assert_eq!(frame.len() as u64 - 5, bits.div_ceil(8) + 4);
        w *= 2;
    }
    let accept = encode_message(&Message::DownlinkAccept {
        accepted_len: 4,
        bonus_id: 1,
    });
    assert_eq!(accept.len() as u64 - 5, 48 / 8);
    pass(4, "payload arithmetic and codec byte lengths");
}

#[test]
fn criterion_5_latency_model() {
    let cfg = ChannelConfig {
        bandwidth_hz: 5e6,
        snr_db: 10.0,
    };
    let t = latency(17_297_158, &cfg).unwrap();
    assert!((t - 1.0).abs() < 1e-4, "t = {t}");
    let mut rng = SeededRng::new(5, "acceptance-channel");
    for _ in 0..1000 {
        let bits = 1 + (rng.next_uniform() * 1e7) as u64;
        let b = 1e5 + rng.next_uniform() * 1e7;
        let snr = -5.0 + rng.next_uniform() * 40.0;
        let base = latency(bits, &ChannelConfig { bandwidth_hz: b, snr_db: snr }).unwrap();
        let more_bw = latency(
            bits,
            &ChannelConfig {
                bandwidth_hz: b * 1.5,
                snr_db: snr,
            },
        )
        .unwrap();
        let more_snr = latency(
            bits,
            &ChannelConfig {
                bandwidth_hz: b,
                snr_db: snr + 3.0,
            },
        )
        .unwrap();
        assert!(more_bw < base);
        assert!(more_snr < base);
    }
    pass(5, "latency reference point and monotonicity");
}

#[test]
fn criterion_6_controller_behavior() {
    let base = ControllerConfig::default();
    let mut c = LengthController::new(base).unwrap();
    c.update(0, 1, 1.0);
    assert!((c.p_hat() - 0.9).abs() < 1e-12);

    let mut hi = LengthController::new(ControllerConfig { k_init: 16, ..base }).unwrap();
    assert_eq!(hi.update(4, 4, 0.0), 16);
    let mut lo = LengthController::new(ControllerConfig { k_init: 1, ..base }).unwrap();
    for _ in 0..20 {
        lo.update(0, 4, 1.0);
    }
    assert_eq!(lo.current_k(), 1);

    // phi truth table: 27 combinations of {p_hat side} x {latency side}
    // x {k}, with the boundary values sitting exactly on the thresholds.
    let p_cases = [
        (base.p_low - 1e-9, -1),
        (base.p_low, -1),
        ((base.p_low + base.p_up) / 2.0, 0),
        (base.p_up - 1e-9, 0),
        (base.p_up, 1),
        (base.p_up + 1e-9, 1),
        (1.0, 1),
        (0.0, -1),
        (base.p_low + 1e-9, 0),
    ];
    let t_cases = [
        (base.t_ref_s - 1e-9, true),
        (base.t_ref_s, true),
        (base.t_ref_s + 1e-9, false),
    ];
    let mut combos = 0;
    for &(p_hat, raw_phi) in &p_cases {
        for &(t, fast) in &t_cases {
            let c = LengthController::resume(base, p_hat, base.k_init).unwrap();
            let expect = match raw_phi {
                1 if !fast => 0,
                other => other,
            };
            assert_eq!(c.phi(t), expect, "p_hat={p_hat} t={t}");
            combos += 1;
        }
    }
    assert_eq!(combos, 27);

    // Round-half-even documented cases: 3/2 and 5/2 both round to 2.
    for k_init in [3usize, 5] {
        let mut c = LengthController::resume(base, 0.0, k_init).unwrap();
        assert_eq!(c.update(0, 0, 1.0), 2, "k_init={k_init}");
    }
    pass(6, "controller EMA, clipping, phi branches, rounding");
}

#[test]
fn criterion_7_fanout() {
    assert_eq!(fanout(4, 0.5, 4).unwrap(), vec![4, 2, 1, 1, 1]);
    assert_eq!(fanout(3, 0.7, 4).unwrap(), vec![3, 3, 2, 2, 1]);
    let mut rng = SeededRng::new(7, "acceptance-fanout");
    for _ in 0..500 {
        let f0 = 1 + (rng.next_uniform() * 8.0) as usize;
        let rho = 0.05 + rng.next_uniform() * 0.9;
        let k = (rng.next_uniform() * 6.0) as usize;
        for f in fanout(f0, rho, k).unwrap() {
            assert!(f >= 1);
        }
    }
    pass(7, "branch fan-out schedule");
}

#[test]
fn criterion_8_directional_ablations() {
    let start = Instant::now();

    // (a) DVC off strictly increases comm whenever a rejection occurred.
    let mut dvc_checked = false;
    for seed in 0..10u64 {
        let on = small_cfg(seed);
        let mut off = on.clone();
        off.components.decoupled_correction = false;
        let out_on = run_episode(&on).unwrap();
        if out_on.rejections.is_empty() {
            continue;
        }
        let out_off = run_episode(&off).unwrap();
        assert!(
            out_off.report.comm_megabytes > out_on.report.comm_megabytes,
            "seed {seed}"
        );
        dvc_checked = true;
    }
    assert!(dvc_checked, "no seed produced a rejection");

    // (b) gating at gamma=0.7 needs fewer verification rounds than no
    // gating, summed over seeds (the committed text length is fixed).
    let mut rounds_gated = 0u64;
    let mut rounds_ungated = 0u64;
    let mut gated_tokens = 0usize;
    for seed in 0..10u64 {
        let mut gated = small_cfg(seed);
        // Margins only reach 0.7 when the vocabulary is small enough for
        // the draft distribution to concentrate.
        gated.model.vocab_size = 4;
        gated.engine.gamma = 0.7;
        let mut ungated = gated.clone();
        ungated.engine.gamma = 1.5;
        let a = run_episode(&gated).unwrap();
        let b = run_episode(&ungated).unwrap();
        rounds_gated += a.report.rounds;
        rounds_ungated += b.report.rounds;
        gated_tokens += a.device.stats.gated;
    }
    assert!(gated_tokens > 0, "gate never fired at gamma=0.7");
    assert!(
        rounds_gated < rounds_ungated,
        "rounds {rounds_gated} vs {rounds_ungated}"
    );

    // (c) branching reduces modeled idle time and leaves greedy text
    // unchanged.
    let mut idle_saved = false;
    for seed in 0..5u64 {
        let mut on = small_cfg(seed);
        on.engine.greedy = true;
        let mut off = on.clone();
        off.components.branching = false;
        let out_on = run_episode(&on).unwrap();
        let out_off = run_episode(&off).unwrap();
        assert_eq!(out_on.report.committed_text, out_off.report.committed_text);
        assert!(out_on.report.idle_s <= out_off.report.idle_s);
        if out_on.report.idle_s < out_off.report.idle_s {
            idle_saved = true;
        }
    }
    assert!(idle_saved, "branch planning never absorbed any idle time");

    assert!(start.elapsed().as_secs() < 300);
    pass(8, "directional ablations (DVC comm, gating rounds, branching idle)");
}

#[test]
fn criterion_9_mode_equivalence() {
    let bin = env!("CARGO_BIN_EXE_covspec");
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..20u64 {
        let overrides = small_overrides(seed);
        let cfg = small_cfg(seed);
        let loopback = run_episode(&cfg).unwrap();

        let mut edge_cmd = Command::new(bin);
        edge_cmd.arg("serve-edge").arg("--port").arg("0");
        for o in &overrides {
            edge_cmd.arg("--override").arg(o);
        }
        let mut edge = edge_cmd
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn edge");
        let mut edge_out = BufReader::new(edge.stderr.take().unwrap());
        let mut line = String::new();
        edge_out.read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .rsplit(' ')
            .next()
            .expect("edge address in banner");

        let out_dir = tmp.path().join(format!("seed{seed}"));
        let mut dev_cmd = Command::new(bin);
        dev_cmd
            .arg("run-device")
            .arg("--addr")
            .arg(addr)
            .arg("--out-dir")
            .arg(&out_dir);
        for o in &overrides {
            dev_cmd.arg("--override").arg(o);
        }
        let status = dev_cmd.status().expect("run device");
        assert!(status.success(), "device exited {status:?} for seed {seed}");
        let mut edge_err = line.clone();
        edge_out.read_to_string(&mut edge_err).ok();
        let edge_status = edge.wait().unwrap();
        assert!(edge_status.success(), "edge exited {edge_status:?}: {edge_err}");

        let raw = std::fs::read_to_string(out_dir.join(format!("{}.json", cfg.run_id))).unwrap();
        let mut socket_report: serde_json::Value = serde_json::from_str(&raw).unwrap();
        let mut loop_report =
            serde_json::to_value(&loopback.report).unwrap();
        socket_report["wall_time_s"] = 0.0.into();
        loop_report["wall_time_s"] = 0.0.into();
        if socket_report != loop_report {
            let (s, l) = (
                socket_report.as_object().unwrap(),
                loop_report.as_object().unwrap(),
            );
            for (key, sv) in s {
                if l.get(key) != Some(sv) {
                    eprintln!("seed {seed} field {key}: socket={sv} loopback={}", l[key]);
                }
            }
            panic!("socket and loopback reports differ for seed {seed}");
        }

        let csv = std::fs::read_to_string(out_dir.join(format!("{}.csv", cfg.run_id))).unwrap();
        let expected = format!(
            "{}\n{}\n",
            covspec::harness::CSV_HEADER,
            covspec::harness::csv_row(&loopback.report, &cfg)
        );
        assert_eq!(csv, expected, "seed {seed}");
    }
    pass(9, "loopback and two-process socket runs are identical");
}

#[test]
fn criterion_10_determinism() {
    for seed in [1u64, 17, 4242] {
        let cfg = small_cfg(seed);
        let mut a = serde_json::to_value(&run_episode(&cfg).unwrap().report).unwrap();
        let mut b = serde_json::to_value(&run_episode(&cfg).unwrap().report).unwrap();
        a["wall_time_s"] = 0.0.into();
        b["wall_time_s"] = 0.0.into();
        assert_eq!(a, b, "seed {seed}");
    }
    pass(10, "seeded runs are bit-identical in non-wall-clock outputs");
}
