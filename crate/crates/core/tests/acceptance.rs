//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! These pin the system-level contracts: CTC loss against an enumeration
//! oracle, finite-difference gradients for every differentiable stage, the
//! adaptive shift-count law and packed-batch isolation/memory behavior,
//! padding independence, metric correctness, optimizer/schedule laws, and
//! desk-scale end-to-end training on synthetic data.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use fingerspell::config::{RunConfig, TrainConfig};
use fingerspell::datamodel::{
    pack_batch, pad_keypoint_batch_to, Alphabet, FeatureSequence, FrameClip, KeypointClip,
    KeypointLayout, LabelSequence,
};
use fingerspell::decoder::{
    ctc_loss, ctc_loss_bruteforce, ctc_loss_on_tape, ctc_min_frames, decode_head, greedy_decode,
    DecoderConfig,
};
use fingerspell::metrics::{edit_counts_slices, letter_accuracy};
use fingerspell::model::Modality;
use fingerspell::numerics::gru::{rnn_forward, RnnKind, RnnSpec};
use fingerspell::numerics::kernels;
use fingerspell::numerics::tape::{Tape, Var};
use fingerspell::numerics::{grad_check_sampled, ParamBuilder, ParamSet, ParamVars};
use fingerspell::rng;
use fingerspell::synthgen;
use fingerspell::tensor::Tensor;
use fingerspell::tpe::{self, TpeConfig};
use fingerspell::train::{self, lr_at, AdamW};
use fingerspell::tsam::{self, Reduction, TsamConfig};

fn criterion(n: u32, name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(f);
    let elapsed = start.elapsed();
    match result {
        Ok(()) => println!("ACCEPTANCE {n} ({name}): PASS [{elapsed:.2?}]"),
        Err(e) => {
            println!("ACCEPTANCE {n} ({name}): FAIL [{elapsed:.2?}]");
            std::panic::resume_unwind(e);
        }
    }
}

fn random_logprobs(t: usize, v: usize, tag: &str) -> Tensor<f64> {
    let mut r = rng::stream(4242, tag);
    let mut data = Vec::with_capacity(t * v);
    for _ in 0..t {
        let logits: Vec<f64> = (0..v).map(|_| r.gen_range(-2.5..2.5)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|x| x - lse));
    }
    Tensor::from_vec(&[t, v], data)
}

// ---------------------------------------------------------------------------
// 1. CTC oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_ctc_oracle_equivalence() {
    criterion(1, "ctc oracle equivalence", || {
        let start = Instant::now();
        let mut r = rng::stream(100, "ctc-cases");
        let mut checked = 0usize;
        let mut case = 0usize;
        while checked < 1000 {
            case += 1;
            let t = r.gen_range(1..=6usize);
            let v = r.gen_range(2..=4usize); // |A| <= 3 plus blank
            let label: Vec<usize> = (0..r.gen_range(0..=3usize))
                .map(|_| r.gen_range(1..v))
                .collect();
            if ctc_min_frames(&label) > t {
                continue;
            }
            let lp = random_logprobs(t, v, &format!("case{case}"));
            let (loss, _) = ctc_loss(&lp, &label).unwrap();
            let brute = ctc_loss_bruteforce(&lp, &label).unwrap();
            let diff = ((-loss).exp() - brute).abs();
            assert!(
                diff <= 1e-9,
                "case {case}: |exp(-loss) - brute| = {diff:e} (T={t}, V={v}, label {label:?})"
            );
            checked += 1;
        }
        assert!(
            start.elapsed() <= Duration::from_secs(30),
            "oracle sweep exceeded 30 s"
        );
    });
}

// ---------------------------------------------------------------------------
// 2. gradient suite
// ---------------------------------------------------------------------------

fn rand_tensor(shape: &[usize], tag: &str) -> Tensor<f64> {
    let mut r = rng::stream(4343, tag);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var, tag: &str) -> Var {
    let w = tape.leaf(rand_tensor(tape.value(out).shape(), tag));
    let prod = tape.mul(out, w);
    tape.sum_all(prod)
}

/// Gradient-check a tape construction against central differences at the
/// acceptance tolerance (1e-4, eps 1e-5), optionally sampling large tensors.
fn check_grads(
    label: &str,
    params: ParamSet<f64>,
    max_entries: Option<usize>,
    require_all_nonzero: bool,
    build: impl Fn(&mut Tape<f64>, &ParamVars) -> Var,
) {
    let eval = |p: &ParamSet<f64>| {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, p);
        let loss = build(&mut tape, &pv);
        tape.value(loss).data()[0]
    };
    let analytic = |p: &ParamSet<f64>| {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, p);
        let loss = build(&mut tape, &pv);
        let grads = tape.backward(loss);
        pv.collect_grads(p, &grads)
    };
    if require_all_nonzero {
        let grads = analytic(&params);
        for (i, g) in grads.iter().enumerate() {
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "{label}: parameter {} has an all-zero gradient (dead branch)",
                params.name_at(i)
            );
        }
    }
    let report = grad_check_sampled(&params, &eval, &analytic, 1e-5, 1e-4, max_entries, 77)
        .unwrap_or_else(|e| panic!("{label}: {e}"));
    assert!(
        report.passes(1e-4),
        "{label}: worst {:?}",
        report.worst()
    );
}

#[test]
fn criterion_2_gradient_suite() {
    criterion(2, "gradient suite", || {
        let start = Instant::now();

        // conv 1/2/3D and linear on randomized small shapes
        let mut shape_rng = rng::stream(4545, "shapes");
        for round in 0..2 {
            let ci = shape_rng.gen_range(1..=3usize);
            let co = shape_rng.gen_range(1..=3usize);
            let l = shape_rng.gen_range(5..=9usize);
            let mut p = ParamSet::new();
            p.insert("x", rand_tensor(&[ci, l], &format!("c1x{round}")));
            p.insert("w", rand_tensor(&[co, ci, 3], &format!("c1w{round}")));
            p.insert("b", rand_tensor(&[co], &format!("c1b{round}")));
            let stride = shape_rng.gen_range(1..=2usize);
            check_grads(&format!("conv1d round {round}"), p, None, false, move |t, pv| {
                let y = t
                    .conv1d(pv.var("x"), pv.var("w"), Some(pv.var("b")), stride, 1)
                    .unwrap();
                weighted_sum(t, y, "ws")
            });

            let h = shape_rng.gen_range(4..=6usize);
            let wd = shape_rng.gen_range(4..=6usize);
            let frames = shape_rng.gen_range(1..=3usize);
            let mut p = ParamSet::new();
            p.insert("x", rand_tensor(&[frames, ci, h, wd], &format!("c2x{round}")));
            p.insert("w", rand_tensor(&[co, ci, 3, 3], &format!("c2w{round}")));
            p.insert("b", rand_tensor(&[co], &format!("c2b{round}")));
            check_grads(&format!("conv2d round {round}"), p, None, false, move |t, pv| {
                let y = t
                    .conv2d(pv.var("x"), pv.var("w"), Some(pv.var("b")), (1, 1), (1, 1))
                    .unwrap();
                weighted_sum(t, y, "ws")
            });

            let d = shape_rng.gen_range(6..=8usize);
            let mut p = ParamSet::new();
            p.insert("x", rand_tensor(&[ci, d, 3, 4], &format!("c3x{round}")));
            p.insert("w", rand_tensor(&[co, ci, 3, 1, 1], &format!("c3w{round}")));
            p.insert("b", rand_tensor(&[co], &format!("c3b{round}")));
            check_grads(&format!("conv3d round {round}"), p, None, false, move |t, pv| {
                let y = t
                    .conv3d(
                        pv.var("x"),
                        pv.var("w"),
                        Some(pv.var("b")),
                        (2, 1, 1),
                        (0, 0, 0),
                    )
                    .unwrap();
                weighted_sum(t, y, "ws")
            });

            let din = shape_rng.gen_range(3..=6usize);
            let dout = shape_rng.gen_range(2..=5usize);
            let rows = shape_rng.gen_range(2..=4usize);
            let mut p = ParamSet::new();
            p.insert("x", rand_tensor(&[rows, din], &format!("lx{round}")));
            p.insert("w", rand_tensor(&[dout, din], &format!("lw{round}")));
            p.insert("b", rand_tensor(&[dout], &format!("lb{round}")));
            check_grads(&format!("linear round {round}"), p, None, false, |t, pv| {
                let y = t.linear(pv.var("x"), pv.var("w"), Some(pv.var("b")));
                weighted_sum(t, y, "ws")
            });
        }

        // bidirectional two-layer GRU with a masked length
        let spec = RnnSpec {
            kind: RnnKind::Gru,
            input_dim: 3,
            hidden: 4,
            layers: 2,
            bidirectional: true,
        };
        let mut p = ParamSet::new();
        let mut b = ParamBuilder::new(&mut p, 4040);
        spec.init_params("rnn", &mut b);
        p.insert("x", rand_tensor(&[6, 3], "grux"));
        let spec2 = spec.clone();
        check_grads("bigru", p, None, false, move |t, pv| {
            let y = rnn_forward(t, &spec2, "rnn", pv, pv.var("x"), 5).unwrap();
            weighted_sum(t, y, "ws")
        });

        // conformer-style convolution module
        let tcfg = TpeConfig {
            keypoints: 6,
            feature_dim: 5,
            ..TpeConfig::desk(5)
        };
        let mut p = ParamSet::new();
        let mut b = ParamBuilder::new(&mut p, 4141);
        tcfg.init_params("tpe", &mut b);
        p.insert("x", rand_tensor(&[7, 5], "cmx"));
        check_grads("conv_module", p, Some(60), false, move |t, pv| {
            let y = tpe::conv_module_on_tape(t, pv.var("x"), "tpe", 0, pv);
            weighted_sum(t, y, "ws")
        });

        // full keypoint encoder; every parameter must also receive a nonzero
        // gradient (no dead branch)
        let mut p = ParamSet::new();
        let mut b = ParamBuilder::new(&mut p, 4242);
        tcfg.init_params("tpe", &mut b);
        p.insert("x", rand_tensor(&[3, 8, 6], "tpex").map(|v| v * 0.5 + 0.5));
        let tcfg3 = tcfg.clone();
        check_grads("tpe_forward", p, Some(40), true, move |t, pv| {
            let feats = tpe::forward_clip_on_tape(t, pv.var("x"), 7, &tcfg3, "tpe", pv).unwrap();
            let mut h = feats;
            for m in 0..tcfg3.conv_modules {
                h = tpe::conv_module_on_tape(t, h, "tpe", m, pv);
            }
            weighted_sum(t, h, "ws")
        });

        // tiny RGB backbone over a packed two-sequence batch
        let scfg = TsamConfig {
            in_channels: 2,
            input_hw: (6, 6),
            stem_channels: 4,
            stem_stride: 1,
            block_channels: vec![4, 8],
            block_strides: vec![1, 2],
            shift_fraction: 0.25,
            count_shift_enabled: true,
            norm_enabled: true,
            reduction: Reduction::AvgPool1dConv,
            feature_dim: 5,
        };
        let mut p = scfg.build_params::<f64>("tsam", 4343);
        p.insert("x0", rand_tensor(&[4, 2, 6, 6], "tsx0").map(|v| v * 0.5 + 0.5));
        p.insert("x1", rand_tensor(&[2, 2, 6, 6], "tsx1").map(|v| v * 0.5 + 0.5));
        let scfg2 = scfg.clone();
        check_grads("tsam_forward", p, Some(40), false, move |t, pv| {
            let y0 =
                tsam::forward_sequence_on_tape(t, pv.var("x0"), &scfg2, "tsam", pv, None).unwrap();
            let y1 =
                tsam::forward_sequence_on_tape(t, pv.var("x1"), &scfg2, "tsam", pv, None).unwrap();
            let s0 = weighted_sum(t, y0, "ws0");
            let s1 = weighted_sum(t, y1, "ws1");
            t.add(s0, s1)
        });

        // ctc loss through log-softmax
        let mut p = ParamSet::new();
        p.insert("logits", rand_tensor(&[6, 4], "ctcx"));
        check_grads("ctc_loss", p, None, false, |t, pv| {
            let lp = t.log_softmax(pv.var("logits"));
            ctc_loss_on_tape(t, lp, &[1, 3, 1]).unwrap()
        });

        assert!(
            start.elapsed() <= Duration::from_secs(300),
            "gradient suite exceeded 5 min"
        );
    });
}

// ---------------------------------------------------------------------------
// 3 / 4 / 6 / 9. TSAM system properties
// ---------------------------------------------------------------------------

fn tiny_tsam() -> TsamConfig {
    TsamConfig {
        in_channels: 2,
        input_hw: (6, 6),
        stem_channels: 4,
        stem_stride: 1,
        block_channels: vec![4, 8, 8, 8],
        block_strides: vec![1, 2, 1, 1],
        shift_fraction: 0.25,
        count_shift_enabled: true,
        norm_enabled: true,
        reduction: Reduction::AvgPool1dConv,
        feature_dim: 5,
    }
}

fn random_frame_clip(t: usize, c: usize, hw: usize, tag: &str) -> FrameClip<f64> {
    let mut r = rng::stream(909, tag);
    let data = (0..t * c * hw * hw).map(|_| r.gen_range(0.0..1.0)).collect();
    FrameClip::new(Tensor::from_vec(&[t, c, hw, hw], data)).unwrap()
}

#[test]
fn criterion_3_shift_count_law() {
    criterion(3, "tsam shift-count law", || {
        let mut r = rng::stream(303, "lists");
        for round in 0..20 {
            let b = r.gen_range(1..=6usize);
            let mut cfg = tiny_tsam();
            cfg.block_channels = vec![4; b];
            cfg.block_strides = vec![1; b];
            let params = cfg.build_params::<f64>("tsam", round as u64);
            let n_seq = r.gen_range(1..=4usize);
            let lengths: Vec<usize> = (0..n_seq).map(|_| r.gen_range(1..=8usize)).collect();
            let clips: Vec<FrameClip<f64>> = lengths
                .iter()
                .enumerate()
                .map(|(i, &l)| random_frame_clip(l, 2, 6, &format!("r{round}s{i}")))
                .collect();
            let batch = pack_batch(&clips).unwrap();
            let (_, trace) =
                tsam::tsam_forward_instrumented(&batch, &cfg, "tsam", &params).unwrap();
            let expect: Vec<usize> = lengths.iter().map(|&l| l.min(b)).collect();
            assert_eq!(trace.shifts_per_sequence, expect, "round {round} counting on");

            let mut cfg_off = cfg.clone();
            cfg_off.count_shift_enabled = false;
            let (_, trace_off) =
                tsam::tsam_forward_instrumented(&batch, &cfg_off, "tsam", &params).unwrap();
            assert_eq!(
                trace_off.shifts_per_sequence,
                vec![b; n_seq],
                "round {round} counting off"
            );
        }
    });
}

#[test]
fn criterion_4_cross_sequence_isolation() {
    criterion(4, "cross-sequence isolation", || {
        let cfg = TsamConfig {
            block_channels: vec![4, 8],
            block_strides: vec![1, 2],
            ..tiny_tsam()
        };
        let params = cfg.build_params::<f64>("tsam", 11);
        let mut r = rng::stream(404, "batches");
        for round in 0..100 {
            let n_seq = r.gen_range(2..=4usize);
            let lengths: Vec<usize> = (0..n_seq).map(|_| r.gen_range(1..=5usize)).collect();
            let clips: Vec<FrameClip<f64>> = lengths
                .iter()
                .enumerate()
                .map(|(i, &l)| random_frame_clip(l, 2, 6, &format!("b{round}s{i}")))
                .collect();
            let batch = pack_batch(&clips).unwrap();
            let feats = tsam::tsam_forward(&batch, &cfg, "tsam", &params).unwrap();
            // perturb one sequence with arbitrary values
            let victim = r.gen_range(0..n_seq);
            let mut clips2 = clips.clone();
            clips2[victim] =
                random_frame_clip(lengths[victim], 2, 6, &format!("b{round}perturbed"));
            let batch2 = pack_batch(&clips2).unwrap();
            let feats2 = tsam::tsam_forward(&batch2, &cfg, "tsam", &params).unwrap();
            for i in 0..n_seq {
                if i == victim {
                    continue;
                }
                // bitwise equality
                assert_eq!(
                    feats[i].features, feats2[i].features,
                    "round {round}: sequence {i} changed when {victim} was perturbed"
                );
            }
        }
    });
}

#[test]
fn criterion_6_equal_length_tsm_equivalence() {
    criterion(6, "equal-length plain-TSM equivalence", || {
        let cfg = tiny_tsam(); // B = 4
        let params = cfg.build_params::<f64>("tsam", 21);
        // all lengths equal and >= B
        let t_len = 5usize;
        let clips: Vec<FrameClip<f64>> = (0..3)
            .map(|i| random_frame_clip(t_len, 2, 6, &format!("eq{i}")))
            .collect();
        let batch = pack_batch(&clips).unwrap();
        let feats = tsam::tsam_forward(&batch, &cfg, "tsam", &params).unwrap();
        for (i, clip) in clips.iter().enumerate() {
            let reference = reference_tsm_forward(&clip.frames, &cfg, &params);
            let diff = Tensor::max_abs_diff(&feats[i].features, &reference);
            assert!(diff <= 1e-6, "sequence {i}: max diff {diff:e}");
        }
    });
}

/// Straightforward per-sequence TSM built directly on the numeric kernels:
/// shift every block, two 3x3 convs with per-frame norm, projection shortcut,
/// spatial mean and temporal conv. Shares no structure with the packed
/// implementation under test.
fn reference_tsm_forward(
    frames: &Tensor<f64>,
    cfg: &TsamConfig,
    params: &ParamSet<f64>,
) -> Tensor<f64> {
    let eps = 1e-5;
    let relu = |t: &Tensor<f64>| t.map(|v| if v > 0.0 { v } else { 0.0 });
    let mut h = kernels::conv2d_forward(
        frames,
        params.get("tsam.stem.w"),
        None,
        (cfg.stem_stride, cfg.stem_stride),
        (1, 1),
    )
    .unwrap();
    h = kernels::frame_norm_forward(
        &h,
        params.get("tsam.stem.norm.g"),
        params.get("tsam.stem.norm.b"),
        eps,
    );
    h = relu(&h);
    for blk in 0..cfg.num_blocks() {
        let stride = cfg.block_strides[blk];
        let c_in = h.shape()[1];
        let c_out = cfg.block_channels[blk];
        let n_shift = (cfg.shift_fraction * c_in as f64).floor() as usize;
        let shifted = kernels::temporal_shift_kernel(&h, n_shift, n_shift, false);
        let mut y = kernels::conv2d_forward(
            &shifted,
            params.get(&format!("tsam.block{blk}.conv1.w")),
            None,
            (stride, stride),
            (1, 1),
        )
        .unwrap();
        y = kernels::frame_norm_forward(
            &y,
            params.get(&format!("tsam.block{blk}.norm1.g")),
            params.get(&format!("tsam.block{blk}.norm1.b")),
            eps,
        );
        y = relu(&y);
        y = kernels::conv2d_forward(
            &y,
            params.get(&format!("tsam.block{blk}.conv2.w")),
            None,
            (1, 1),
            (1, 1),
        )
        .unwrap();
        y = kernels::frame_norm_forward(
            &y,
            params.get(&format!("tsam.block{blk}.norm2.g")),
            params.get(&format!("tsam.block{blk}.norm2.b")),
            eps,
        );
        let shortcut = if c_in != c_out || stride != 1 {
            let sc = kernels::conv2d_forward(
                &h,
                params.get(&format!("tsam.block{blk}.proj.w")),
                None,
                (stride, stride),
                (0, 0),
            )
            .unwrap();
            kernels::frame_norm_forward(
                &sc,
                params.get(&format!("tsam.block{blk}.proj_norm.g")),
                params.get(&format!("tsam.block{blk}.proj_norm.b")),
                eps,
            )
        } else {
            h.clone()
        };
        let sum = Tensor::zip(&y, &shortcut, |a, b| a + b);
        h = relu(&sum);
    }
    // spatial mean to (T, C)
    let (t_len, c, hh, ww) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let mut pooled = Tensor::zeros(&[t_len, c]);
    for t in 0..t_len {
        for ch in 0..c {
            let base = (t * c + ch) * hh * ww;
            let s: f64 = h.data()[base..base + hh * ww].iter().sum();
            pooled.data_mut()[t * c + ch] = s / (hh * ww) as f64;
        }
    }
    kernels::conv1d_time_forward(
        &pooled,
        params.get("tsam.temporal.w"),
        Some(params.get("tsam.temporal.b")),
    )
}

#[test]
fn criterion_9_packed_memory_proxy() {
    criterion(9, "packed-memory proxy", || {
        let cfg = tiny_tsam();
        let params = cfg.build_params::<f64>("tsam", 31);
        // length distribution with max L = 2 * mean L
        let lengths = [8usize, 4, 2, 2]; // mean 4, max 8
        let clips: Vec<FrameClip<f64>> = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| random_frame_clip(l, 2, 6, &format!("mem{i}")))
            .collect();
        let packed_batch = pack_batch(&clips).unwrap();
        let (_, packed) =
            tsam::tsam_forward_instrumented(&packed_batch, &cfg, "tsam", &params).unwrap();
        // pad-to-max baseline: every sequence materialized at max length
        let max_len = *lengths.iter().max().unwrap();
        let padded_clips: Vec<FrameClip<f64>> = (0..lengths.len())
            .map(|i| random_frame_clip(max_len, 2, 6, &format!("pad{i}")))
            .collect();
        let padded_batch = pack_batch(&padded_clips).unwrap();
        let (_, padded) =
            tsam::tsam_forward_instrumented(&padded_batch, &cfg, "tsam", &params).unwrap();
        let ratio =
            packed.peak_activation_elems() as f64 / padded.peak_activation_elems() as f64;
        assert!(
            ratio <= 0.55,
            "peak packed / padded = {ratio} (packed {}, padded {})",
            packed.peak_activation_elems(),
            padded.peak_activation_elems()
        );
    });
}

// ---------------------------------------------------------------------------
// 5. padding independence (TPE + full keypoint model)
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_padding_independence() {
    criterion(5, "padding independence", || {
        let f = 12;
        let tcfg = TpeConfig {
            feature_dim: f,
            ..TpeConfig::desk(f)
        };
        let dcfg = DecoderConfig {
            hidden: 8,
            ..DecoderConfig::default()
        };
        let mut params = ParamSet::<f64>::new();
        let mut b = ParamBuilder::new(&mut params, 51);
        tcfg.init_params("tpe", &mut b);
        dcfg.init_params("dec", f, 5, &mut b);

        let mut r = rng::stream(505, "clip");
        let l = 9usize;
        let k = tcfg.keypoints;
        let clip = KeypointClip::new(
            Tensor::from_vec(
                &[l, k, 3],
                (0..l * k * 3).map(|_| r.gen_range(0.0..1.0)).collect(),
            ),
            KeypointLayout::default_54(),
        )
        .unwrap();

        // full keypoint path at a given padded length: padded encoder ->
        // slice true frames -> conv modules -> decoder head -> greedy decode
        let run_at = |n: usize| -> (Tensor<f64>, LabelSequence) {
            let batch = pad_keypoint_batch_to(std::slice::from_ref(&clip), n).unwrap();
            let (feats, _) = tpe::tpe_forward(&batch, &tcfg, "tpe", &params).unwrap();
            let sliced = Tensor::from_vec(&[l, f], feats.data()[..l * f].to_vec());
            let mut h = sliced;
            for m in 0..tcfg.conv_modules {
                h = tpe::conv_module_forward(&h, "tpe", m, &params);
            }
            let lp = decode_head(
                &FeatureSequence::new(h.clone()).unwrap(),
                &dcfg,
                "dec",
                &params,
            )
            .unwrap();
            let decoded = greedy_decode(&lp);
            (lp.log_probs, decoded)
        };

        let (base_lp, base_decode) = run_at(l);
        for extra in [1usize, 17] {
            let (lp, decoded) = run_at(l + extra);
            let diff = Tensor::max_abs_diff(&base_lp, &lp);
            assert!(diff <= 1e-6, "pad +{extra}: log-prob diff {diff:e}");
            assert_eq!(decoded, base_decode, "pad +{extra}: decode changed");
        }
    });
}

// ---------------------------------------------------------------------------
// 7. metric oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_metric_oracle() {
    criterion(7, "metric oracle", || {
        // independent two-row DP oracle
        fn lev(a: &[usize], b: &[usize]) -> usize {
            let mut prev: Vec<usize> = (0..=b.len()).collect();
            let mut cur = vec![0usize; b.len() + 1];
            for i in 1..=a.len() {
                cur[0] = i;
                for j in 1..=b.len() {
                    let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                    cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
                }
                std::mem::swap(&mut prev, &mut cur);
            }
            prev[b.len()]
        }
        let mut r = rng::stream(707, "pairs");
        for _ in 0..1000 {
            let n = r.gen_range(0..14usize);
            let m = r.gen_range(0..14usize);
            let a: Vec<usize> = (0..n).map(|_| r.gen_range(1..6usize)).collect();
            let b: Vec<usize> = (0..m).map(|_| r.gen_range(1..6usize)).collect();
            let c = edit_counts_slices(&a, &b);
            assert_eq!(c.total_edits(), lev(&a, &b), "counts vs oracle on {a:?} {b:?}");
        }
        let alphabet = Alphabet::from_str_symbols("abcehk").unwrap();
        let acc = letter_accuracy(
            &alphabet.encode("beach").unwrap(),
            &alphabet.encode("beack").unwrap(),
        )
        .unwrap();
        assert_eq!(acc, 0.8, "letter_accuracy(beach, beack) must be exactly 0.8");
    });
}

// ---------------------------------------------------------------------------
// 8. desk-scale convergence
// ---------------------------------------------------------------------------

struct DeskDataset {
    _dir: tempfile::TempDir,
    train_manifest: std::path::PathBuf,
    test_manifest: std::path::PathBuf,
}

fn desk_dataset() -> &'static DeskDataset {
    static DATA: OnceLock<DeskDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let synth = synthgen::SynthConfig::default(); // alphabet 6, words 2-5, sigma 0.01
        let paths = synthgen::generate_dataset(&synth, 300, 50, dir.path()).expect("dataset");
        DeskDataset {
            train_manifest: paths.train_manifest,
            test_manifest: paths.test_manifest,
            _dir: dir,
        }
    })
}

fn desk_run_config(modality: &str, epochs: u32, target: f64) -> RunConfig {
    let text = format!(
        "\
model.modality = {modality}
model.alphabet = abcdef
model.feature_dim = 192
input.size = 32
decoder.hidden = 96
tsam.preset = tiny
train.lr = 0.002
train.epochs = {epochs}
train.batch_clips = 4
train.seed = 11
train.augment = false
train.target_accuracy = {target}
"
    );
    RunConfig::from_text(&text).expect("desk config")
}

#[test]
fn criterion_8_desk_scale_convergence() {
    criterion(8, "desk-scale convergence", || {
        let data = desk_dataset();

        // keypoint model: >= 0.90 within 30 epochs, <= 15 min
        let t0 = Instant::now();
        let kp = train::train::<f32>(
            &desk_run_config("kp", 30, 0.90),
            &data.train_manifest,
            &data.test_manifest,
            None,
        )
        .expect("kp training");
        let kp_time = t0.elapsed();
        println!(
            "  kp: best {:.4} after epoch {} in {kp_time:.1?}",
            kp.best_accuracy, kp.best.epoch
        );
        assert!(
            kp.best_accuracy >= 0.90,
            "kp model reached only {:.4} within 30 epochs",
            kp.best_accuracy
        );
        assert!(kp_time <= Duration::from_secs(900), "kp training exceeded 15 min");

        // rgb model: >= 0.85 within 40 epochs, <= 30 min
        let t0 = Instant::now();
        let rgb = train::train::<f32>(
            &desk_run_config("rgb", 40, 0.85),
            &data.train_manifest,
            &data.test_manifest,
            None,
        )
        .expect("rgb training");
        let rgb_time = t0.elapsed();
        println!(
            "  rgb: best {:.4} after epoch {} in {rgb_time:.1?}",
            rgb.best_accuracy, rgb.best.epoch
        );
        assert!(
            rgb.best_accuracy >= 0.85,
            "rgb model reached only {:.4} within 40 epochs",
            rgb.best_accuracy
        );
        assert!(rgb_time <= Duration::from_secs(1800), "rgb training exceeded 30 min");

        // fused model: >= max(both) - 0.02
        let fused_target = kp.best_accuracy.max(rgb.best_accuracy) - 0.02;
        let fused = train::train::<f32>(
            &desk_run_config("rgb+kp", 40, fused_target),
            &data.train_manifest,
            &data.test_manifest,
            None,
        )
        .expect("fused training");
        println!(
            "  rgb+kp: best {:.4} after epoch {} (target {fused_target:.4})",
            fused.best_accuracy, fused.best.epoch
        );
        assert!(
            fused.best_accuracy >= fused_target,
            "fused model reached {:.4}, needs >= {:.4}",
            fused.best_accuracy,
            fused_target
        );

        // end-to-end prediction with the trained keypoint model: a repeated
        // letter survives decoding
        let (model, run) = train::model_from_checkpoint::<f32>(
            &kp.best,
            std::path::Path::new("<memory>"),
        )
        .expect("model from checkpoint");
        let protos = synthgen::letter_prototypes(&run.synth).expect("prototypes");
        let dir = tempfile::tempdir().unwrap();
        let (clip, _, _) =
            synthgen::generate_sample::<f32>("abba", &run.synth, &protos, 4242).unwrap();
        let clip_path = dir.path().join("abba.kpc");
        fingerspell::fileio::write_keypoint_clip(&clip_path, &clip).unwrap();
        let text = train::predict(&model, &run.input, &clip_path, None).expect("predict");
        assert_eq!(text, "abba", "end-to-end prediction");
    });
}

// ---------------------------------------------------------------------------
// 10. schedule and optimizer laws
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_schedule_and_optimizer() {
    criterion(10, "lr schedule and adamw laws", || {
        // lr(e) = lr0 * gamma^k with k = #{milestones <= e}, exactly
        let mut cfg = TrainConfig::default_for(Modality::Rgb);
        cfg.lr = 1e-4;
        cfg.gamma = 0.1;
        cfg.milestones = vec![20, 40];
        for e in 0u32..=100 {
            let k = [20u32, 40].iter().filter(|&&m| m <= e).count() as i32;
            assert_eq!(lr_at(&cfg, e), 1e-4 * 0.1f64.powi(k), "epoch {e}");
        }

        // one AdamW step on f(w) = w^2 from w = 1 with lr 0.1 matches the
        // hand-computed update to 1e-12 (double precision)
        let mut opt_cfg = TrainConfig::default_for(Modality::Kp);
        opt_cfg.weight_decay = 0.01;
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&params);
        opt.step(&mut params, &[Tensor::scalar(2.0)], 0.1, &opt_cfg);
        let (b1, b2, eps, wd, lr, g, w0): (f64, f64, f64, f64, f64, f64, f64) =
            (0.9, 0.999, 1e-8, 0.01, 0.1, 2.0, 1.0);
        let m_hat = ((1.0 - b1) * g) / (1.0 - b1);
        let v_hat = ((1.0 - b2) * g * g) / (1.0 - b2);
        let expect = w0 - lr * (m_hat / (v_hat.sqrt() + eps) + wd * w0);
        let got = params.get("w").data()[0];
        assert!(
            (got - expect).abs() <= 1e-12,
            "adamw step {got} vs oracle {expect}"
        );
    });
}
