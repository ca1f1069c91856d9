//! RGB encoder: a block-structured 2D CNN whose residual blocks apply
//! per-sequence temporal shifts with an adaptive shift counter, operating on
//! packed variable-length batches (no padding frames are ever materialized),
//! followed by frame-feature aggregation with a temporal 1D convolution.
//!
//! Shift rule per sequence: a counter starts at zero; each block applies the
//! temporal shift only while `counter < length`, incrementing on every
//! applied shift, so a sequence of length L inside a backbone of B blocks is
//! shifted exactly min(B, L) times. Disabling the counter recovers plain
//! per-sequence TSM (shift in every block).

use std::collections::HashMap;

use crate::datamodel::{FeatureSequence, PackedFrameBatch};
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{ParamBuilder, ParamSet, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Spatial average-pool to (T, C_last), then temporal conv to (T, F).
    AvgPool1dConv,
    /// Flatten (C_last, H', W') per frame, then temporal conv to (T, F).
    Flatten1dConv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsamConfig {
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    /// Channel fraction shifted per direction.
    pub shift_fraction: f64,
    pub count_shift_enabled: bool,
    pub norm_enabled: bool,
    pub reduction: Reduction,
    pub feature_dim: usize,
}

impl TsamConfig {
    /// Four-block preset small enough for CPU tests and desk-scale training
    /// on 32x32 rendered frames.
    pub fn tiny(feature_dim: usize) -> Self {
        TsamConfig {
            in_channels: 3,
            input_hw: (32, 32),
            stem_channels: 8,
            stem_stride: 2,
            block_channels: vec![16, 16, 32, 32],
            block_strides: vec![2, 1, 2, 1],
            shift_fraction: 1.0 / 8.0,
            count_shift_enabled: true,
            norm_enabled: true,
            reduction: Reduction::AvgPool1dConv,
            feature_dim,
        }
    }

    /// Four-stage preset shaped like a 34-layer residual backbone
    /// (3/4/6/3 blocks at 64/128/256/512 channels).
    pub fn resnet34_shaped(feature_dim: usize) -> Self {
        let mut block_channels = Vec::new();
        let mut block_strides = Vec::new();
        for (count, ch, first_stride) in
            [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
        {
            for i in 0..count {
                block_channels.push(ch);
                block_strides.push(if i == 0 { first_stride } else { 1 });
            }
        }
        TsamConfig {
            in_channels: 3,
            input_hw: (224, 224),
            stem_channels: 64,
            stem_stride: 2,
            block_channels,
            block_strides,
            shift_fraction: 1.0 / 8.0,
            count_shift_enabled: true,
            norm_enabled: true,
            reduction: Reduction::AvgPool1dConv,
            feature_dim,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.block_channels.len()
    }

    /// Channel count entering block `b`.
    fn block_in_channels(&self, b: usize) -> usize {
        if b == 0 {
            self.stem_channels
        } else {
            self.block_channels[b - 1]
        }
    }

    /// Channels shifted per direction at block `b`.
    fn shift_channels(&self, b: usize) -> usize {
        (self.shift_fraction * self.block_in_channels(b) as f64).floor() as usize
    }

    /// Spatial extent after the stem and all block strides
    /// (3x3 convs with pad 1: out = ceil(in / stride)).
    pub fn spatial_out(&self) -> (usize, usize) {
        let step = |v: usize, s: usize| v.div_ceil(s);
        let mut h = step(self.input_hw.0, self.stem_stride);
        let mut w = step(self.input_hw.1, self.stem_stride);
        for &s in &self.block_strides {
            h = step(h, s);
            w = step(w, s);
        }
        (h, w)
    }

    fn reduction_in_dim(&self) -> usize {
        let c_last = *self.block_channels.last().unwrap();
        match self.reduction {
            Reduction::AvgPool1dConv => c_last,
            Reduction::Flatten1dConv => {
                let (h, w) = self.spatial_out();
                c_last * h * w
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::Config("tsam: needs at least one block".into()));
        }
        if self.block_channels.len() != self.block_strides.len() {
            return Err(Error::Config(
                "tsam: block_channels and block_strides must have equal length".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.shift_fraction) {
            return Err(Error::Config(format!(
                "tsam: shift_fraction {} outside [0, 0.5]",
                self.shift_fraction
            )));
        }
        for b in 0..self.num_blocks() {
            let c = self.block_in_channels(b);
            let exact = self.shift_fraction * c as f64;
            if (exact - exact.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "tsam: shift_fraction {} times {c} channels (block {b}) is not an integer",
                    self.shift_fraction
                )));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("tsam: feature_dim must be >= 1".into()));
        }
        let (h, w) = self.spatial_out();
        if h == 0 || w == 0 {
            return Err(Error::Config("tsam: strides collapse the frame to zero".into()));
        }
        Ok(())
    }

    /// Register all backbone parameters under `prefix`.
    pub fn init_params<S: Scalar>(&self, prefix: &str, b: &mut ParamBuilder<'_, S>) {
        let k = 3;
        b.weight(
            &format!("{prefix}.stem.w"),
            &[self.stem_channels, self.in_channels, k, k],
            self.in_channels * k * k,
        );
        if self.norm_enabled {
            b.ones(&format!("{prefix}.stem.norm.g"), &[self.stem_channels]);
            b.zeros(&format!("{prefix}.stem.norm.b"), &[self.stem_channels]);
        }
        for blk in 0..self.num_blocks() {
            let c_in = self.block_in_channels(blk);
            let c_out = self.block_channels[blk];
            b.weight(
                &format!("{prefix}.block{blk}.conv1.w"),
                &[c_out, c_in, k, k],
                c_in * k * k,
            );
            b.weight(
                &format!("{prefix}.block{blk}.conv2.w"),
                &[c_out, c_out, k, k],
                c_out * k * k,
            );
            if self.norm_enabled {
                b.ones(&format!("{prefix}.block{blk}.norm1.g"), &[c_out]);
                b.zeros(&format!("{prefix}.block{blk}.norm1.b"), &[c_out]);
                b.ones(&format!("{prefix}.block{blk}.norm2.g"), &[c_out]);
                b.zeros(&format!("{prefix}.block{blk}.norm2.b"), &[c_out]);
            }
            if c_in != c_out || self.block_strides[blk] != 1 {
                b.weight(
                    &format!("{prefix}.block{blk}.proj.w"),
                    &[c_out, c_in, 1, 1],
                    c_in,
                );
                if self.norm_enabled {
                    b.ones(&format!("{prefix}.block{blk}.proj_norm.g"), &[c_out]);
                    b.zeros(&format!("{prefix}.block{blk}.proj_norm.b"), &[c_out]);
                }
            }
        }
        let red_in = self.reduction_in_dim();
        b.weight(
            &format!("{prefix}.temporal.w"),
            &[self.feature_dim, red_in, 3],
            red_in * 3,
        );
        b.zeros(&format!("{prefix}.temporal.b"), &[self.feature_dim]);
    }

    pub fn build_params<S: Scalar>(&self, prefix: &str, seed: u64) -> ParamSet<S> {
        let mut params = ParamSet::new();
        let mut b = ParamBuilder::new(&mut params, seed);
        self.init_params(prefix, &mut b);
        params
    }
}

/// Record of one instrumented forward pass.
#[derive(Clone, Debug, Default)]
pub struct TsamTrace {
    /// Temporal shifts actually applied to each sequence.
    pub shifts_per_sequence: Vec<usize>,
    /// Elements of every activation tensor materialized in the backbone,
    /// keyed by layer site and summed across sequences.
    pub activation_elems: HashMap<String, usize>,
}

impl TsamTrace {
    /// Largest single layer activation (summed over the batch): the memory
    /// high-water mark of the forward pass.
    pub fn peak_activation_elems(&self) -> usize {
        self.activation_elems.values().copied().max().unwrap_or(0)
    }

    pub fn total_activation_elems(&self) -> usize {
        self.activation_elems.values().sum()
    }

    fn record<S: Scalar>(&mut self, tape: &Tape<S>, v: Var, site: String) {
        *self.activation_elems.entry(site).or_insert(0) += tape.value(v).numel();
    }
}

/// Standalone temporal shift with the TSM channel split:
/// first floor(fraction*C) channels forward, next floor(fraction*C) backward.
pub fn temporal_shift<S: Scalar>(seq: &Tensor<S>, fraction: f64) -> Tensor<S> {
    let c = seq.shape()[1];
    let n = (fraction * c as f64).floor() as usize;
    crate::numerics::kernels::temporal_shift_kernel(seq, n, n, false)
}

/// One sequence through the backbone on a tape. `meter` collects activation
/// sizes and the applied-shift count when instrumentation is on.
pub fn forward_sequence_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    cfg: &TsamConfig,
    prefix: &str,
    pv: &ParamVars,
    mut meter: Option<&mut TsamTrace>,
) -> Result<Var> {
    let len = tape.value(x).shape()[0];
    let mut rec = |tape: &Tape<S>, v: Var, site: String| {
        if let Some(m) = meter.as_deref_mut() {
            m.record(tape, v, site);
        }
    };

    // stem
    let mut h = tape.conv2d(
        x,
        pv.var(&format!("{prefix}.stem.w")),
        None,
        (cfg.stem_stride, cfg.stem_stride),
        (1, 1),
    )?;
    rec(tape, h, "stem.conv".into());
    if cfg.norm_enabled {
        h = tape.frame_norm(
            h,
            pv.var(&format!("{prefix}.stem.norm.g")),
            pv.var(&format!("{prefix}.stem.norm.b")),
            NORM_EPS,
        );
        rec(tape, h, "stem.norm".into());
    }
    h = tape.relu(h);
    rec(tape, h, "stem.relu".into());

    let mut counter = 0usize;
    let mut shifts_applied = 0usize;
    for blk in 0..cfg.num_blocks() {
        let stride = cfg.block_strides[blk];
        let c_in = cfg.block_in_channels(blk);
        let c_out = cfg.block_channels[blk];
        let do_shift = if cfg.count_shift_enabled {
            counter < len
        } else {
            true
        };
        let mut r = h;
        if do_shift {
            counter += 1;
            shifts_applied += 1;
            let n = cfg.shift_channels(blk);
            if n > 0 {
                r = tape.temporal_shift(h, n, n);
                rec(tape, r, format!("block{blk}.shift"));
            }
        }
        let mut y = tape.conv2d(
            r,
            pv.var(&format!("{prefix}.block{blk}.conv1.w")),
            None,
            (stride, stride),
            (1, 1),
        )?;
        rec(tape, y, format!("block{blk}.conv1"));
        if cfg.norm_enabled {
            y = tape.frame_norm(
                y,
                pv.var(&format!("{prefix}.block{blk}.norm1.g")),
                pv.var(&format!("{prefix}.block{blk}.norm1.b")),
                NORM_EPS,
            );
            rec(tape, y, format!("block{blk}.norm1"));
        }
        y = tape.relu(y);
        rec(tape, y, format!("block{blk}.relu1"));
        y = tape.conv2d(
            y,
            pv.var(&format!("{prefix}.block{blk}.conv2.w")),
            None,
            (1, 1),
            (1, 1),
        )?;
        rec(tape, y, format!("block{blk}.conv2"));
        if cfg.norm_enabled {
            y = tape.frame_norm(
                y,
                pv.var(&format!("{prefix}.block{blk}.norm2.g")),
                pv.var(&format!("{prefix}.block{blk}.norm2.b")),
                NORM_EPS,
            );
            rec(tape, y, format!("block{blk}.norm2"));
        }
        let shortcut = if c_in != c_out || stride != 1 {
            let mut sc = tape.conv2d(
                h,
                pv.var(&format!("{prefix}.block{blk}.proj.w")),
                None,
                (stride, stride),
                (0, 0),
            )?;
            rec(tape, sc, format!("block{blk}.proj"));
            if cfg.norm_enabled {
                sc = tape.frame_norm(
                    sc,
                    pv.var(&format!("{prefix}.block{blk}.proj_norm.g")),
                    pv.var(&format!("{prefix}.block{blk}.proj_norm.b")),
                    NORM_EPS,
                );
                rec(tape, sc, format!("block{blk}.proj_norm"));
            }
            sc
        } else {
            h
        };
        let sum = tape.add(y, shortcut);
        rec(tape, sum, format!("block{blk}.sum"));
        h = tape.relu(sum);
        rec(tape, h, format!("block{blk}.relu2"));
    }

    // reduction to (T, F)
    let feats = match cfg.reduction {
        Reduction::AvgPool1dConv => {
            let pooled = tape.mean_spatial(h);
            rec(tape, pooled, "reduce.pool".into());
            pooled
        }
        Reduction::Flatten1dConv => {
            let shape = tape.value(h).shape().to_vec();
            let flat = tape.reshape(h, &[shape[0], shape[1] * shape[2] * shape[3]]);
            rec(tape, flat, "reduce.flatten".into());
            flat
        }
    };
    let out = tape.conv1d_time(
        feats,
        pv.var(&format!("{prefix}.temporal.w")),
        Some(pv.var(&format!("{prefix}.temporal.b"))),
    );
    rec(tape, out, "reduce.temporal_conv".into());
    if let Some(m) = meter.as_deref_mut() {
        m.shifts_per_sequence.push(shifts_applied);
    }
    Ok(out)
}

/// Encode a packed batch: each sequence is extracted, run through the
/// backbone with its own shift counter, and returned unpadded as (L_i, F).
pub fn tsam_forward<S: Scalar>(
    batch: &PackedFrameBatch<S>,
    cfg: &TsamConfig,
    prefix: &str,
    params: &ParamSet<S>,
) -> Result<Vec<FeatureSequence<S>>> {
    Ok(tsam_forward_instrumented(batch, cfg, prefix, params)?.0)
}

pub fn tsam_forward_instrumented<S: Scalar>(
    batch: &PackedFrameBatch<S>,
    cfg: &TsamConfig,
    prefix: &str,
    params: &ParamSet<S>,
) -> Result<(Vec<FeatureSequence<S>>, TsamTrace)> {
    cfg.validate()?;
    let total: usize = batch.lengths.iter().sum();
    if total != batch.total_frames() {
        return Err(Error::Shape(format!(
            "tsam: length list sums to {total} but batch holds {} frames",
            batch.total_frames()
        )));
    }
    if batch.lengths.iter().any(|&l| l == 0) {
        return Err(Error::Shape("tsam: zero-length sequence".into()));
    }
    let mut trace = TsamTrace::default();
    let mut out = Vec::with_capacity(batch.num_sequences());
    for i in 0..batch.num_sequences() {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, params);
        let x = tape.leaf(batch.sequence(i));
        let y = forward_sequence_on_tape(&mut tape, x, cfg, prefix, &pv, Some(&mut trace))?;
        out.push(FeatureSequence::new(tape.value(y).clone())?);
    }
    Ok((out, trace))
}
