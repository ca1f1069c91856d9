//! Keypoint encoder: two 2D convolutions over the (frame, keypoint) plane,
//! a tube 3D convolution sweeping the channel axis, a linear projection to
//! the feature dimension, and a conformer-style convolution-module neck.
//!
//! Padded frame positions are re-zeroed after every stage, so features over
//! true frames never depend on how much padding follows a clip.

use crate::datamodel::PaddedKeypointBatch;
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{ParamBuilder, ParamSet, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TpeConfig {
    /// Keypoints per frame (K).
    pub keypoints: usize,
    /// First 2D conv output channels.
    pub c1: usize,
    /// Second 2D conv output channels; the tube convolution sweeps this axis.
    pub c2: usize,
    pub tube_kernel: usize,
    pub tube_stride: usize,
    /// Output extent along the swept axis; (c2 - kernel) / stride + 1.
    pub tube_out: usize,
    pub feature_dim: usize,
    /// Conformer-style convolution modules stacked after the projection.
    pub conv_modules: usize,
    /// Pointwise expansion factor inside each convolution module.
    pub conv_expansion: usize,
    /// Depthwise temporal kernel inside each convolution module (odd).
    pub conv_kernel: usize,
}

impl TpeConfig {
    pub fn desk(feature_dim: usize) -> Self {
        TpeConfig {
            keypoints: 54,
            c1: 16,
            c2: 32,
            tube_kernel: 5,
            tube_stride: 3,
            tube_out: 10,
            feature_dim,
            conv_modules: 1,
            conv_expansion: 2,
            conv_kernel: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c2 < self.tube_kernel {
            return Err(Error::Config(format!(
                "tpe: tube kernel {} exceeds channel extent {}",
                self.tube_kernel, self.c2
            )));
        }
        if (self.c2 - self.tube_kernel) % self.tube_stride != 0
            || (self.c2 - self.tube_kernel) / self.tube_stride + 1 != self.tube_out
        {
            return Err(Error::Config(format!(
                "tpe: tube geometry inconsistent: ({} - {}) / {} + 1 != {}",
                self.c2, self.tube_kernel, self.tube_stride, self.tube_out
            )));
        }
        if self.keypoints == 0 || self.feature_dim == 0 || self.c1 == 0 {
            return Err(Error::Config("tpe: zero-sized dimension".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("tpe: conv module kernel must be odd".into()));
        }
        Ok(())
    }

    /// The documented stage shape chain for a batch of `bs` clips padded to
    /// `n` frames.
    pub fn stage_shapes(&self, bs: usize, n: usize) -> [Vec<usize>; 4] {
        [
            vec![bs, self.c2, n, self.keypoints],
            vec![bs, 1, self.c2, n, self.keypoints],
            vec![bs, 1, self.tube_out, n, self.keypoints],
            vec![bs, n, self.feature_dim],
        ]
    }

    pub fn init_params<S: Scalar>(&self, prefix: &str, b: &mut ParamBuilder<'_, S>) {
        let k = self.keypoints;
        b.weight(&format!("{prefix}.c2d1.w"), &[self.c1, 3, 3, 3], 3 * 9);
        b.zeros(&format!("{prefix}.c2d1.b"), &[self.c1]);
        b.weight(
            &format!("{prefix}.c2d2.w"),
            &[self.c2, self.c1, 3, 3],
            self.c1 * 9,
        );
        b.zeros(&format!("{prefix}.c2d2.b"), &[self.c2]);
        b.weight(
            &format!("{prefix}.tube.w"),
            &[1, 1, self.tube_kernel, 1, 1],
            self.tube_kernel,
        );
        b.zeros(&format!("{prefix}.tube.b"), &[1]);
        b.weight(
            &format!("{prefix}.proj.w"),
            &[self.feature_dim, self.tube_out * k],
            self.tube_out * k,
        );
        b.zeros(&format!("{prefix}.proj.b"), &[self.feature_dim]);
        for m in 0..self.conv_modules {
            self.init_conv_module_params(prefix, m, b);
        }
    }

    fn init_conv_module_params<S: Scalar>(
        &self,
        prefix: &str,
        m: usize,
        b: &mut ParamBuilder<'_, S>,
    ) {
        let f = self.feature_dim;
        let e = self.conv_expansion * f;
        let base = format!("{prefix}.cm{m}");
        b.ones(&format!("{base}.ln1.g"), &[f]);
        b.zeros(&format!("{base}.ln1.b"), &[f]);
        b.weight(&format!("{base}.pw1.w"), &[2 * e, f], f);
        b.zeros(&format!("{base}.pw1.b"), &[2 * e]);
        b.weight(&format!("{base}.dw.w"), &[e, self.conv_kernel], self.conv_kernel);
        b.zeros(&format!("{base}.dw.b"), &[e]);
        b.ones(&format!("{base}.ln2.g"), &[e]);
        b.zeros(&format!("{base}.ln2.b"), &[e]);
        b.weight(&format!("{base}.pw2.w"), &[f, e], e);
        b.zeros(&format!("{base}.pw2.b"), &[f]);
    }

    pub fn build_params<S: Scalar>(&self, prefix: &str, seed: u64) -> ParamSet<S> {
        let mut params = ParamSet::new();
        let mut b = ParamBuilder::new(&mut params, seed);
        self.init_params(prefix, &mut b);
        params
    }
}

/// One clip through the encoder stages on a tape. `x` is (3, N, K); `len` is
/// the clip's true length (frames at positions >= len are zero padding and
/// are re-zeroed after every stage). Returns (N, F).
pub fn forward_clip_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    len: usize,
    cfg: &TpeConfig,
    prefix: &str,
    pv: &ParamVars,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "tpe: clip must be (3, N, K), got {shape:?}"
        )));
    }
    let (n, k) = (shape[1], shape[2]);
    if k != cfg.keypoints {
        return Err(Error::Shape(format!(
            "tpe: clip has K = {k} but the encoder expects {}",
            cfg.keypoints
        )));
    }
    if len == 0 || len > n {
        return Err(Error::Shape(format!(
            "tpe: true length {len} invalid for padded length {n}"
        )));
    }

    // stage 1: two 2D convolutions over the (N, K) plane, 3 -> c1 -> c2.
    // Padded rows are re-zeroed after each convolution; the second conv's
    // receptive field crosses frame boundaries, so a padded row left nonzero
    // (bias, or spill from the last true frame) would leak back into true
    // frames and break padding independence.
    let x4 = tape.reshape(x, &[1, 3, n, k]);
    let h = tape.conv2d(
        x4,
        pv.var(&format!("{prefix}.c2d1.w")),
        Some(pv.var(&format!("{prefix}.c2d1.b"))),
        (1, 1),
        (1, 1),
    )?;
    let h = tape.relu(h);
    let h = tape.zero_from(h, 2, len);
    let h = tape.conv2d(
        h,
        pv.var(&format!("{prefix}.c2d2.w")),
        Some(pv.var(&format!("{prefix}.c2d2.b"))),
        (1, 1),
        (1, 1),
    )?;
    let h = tape.relu(h);
    let h = tape.zero_from(h, 2, len); // (1, c2, N, K)

    // stage 2: dummy channel axis, tube 3D convolution over the c2 axis
    let h = tape.reshape(h, &[1, cfg.c2, n, k]); // (Cin=1, D=c2, H=N, W=K)
    let h = tape.conv3d(
        h,
        pv.var(&format!("{prefix}.tube.w")),
        Some(pv.var(&format!("{prefix}.tube.b"))),
        (cfg.tube_stride, 1, 1),
        (0, 0, 0),
    )?;
    let h = tape.relu(h); // (1, tube_out, N, K)
    let h = tape.zero_from(h, 2, len);

    // stage 3: flatten (tube_out, K) per frame and project to F
    let h = tape.permute(h, &[0, 2, 1, 3]); // (1, N, tube_out, K)
    let h = tape.reshape(h, &[n, cfg.tube_out * k]);
    let h = tape.linear(
        h,
        pv.var(&format!("{prefix}.proj.w")),
        Some(pv.var(&format!("{prefix}.proj.b"))),
    );
    Ok(tape.zero_from(h, 0, len)) // (N, F)
}

/// One conformer-style convolution module (shape-preserving, residual):
/// layernorm -> pointwise expansion with GLU -> depthwise temporal conv ->
/// layernorm -> swish -> pointwise projection -> residual add.
pub fn conv_module_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    prefix: &str,
    module: usize,
    pv: &ParamVars,
) -> Var {
    let base = format!("{prefix}.cm{module}");
    let h = tape.layernorm_rows(
        x,
        pv.var(&format!("{base}.ln1.g")),
        pv.var(&format!("{base}.ln1.b")),
        NORM_EPS,
    );
    let h = tape.linear(
        h,
        pv.var(&format!("{base}.pw1.w")),
        Some(pv.var(&format!("{base}.pw1.b"))),
    );
    let h = tape.glu(h);
    let h = tape.depthwise_conv1d(
        h,
        pv.var(&format!("{base}.dw.w")),
        Some(pv.var(&format!("{base}.dw.b"))),
    );
    let h = tape.layernorm_rows(
        h,
        pv.var(&format!("{base}.ln2.g")),
        pv.var(&format!("{base}.ln2.b")),
        NORM_EPS,
    );
    let h = tape.swish(h);
    let h = tape.linear(
        h,
        pv.var(&format!("{base}.pw2.w")),
        Some(pv.var(&format!("{base}.pw2.b"))),
    );
    tape.add(x, h)
}

/// Encode a padded batch to (bs, N, F) plus the true lengths.
pub fn tpe_forward<S: Scalar>(
    batch: &PaddedKeypointBatch<S>,
    cfg: &TpeConfig,
    prefix: &str,
    params: &ParamSet<S>,
) -> Result<(Tensor<S>, Vec<usize>)> {
    cfg.validate()?;
    let (bs, n, k) = (
        batch.batch_size(),
        batch.padded_len(),
        batch.num_keypoints(),
    );
    if k != cfg.keypoints {
        return Err(Error::Shape(format!(
            "tpe: batch has K = {k} but the encoder expects {}",
            cfg.keypoints
        )));
    }
    let mut out = Tensor::zeros(&[bs, n, cfg.feature_dim]);
    for i in 0..bs {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, params);
        let per = 3 * n * k;
        let clip = Tensor::from_vec(
            &[3, n, k],
            batch.coords.data()[i * per..(i + 1) * per].to_vec(),
        );
        let x = tape.leaf(clip);
        let y = forward_clip_on_tape(&mut tape, x, batch.lengths[i], cfg, prefix, &pv)?;
        let ynf = tape.value(y);
        out.data_mut()[i * n * cfg.feature_dim..(i + 1) * n * cfg.feature_dim]
            .copy_from_slice(ynf.data());
    }
    Ok((out, batch.lengths.clone()))
}

/// Pure convolution-module application to a (T, F) feature matrix.
pub fn conv_module_forward<S: Scalar>(
    features: &Tensor<S>,
    prefix: &str,
    module: usize,
    params: &ParamSet<S>,
) -> Tensor<S> {
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params);
    let x = tape.leaf(features.clone());
    let y = conv_module_on_tape(&mut tape, x, prefix, module, &pv);
    tape.value(y).clone()
}
