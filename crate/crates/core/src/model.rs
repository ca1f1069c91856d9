//! Model assembly: the RGB, keypoint, and fused architectures share a CTC
//! decoder head and differ only in the encoder stage.

use crate::datamodel::{Alphabet, FeatureSequence, FrameClip, KeypointClip};
use crate::decoder::{self, DecoderConfig, FrameLogProbs};
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{ParamBuilder, ParamSet, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tpe::{self, TpeConfig};
use crate::tsam::{self, TsamConfig, TsamTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Kp,
    RgbKp,
}

impl Modality {
    pub fn uses_rgb(&self) -> bool {
        matches!(self, Modality::Rgb | Modality::RgbKp)
    }

    pub fn uses_keypoints(&self) -> bool {
        matches!(self, Modality::Kp | Modality::RgbKp)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Kp => "kp",
            Modality::RgbKp => "rgb+kp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "kp" => Ok(Modality::Kp),
            "rgb+kp" | "kp+rgb" => Ok(Modality::RgbKp),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// How the two encoder outputs combine in the fused architecture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fusion {
    Sum,
    Concat,
    Product,
    /// Fixed-weight sum: w0 * rgb + w1 * kp.
    Weighted(f64, f64),
}

impl Fusion {
    pub fn as_config_string(&self) -> String {
        match self {
            Fusion::Sum => "sum".into(),
            Fusion::Concat => "concat".into(),
            Fusion::Product => "product".into(),
            Fusion::Weighted(a, b) => format!("weighted:{a},{b}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("weighted:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Config(format!("fusion weights {rest:?} must be two numbers")));
            }
            let a = parts[0].trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("bad fusion weight {:?}", parts[0]))
            })?;
            let b = parts[1].trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("bad fusion weight {:?}", parts[1]))
            })?;
            return Ok(Fusion::Weighted(a, b));
        }
        match s {
            "sum" => Ok(Fusion::Sum),
            "concat" => Ok(Fusion::Concat),
            "product" => Ok(Fusion::Product),
            other => Err(Error::Config(format!("unknown fusion {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub modality: Modality,
    pub alphabet: Alphabet,
    pub feature_dim: usize,
    pub tsam: TsamConfig,
    pub tpe: TpeConfig,
    pub decoder: DecoderConfig,
    pub fusion: Fusion,
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.alphabet.num_classes()
    }

    /// Decoder input width: F, or 2F when concatenating two encoders.
    pub fn decoder_in_dim(&self) -> usize {
        match (self.modality, self.fusion) {
            (Modality::RgbKp, Fusion::Concat) => 2 * self.feature_dim,
            _ => self.feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if self.modality.uses_rgb() {
            self.tsam.validate()?;
            if self.tsam.feature_dim != self.feature_dim {
                return Err(Error::Config(format!(
                    "rgb encoder emits {} features but the model expects {}",
                    self.tsam.feature_dim, self.feature_dim
                )));
            }
        }
        if self.modality.uses_keypoints() {
            self.tpe.validate()?;
            if self.tpe.feature_dim != self.feature_dim {
                return Err(Error::Config(format!(
                    "keypoint encoder emits {} features but the model expects {}",
                    self.tpe.feature_dim, self.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Create all parameters the configured architecture needs, in a fixed
    /// deterministic order.
    pub fn build_params<S: Scalar>(&self, seed: u64) -> Result<ParamSet<S>> {
        self.validate()?;
        let mut params = ParamSet::new();
        let mut b = ParamBuilder::new(&mut params, seed);
        if self.modality.uses_rgb() {
            self.tsam.init_params("tsam", &mut b);
        }
        if self.modality.uses_keypoints() {
            self.tpe.init_params("tpe", &mut b);
        }
        self.decoder
            .init_params("dec", self.decoder_in_dim(), self.num_classes(), &mut b);
        Ok(params)
    }
}

/// Elementwise fusion of two aligned feature sequences (pure form of the
/// in-graph combination used by the fused architecture).
pub fn fuse<S: Scalar>(
    a: &FeatureSequence<S>,
    b: &FeatureSequence<S>,
    mode: Fusion,
) -> Result<FeatureSequence<S>> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "fusion requires aligned features, got ({}, {}) vs ({}, {})",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    if let Fusion::Concat = mode {
        let mut data = Vec::with_capacity(2 * a.features.numel());
        for r in 0..a.len() {
            data.extend_from_slice(&a.features.data()[r * a.dim()..(r + 1) * a.dim()]);
            data.extend_from_slice(&b.features.data()[r * b.dim()..(r + 1) * b.dim()]);
        }
        return FeatureSequence::new(Tensor::from_vec(&[a.len(), 2 * a.dim()], data));
    }
    let t = Tensor::zip(&a.features, &b.features, |x, y| match mode {
        Fusion::Sum => x + y,
        Fusion::Product => x * y,
        Fusion::Weighted(wa, wb) => S::from_f(wa) * x + S::from_f(wb) * y,
        Fusion::Concat => unreachable!(),
    });
    FeatureSequence::new(t)
}

/// One training/inference sample, already preprocessed (normalized frames,
/// NaN-free keypoints) and time-aligned when both modalities are present.
#[derive(Clone, Debug)]
pub struct SampleTensors<S> {
    pub keypoints: Option<KeypointClip<S>>,
    pub frames: Option<FrameClip<S>>,
}

impl<S: Scalar> SampleTensors<S> {
    pub fn len(&self) -> usize {
        self.keypoints
            .as_ref()
            .map(|k| k.len())
            .or_else(|| self.frames.as_ref().map(|f| f.len()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A configured architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    pub params: ParamSet<S>,
}

/// Build a freshly initialized model.
pub fn assemble<S: Scalar>(cfg: ModelConfig, seed: u64) -> Result<Model<S>> {
    let params = cfg.build_params(seed)?;
    Ok(Model { cfg, params })
}

impl<S: Scalar> Model<S> {
    /// Channel-first (3, T, K) view of a keypoint clip.
    fn keypoints_channel_first(clip: &KeypointClip<S>) -> Tensor<S> {
        let (t, k) = (clip.len(), clip.num_keypoints());
        let mut out = Tensor::zeros(&[3, t, k]);
        {
            let od = out.data_mut();
            let src = clip.coords.data();
            for ti in 0..t {
                for kp in 0..k {
                    for c in 0..3 {
                        od[(c * t + ti) * k + kp] = src[(ti * k + kp) * 3 + c];
                    }
                }
            }
        }
        out
    }

    /// Full forward pass for one sample on a tape, returning (T, V) log
    /// posteriors. `trace` collects TSAM instrumentation when given.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<S>,
        pv: &ParamVars,
        sample: &SampleTensors<S>,
        mut trace: Option<&mut TsamTrace>,
    ) -> Result<Var> {
        let rgb_feats = if self.cfg.modality.uses_rgb() {
            let frames = sample.frames.as_ref().ok_or_else(|| {
                Error::Data("model requires RGB frames but the sample has none".into())
            })?;
            let x = tape.leaf(frames.frames.clone());
            Some(tsam::forward_sequence_on_tape(
                tape,
                x,
                &self.cfg.tsam,
                "tsam",
                pv,
                trace.as_deref_mut(),
            )?)
        } else {
            None
        };
        let kp_feats = if self.cfg.modality.uses_keypoints() {
            let kp = sample.keypoints.as_ref().ok_or_else(|| {
                Error::Data("model requires keypoints but the sample has none".into())
            })?;
            let x = tape.leaf(Self::keypoints_channel_first(kp));
            let feats = tpe::forward_clip_on_tape(tape, x, kp.len(), &self.cfg.tpe, "tpe", pv)?;
            let mut h = feats;
            for m in 0..self.cfg.tpe.conv_modules {
                h = tpe::conv_module_on_tape(tape, h, "tpe", m, pv);
            }
            Some(h)
        } else {
            None
        };

        let fused = match (rgb_feats, kp_feats) {
            (Some(r), Some(k)) => {
                let (tr, tk) = (tape.value(r).shape()[0], tape.value(k).shape()[0]);
                if tr != tk {
                    return Err(Error::Data(format!(
                        "fused model requires time-aligned modalities, got {tr} vs {tk} frames"
                    )));
                }
                match self.cfg.fusion {
                    Fusion::Sum => tape.add(r, k),
                    Fusion::Product => tape.mul(r, k),
                    Fusion::Concat => tape.concat_last(r, k),
                    Fusion::Weighted(wa, wb) => {
                        let rs = tape.scale(r, S::from_f(wa));
                        let ks = tape.scale(k, S::from_f(wb));
                        tape.add(rs, ks)
                    }
                }
            }
            (Some(r), None) => r,
            (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("model has no modality".into())),
        };
        let t = tape.value(fused).shape()[0];
        decoder::decode_head_on_tape(tape, fused, t, &self.cfg.decoder, "dec", pv)
    }

    /// Pure forward pass to per-frame log posteriors.
    pub fn log_probs(&self, sample: &SampleTensors<S>) -> Result<FrameLogProbs<S>> {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, &self.params);
        let out = self.forward_on_tape(&mut tape, &pv, sample, None)?;
        FrameLogProbs::new(tape.value(out).clone())
    }

    /// Decode one sample to a label: greedy by default, prefix beam when a
    /// width is given.
    pub fn predict_sample(
        &self,
        sample: &SampleTensors<S>,
        beam: Option<usize>,
    ) -> Result<crate::datamodel::LabelSequence> {
        let lp = self.log_probs(sample)?;
        match beam {
            Some(w) => decoder::beam_decode(&lp, w),
            None => Ok(decoder::greedy_decode(&lp)),
        }
    }
}
