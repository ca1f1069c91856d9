//! Run configuration: a flat UTF-8 `key = value` file format, typed parsing
//! into the model / training / augmentation / input / synthesis configs, and
//! a canonical serialization embedded in checkpoints.
//!
//! Unknown keys are configuration errors; every getter records the key it
//! consumed so typos cannot silently fall back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::datamodel::{Alphabet, KeypointLayout};
use crate::decoder::{DecoderConfig, RnnChoice};
use crate::error::{Error, Result};
use crate::model::{Fusion, Modality, ModelConfig};
use crate::preprocessing::AugmentSpec;
use crate::synthgen::SynthConfig;
use crate::tpe::TpeConfig;
use crate::tsam::{Reduction, TsamConfig};

// ---------------------------------------------------------------------------
// flat key = value layer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    map: BTreeMap<String, String>,
    consumed: RefCell<HashSet<String>>,
}

impl FlatConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::ConfigParse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: "empty key".into(),
                });
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::ConfigParse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("duplicate key {key}"),
                });
            }
        }
        Ok(FlatConfig {
            map,
            consumed: RefCell::new(HashSet::new()),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        FlatConfig {
            map: pairs.into_iter().collect(),
            consumed: RefCell::new(HashSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "{key}: expected true or false, got {v:?}"
            ))),
        }
    }

    pub fn f64_pair_or(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("{key}: expected `lo,hi`, got {v:?}")))?;
                if parts.len() != 2 {
                    return Err(Error::Config(format!("{key}: expected two numbers")));
                }
                Ok((parts[0], parts[1]))
            }
        }
    }

    pub fn usize_pair_or(&self, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
        let (a, b) = self.f64_pair_or(key, (default.0 as f64, default.1 as f64))?;
        if a.fract() != 0.0 || b.fract() != 0.0 || a < 0.0 || b < 0.0 {
            return Err(Error::Config(format!("{key}: expected two integers")));
        }
        Ok((a as usize, b as usize))
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: bad integer {p:?}")))
                })
                .collect(),
        }
    }

    pub fn u32_list_or(&self, key: &str, default: &[u32]) -> Result<Vec<u32>> {
        Ok(self
            .usize_list_or(key, &default.iter().map(|&v| v as usize).collect::<Vec<_>>())?
            .into_iter()
            .map(|v| v as u32)
            .collect())
    }

    pub fn f64_triple_or(&self, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("{key}: expected three numbers")))?;
                if parts.len() != 3 {
                    return Err(Error::Config(format!("{key}: expected three numbers")));
                }
                Ok([parts[0], parts[1], parts[2]])
            }
        }
    }

    /// All keys must have been consumed by a getter.
    pub fn reject_unknown_keys(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .map
            .keys()
            .filter(|k| !consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config key(s): {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

// ---------------------------------------------------------------------------
// input settings
// ---------------------------------------------------------------------------

/// Input geometry and normalization: expected frame size, RGB normalization
/// constants, and which keypoint groups feed the keypoint encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct InputConfig {
    pub size: usize,
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    pub hands: bool,
    pub pose: bool,
    pub pose_pairs: Vec<(usize, usize)>,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            size: 224,
            rgb_mean: [0.5, 0.5, 0.5],
            rgb_std: [0.5, 0.5, 0.5],
            hands: true,
            pose: true,
            pose_pairs: KeypointLayout::default_54().pose_pairs,
        }
    }
}

impl InputConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.hands && !self.pose {
            return Err(Error::Config(
                "input: at least one keypoint group must be enabled".into(),
            ));
        }
        if self.rgb_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("input: rgb_std entries must be positive".into()));
        }
        self.layout().validate()
    }

    /// Keypoint layout of the selected group subset.
    pub fn layout(&self) -> KeypointLayout {
        let hand = if self.hands { 21 } else { 0 };
        let pose = if self.pose { 12 } else { 0 };
        KeypointLayout {
            left_hand: 0..hand,
            right_hand: hand..2 * hand,
            pose: 2 * hand..2 * hand + pose,
            pose_pairs: if self.pose { self.pose_pairs.clone() } else { vec![] },
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.layout().num_keypoints()
    }
}

// ---------------------------------------------------------------------------
// training settings
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gamma: f64,
    pub milestones: Vec<u32>,
    pub epochs: u32,
    pub batch_clips: usize,
    pub seed: u64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub length_bucketing: bool,
    pub augment_enabled: bool,
    /// Stop once validation letter accuracy reaches this value; 0 disables.
    pub target_accuracy: f64,
}

impl TrainConfig {
    /// Learning-rate milestones are keyed by modality: the keypoint model
    /// drops at 25 and 40, the others at 20 and 40.
    pub fn default_for(modality: Modality) -> Self {
        let milestones = match modality {
            Modality::Kp => vec![25, 40],
            _ => vec![20, 40],
        };
        let epochs = match modality {
            Modality::Rgb => 60,
            _ => 100,
        };
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma: 0.1,
            milestones,
            epochs,
            batch_clips: 4,
            seed: 7,
            grad_clip: 0.0,
            length_bucketing: false,
            augment_enabled: true,
            target_accuracy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("train: lr must be positive".into()));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "train: milestones must be strictly increasing".into(),
            ));
        }
        if self.batch_clips == 0 {
            return Err(Error::Config("train: batch_clips must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// the full run configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub input: InputConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self> {
        let modality = Modality::parse(&cfg.str_or("model.modality", "kp"))?;
        let alphabet = Alphabet::from_str_symbols(&cfg.str_or("model.alphabet", "abcdef"))?;
        let feature_dim = cfg.usize_or("model.feature_dim", 192)?;
        let fusion = Fusion::parse(&cfg.str_or("model.fusion", "sum"))?;

        let input = parse_input(cfg)?;
        let tsam = parse_tsam(cfg, feature_dim, input.size)?;
        let tpe = parse_tpe(cfg, feature_dim, input.num_keypoints())?;
        let decoder = parse_decoder(cfg)?;
        let train = parse_train(cfg, modality)?;
        let augment = parse_augment(cfg)?;
        let synth = parse_synth(cfg, input.size)?;

        let model = ModelConfig {
            modality,
            alphabet,
            feature_dim,
            tsam,
            tpe,
            decoder,
            fusion,
        };
        cfg.reject_unknown_keys()?;
        model.validate()?;
        train.validate()?;
        augment.validate()?;
        input.validate()?;
        synth.validate()?;
        if model.modality.uses_keypoints() && model.tpe.keypoints != input.num_keypoints() {
            return Err(Error::Config(format!(
                "tpe.keypoints = {} but the selected input groups provide {}",
                model.tpe.keypoints,
                input.num_keypoints()
            )));
        }
        Ok(RunConfig {
            model,
            train,
            augment,
            input,
            synth,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_flat(&FlatConfig::from_file(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_flat(&FlatConfig::parse(text, &PathBuf::from("<inline>"))?)
    }

    /// Canonical flat serialization: every effective value, sorted by key.
    /// Parsing this text reproduces the configuration exactly.
    pub fn canonical_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let a = &self.augment;
        let i = &self.input;
        let s = &self.synth;
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));

        push("model.modality", m.modality.as_str().into());
        push("model.alphabet", m.alphabet.symbols().iter().collect());
        push("model.feature_dim", m.feature_dim.to_string());
        push("model.fusion", m.fusion.as_config_string());

        push("tsam.stem_channels", m.tsam.stem_channels.to_string());
        push("tsam.stem_stride", m.tsam.stem_stride.to_string());
        push("tsam.block_channels", join_usize(&m.tsam.block_channels));
        push("tsam.block_strides", join_usize(&m.tsam.block_strides));
        push("tsam.shift_fraction", format_f64(m.tsam.shift_fraction));
        push("tsam.count_shift", m.tsam.count_shift_enabled.to_string());
        push("tsam.norm", m.tsam.norm_enabled.to_string());
        push(
            "tsam.reduction",
            match m.tsam.reduction {
                Reduction::AvgPool1dConv => "avgpool".into(),
                Reduction::Flatten1dConv => "flatten".into(),
            },
        );

        push("tpe.c1", m.tpe.c1.to_string());
        push("tpe.c2", m.tpe.c2.to_string());
        push("tpe.tube_kernel", m.tpe.tube_kernel.to_string());
        push("tpe.tube_stride", m.tpe.tube_stride.to_string());
        push("tpe.tube_out", m.tpe.tube_out.to_string());
        push("tpe.conv_modules", m.tpe.conv_modules.to_string());
        push("tpe.conv_expansion", m.tpe.conv_expansion.to_string());
        push("tpe.conv_kernel", m.tpe.conv_kernel.to_string());

        push(
            "decoder.rnn",
            match m.decoder.rnn {
                RnnChoice::Gru => "gru",
                RnnChoice::Lstm => "lstm",
                RnnChoice::None => "none",
            }
            .into(),
        );
        push("decoder.hidden", m.decoder.hidden.to_string());
        push("decoder.layers", m.decoder.layers.to_string());
        push("decoder.bidirectional", m.decoder.bidirectional.to_string());

        push("train.lr", format_f64(t.lr));
        push("train.weight_decay", format_f64(t.weight_decay));
        push("train.beta1", format_f64(t.beta1));
        push("train.beta2", format_f64(t.beta2));
        push("train.eps", format_f64(t.eps));
        push("train.gamma", format_f64(t.gamma));
        push(
            "train.milestones",
            t.milestones
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("train.epochs", t.epochs.to_string());
        push("train.batch_clips", t.batch_clips.to_string());
        push("train.seed", t.seed.to_string());
        push("train.grad_clip", format_f64(t.grad_clip));
        push("train.length_bucketing", t.length_bucketing.to_string());
        push("train.augment", t.augment_enabled.to_string());
        push("train.target_accuracy", format_f64(t.target_accuracy));

        push("augment.resample_prob", format_f64(a.resample_prob));
        push("augment.resample_rate", join_pair(a.resample_range));
        push("augment.affine_prob", format_f64(a.affine_prob));
        push("augment.affine_scale", join_pair(a.affine_scale));
        push("augment.affine_shear", join_pair(a.affine_shear));
        push("augment.affine_shift", join_pair(a.affine_shift));
        push("augment.affine_degrees", join_pair(a.affine_degrees));
        push("augment.temporal_mask_prob", format_f64(a.temporal_mask_prob));
        push("augment.temporal_mask_size", join_pair(a.temporal_mask_size));
        push("augment.spatial_mask_prob", format_f64(a.spatial_mask_prob));
        push("augment.spatial_mask_size", join_pair(a.spatial_mask_size));
        push("augment.hflip_prob", format_f64(a.hflip_prob));
        push("augment.rotation_prob", format_f64(a.rotation_prob));
        push("augment.rotation_degrees", join_pair(a.rotation_degrees));

        push("input.size", i.size.to_string());
        push("input.rgb_mean", join_triple(i.rgb_mean));
        push("input.rgb_std", join_triple(i.rgb_std));
        push("input.hands", i.hands.to_string());
        push("input.pose", i.pose.to_string());
        push(
            "input.pose_pairs",
            i.pose_pairs
                .iter()
                .map(|(x, y)| format!("{x}-{y}"))
                .collect::<Vec<_>>()
                .join(","),
        );

        push("synth.alphabet_size", s.alphabet_size.to_string());
        push("synth.word_len", format!("{},{}", s.word_len.0, s.word_len.1));
        push(
            "synth.frames_per_letter",
            format!("{},{}", s.frames_per_letter.0, s.frames_per_letter.1),
        );
        push(
            "synth.transition_frames",
            format!("{},{}", s.transition_frames.0, s.transition_frames.1),
        );
        push("synth.sigma", format_f64(s.sigma));
        push("synth.seed", s.seed.to_string());
        push("synth.frame_size", s.frame_size.to_string());

        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

fn format_f64(v: f64) -> String {
    // shortest representation that round-trips
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}

fn join_usize(vs: &[usize]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn join_pair((a, b): (f64, f64)) -> String {
    format!("{},{}", format_f64(a), format_f64(b))
}

fn join_triple(v: [f64; 3]) -> String {
    format!("{},{},{}", format_f64(v[0]), format_f64(v[1]), format_f64(v[2]))
}

fn parse_input(cfg: &FlatConfig) -> Result<InputConfig> {
    let d = InputConfig::default();
    let pose_pairs = match cfg.raw_pose_pairs() {
        Some(v) => parse_pairs(&v)?,
        None => d.pose_pairs.clone(),
    };
    Ok(InputConfig {
        size: cfg.usize_or("input.size", d.size)?,
        rgb_mean: cfg.f64_triple_or("input.rgb_mean", d.rgb_mean)?,
        rgb_std: cfg.f64_triple_or("input.rgb_std", d.rgb_std)?,
        hands: cfg.bool_or("input.hands", d.hands)?,
        pose: cfg.bool_or("input.pose", d.pose)?,
        pose_pairs,
    })
}

impl FlatConfig {
    fn raw_pose_pairs(&self) -> Option<String> {
        self.raw("input.pose_pairs").map(|s| s.to_string())
    }
}

fn parse_pairs(v: &str) -> Result<Vec<(usize, usize)>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("pose pair {p:?} must be `a-b`")))?;
            let a = a
                .parse()
                .map_err(|_| Error::Config(format!("bad pose pair index {a:?}")))?;
            let b = b
                .parse()
                .map_err(|_| Error::Config(format!("bad pose pair index {b:?}")))?;
            Ok((a, b))
        })
        .collect()
}

fn parse_tsam(cfg: &FlatConfig, feature_dim: usize, input_size: usize) -> Result<TsamConfig> {
    let preset = cfg.str_or("tsam.preset", "tiny");
    let mut base = match preset.as_str() {
        "tiny" => TsamConfig::tiny(feature_dim),
        "resnet34" => TsamConfig::resnet34_shaped(feature_dim),
        other => {
            return Err(Error::Config(format!(
                "tsam.preset must be tiny or resnet34, got {other:?}"
            )))
        }
    };
    base.input_hw = (input_size, input_size);
    base.stem_channels = cfg.usize_or("tsam.stem_channels", base.stem_channels)?;
    base.stem_stride = cfg.usize_or("tsam.stem_stride", base.stem_stride)?;
    base.block_channels = cfg.usize_list_or("tsam.block_channels", &base.block_channels)?;
    base.block_strides = cfg.usize_list_or("tsam.block_strides", &base.block_strides)?;
    base.shift_fraction = cfg.f64_or("tsam.shift_fraction", base.shift_fraction)?;
    base.count_shift_enabled = cfg.bool_or("tsam.count_shift", base.count_shift_enabled)?;
    base.norm_enabled = cfg.bool_or("tsam.norm", base.norm_enabled)?;
    base.reduction = match cfg.str_or("tsam.reduction", "avgpool").as_str() {
        "avgpool" => Reduction::AvgPool1dConv,
        "flatten" => Reduction::Flatten1dConv,
        other => {
            return Err(Error::Config(format!(
                "tsam.reduction must be avgpool or flatten, got {other:?}"
            )))
        }
    };
    Ok(base)
}

fn parse_tpe(cfg: &FlatConfig, feature_dim: usize, keypoints: usize) -> Result<TpeConfig> {
    let mut base = TpeConfig::desk(feature_dim);
    base.keypoints = keypoints;
    base.c1 = cfg.usize_or("tpe.c1", base.c1)?;
    base.c2 = cfg.usize_or("tpe.c2", base.c2)?;
    base.tube_kernel = cfg.usize_or("tpe.tube_kernel", base.tube_kernel)?;
    base.tube_stride = cfg.usize_or("tpe.tube_stride", base.tube_stride)?;
    base.tube_out = cfg.usize_or("tpe.tube_out", base.tube_out)?;
    base.conv_modules = cfg.usize_or("tpe.conv_modules", base.conv_modules)?;
    base.conv_expansion = cfg.usize_or("tpe.conv_expansion", base.conv_expansion)?;
    base.conv_kernel = cfg.usize_or("tpe.conv_kernel", base.conv_kernel)?;
    Ok(base)
}

fn parse_decoder(cfg: &FlatConfig) -> Result<DecoderConfig> {
    let d = DecoderConfig::default();
    let rnn = match cfg.str_or("decoder.rnn", "gru").as_str() {
        "gru" => RnnChoice::Gru,
        "lstm" => RnnChoice::Lstm,
        "none" => RnnChoice::None,
        other => {
            return Err(Error::Config(format!(
                "decoder.rnn must be gru, lstm or none, got {other:?}"
            )))
        }
    };
    Ok(DecoderConfig {
        rnn,
        hidden: cfg.usize_or("decoder.hidden", d.hidden)?,
        layers: cfg.usize_or("decoder.layers", d.layers)?,
        bidirectional: cfg.bool_or("decoder.bidirectional", d.bidirectional)?,
    })
}

fn parse_train(cfg: &FlatConfig, modality: Modality) -> Result<TrainConfig> {
    let d = TrainConfig::default_for(modality);
    Ok(TrainConfig {
        lr: cfg.f64_or("train.lr", d.lr)?,
        weight_decay: cfg.f64_or("train.weight_decay", d.weight_decay)?,
        beta1: cfg.f64_or("train.beta1", d.beta1)?,
        beta2: cfg.f64_or("train.beta2", d.beta2)?,
        eps: cfg.f64_or("train.eps", d.eps)?,
        gamma: cfg.f64_or("train.gamma", d.gamma)?,
        milestones: cfg.u32_list_or("train.milestones", &d.milestones)?,
        epochs: cfg.usize_or("train.epochs", d.epochs as usize)? as u32,
        batch_clips: cfg.usize_or("train.batch_clips", d.batch_clips)?,
        seed: cfg.u64_or("train.seed", d.seed)?,
        grad_clip: cfg.f64_or("train.grad_clip", d.grad_clip)?,
        length_bucketing: cfg.bool_or("train.length_bucketing", d.length_bucketing)?,
        augment_enabled: cfg.bool_or("train.augment", d.augment_enabled)?,
        target_accuracy: cfg.f64_or("train.target_accuracy", d.target_accuracy)?,
    })
}

fn parse_augment(cfg: &FlatConfig) -> Result<AugmentSpec> {
    let d = AugmentSpec::default();
    Ok(AugmentSpec {
        resample_prob: cfg.f64_or("augment.resample_prob", d.resample_prob)?,
        resample_range: cfg.f64_pair_or("augment.resample_rate", d.resample_range)?,
        affine_prob: cfg.f64_or("augment.affine_prob", d.affine_prob)?,
        affine_scale: cfg.f64_pair_or("augment.affine_scale", d.affine_scale)?,
        affine_shear: cfg.f64_pair_or("augment.affine_shear", d.affine_shear)?,
        affine_shift: cfg.f64_pair_or("augment.affine_shift", d.affine_shift)?,
        affine_degrees: cfg.f64_pair_or("augment.affine_degrees", d.affine_degrees)?,
        temporal_mask_prob: cfg.f64_or("augment.temporal_mask_prob", d.temporal_mask_prob)?,
        temporal_mask_size: cfg.f64_pair_or("augment.temporal_mask_size", d.temporal_mask_size)?,
        spatial_mask_prob: cfg.f64_or("augment.spatial_mask_prob", d.spatial_mask_prob)?,
        spatial_mask_size: cfg.f64_pair_or("augment.spatial_mask_size", d.spatial_mask_size)?,
        hflip_prob: cfg.f64_or("augment.hflip_prob", d.hflip_prob)?,
        rotation_prob: cfg.f64_or("augment.rotation_prob", d.rotation_prob)?,
        rotation_degrees: cfg.f64_pair_or("augment.rotation_degrees", d.rotation_degrees)?,
    })
}

fn parse_synth(cfg: &FlatConfig, _input_size: usize) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        alphabet_size: cfg.usize_or("synth.alphabet_size", d.alphabet_size)?,
        word_len: cfg.usize_pair_or("synth.word_len", d.word_len)?,
        frames_per_letter: cfg.usize_pair_or("synth.frames_per_letter", d.frames_per_letter)?,
        transition_frames: cfg.usize_pair_or("synth.transition_frames", d.transition_frames)?,
        sigma: cfg.f64_or("synth.sigma", d.sigma)?,
        seed: cfg.u64_or("synth.seed", d.seed)?,
        frame_size: cfg.usize_or("synth.frame_size", d.frame_size)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_roundtrip() {
        let run = RunConfig::from_text("").unwrap();
        assert_eq!(run.model.modality, Modality::Kp);
        assert_eq!(run.model.feature_dim, 192);
        assert_eq!(run.train.milestones, vec![25, 40]); // keypoint model preset
        let canon = run.canonical_text();
        let run2 = RunConfig::from_text(&canon).unwrap();
        assert_eq!(run2.canonical_text(), canon);
    }

    #[test]
    fn modality_switches_milestone_preset() {
        let run = RunConfig::from_text("model.modality = rgb\ninput.size = 32\n").unwrap();
        assert_eq!(run.train.milestones, vec![20, 40]);
        assert_eq!(run.train.epochs, 60);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = RunConfig::from_text("model.modalty = kp\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn explicit_values_override_defaults() {
        let text = "model.modality = rgb+kp\n\
                    model.alphabet = xyz\n\
                    model.feature_dim = 24\n\
                    model.fusion = weighted:0.7,0.3\n\
                    input.size = 32\n\
                    train.lr = 0.002\n\
                    train.milestones = 5,9,12\n\
                    decoder.rnn = lstm\n\
                    tpe.conv_modules = 2\n";
        let run = RunConfig::from_text(text).unwrap();
        assert_eq!(run.model.modality, Modality::RgbKp);
        assert_eq!(run.model.alphabet.len(), 3);
        assert_eq!(run.model.fusion, Fusion::Weighted(0.7, 0.3));
        assert_eq!(run.train.lr, 0.002);
        assert_eq!(run.train.milestones, vec![5, 9, 12]);
        assert_eq!(run.model.decoder.rnn, RnnChoice::Lstm);
        assert_eq!(run.model.tpe.conv_modules, 2);
        // canonical text reproduces all of it
        let run2 = RunConfig::from_text(&run.canonical_text()).unwrap();
        assert_eq!(run2.model.fusion, Fusion::Weighted(0.7, 0.3));
        assert_eq!(run2.train.milestones, vec![5, 9, 12]);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\nmodel.modality = kp\n";
        assert!(RunConfig::from_text(text).is_ok());
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = FlatConfig::parse("model.modality kp\n", &PathBuf::from("x.cfg")).unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn keypoint_group_subset_changes_k() {
        let run = RunConfig::from_text("input.pose = false\n").unwrap();
        assert_eq!(run.input.num_keypoints(), 42);
        assert_eq!(run.model.tpe.keypoints, 42);
        let run = RunConfig::from_text("input.hands = false\n").unwrap();
        assert_eq!(run.input.num_keypoints(), 12);
        assert!(RunConfig::from_text("input.hands = false\ninput.pose = false\n").is_err());
    }

    #[test]
    fn milestone_ordering_is_validated() {
        let err = RunConfig::from_text("train.milestones = 9,5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
