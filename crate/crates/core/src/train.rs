//! Training loop (AdamW with decoupled weight decay, multistep learning-rate
//! schedule, per-epoch validation, best-checkpoint retention), evaluation,
//! and single-clip prediction, plus the sample loading shared by all three.

use std::path::Path;

use crate::config::{InputConfig, RunConfig, TrainConfig};
use crate::datamodel::{
    self, FrameClip, KeypointClip, KeypointLayout, LabelSequence, ManifestEntry,
};
use crate::decoder::{ctc_loss_on_tape, ctc_min_frames};
use crate::error::{Error, Result};
use crate::fileio::{self, Checkpoint, EpochRecord};
use crate::metrics::{self, EditCounts};
use crate::model::{assemble, Model, SampleTensors};
use crate::numerics::tape::Tape;
use crate::numerics::{ParamSet, ParamVars};
use crate::preprocessing;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use rand::seq::SliceRandom;

// ---------------------------------------------------------------------------
// optimizer and schedule
// ---------------------------------------------------------------------------

/// AdamW update:
///   m <- b1 m + (1 - b1) g
///   v <- b2 v + (1 - b2) g^2
///   w <- w - lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * w )
/// with m_hat, v_hat the bias-corrected moments (decoupled weight decay).
pub struct AdamW<S> {
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        AdamW {
            step: 0,
            m: (0..params.len())
                .map(|i| Tensor::zeros(params.tensor_at(i).shape()))
                .collect(),
            v: (0..params.len())
                .map(|i| Tensor::zeros(params.tensor_at(i).shape()))
                .collect(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &[Tensor<S>],
        lr: f64,
        cfg: &TrainConfig,
    ) {
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = S::from_f(cfg.beta1);
        let b2 = S::from_f(cfg.beta2);
        let eps = S::from_f(cfg.eps);
        let lr_s = S::from_f(lr);
        let wd = S::from_f(cfg.weight_decay);
        let bc1 = S::from_f(1.0 - cfg.beta1.powi(self.step as i32));
        let bc2 = S::from_f(1.0 - cfg.beta2.powi(self.step as i32));
        for i in 0..grads.len() {
            let w = params.tensor_at_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - lr_s * (m_hat / (v_hat.sqrt() + eps) + wd * w[j]);
            }
        }
    }
}

/// Learning rate in effect once `epochs_completed` epochs have finished:
/// lr0 * gamma^k with k = #{milestones <= epochs_completed}. Epoch e (1-based)
/// trains at `lr_at(cfg, e - 1)`.
pub fn lr_at(cfg: &TrainConfig, epochs_completed: u32) -> f64 {
    let k = cfg
        .milestones
        .iter()
        .filter(|&&m| m <= epochs_completed)
        .count();
    cfg.lr * cfg.gamma.powi(k as i32)
}

// ---------------------------------------------------------------------------
// sample loading
// ---------------------------------------------------------------------------

/// A manifest entry loaded into memory: raw [0,1] frames and NaN-filled,
/// group-selected keypoints. Augmentation and normalization happen per use.
#[derive(Clone, Debug)]
pub struct LoadedSample<S> {
    pub id: String,
    pub keypoints: Option<KeypointClip<S>>,
    pub frames: Option<FrameClip<S>>,
    pub label: LabelSequence,
    pub label_text: String,
}

fn sibling_with_extension(entry: &ManifestEntry, ext: &str) -> Result<std::path::PathBuf> {
    let p = entry.path.with_extension(ext);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingClipFile {
            sample_id: entry.sample_id.clone(),
            path: p,
        })
    }
}

/// Select the configured keypoint groups out of a full 54-point clip.
fn select_groups<S: Scalar>(clip: &KeypointClip<S>, input: &InputConfig) -> KeypointClip<S> {
    let full = KeypointLayout::default_54();
    let mut keep: Vec<usize> = Vec::new();
    if input.hands {
        keep.extend(full.left_hand.clone());
        keep.extend(full.right_hand.clone());
    }
    if input.pose {
        keep.extend(full.pose.clone());
    }
    let t = clip.len();
    let k_out = keep.len();
    let mut data = Vec::with_capacity(t * k_out * 3);
    for ti in 0..t {
        for &kp in &keep {
            let i = clip.at(ti, kp, 0);
            data.extend_from_slice(&clip.coords.data()[i..i + 3]);
        }
    }
    KeypointClip {
        coords: Tensor::from_vec(&[t, k_out, 3], data),
        layout: input.layout(),
    }
}

pub fn load_sample<S: Scalar>(
    entry: &ManifestEntry,
    needs_keypoints: bool,
    needs_frames: bool,
    input: &InputConfig,
) -> Result<LoadedSample<S>> {
    let keypoints = if needs_keypoints {
        let path = if entry.path.extension().and_then(|e| e.to_str()) == Some("kpc") {
            entry.path.clone()
        } else {
            sibling_with_extension(entry, "kpc")?
        };
        let raw = fileio::read_keypoint_clip::<S>(&path, &KeypointLayout::default_54())?;
        let filled = preprocessing::fill_missing(&raw);
        Some(select_groups(&filled, input))
    } else {
        None
    };
    let frames = if needs_frames {
        let path = if entry.path.extension().and_then(|e| e.to_str()) == Some("frc") {
            entry.path.clone()
        } else {
            sibling_with_extension(entry, "frc")?
        };
        let clip = fileio::read_frame_clip::<S>(&path)?;
        if clip.height() != input.size || clip.width() != input.size {
            return Err(Error::Data(format!(
                "sample {}: frames are {}x{} but input.size = {}",
                entry.sample_id,
                clip.height(),
                clip.width(),
                input.size
            )));
        }
        Some(clip)
    } else {
        None
    };
    Ok(LoadedSample {
        id: entry.sample_id.clone(),
        keypoints,
        frames,
        label: entry.label.clone(),
        label_text: entry.label_text.clone(),
    })
}

fn normalize_frames<S: Scalar>(clip: &FrameClip<S>, input: &InputConfig) -> FrameClip<S> {
    let s = clip.frames.shape();
    let (t, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = clip.frames.clone();
    {
        let d = out.data_mut();
        for ti in 0..t {
            for ch in 0..c {
                let mean = S::from_f(input.rgb_mean[ch.min(2)]);
                let std = S::from_f(input.rgb_std[ch.min(2)]);
                for v in &mut d[(ti * c + ch) * hw..(ti * c + ch + 1) * hw] {
                    *v = (*v - mean) / std;
                }
            }
        }
    }
    FrameClip { frames: out }
}

/// Evaluation-path tensors: normalization only.
pub fn sample_tensors<S: Scalar>(sample: &LoadedSample<S>, input: &InputConfig) -> SampleTensors<S> {
    SampleTensors {
        keypoints: sample.keypoints.clone(),
        frames: sample.frames.as_ref().map(|f| normalize_frames(f, input)),
    }
}

/// Training-path tensors: augmentation pipeline on the raw clips, then
/// normalization. Falls back to the un-augmented clips if resampling left
/// too few frames to emit the label.
pub fn augmented_sample_tensors<S: Scalar>(
    sample: &LoadedSample<S>,
    input: &InputConfig,
    spec: &preprocessing::AugmentSpec,
    seed: u64,
    tag: &str,
) -> Result<SampleTensors<S>> {
    let (kp, fr) = preprocessing::apply_pipeline(
        sample.keypoints.clone(),
        sample.frames.clone(),
        spec,
        seed,
        tag,
    )?;
    let len = kp
        .as_ref()
        .map(|c| c.len())
        .or_else(|| fr.as_ref().map(|f| f.len()))
        .unwrap_or(0);
    if len < ctc_min_frames(sample.label.indices()).max(1) {
        return Ok(sample_tensors(sample, input));
    }
    Ok(SampleTensors {
        keypoints: kp,
        frames: fr.map(|f| normalize_frames(&f, input)),
    })
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub counts: EditCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub corpus_accuracy: f64,
    pub sample_mean_accuracy: f64,
    pub samples: Vec<EvalSample>,
}

impl EvalReport {
    /// Deterministic text rendering (manifest order).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&format!(
                "{}\t{}\t{}\tS={} D={} I={} N={}\n",
                s.id,
                s.reference,
                s.hypothesis,
                s.counts.substitutions,
                s.counts.deletions,
                s.counts.insertions,
                s.counts.reference_len
            ));
        }
        out.push_str(&format!(
            "corpus_letter_accuracy = {:.6}\nsample_mean_letter_accuracy = {:.6}\nsamples = {}\n",
            self.corpus_accuracy,
            self.sample_mean_accuracy,
            self.samples.len()
        ));
        out
    }
}

pub fn evaluate_samples<S: Scalar>(
    model: &Model<S>,
    samples: &[LoadedSample<S>],
    input: &InputConfig,
    beam: Option<usize>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation manifest is empty".into()));
    }
    let mut evals = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let tensors = sample_tensors(s, input);
        let hyp = model.predict_sample(&tensors, beam)?;
        let counts = metrics::edit_counts(&s.label, &hyp);
        evals.push(EvalSample {
            id: s.id.clone(),
            reference: s.label_text.clone(),
            hypothesis: model.cfg.alphabet.decode(&hyp),
            counts,
        });
        pairs.push((s.label.clone(), hyp));
    }
    Ok(EvalReport {
        corpus_accuracy: metrics::corpus_accuracy(&pairs)?,
        sample_mean_accuracy: metrics::corpus_accuracy_sample_mean(&pairs)?,
        samples: evals,
    })
}

pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    input: &InputConfig,
    manifest: &Path,
    beam: Option<usize>,
) -> Result<EvalReport> {
    let entries = datamodel::load_manifest(manifest, &model.cfg.alphabet)?;
    let samples: Vec<LoadedSample<S>> = entries
        .iter()
        .map(|e| {
            load_sample(
                e,
                model.cfg.modality.uses_keypoints(),
                model.cfg.modality.uses_rgb(),
                input,
            )
        })
        .collect::<Result<_>>()?;
    evaluate_samples(model, &samples, input, beam)
}

/// Decode one clip file into a string. The file supplies whichever modality
/// matches its magic; a fused model derives the sibling file by extension.
pub fn predict<S: Scalar>(
    model: &Model<S>,
    input: &InputConfig,
    clip_path: &Path,
    beam: Option<usize>,
) -> Result<String> {
    let stem = clip_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    let entry = ManifestEntry {
        sample_id: stem,
        path: clip_path.to_path_buf(),
        label: LabelSequence::default(),
        label_text: String::new(),
    };
    let sample = load_sample::<S>(
        &entry,
        model.cfg.modality.uses_keypoints(),
        model.cfg.modality.uses_rgb(),
        input,
    )?;
    let tensors = sample_tensors(&sample, input);
    let decoded = model.predict_sample(&tensors, beam)?;
    Ok(model.cfg.alphabet.decode(&decoded))
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

pub struct TrainOutcome<S> {
    pub best: Checkpoint<S>,
    pub last: Checkpoint<S>,
    pub history: Vec<EpochRecord>,
    pub best_accuracy: f64,
}

fn make_checkpoint<S: Scalar>(
    run: &RunConfig,
    params: &ParamSet<S>,
    epoch: u32,
    history: &[EpochRecord],
) -> Checkpoint<S> {
    Checkpoint {
        config_text: run.canonical_text(),
        epoch,
        history: history.to_vec(),
        params: params.clone(),
    }
}

/// Rebuild a model from a checkpoint, validating the parameter inventory
/// against the embedded configuration.
pub fn model_from_checkpoint<S: Scalar>(
    ck: &Checkpoint<S>,
    path: &Path,
) -> Result<(Model<S>, RunConfig)> {
    let run = RunConfig::from_text(&ck.config_text)?;
    let expected = run.model.build_params::<S>(0)?;
    if expected.len() != ck.params.len() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "parameter count {} does not match configuration ({} expected)",
                ck.params.len(),
                expected.len()
            ),
        });
    }
    for ((en, et), (cn, ct)) in expected.entries().zip(ck.params.entries()) {
        if en != cn || et.shape() != ct.shape() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("parameter {cn} does not match configuration entry {en}"),
            });
        }
    }
    Ok((
        Model {
            cfg: run.model.clone(),
            params: ck.params.clone(),
        },
        run,
    ))
}

/// Full training run. Writes `best.ckpt` and `last.ckpt` under `out_dir`
/// when given. The best checkpoint is selected by validation letter accuracy
/// (earlier epoch wins ties).
pub fn train<S: Scalar>(
    run: &RunConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    run.model.validate()?;
    run.train.validate()?;
    let cfg = &run.train;
    let alphabet = &run.model.alphabet;
    let needs_kp = run.model.modality.uses_keypoints();
    let needs_rgb = run.model.modality.uses_rgb();

    let train_entries = datamodel::load_manifest(train_manifest, alphabet)?;
    if train_entries.is_empty() {
        return Err(Error::Data("training manifest is empty".into()));
    }
    let val_entries = datamodel::load_manifest(val_manifest, alphabet)?;
    let train_samples: Vec<LoadedSample<S>> = train_entries
        .iter()
        .map(|e| load_sample(e, needs_kp, needs_rgb, &run.input))
        .collect::<Result<_>>()?;
    let val_samples: Vec<LoadedSample<S>> = val_entries
        .iter()
        .map(|e| load_sample(e, needs_kp, needs_rgb, &run.input))
        .collect::<Result<_>>()?;

    let mut model: Model<S> = assemble(run.model.clone(), cfg.seed)?;
    let mut opt = AdamW::new(&model.params);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, Checkpoint<S>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = lr_at(cfg, epoch - 1);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, &format!("train:shuffle:e{epoch}"));
        order.shuffle(&mut shuffle_rng);
        if cfg.length_bucketing {
            // stable sort after the shuffle: similar lengths batch together,
            // order within a length stays seed-dependent
            order.sort_by_key(|&i| {
                train_samples[i]
                    .keypoints
                    .as_ref()
                    .map(|c| c.len())
                    .or_else(|| train_samples[i].frames.as_ref().map(|f| f.len()))
                    .unwrap_or(0)
            });
        }

        let mut epoch_loss = 0.0f64;
        let mut n_samples = 0usize;
        for batch in order.chunks(cfg.batch_clips) {
            let mut grad_accum: Vec<Tensor<S>> = (0..model.params.len())
                .map(|i| Tensor::zeros(model.params.tensor_at(i).shape()))
                .collect();
            for &idx in batch {
                let sample = &train_samples[idx];
                let tensors = if cfg.augment_enabled {
                    augmented_sample_tensors(
                        sample,
                        &run.input,
                        &run.augment,
                        cfg.seed,
                        &format!("e{epoch}:{}", sample.id),
                    )?
                } else {
                    sample_tensors(sample, &run.input)
                };
                let mut tape = Tape::new();
                let pv = ParamVars::bind(&mut tape, &model.params);
                let lp = model.forward_on_tape(&mut tape, &pv, &tensors, None)?;
                let loss = ctc_loss_on_tape(&mut tape, lp, sample.label.indices())?;
                let loss_value = tape.value(loss).data()[0].to_f();
                if !loss_value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        sample_ids: vec![sample.id.clone()],
                    });
                }
                epoch_loss += loss_value;
                n_samples += 1;
                let grads = tape.backward(loss);
                let sample_grads = pv.collect_grads(&model.params, &grads);
                for (acc, g) in grad_accum.iter_mut().zip(&sample_grads) {
                    acc.add_assign(g);
                }
            }
            let inv = S::from_f(1.0 / batch.len() as f64);
            for g in &mut grad_accum {
                g.scale_assign(inv);
            }
            if cfg.grad_clip > 0.0 {
                let norm: f64 = grad_accum
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|v| v.to_f() * v.to_f())
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    let scale = S::from_f(cfg.grad_clip / norm);
                    for g in &mut grad_accum {
                        g.scale_assign(scale);
                    }
                }
            }
            opt.step(&mut model.params, &grad_accum, lr, cfg);
        }

        let report = evaluate_samples(&model, &val_samples, &run.input, None)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / n_samples.max(1) as f64,
            val_accuracy: report.corpus_accuracy,
        };
        history.push(record);
        let is_better = best
            .as_ref()
            .map(|(acc, _)| report.corpus_accuracy > *acc)
            .unwrap_or(true);
        if is_better {
            best = Some((
                report.corpus_accuracy,
                make_checkpoint(run, &model.params, epoch, &history),
            ));
        }
        if cfg.target_accuracy > 0.0 && report.corpus_accuracy >= cfg.target_accuracy {
            break;
        }
    }

    let last = make_checkpoint(run, &model.params, history.len() as u32, &history);
    let (best_accuracy, best) = match best {
        Some((acc, ck)) => (acc, ck),
        // zero epochs: the initial checkpoint is the only checkpoint
        None => (0.0, last.clone()),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fileio::write_checkpoint(&dir.join("best.ckpt"), &best)?;
        fileio::write_checkpoint(&dir.join("last.ckpt"), &last)?;
    }
    Ok(TrainOutcome {
        best,
        last,
        history,
        best_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Modality;

    #[test]
    fn lr_schedule_law() {
        let mut cfg = TrainConfig::default_for(Modality::Rgb);
        cfg.lr = 1e-4;
        cfg.gamma = 0.1;
        cfg.milestones = vec![20, 40];
        assert_eq!(lr_at(&cfg, 0), 1e-4);
        assert_eq!(lr_at(&cfg, 19), 1e-4);
        // lr after epoch 20: one milestone passed
        assert_eq!(lr_at(&cfg, 20), 1e-5);
        assert_eq!(lr_at(&cfg, 39), 1e-5);
        assert!((lr_at(&cfg, 40) - 1e-6).abs() < 1e-18);
        assert!((lr_at(&cfg, 100) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn adamw_single_step_scalar_oracle() {
        // f(w) = w^2 at w = 1 with lr 0.1: hand-evaluated update equations
        let mut cfg = TrainConfig::default_for(Modality::Kp);
        cfg.weight_decay = 0.01;
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&params);
        let grads = vec![Tensor::scalar(2.0)]; // d(w^2)/dw at 1
        opt.step(&mut params, &grads, 0.1, &cfg);

        let (b1, b2, eps, wd, lr, g, w0): (f64, f64, f64, f64, f64, f64, f64) =
            (0.9, 0.999, 1e-8, 0.01, 0.1, 2.0, 1.0);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expect = w0 - lr * (m_hat / (v_hat.sqrt() + eps) + wd * w0);
        let got = params.get("w").data()[0];
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn adamw_two_steps_track_moments() {
        let mut cfg = TrainConfig::default_for(Modality::Kp);
        cfg.weight_decay = 0.0;
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&params);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
        let mut w = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for step in 1..=2 {
            let g = 2.0 * w;
            opt.step(&mut params, &[Tensor::scalar(g)], lr, &cfg);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(step));
            let v_hat = v / (1.0 - b2.powi(step));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((params.get("w").data()[0] - w).abs() < 1e-12);
        }
    }
}
