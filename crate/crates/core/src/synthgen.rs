//! Deterministic synthetic fingerspelling generator: paired keypoint clips,
//! rendered frame clips, and labels, fully determined by (word, config, seed).
//!
//! Each letter maps to a fixed prototype keypoint configuration. A clip holds
//! each letter's prototype for a sampled duration and linearly interpolates
//! between letters, with Gaussian coordinate noise on top. Between adjacent
//! repeated letters the path detours through a dedicated rest pose, so a
//! frame-level classifier (and a CTC model) can separate the repetition.
//!
//! Prototype sampling rejects candidate sets until every achievable
//! transition point classifies to one of its two endpoints, which makes the
//! generator self-consistent: at sigma = 0 a nearest-prototype frame
//! classifier plus CTC collapse recovers the label exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::datamodel::{Alphabet, FrameClip, KeypointClip, KeypointLayout, LabelSequence};
use crate::error::{Error, Result};
use crate::fileio;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub alphabet_size: usize,
    pub word_len: (usize, usize),
    pub frames_per_letter: (usize, usize),
    pub transition_frames: (usize, usize),
    /// Coordinate noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
    /// Rendered frame height and width.
    pub frame_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet_size: 6,
            word_len: (2, 5),
            frames_per_letter: (3, 8),
            transition_frames: (1, 3),
            sigma: 0.01,
            seed: 7,
            frame_size: 32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size == 0 || self.alphabet_size > 26 {
            return Err(Error::Config(format!(
                "synth: alphabet size {} outside 1..=26",
                self.alphabet_size
            )));
        }
        for (name, (lo, hi)) in [
            ("word_len", self.word_len),
            ("frames_per_letter", self.frames_per_letter),
            ("transition_frames", self.transition_frames),
        ] {
            if lo > hi || lo == 0 && name != "transition_frames" {
                return Err(Error::Config(format!(
                    "synth: {name} range ({lo}, {hi}) invalid"
                )));
            }
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("synth: sigma must be >= 0".into()));
        }
        if self.frame_size < 8 {
            return Err(Error::Config("synth: frame_size must be >= 8".into()));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Alphabet {
        let letters: String = ('a'..).take(self.alphabet_size).collect();
        Alphabet::from_str_symbols(&letters).expect("synthetic alphabet")
    }
}

const K: usize = 54;
const COORDS: usize = K * 3;
/// Required pairwise prototype separation floor (L2 over all coordinates).
const MIN_SEPARATION: f64 = 1.0;
/// Margin by which a transition point must prefer its endpoint cells.
const CELL_MARGIN: f64 = 0.05;

/// Letter prototypes plus one rest pose (index `alphabet_size`) used between
/// repeated letters; the rest pose plays the role of the CTC blank for the
/// nearest-prototype classifier.
#[derive(Clone, Debug)]
pub struct LetterPrototypes {
    protos: Vec<Vec<f64>>,
}

impl LetterPrototypes {
    pub fn rest_index(&self) -> usize {
        self.protos.len() - 1
    }

    pub fn letter(&self, idx: usize) -> &[f64] {
        &self.protos[idx]
    }

    /// Nearest prototype (letters and rest); ties go to the lowest index.
    pub fn classify_frame(&self, frame: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.protos.iter().enumerate() {
            let d = dist2(p, frame);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Classify every frame, then CTC-collapse (drop consecutive repeats,
    /// then rest frames). Returns 0-based letter indices.
    pub fn classify_clip_collapsed<S: Scalar>(&self, clip: &KeypointClip<S>) -> Vec<usize> {
        let rest = self.rest_index();
        let mut out = Vec::new();
        let mut prev = usize::MAX;
        for t in 0..clip.len() {
            let frame: Vec<f64> = clip.coords.data()[t * COORDS..(t + 1) * COORDS]
                .iter()
                .map(|v| v.to_f())
                .collect();
            let c = self.classify_frame(&frame);
            if c != prev && c != rest {
                out.push(c);
            }
            prev = c;
        }
        out
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lerp(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x + alpha * (y - x))
        .collect()
}

/// Achievable interpolation positions for transition counts in `lo..=hi`
/// (frame j of an R-frame transition sits at alpha = j / (R + 1)).
fn achievable_alphas(lo: usize, hi: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in lo.max(1)..=hi.max(1) {
        for j in 1..=r {
            let a = j as f64 / (r + 1) as f64;
            if !out.iter().any(|&x: &f64| (x - a).abs() < 1e-12) {
                out.push(a);
            }
        }
    }
    out
}

/// Sample prototypes until the whole set is classification-safe:
/// pairwise separation, and every achievable transition point nearest to its
/// own endpoints by `CELL_MARGIN` (exactly-equidistant endpoint pairs are
/// allowed; they collapse correctly either way).
pub fn letter_prototypes(cfg: &SynthConfig) -> Result<LetterPrototypes> {
    cfg.validate()?;
    let n = cfg.alphabet_size + 1; // letters + rest pose
    let min_sep = MIN_SEPARATION.max(5.0 * cfg.sigma);
    let alphas = achievable_alphas(cfg.transition_frames.0, cfg.transition_frames.1);
    let mut r = rng::stream(cfg.seed, "synth:prototypes");
    'attempt: for _ in 0..1000 {
        let protos: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..K)
                    .flat_map(|_| {
                        let x = r.gen_range(0.2..0.8);
                        let y = r.gen_range(0.2..0.8);
                        let z = r.gen_range(0.0..0.1);
                        [x, y, z]
                    })
                    .collect()
            })
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                if dist2(&protos[i], &protos[j]).sqrt() < min_sep {
                    continue 'attempt;
                }
            }
        }
        // letter -> letter transition points stay in {a, b} cells
        let rest = n - 1;
        for a in 0..rest {
            for b in 0..rest {
                if a == b {
                    continue;
                }
                for &alpha in &alphas {
                    if !point_is_endpoint_safe(&protos, &lerp(&protos[a], &protos[b], alpha), a, b)
                    {
                        continue 'attempt;
                    }
                }
            }
        }
        // repeat detour: points on the a -> rest leg stay in {a, rest} cells
        for a in 0..rest {
            for beta in [0.5, 2.0 / 3.0, 1.0] {
                if !point_is_endpoint_safe(&protos, &lerp(&protos[a], &protos[rest], beta), a, rest)
                {
                    continue 'attempt;
                }
            }
        }
        return Ok(LetterPrototypes { protos });
    }
    Err(Error::Numeric(
        "synth: could not sample a classification-safe prototype set".into(),
    ))
}

fn point_is_endpoint_safe(protos: &[Vec<f64>], point: &[f64], a: usize, b: usize) -> bool {
    let da = dist2(&protos[a], point).sqrt();
    let db = dist2(&protos[b], point).sqrt();
    let nearest_endpoint = da.min(db);
    for (i, p) in protos.iter().enumerate() {
        if i == a || i == b {
            continue;
        }
        if dist2(p, point).sqrt() < nearest_endpoint + CELL_MARGIN {
            return false;
        }
    }
    true
}

fn gaussian(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u1: f64 = r.gen_range(1e-300..1.0);
    let u2: f64 = r.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate one sample. Fully determined by (word, cfg, seed).
pub fn generate_sample<S: Scalar>(
    word: &str,
    cfg: &SynthConfig,
    protos: &LetterPrototypes,
    seed: u64,
) -> Result<(KeypointClip<S>, FrameClip<S>, LabelSequence)> {
    cfg.validate()?;
    let alphabet = cfg.alphabet();
    let letters: Vec<usize> = word
        .chars()
        .map(|c| {
            alphabet
                .index_of(c)
                .map(|i| i - 1)
                .ok_or_else(|| Error::Data(format!("synth: unknown letter {c:?} in {word:?}")))
        })
        .collect::<Result<_>>()?;
    if letters.is_empty() {
        return Err(Error::Data("synth: empty word".into()));
    }
    let mut r = rng::stream(seed, &format!("synth:sample:{word}"));
    let rest = protos.rest_index();

    let draw = |r: &mut rand_chacha::ChaCha8Rng, (lo, hi): (usize, usize)| -> usize {
        if lo == hi {
            lo
        } else {
            r.gen_range(lo..=hi)
        }
    };

    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (i, &letter) in letters.iter().enumerate() {
        let hold = draw(&mut r, cfg.frames_per_letter);
        for _ in 0..hold {
            frames.push(protos.letter(letter).to_vec());
        }
        if i + 1 < letters.len() {
            let trans = draw(&mut r, cfg.transition_frames);
            let next = letters[i + 1];
            for j in 1..=trans {
                let alpha = j as f64 / (trans + 1) as f64;
                let frame = if next == letter {
                    // repeated letter: detour through the rest pose
                    let beta = if alpha <= 0.5 { 2.0 * alpha } else { 2.0 - 2.0 * alpha };
                    lerp(protos.letter(letter), protos.letter(rest), beta)
                } else {
                    lerp(protos.letter(letter), protos.letter(next), alpha)
                };
                frames.push(frame);
            }
        }
    }
    // Gaussian coordinate noise, clamped clear of the absent-keypoint zero
    for frame in &mut frames {
        for v in frame.iter_mut() {
            *v = (*v + cfg.sigma * gaussian(&mut r)).clamp(1e-3, 1.0 - 1e-3);
        }
    }

    let t = frames.len();
    let kp_data: Vec<S> = frames
        .iter()
        .flat_map(|f| f.iter().map(|&v| S::from_f(v as f32 as f64)))
        .collect();
    let kp = KeypointClip::new(
        Tensor::from_vec(&[t, K, 3], kp_data),
        KeypointLayout::default_54(),
    )?;
    let fr = render_frames(&frames, cfg.frame_size)?;
    let label = alphabet.encode(word)?;
    Ok((kp, fr, label))
}

/// Rasterize keypoints as soft discs on a blank canvas: left hand in channel
/// 0, right hand in channel 1, pose in channel 2. Disc brightness encodes
/// depth (nearer keypoints render brighter), so the z coordinate survives
/// the projection to pixels.
fn render_frames<S: Scalar>(frames: &[Vec<f64>], size: usize) -> Result<FrameClip<S>> {
    let layout = KeypointLayout::default_54();
    let t = frames.len();
    let radius = (size as f64 / 16.0).max(1.5);
    let mut data = vec![0.0f64; t * 3 * size * size];
    for (ti, frame) in frames.iter().enumerate() {
        for kp in 0..K {
            let channel = if layout.left_hand.contains(&kp) {
                0
            } else if layout.right_hand.contains(&kp) {
                1
            } else {
                2
            };
            let depth = frame[kp * 3 + 2].clamp(0.0, 0.1);
            let peak = 1.0 - 5.0 * depth; // z in [0, 0.1] -> brightness in [0.5, 1]
            let cx = frame[kp * 3] * (size - 1) as f64;
            let cy = frame[kp * 3 + 1] * (size - 1) as f64;
            let x_lo = ((cx - radius).floor().max(0.0)) as usize;
            let x_hi = ((cx + radius).ceil().min((size - 1) as f64)) as usize;
            let y_lo = ((cy - radius).floor().max(0.0)) as usize;
            let y_hi = ((cy + radius).ceil().min((size - 1) as f64)) as usize;
            let plane = (ti * 3 + channel) * size * size;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let v = peak * (1.0 - d / radius).max(0.0);
                    let cell = &mut data[plane + y * size + x];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    FrameClip::new(Tensor::from_vec(
        &[t, 3, size, size],
        data.iter().map(|&v| S::from_f(v as f32 as f64)).collect(),
    ))
}

/// Sample `count` distinct words from the configured length range.
pub fn sample_distinct_words(cfg: &SynthConfig, count: usize) -> Result<Vec<String>> {
    let letters: Vec<char> = ('a'..).take(cfg.alphabet_size).collect();
    let total: usize = (cfg.word_len.0..=cfg.word_len.1)
        .map(|l| cfg.alphabet_size.saturating_pow(l as u32))
        .sum();
    if count > total {
        return Err(Error::Data(format!(
            "synth: requested {count} distinct words but only {total} exist"
        )));
    }
    let mut r = rng::stream(cfg.seed, "synth:words");
    if total <= 2_000_000 {
        let mut all = Vec::with_capacity(total);
        for len in cfg.word_len.0..=cfg.word_len.1 {
            let mut idx = vec![0usize; len];
            loop {
                all.push(idx.iter().map(|&i| letters[i]).collect::<String>());
                let mut pos = len;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < letters.len() {
                        break;
                    }
                    idx[pos] = 0;
                }
                if idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        all.shuffle(&mut r);
        all.truncate(count);
        Ok(all)
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let len = r.gen_range(cfg.word_len.0..=cfg.word_len.1);
            let w: String = (0..len).map(|_| letters[r.gen_range(0..letters.len())]).collect();
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        Ok(out)
    }
}

pub struct DatasetPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Generate a train/test dataset with disjoint word lists, writing clip files
/// and manifests under `out_dir`. Re-running with the same config reproduces
/// every byte.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n_train: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<DatasetPaths> {
    cfg.validate()?;
    let protos = letter_prototypes(cfg)?;
    let words = sample_distinct_words(cfg, n_train + n_test)?;
    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    let mut manifests = [String::new(), String::new()];
    for (i, word) in words.iter().enumerate() {
        let (kp, fr, _label) = generate_sample::<f32>(word, cfg, &protos, cfg.seed)?;
        let id = format!("s{i:05}");
        fileio::write_keypoint_clip(&clips_dir.join(format!("{id}.kpc")), &kp)?;
        fileio::write_frame_clip(&clips_dir.join(format!("{id}.frc")), &fr)?;
        let split = usize::from(i >= n_train);
        manifests[split].push_str(&format!("{id}\tclips/{id}.kpc\t{word}\n"));
    }
    let train_manifest = out_dir.join("train.tsv");
    let test_manifest = out_dir.join("test.tsv");
    std::fs::write(&train_manifest, &manifests[0]).map_err(|e| Error::io(&train_manifest, e))?;
    std::fs::write(&test_manifest, &manifests[1]).map_err(|e| Error::io(&test_manifest, e))?;
    Ok(DatasetPaths {
        train_manifest,
        test_manifest,
    })
}
