//! Core data types: alphabets, label sequences, clips, packed/padded batches,
//! and dataset manifest loading.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index reserved for the CTC blank symbol. Labels occupy indices
/// `1..=symbols.len()`.
pub const BLANK: usize = 0;

/// Finite character set. Class index 0 is the blank and is not a member of
/// `symbols`; symbol `i` of the alphabet maps to class index `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(Error::Config("alphabet must be non-empty".into()));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::Config(format!("alphabet has duplicate symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols })
    }

    pub fn from_str_symbols(s: &str) -> Result<Self> {
        Self::new(s.chars())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of CTC classes: symbols plus the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + 1)
    }

    pub fn symbol(&self, class_index: usize) -> Option<char> {
        if class_index == BLANK {
            return None;
        }
        self.symbols.get(class_index - 1).copied()
    }

    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        let mut chars = Vec::with_capacity(text.chars().count());
        for c in text.chars() {
            match self.index_of(c) {
                Some(i) => chars.push(i),
                None => {
                    return Err(Error::Data(format!(
                        "character {c:?} is not in the alphabet"
                    )))
                }
            }
        }
        Ok(LabelSequence { chars })
    }

    pub fn decode(&self, label: &LabelSequence) -> String {
        label
            .chars
            .iter()
            .filter_map(|&i| self.symbol(i))
            .collect()
    }
}

/// Ground-truth character indices (no blanks, possibly empty).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelSequence {
    chars: Vec<usize>,
}

impl LabelSequence {
    pub fn new(chars: Vec<usize>, alphabet: &Alphabet) -> Result<Self> {
        for &c in &chars {
            if c == BLANK || c >= alphabet.num_classes() {
                return Err(Error::Data(format!("invalid label index {c}")));
            }
        }
        Ok(LabelSequence { chars })
    }

    /// For decoder outputs whose indices are valid by construction.
    pub fn from_indices_unchecked(chars: Vec<usize>) -> Self {
        LabelSequence { chars }
    }

    pub fn indices(&self) -> &[usize] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

/// RGB frame sequence, laid out (T, C, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameClip<S> {
    pub frames: Tensor<S>,
}

impl<S: Scalar> FrameClip<S> {
    pub fn new(frames: Tensor<S>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::Shape(format!(
                "frame clip must be (T, C, H, W), got {:?}",
                frames.shape()
            )));
        }
        if frames.shape()[0] == 0 {
            return Err(Error::Shape("frame clip must have T >= 1".into()));
        }
        Ok(FrameClip { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }
}

/// Named keypoint blocks within the K axis, plus the left/right pose pairs
/// used by horizontal flipping. The default is the 54-point layout:
/// left hand 0..21, right hand 21..42, pose 42..54.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeypointLayout {
    pub left_hand: std::ops::Range<usize>,
    pub right_hand: std::ops::Range<usize>,
    pub pose: std::ops::Range<usize>,
    /// Pose-local index pairs swapped by a horizontal flip.
    pub pose_pairs: Vec<(usize, usize)>,
}

impl KeypointLayout {
    pub fn default_54() -> Self {
        KeypointLayout {
            left_hand: 0..21,
            right_hand: 21..42,
            pose: 42..54,
            pose_pairs: vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11)],
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.pose.end
    }

    pub fn validate(&self) -> Result<()> {
        if self.left_hand.end != self.right_hand.start
            || self.right_hand.end != self.pose.start
            || self.left_hand.len() != self.right_hand.len()
        {
            return Err(Error::Config(
                "keypoint layout blocks must be contiguous with equal-size hand blocks".into(),
            ));
        }
        for &(a, b) in &self.pose_pairs {
            if a >= self.pose.len() || b >= self.pose.len() {
                return Err(Error::Config(format!(
                    "pose pair ({a}, {b}) outside pose block of {} points",
                    self.pose.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame keypoint coordinates, laid out (T, K, 3) with the last axis
/// ordered (x, y, z). Absent keypoints are exactly (0, 0, 0); raw clips may
/// contain NaN until `fill_missing` runs.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointClip<S> {
    pub coords: Tensor<S>,
    pub layout: KeypointLayout,
}

impl<S: Scalar> KeypointClip<S> {
    pub fn new(coords: Tensor<S>, layout: KeypointLayout) -> Result<Self> {
        if coords.rank() != 3 || coords.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "keypoint clip must be (T, K, 3), got {:?}",
                coords.shape()
            )));
        }
        if coords.shape()[0] == 0 {
            return Err(Error::Shape("keypoint clip must have T >= 1".into()));
        }
        if coords.shape()[1] != layout.num_keypoints() {
            return Err(Error::Shape(format!(
                "clip has K = {} but layout expects {}",
                coords.shape()[1],
                layout.num_keypoints()
            )));
        }
        Ok(KeypointClip { coords, layout })
    }

    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_keypoints(&self) -> usize {
        self.coords.shape()[1]
    }

    /// Flat index of coordinate `c` of keypoint `k` in frame `t`.
    #[inline]
    pub fn at(&self, t: usize, k: usize, c: usize) -> usize {
        (t * self.num_keypoints() + k) * 3 + c
    }

    pub fn has_nan(&self) -> bool {
        self.coords.data().iter().any(|x| x.is_nan())
    }

    /// A keypoint is "present" when it is not exactly (0, 0, 0).
    pub fn is_present(&self, t: usize, k: usize) -> bool {
        let i = self.at(t, k, 0);
        let d = self.coords.data();
        !(d[i] == S::zero() && d[i + 1] == S::zero() && d[i + 2] == S::zero())
    }
}

/// Frames of several videos concatenated along one axis plus the per-video
/// length list; no padding frames exist anywhere in this layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedFrameBatch<S> {
    pub frames: Tensor<S>,
    pub lengths: Vec<usize>,
}

impl<S: Scalar> PackedFrameBatch<S> {
    pub fn total_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_sequences(&self) -> usize {
        self.lengths.len()
    }

    /// Frame row range of sequence `i`.
    pub fn sequence_range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.lengths[..i].iter().sum();
        start..start + self.lengths[i]
    }

    /// Copy sequence `i` back out as a (T_i, C, H, W) tensor.
    pub fn sequence(&self, i: usize) -> Tensor<S> {
        let r = self.sequence_range(i);
        let shape = self.frames.shape();
        let per_frame = shape[1] * shape[2] * shape[3];
        let data = self.frames.data()[r.start * per_frame..r.end * per_frame].to_vec();
        Tensor::from_vec(&[r.len(), shape[1], shape[2], shape[3]], data)
    }
}

/// Build a packed batch from clips; order and frame contents are preserved.
pub fn pack_batch<S: Scalar>(clips: &[FrameClip<S>]) -> Result<PackedFrameBatch<S>> {
    if clips.is_empty() {
        return Err(Error::Shape("pack_batch: empty clip list".into()));
    }
    let (c, h, w) = (clips[0].channels(), clips[0].height(), clips[0].width());
    for (i, clip) in clips.iter().enumerate() {
        if (clip.channels(), clip.height(), clip.width()) != (c, h, w) {
            return Err(Error::Shape(format!(
                "pack_batch: clip {i} has shape {:?}, expected (_, {c}, {h}, {w})",
                clip.frames.shape()
            )));
        }
    }
    let lengths: Vec<usize> = clips.iter().map(|cl| cl.len()).collect();
    let total: usize = lengths.iter().sum();
    let mut data = Vec::with_capacity(total * c * h * w);
    for clip in clips {
        data.extend_from_slice(clip.frames.data());
    }
    Ok(PackedFrameBatch {
        frames: Tensor::from_vec(&[total, c, h, w], data),
        lengths,
    })
}

/// Slice a packed batch back into its clips (bitwise-faithful inverse of
/// `pack_batch`).
pub fn unpack_batch<S: Scalar>(batch: &PackedFrameBatch<S>) -> Vec<FrameClip<S>> {
    let shape = batch.frames.shape();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let per_frame = c * h * w;
    let mut out = Vec::with_capacity(batch.lengths.len());
    let mut offset = 0;
    for &len in &batch.lengths {
        let data = batch.frames.data()[offset * per_frame..(offset + len) * per_frame].to_vec();
        out.push(FrameClip {
            frames: Tensor::from_vec(&[len, c, h, w], data),
        });
        offset += len;
    }
    out
}

/// Keypoint clips stacked to (bs, 3, N, K) with zero padding past each clip's
/// true length.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedKeypointBatch<S> {
    pub coords: Tensor<S>,
    pub lengths: Vec<usize>,
}

impl<S: Scalar> PaddedKeypointBatch<S> {
    pub fn batch_size(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn padded_len(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn num_keypoints(&self) -> usize {
        self.coords.shape()[3]
    }
}

/// Pad to the longest clip in the batch.
pub fn pad_keypoint_batch<S: Scalar>(clips: &[KeypointClip<S>]) -> Result<PaddedKeypointBatch<S>> {
    let n = clips.iter().map(|c| c.len()).max().unwrap_or(0);
    pad_keypoint_batch_to(clips, n)
}

/// Pad to an explicit length `n >= max clip length`. The channel axis is
/// reordered to (3, N, K): channel 0 = x, 1 = y, 2 = z.
pub fn pad_keypoint_batch_to<S: Scalar>(
    clips: &[KeypointClip<S>],
    n: usize,
) -> Result<PaddedKeypointBatch<S>> {
    if clips.is_empty() {
        return Err(Error::Shape("pad_keypoint_batch: empty clip list".into()));
    }
    let k = clips[0].num_keypoints();
    for (i, clip) in clips.iter().enumerate() {
        if clip.num_keypoints() != k {
            return Err(Error::Shape(format!(
                "pad_keypoint_batch: clip {i} has K = {}, expected {k}",
                clip.num_keypoints()
            )));
        }
        if clip.len() > n {
            return Err(Error::Shape(format!(
                "pad_keypoint_batch: clip {i} is longer ({}) than padded length {n}",
                clip.len()
            )));
        }
    }
    let bs = clips.len();
    let mut out = Tensor::zeros(&[bs, 3, n, k]);
    {
        let data = out.data_mut();
        for (b, clip) in clips.iter().enumerate() {
            let src = clip.coords.data();
            for t in 0..clip.len() {
                for kp in 0..k {
                    for c in 0..3 {
                        data[((b * 3 + c) * n + t) * k + kp] = src[(t * k + kp) * 3 + c];
                    }
                }
            }
        }
    }
    Ok(PaddedKeypointBatch {
        coords: out,
        lengths: clips.iter().map(|c| c.len()).collect(),
    })
}

/// Per-frame feature vectors (T, F) emitted by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<S> {
    pub features: Tensor<S>,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(features: Tensor<S>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Shape(format!(
                "feature sequence must be (T, F), got {:?}",
                features.shape()
            )));
        }
        Ok(FeatureSequence { features })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Clip path, resolved relative to the manifest's directory.
    pub path: PathBuf,
    pub label: LabelSequence,
    pub label_text: String,
}

/// Load a TSV manifest: `sample_id <TAB> relative path <TAB> label`.
/// Entries come back in file order; labels are validated against the
/// alphabet and referenced files are checked for existence.
pub fn load_manifest(path: &Path, alphabet: &Alphabet) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let sample_id = fields[0].to_string();
        let clip_path = base.join(fields[1]);
        if !clip_path.exists() {
            return Err(Error::MissingClipFile {
                sample_id,
                path: clip_path,
            });
        }
        let label = alphabet.encode(fields[2]).map_err(|_| {
            let bad = fields[2]
                .chars()
                .find(|&c| alphabet.index_of(c).is_none())
                .unwrap_or('?');
            Error::UnknownLabelChar {
                sample_id: sample_id.clone(),
                ch: bad,
            }
        })?;
        entries.push(ManifestEntry {
            sample_id,
            path: clip_path,
            label,
            label_text: fields[2].to_string(),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_of_len<S: Scalar>(t: usize, c: usize, h: usize, w: usize, base: f64) -> FrameClip<S> {
        let n = t * c * h * w;
        let data = (0..n).map(|i| S::from_f(base + i as f64)).collect();
        FrameClip::new(Tensor::from_vec(&[t, c, h, w], data)).unwrap()
    }

    #[test]
    fn alphabet_blank_and_indexing() {
        let a = Alphabet::from_str_symbols("abc").unwrap();
        assert_eq!(a.num_classes(), 4);
        assert_eq!(a.index_of('a'), Some(1));
        assert_eq!(a.index_of('c'), Some(3));
        assert_eq!(a.symbol(BLANK), None);
        let label = a.encode("cab").unwrap();
        assert_eq!(label.indices(), &[3, 1, 2]);
        assert_eq!(a.decode(&label), "cab");
        assert!(Alphabet::from_str_symbols("aba").is_err());
        assert!(Alphabet::from_str_symbols("").is_err());
    }

    #[test]
    fn pack_batch_two_clips() {
        // two clips of lengths 3 and 2 -> bs = 5, L = [3, 2]
        let clips = vec![
            clip_of_len::<f64>(3, 1, 2, 2, 0.0),
            clip_of_len::<f64>(2, 1, 2, 2, 100.0),
        ];
        let packed = pack_batch(&clips).unwrap();
        assert_eq!(packed.total_frames(), 5);
        assert_eq!(packed.lengths, vec![3, 2]);
    }

    #[test]
    fn pack_batch_singleton() {
        let clips = vec![clip_of_len::<f64>(1, 3, 2, 2, 0.0)];
        let packed = pack_batch(&clips).unwrap();
        assert_eq!(packed.total_frames(), 1);
        assert_eq!(packed.lengths, vec![1]);
    }

    #[test]
    fn pack_batch_index_bookkeeping() {
        // lengths [4, 1, 7] -> bs = 12; frames 0-3 from clip 0, 4 from clip 1,
        // 5-11 from clip 2
        let clips = vec![
            clip_of_len::<f64>(4, 1, 1, 1, 0.0),
            clip_of_len::<f64>(1, 1, 1, 1, 50.0),
            clip_of_len::<f64>(7, 1, 1, 1, 90.0),
        ];
        let packed = pack_batch(&clips).unwrap();
        assert_eq!(packed.total_frames(), 12);
        assert_eq!(packed.sequence_range(0), 0..4);
        assert_eq!(packed.sequence_range(1), 4..5);
        assert_eq!(packed.sequence_range(2), 5..12);
        assert_eq!(packed.frames.data()[4], 50.0);
        assert_eq!(packed.frames.data()[5], 90.0);
        assert_eq!(packed.frames.data()[11], 96.0);
    }

    #[test]
    fn pack_batch_errors() {
        assert!(pack_batch::<f64>(&[]).is_err());
        let clips = vec![
            clip_of_len::<f64>(2, 1, 2, 2, 0.0),
            clip_of_len::<f64>(2, 1, 3, 2, 0.0),
        ];
        assert!(pack_batch(&clips).is_err());
    }

    #[test]
    fn pack_then_unpack_is_identity() {
        let clips = vec![
            clip_of_len::<f64>(3, 2, 2, 2, 0.5),
            clip_of_len::<f64>(5, 2, 2, 2, -7.25),
            clip_of_len::<f64>(1, 2, 2, 2, 3.0),
        ];
        let packed = pack_batch(&clips).unwrap();
        let back = unpack_batch(&packed);
        assert_eq!(clips, back);
        let total: usize = packed.lengths.iter().sum();
        assert_eq!(total, packed.total_frames());
    }

    fn kp_clip<S: Scalar>(t: usize, fill: f64) -> KeypointClip<S> {
        let layout = KeypointLayout::default_54();
        let k = layout.num_keypoints();
        let data = (0..t * k * 3)
            .map(|i| S::from_f(fill + (i % 17) as f64 * 0.01))
            .collect();
        KeypointClip::new(Tensor::from_vec(&[t, k, 3], data), layout).unwrap()
    }

    #[test]
    fn pad_keypoint_batch_shapes_and_zeroing() {
        // lengths [5, 3] -> (2, 3, 5, 54); clip 1 frames 3-4 all zero
        let clips = vec![kp_clip::<f64>(5, 0.1), kp_clip::<f64>(3, 0.2)];
        let padded = pad_keypoint_batch(&clips).unwrap();
        assert_eq!(padded.coords.shape(), &[2, 3, 5, 54]);
        assert_eq!(padded.lengths, vec![5, 3]);
        let d = padded.coords.data();
        let (n, k) = (5, 54);
        for c in 0..3 {
            for t in 3..5 {
                for kp in 0..k {
                    assert_eq!(d[((1 * 3 + c) * n + t) * k + kp], 0.0);
                }
            }
        }
    }

    #[test]
    fn pad_keypoint_batch_single_clip_no_padding() {
        let clips = vec![kp_clip::<f64>(7, 0.3)];
        let padded = pad_keypoint_batch(&clips).unwrap();
        assert_eq!(padded.coords.shape(), &[1, 3, 7, 54]);
    }

    #[test]
    fn pad_keypoint_batch_axis_transpose() {
        // one keypoint at (0.2, 0.5, 0.1): channel 0 holds x, 1 holds y, 2 holds z
        let layout = KeypointLayout::default_54();
        let k = layout.num_keypoints();
        let mut data = vec![0.0f64; k * 3];
        data[7 * 3] = 0.2;
        data[7 * 3 + 1] = 0.5;
        data[7 * 3 + 2] = 0.1;
        let clip = KeypointClip::new(Tensor::from_vec(&[1, k, 3], data), layout).unwrap();
        let padded = pad_keypoint_batch(&[clip]).unwrap();
        let d = padded.coords.data();
        assert_eq!(d[(0 * 1 + 0) * k + 7], 0.2); // channel 0
        assert_eq!(d[(1 * 1 + 0) * k + 7], 0.5); // channel 1
        assert_eq!(d[(2 * 1 + 0) * k + 7], 0.1); // channel 2
    }

    #[test]
    fn pad_keypoint_batch_idempotent_on_maximal() {
        let clips = vec![kp_clip::<f64>(4, 0.1), kp_clip::<f64>(4, 0.9)];
        let a = pad_keypoint_batch(&clips).unwrap();
        let b = pad_keypoint_batch_to(&clips, a.padded_len()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("kp")).unwrap();
        std::fs::write(dir.path().join("kp/s1.kpc"), b"x").unwrap();
        std::fs::write(dir.path().join("kp/s2.kpc"), b"x").unwrap();
        let manifest = dir.path().join("train.tsv");
        std::fs::write(&manifest, "s1\tkp/s1.kpc\tbeach\ns2\tkp/s2.kpc\t\n").unwrap();
        let alphabet = Alphabet::from_str_symbols("abcehy").unwrap();
        let entries = load_manifest(&manifest, &alphabet).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].sample_id, "s1");
        assert_eq!(
            entries[0].label.indices(),
            &[
                alphabet.index_of('b').unwrap(),
                alphabet.index_of('e').unwrap(),
                alphabet.index_of('a').unwrap(),
                alphabet.index_of('c').unwrap(),
                alphabet.index_of('h').unwrap()
            ]
        );
        // empty label field is legal
        assert_eq!(entries[1].label.len(), 0);
    }

    #[test]
    fn manifest_unknown_char_names_sample_and_char() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s1.kpc"), b"x").unwrap();
        let manifest = dir.path().join("m.tsv");
        std::fs::write(&manifest, "s1\ts1.kpc\tabz\n").unwrap();
        let alphabet = Alphabet::from_str_symbols("ab").unwrap();
        match load_manifest(&manifest, &alphabet) {
            Err(Error::UnknownLabelChar { sample_id, ch }) => {
                assert_eq!(sample_id, "s1");
                assert_eq!(ch, 'z');
            }
            other => panic!("expected UnknownLabelChar, got {other:?}"),
        }
    }

    #[test]
    fn manifest_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.tsv");
        std::fs::write(&manifest, "s1\tnope.kpc\tab\n").unwrap();
        let alphabet = Alphabet::from_str_symbols("ab").unwrap();
        assert!(matches!(
            load_manifest(&manifest, &alphabet),
            Err(Error::MissingClipFile { .. })
        ));
    }
}
