//! Missing-value handling and the training augmentation suite for both
//! modalities.
//!
//! Every augmentation preserves the label and (except resampling) all tensor
//! shapes. Absent keypoints are exactly (0, 0, 0) and stay that way through
//! every keypoint transform. The deterministic cores take explicit
//! parameters; `apply_pipeline` draws parameters from a seeded stream.

use rand::Rng;

use crate::datamodel::{FrameClip, KeypointClip};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-augmentation parameter ranges and application probabilities.
/// Defaults follow the training recipe; `modality` gating lives in
/// `apply_pipeline`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub resample_prob: f64,
    pub resample_range: (f64, f64),
    pub affine_prob: f64,
    pub affine_scale: (f64, f64),
    pub affine_shear: (f64, f64),
    pub affine_shift: (f64, f64),
    pub affine_degrees: (f64, f64),
    pub temporal_mask_prob: f64,
    pub temporal_mask_size: (f64, f64),
    pub spatial_mask_prob: f64,
    pub spatial_mask_size: (f64, f64),
    pub hflip_prob: f64,
    pub rotation_prob: f64,
    pub rotation_degrees: (f64, f64),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            resample_prob: 0.8,
            resample_range: (0.5, 1.5),
            affine_prob: 0.75,
            affine_scale: (0.8, 1.2),
            affine_shear: (-0.15, 0.15),
            affine_shift: (-0.1, 0.1),
            affine_degrees: (-30.0, 30.0),
            temporal_mask_prob: 0.5,
            temporal_mask_size: (0.2, 0.4),
            spatial_mask_prob: 0.5,
            spatial_mask_size: (0.05, 0.1),
            hflip_prob: 0.5,
            rotation_prob: 0.5,
            rotation_degrees: (-10.0, 10.0),
        }
    }
}

impl AugmentSpec {
    /// All probabilities zero: the pipeline is the identity.
    pub fn disabled() -> Self {
        AugmentSpec {
            resample_prob: 0.0,
            affine_prob: 0.0,
            temporal_mask_prob: 0.0,
            spatial_mask_prob: 0.0,
            hflip_prob: 0.0,
            rotation_prob: 0.0,
            ..AugmentSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("resample", self.resample_prob),
            ("spatial_affine", self.affine_prob),
            ("temporal_mask", self.temporal_mask_prob),
            ("spatial_mask", self.spatial_mask_prob),
            ("horizontal_flip", self.hflip_prob),
            ("rotation", self.rotation_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "augment.{name}: probability {p} outside [0, 1]"
                )));
            }
        }
        let ranges = [
            ("resample", self.resample_range),
            ("scale", self.affine_scale),
            ("shear", self.affine_shear),
            ("shift", self.affine_shift),
            ("degrees", self.affine_degrees),
            ("temporal_mask", self.temporal_mask_size),
            ("spatial_mask", self.spatial_mask_size),
            ("rotation", self.rotation_degrees),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::Config(format!(
                    "augment.{name}: range ({lo}, {hi}) not ordered"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// fill_missing
// ---------------------------------------------------------------------------

/// Replace every NaN coordinate with zero; finite values pass through.
pub fn fill_missing<S: Scalar>(clip: &KeypointClip<S>) -> KeypointClip<S> {
    KeypointClip {
        coords: clip
            .coords
            .map(|v| if v.is_nan() { S::zero() } else { v }),
        layout: clip.layout.clone(),
    }
}

// ---------------------------------------------------------------------------
// resample
// ---------------------------------------------------------------------------

/// Nearest-neighbor frame index mapping for rate-resampling:
/// `T' = max(1, round(T * rate))`, output frame t' reads input frame
/// `floor(t' * T / T')`.
pub fn resample_indices(t: usize, rate: f64) -> Result<Vec<usize>> {
    if !(0.5..=1.5).contains(&rate) {
        return Err(Error::Data(format!(
            "resample: rate {rate} outside [0.5, 1.5]"
        )));
    }
    let t_new = ((t as f64 * rate).round() as usize).max(1);
    Ok((0..t_new).map(|i| (i * t) / t_new).collect())
}

pub fn resample_keypoints<S: Scalar>(clip: &KeypointClip<S>, rate: f64) -> Result<KeypointClip<S>> {
    let idx = resample_indices(clip.len(), rate)?;
    Ok(select_kp_frames(clip, &idx))
}

pub fn resample_frames<S: Scalar>(clip: &FrameClip<S>, rate: f64) -> Result<FrameClip<S>> {
    let idx = resample_indices(clip.len(), rate)?;
    Ok(select_frames(clip, &idx))
}

fn select_kp_frames<S: Scalar>(clip: &KeypointClip<S>, idx: &[usize]) -> KeypointClip<S> {
    let k = clip.num_keypoints();
    let per = k * 3;
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&clip.coords.data()[i * per..(i + 1) * per]);
    }
    KeypointClip {
        coords: Tensor::from_vec(&[idx.len(), k, 3], data),
        layout: clip.layout.clone(),
    }
}

fn select_frames<S: Scalar>(clip: &FrameClip<S>, idx: &[usize]) -> FrameClip<S> {
    let s = clip.frames.shape();
    let per = s[1] * s[2] * s[3];
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&clip.frames.data()[i * per..(i + 1) * per]);
    }
    FrameClip {
        frames: Tensor::from_vec(&[idx.len(), s[1], s[2], s[3]], data),
    }
}

// ---------------------------------------------------------------------------
// spatial affine (keypoints)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub scale: f64,
    pub shear: f64,
    pub shift: (f64, f64),
    pub degrees: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            scale: 1.0,
            shear: 0.0,
            shift: (0.0, 0.0),
            degrees: 0.0,
        }
    }
}

/// Affine map on (x, y) about the centroid of present keypoints over the
/// whole clip (scale, then x-shear, then rotation, then shift); z untouched,
/// absent keypoints stay exactly zero.
pub fn spatial_affine<S: Scalar>(clip: &KeypointClip<S>, p: &AffineParams) -> KeypointClip<S> {
    let (cx, cy) = match present_centroid(clip) {
        Some(c) => c,
        None => return clip.clone(),
    };
    let theta = p.degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    // A = R(theta) * Shear_x(k) * (s * I)
    let a00 = p.scale * cos;
    let a01 = p.scale * (cos * p.shear - sin);
    let a10 = p.scale * sin;
    let a11 = p.scale * (sin * p.shear + cos);
    let mut out = clip.clone();
    let k = clip.num_keypoints();
    let data = out.coords.data_mut();
    for t in 0..clip.len() {
        for kp in 0..k {
            if !clip.is_present(t, kp) {
                continue;
            }
            let i = (t * k + kp) * 3;
            let x = data[i].to_f() - cx;
            let y = data[i + 1].to_f() - cy;
            data[i] = S::from_f(a00 * x + a01 * y + cx + p.shift.0);
            data[i + 1] = S::from_f(a10 * x + a11 * y + cy + p.shift.1);
        }
    }
    out
}

fn present_centroid<S: Scalar>(clip: &KeypointClip<S>) -> Option<(f64, f64)> {
    let k = clip.num_keypoints();
    let d = clip.coords.data();
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for t in 0..clip.len() {
        for kp in 0..k {
            if clip.is_present(t, kp) {
                let i = (t * k + kp) * 3;
                sx += d[i].to_f();
                sy += d[i + 1].to_f();
                n += 1;
            }
        }
    }
    if n == 0 {
        None
    } else {
        Some((sx / n as f64, sy / n as f64))
    }
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

/// Zero one contiguous window of `round(size * T)` frames starting at
/// `start`.
pub fn temporal_mask<S: Scalar>(
    clip: &KeypointClip<S>,
    size: f64,
    start: usize,
) -> KeypointClip<S> {
    let t = clip.len();
    let w = (size * t as f64).round() as usize;
    let w = w.min(t.saturating_sub(start));
    let k = clip.num_keypoints();
    let mut out = clip.clone();
    let data = out.coords.data_mut();
    for frame in start..start + w {
        for v in &mut data[frame * k * 3..(frame + 1) * k * 3] {
            *v = S::zero();
        }
    }
    out
}

/// Axis-aligned (x, y) box in relative coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl MaskBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x0 + self.side && y >= self.y0 && y <= self.y0 + self.side
    }
}

/// Zero every present keypoint whose (x, y) falls inside the box; the same
/// box applies across all frames.
pub fn spatial_mask<S: Scalar>(clip: &KeypointClip<S>, b: &MaskBox) -> KeypointClip<S> {
    let k = clip.num_keypoints();
    let mut out = clip.clone();
    let data = out.coords.data_mut();
    for t in 0..clip.len() {
        for kp in 0..k {
            let i = (t * k + kp) * 3;
            let (x, y) = (data[i].to_f(), data[i + 1].to_f());
            if b.contains(x, y) {
                data[i] = S::zero();
                data[i + 1] = S::zero();
                data[i + 2] = S::zero();
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// horizontal flip
// ---------------------------------------------------------------------------

/// Mirror x (x -> 1 - x) for present keypoints and swap the left/right hand
/// blocks plus the configured pose pairs. Absent keypoints stay (0, 0, 0).
pub fn horizontal_flip_keypoints<S: Scalar>(clip: &KeypointClip<S>) -> KeypointClip<S> {
    let layout = &clip.layout;
    let k = clip.num_keypoints();
    // destination slot of each source slot; an involution
    let mut dest: Vec<usize> = (0..k).collect();
    for j in 0..layout.left_hand.len() {
        dest[layout.left_hand.start + j] = layout.right_hand.start + j;
        dest[layout.right_hand.start + j] = layout.left_hand.start + j;
    }
    for &(a, b) in &layout.pose_pairs {
        dest[layout.pose.start + a] = layout.pose.start + b;
        dest[layout.pose.start + b] = layout.pose.start + a;
    }
    let src = clip.coords.data();
    let mut out = Tensor::zeros(clip.coords.shape());
    {
        let od = out.data_mut();
        for t in 0..clip.len() {
            for kp in 0..k {
                let si = (t * k + kp) * 3;
                let di = (t * k + dest[kp]) * 3;
                if clip.is_present(t, kp) {
                    od[di] = S::one() - src[si];
                    od[di + 1] = src[si + 1];
                    od[di + 2] = src[si + 2];
                }
                // absent keypoints leave the destination slot at (0,0,0)
            }
        }
    }
    KeypointClip {
        coords: out,
        layout: clip.layout.clone(),
    }
}

/// Column mirror; a pure permutation, so an exact involution.
pub fn horizontal_flip_frames<S: Scalar>(clip: &FrameClip<S>) -> FrameClip<S> {
    let s = clip.frames.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let src = clip.frames.data();
    let mut out = Tensor::zeros(s);
    {
        let od = out.data_mut();
        for i in 0..t * c * h {
            let row = i * w;
            for x in 0..w {
                od[row + x] = src[row + (w - 1 - x)];
            }
        }
    }
    FrameClip { frames: out }
}

// ---------------------------------------------------------------------------
// frame rotation
// ---------------------------------------------------------------------------

/// Bilinear rotation of every frame about the frame center; zero fill
/// outside the source. Shape preserved.
pub fn rotate_frames<S: Scalar>(clip: &FrameClip<S>, angle_deg: f64) -> FrameClip<S> {
    let s = clip.frames.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = clip.frames.data();
    let mut out = Tensor::zeros(s);
    {
        let od = out.data_mut();
        for ti in 0..t {
            for ch in 0..c {
                let plane = (ti * c + ch) * h * w;
                for y in 0..h {
                    for x in 0..w {
                        // inverse map: rotate output coords by -theta
                        let dx = x as f64 - cx;
                        let dy = y as f64 - cy;
                        let sx = cos * dx + sin * dy + cx;
                        let sy = -sin * dx + cos * dy + cy;
                        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                            continue;
                        }
                        let x0 = sx.floor() as usize;
                        let y0 = sy.floor() as usize;
                        let x1 = (x0 + 1).min(w - 1);
                        let y1 = (y0 + 1).min(h - 1);
                        let fx = sx - x0 as f64;
                        let fy = sy - y0 as f64;
                        let v00 = src[plane + y0 * w + x0].to_f();
                        let v01 = src[plane + y0 * w + x1].to_f();
                        let v10 = src[plane + y1 * w + x0].to_f();
                        let v11 = src[plane + y1 * w + x1].to_f();
                        let v = v00 * (1.0 - fx) * (1.0 - fy)
                            + v01 * fx * (1.0 - fy)
                            + v10 * (1.0 - fx) * fy
                            + v11 * fx * fy;
                        od[plane + y * w + x] = S::from_f(v);
                    }
                }
            }
        }
    }
    FrameClip { frames: out }
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

/// Apply the augmentation table in order with independent per-augmentation
/// coins. Keypoint-only transforms never touch frames; when both modalities
/// are present only resampling, horizontal flip and rotation apply, resample
/// uses one rate and flip one coin for both clips so they stay aligned.
pub fn apply_pipeline<S: Scalar>(
    keypoints: Option<KeypointClip<S>>,
    frames: Option<FrameClip<S>>,
    spec: &AugmentSpec,
    seed: u64,
    tag: &str,
) -> Result<(Option<KeypointClip<S>>, Option<FrameClip<S>>)> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &format!("augment:{tag}"));
    let both = keypoints.is_some() && frames.is_some();
    let mut kp = keypoints;
    let mut fr = frames;

    let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };

    // 1. resample (keypoint modalities; in fused mode both clips, same rate)
    if kp.is_some() && rng.gen_bool(spec.resample_prob) {
        let rate = draw(&mut rng, spec.resample_range);
        if let Some(c) = &kp {
            kp = Some(resample_keypoints(c, rate)?);
        }
        if both {
            if let Some(c) = &fr {
                fr = Some(resample_frames(c, rate)?);
            }
        }
    }
    // 2-4. keypoint-only transforms
    if !both {
        if let Some(c) = kp.take() {
            let mut c = c;
            if rng.gen_bool(spec.affine_prob) {
                let p = AffineParams {
                    scale: draw(&mut rng, spec.affine_scale),
                    shear: draw(&mut rng, spec.affine_shear),
                    shift: (
                        draw(&mut rng, spec.affine_shift),
                        draw(&mut rng, spec.affine_shift),
                    ),
                    degrees: draw(&mut rng, spec.affine_degrees),
                };
                c = spatial_affine(&c, &p);
            }
            if rng.gen_bool(spec.temporal_mask_prob) {
                let size = draw(&mut rng, spec.temporal_mask_size);
                let w = (size * c.len() as f64).round() as usize;
                let start = if c.len() > w {
                    rng.gen_range(0..=c.len() - w)
                } else {
                    0
                };
                c = temporal_mask(&c, size, start);
            }
            if rng.gen_bool(spec.spatial_mask_prob) {
                let side = draw(&mut rng, spec.spatial_mask_size);
                let b = MaskBox {
                    x0: rng.gen_range(0.0..(1.0 - side)),
                    y0: rng.gen_range(0.0..(1.0 - side)),
                    side,
                };
                c = spatial_mask(&c, &b);
            }
            kp = Some(c);
        }
    }
    // 5. horizontal flip (one coin for the whole sample)
    if rng.gen_bool(spec.hflip_prob) {
        if let Some(c) = &kp {
            kp = Some(horizontal_flip_keypoints(c));
        }
        if let Some(c) = &fr {
            fr = Some(horizontal_flip_frames(c));
        }
    }
    // 6. rotation (frame modalities only)
    if fr.is_some() && rng.gen_bool(spec.rotation_prob) {
        let angle = draw(&mut rng, spec.rotation_degrees);
        if let Some(c) = &fr {
            fr = Some(rotate_frames(c, angle));
        }
    }
    Ok((kp, fr))
}
