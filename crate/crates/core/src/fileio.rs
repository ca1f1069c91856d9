//! On-disk formats: keypoint clips (`KPC1`), frame clips (`FRC1`), and the
//! single-file checkpoint container. All integers are little-endian u32, all
//! tensor payloads little-endian f32.

use std::path::Path;

use crate::datamodel::{FrameClip, KeypointClip, KeypointLayout};
use crate::error::{Error, Result};
use crate::numerics::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KPC_MAGIC: &[u8; 4] = b"KPC1";
pub const FRC_MAGIC: &[u8; 4] = b"FRC1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSCP";
pub const CHECKPOINT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// low-level cursor with byte-offset errors
// ---------------------------------------------------------------------------

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], path: &'a Path) -> Self {
        Reader { data, pos: 0, path }
    }

    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::FileFormat {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.fail(format!(
                "need {n} bytes but only {} remain",
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            self.pos -= 4;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.fail("invalid utf-8"))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.fail(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32_tensor<S: Scalar>(out: &mut Vec<u8>, t: &Tensor<S>) {
    for &v in t.data() {
        out.extend_from_slice(&(v.to_f() as f32).to_le_bytes());
    }
}

// ---------------------------------------------------------------------------
// keypoint clips
// ---------------------------------------------------------------------------

/// `KPC1` | u32 T, K, C(=3) | T*K*C f32, frame-major then keypoint then (x,y,z).
pub fn write_keypoint_clip<S: Scalar>(path: &Path, clip: &KeypointClip<S>) -> Result<()> {
    let mut out = Vec::with_capacity(16 + clip.coords.numel() * 4);
    out.extend_from_slice(KPC_MAGIC);
    push_u32(&mut out, clip.len() as u32);
    push_u32(&mut out, clip.num_keypoints() as u32);
    push_u32(&mut out, 3);
    push_f32_tensor(&mut out, &clip.coords);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_keypoint_clip<S: Scalar>(path: &Path, layout: &KeypointLayout) -> Result<KeypointClip<S>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&data, path);
    r.magic(KPC_MAGIC)?;
    let t = r.u32()? as usize;
    let k = r.u32()? as usize;
    let c = r.u32()? as usize;
    if c != 3 {
        return Err(r.fail(format!("coordinate count must be 3, got {c}")));
    }
    if t == 0 {
        return Err(r.fail("clip must have at least one frame"));
    }
    let values = r.f32_vec(t * k * 3)?;
    r.done()?;
    let tensor = Tensor::from_vec(&[t, k, 3], values.iter().map(|&v| S::from_f(v as f64)).collect());
    KeypointClip::new(tensor, layout.clone())
}

// ---------------------------------------------------------------------------
// frame clips
// ---------------------------------------------------------------------------

/// `FRC1` | u32 T, C, H, W | T*C*H*W f32 in that axis order.
pub fn write_frame_clip<S: Scalar>(path: &Path, clip: &FrameClip<S>) -> Result<()> {
    let s = clip.frames.shape();
    let mut out = Vec::with_capacity(20 + clip.frames.numel() * 4);
    out.extend_from_slice(FRC_MAGIC);
    for &dim in s {
        push_u32(&mut out, dim as u32);
    }
    push_f32_tensor(&mut out, &clip.frames);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_frame_clip<S: Scalar>(path: &Path) -> Result<FrameClip<S>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&data, path);
    r.magic(FRC_MAGIC)?;
    let t = r.u32()? as usize;
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if t == 0 {
        return Err(r.fail("clip must have at least one frame"));
    }
    let values = r.f32_vec(t * c * h * w)?;
    r.done()?;
    let tensor = Tensor::from_vec(
        &[t, c, h, w],
        values.iter().map(|&v| S::from_f(v as f64)).collect(),
    );
    FrameClip::new(tensor)
}

/// Peek at the magic bytes to identify a clip file.
pub enum ClipKind {
    Keypoints,
    Frames,
}

pub fn identify_clip(path: &Path) -> Result<ClipKind> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() >= 4 && &data[..4] == KPC_MAGIC {
        Ok(ClipKind::Keypoints)
    } else if data.len() >= 4 && &data[..4] == FRC_MAGIC {
        Ok(ClipKind::Frames)
    } else {
        Err(Error::FileFormat {
            path: path.to_path_buf(),
            offset: 0,
            msg: "unrecognized clip magic".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Full training state snapshot: canonical config text, epoch, metric
/// history, and all parameter tensors. Parameters are stored as f32, so a
/// model trained in f32 round-trips bitwise.
#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub config_text: String,
    pub epoch: u32,
    pub history: Vec<EpochRecord>,
    pub params: ParamSet<S>,
}

pub fn write_checkpoint<S: Scalar>(path: &Path, ck: &Checkpoint<S>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);
    let cfg = ck.config_text.as_bytes();
    push_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg);
    push_u32(&mut out, ck.epoch);
    push_u32(&mut out, ck.history.len() as u32);
    for h in &ck.history {
        push_u32(&mut out, h.epoch);
        out.extend_from_slice(&h.train_loss.to_le_bytes());
        out.extend_from_slice(&h.val_accuracy.to_le_bytes());
    }
    push_u32(&mut out, ck.params.len() as u32);
    for (name, tensor) in ck.params.entries() {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.shape() {
            push_u32(&mut out, d as u32);
        }
        push_f32_tensor(&mut out, tensor);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&data, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("unsupported format version {version}"),
        });
    }
    let cfg_len = r.u32()? as usize;
    let config_text = r.string(cfg_len)?;
    let epoch = r.u32()?;
    let n_hist = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        history.push(EpochRecord {
            epoch: r.u32()?,
            train_loss: r.f64()?,
            val_accuracy: r.f64()?,
        });
    }
    let n_params = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let values = r.f32_vec(n)?;
        params.insert(
            name,
            Tensor::from_vec(&shape, values.iter().map(|&v| S::from_f(v as f64)).collect()),
        );
    }
    r.done()?;
    Ok(Checkpoint {
        config_text,
        epoch,
        history,
        params,
    })
}
