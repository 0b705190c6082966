use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::quat::{Quat, Vec3};
use super::skeleton::Skeleton;
use super::ROOT_PARAMS;
use crate::blob;
use crate::error::{Error, Result};

/// One pose: root ground velocity and absolute height, root rotation, and a
/// local rotation per non-root joint.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFrame {
    /// `[dx, y, dz]`: per-frame ground displacement with absolute height.
    pub root_velocity: Vec3,
    pub root_rotation: Quat,
    pub joints: Vec<Quat>,
}

impl MotionFrame {
    pub fn rest(joints: usize, height: f64) -> Self {
        Self {
            root_velocity: [0.0, height, 0.0],
            root_rotation: Quat::IDENTITY,
            joints: vec![Quat::IDENTITY; joints],
        }
    }

    /// Row layout `[dx, y, dz, qw, qx, qy, qz, joint quaternions…]`.
    pub fn write_row(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.root_velocity);
        out.extend_from_slice(&self.root_rotation.to_array());
        for q in &self.joints {
            out.extend_from_slice(&q.to_array());
        }
    }

    /// Parses a row as stored.
    pub fn from_row(row: &[f64]) -> Self {
        Self {
            root_velocity: [row[0], row[1], row[2]],
            root_rotation: Quat::from_slice(&row[3..7]),
            joints: row[ROOT_PARAMS..].chunks_exact(4).map(Quat::from_slice).collect(),
        }
    }

    /// Parses a row, renormalising and canonicalising every quaternion.
    pub fn from_row_normalized(row: &[f64]) -> Self {
        let mut f = Self::from_row(row);
        f.root_rotation = f.root_rotation.normalized().canonical();
        f.joints.iter_mut().for_each(|q| *q = q.normalized().canonical());
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    skeleton: Arc<Skeleton>,
    fps: f64,
    frames: Vec<MotionFrame>,
}

impl MotionClip {
    pub fn new(skeleton: Arc<Skeleton>, fps: f64, frames: Vec<MotionFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Validation("motion clip has no frames".into()));
        }
        Self::build(skeleton, fps, frames)
    }

    /// Zero-frame clip; only produced for empty CAU sequences.
    pub fn empty(skeleton: Arc<Skeleton>, fps: f64) -> Result<Self> {
        Self::build(skeleton, fps, Vec::new())
    }

    fn build(skeleton: Arc<Skeleton>, fps: f64, frames: Vec<MotionFrame>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::param("fps", format!("{fps} is not a positive rate")));
        }
        let j = skeleton.rotating_joints();
        for (i, f) in frames.iter().enumerate() {
            if f.joints.len() != j {
                return Err(Error::dim(format!("joints of frame {i}"), j, f.joints.len()));
            }
            if !f.root_velocity.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("frame {i} has a non-finite root velocity")));
            }
            if !f.root_rotation.is_unit() || !f.joints.iter().all(|q| q.is_unit()) {
                return Err(Error::Validation(format!("frame {i} has a non-unit quaternion")));
            }
        }
        Ok(Self { skeleton, fps, frames })
    }

    /// Builds a clip from an `N×P` row-major matrix, renormalising quaternions.
    pub fn from_matrix(skeleton: Arc<Skeleton>, fps: f64, data: &[f64]) -> Result<Self> {
        let p = skeleton.frame_params();
        if data.len() % p != 0 {
            return Err(Error::dim("frame matrix columns", p, data.len() % p));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame matrix".into()));
        }
        let frames = data.chunks_exact(p).map(MotionFrame::from_row_normalized).collect();
        Self::build(skeleton, fps, frames)
    }

    pub fn to_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * self.skeleton.frame_params());
        for f in &self.frames {
            f.write_row(&mut out);
        }
        out
    }

    /// `N×7` root block.
    pub fn root_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * ROOT_PARAMS);
        for f in &self.frames {
            out.extend_from_slice(&f.root_velocity);
            out.extend_from_slice(&f.root_rotation.to_array());
        }
        out
    }

    /// `N×4J` joint block.
    pub fn joint_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * 4 * self.skeleton.rotating_joints());
        for f in &self.frames {
            for q in &f.joints {
                out.extend_from_slice(&q.to_array());
            }
        }
        out
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[MotionFrame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &MotionFrame {
        &self.frames[i]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames.len() {
            return Err(Error::Index {
                index: end,
                size: self.frames.len(),
            });
        }
        Self::new(self.skeleton.clone(), self.fps, self.frames[start..end].to_vec())
    }

    pub fn with_frames(&self, frames: Vec<MotionFrame>) -> Result<Self> {
        Self::build(self.skeleton.clone(), self.fps, frames)
    }

    pub fn concat(&self, other: &MotionClip) -> Result<Self> {
        self.check_compatible(other)?;
        let mut frames = self.frames.clone();
        frames.extend_from_slice(&other.frames);
        Self::build(self.skeleton.clone(), self.fps, frames)
    }

    pub fn check_compatible(&self, other: &MotionClip) -> Result<()> {
        if self.skeleton != other.skeleton {
            return Err(Error::Validation("clips use different skeletons".into()));
        }
        if self.fps != other.fps {
            return Err(Error::Validation(format!("clip rates differ: {} vs {}", self.fps, other.fps)));
        }
        Ok(())
    }

    /// Writes a TOML manifest at `path` and the frame blob next to it with a `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::param("path", format!("{} has no file name", path.display())))?
            .to_string();
        let manifest = ClipManifest {
            format: CLIP_FORMAT.into(),
            version: 1,
            fps: self.fps,
            frames: self.frames.len(),
            joints: self.skeleton.rotating_joints(),
            params: self.skeleton.frame_params(),
            blob: blob_name,
            skeleton: (*self.skeleton).clone(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            blob::ensure_dir(dir)?;
        }
        blob::write_toml(path, &manifest)?;
        blob::write_f64(&blob_path, &self.to_matrix())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ClipManifest = blob::read_toml(path)?;
        if m.format != CLIP_FORMAT {
            return Err(Error::parse(path, format!("unknown format `{}`", m.format)));
        }
        let skeleton = Skeleton::new(m.skeleton.joints().to_vec())?;
        if skeleton.rotating_joints() != m.joints || skeleton.frame_params() != m.params {
            return Err(Error::parse(path, "joint count disagrees with skeleton"));
        }
        let blob_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
        let data = blob::read_f64(&blob_path, m.frames * m.params)?;
        let frames = data.chunks_exact(m.params).map(MotionFrame::from_row).collect();
        Self::build(Arc::new(skeleton), m.fps, frames)
    }
}

const CLIP_FORMAT: &str = "dancegen-motion";

#[derive(Serialize, Deserialize)]
struct ClipManifest {
    format: String,
    version: u32,
    fps: f64,
    frames: usize,
    joints: usize,
    params: usize,
    blob: String,
    skeleton: Skeleton,
}

/// Writes keypoints as text: two header lines, then one record per frame of
/// the frame index followed by `x y z` for every joint.
pub fn write_keypoints(path: &Path, fps: f64, keypoints: &[Vec<Vec3>]) -> Result<()> {
    let joints = keypoints.first().map_or(0, Vec::len);
    let mut text = String::new();
    let _ = writeln!(text, "# dancegen keypoints");
    let _ = writeln!(text, "# frames {} joints {joints} fps {fps}", keypoints.len());
    for (i, frame) in keypoints.iter().enumerate() {
        let _ = write!(text, "{i}");
        for p in frame {
            let _ = write!(text, " {} {} {}", p[0], p[1], p[2]);
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Vec<Vec3>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .skip(1)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if nums.len() % 3 != 0 {
            return Err(Error::parse(path, format!("line {}: coordinate count not a multiple of 3", lineno + 1)));
        }
        out.push(nums.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    }
    Ok(out)
}
