use super::clip::{MotionClip, MotionFrame};
use super::quat::Quat;
use crate::error::{Error, Result};

/// Moves `next` onto the end of `prev`: its headings are turned about the
/// vertical so the first frame's yaw matches `prev`'s last, its ground
/// velocities are turned with it, and its first-frame ground velocity is
/// zeroed so it starts where `prev` stops. Joint rotations and heights are kept.
pub fn align_root_points(prev: &MotionClip, next: &MotionClip) -> Result<MotionClip> {
    prev.check_compatible(next)?;
    let (Some(last), Some(first)) = (prev.frames().last(), next.frames().first()) else {
        return Ok(next.clone());
    };
    let delta = last.root_rotation.yaw() - first.root_rotation.yaw();
    let turn = (delta.abs() > 1e-12).then(|| Quat::from_yaw(delta));
    let frames = next
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut f = f.clone();
            if let Some(r) = turn {
                let v = r.rotate([f.root_velocity[0], 0.0, f.root_velocity[2]]);
                f.root_velocity[0] = v[0];
                f.root_velocity[2] = v[2];
                f.root_rotation = (r * f.root_rotation).normalized().canonical();
            }
            if i == 0 {
                f.root_velocity[0] = 0.0;
                f.root_velocity[2] = 0.0;
            }
            f
        })
        .collect();
    next.with_frames(frames)
}

/// Piecewise-linear map from source time to target time through paired
/// points, extended past both ends with the outermost segment slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWarp {
    src: Vec<f64>,
    dst: Vec<f64>,
}

impl TimeWarp {
    pub fn new(src: Vec<f64>, dst: Vec<f64>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::dim("warp pairs", src.len(), dst.len()));
        }
        for (name, xs) in [("kinematic", &src), ("musical", &dst)] {
            if xs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{name} beat times must be finite")));
            }
            if xs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Validation(format!(
                    "non-monotonic warp: {name} beat times are not strictly increasing"
                )));
            }
        }
        Ok(Self { src, dst })
    }

    fn segment(&self, xs: &[f64], x: f64) -> usize {
        // index k of the segment [xs[k], xs[k+1]) holding x, clamped to the end segments
        let k = xs.partition_point(|&v| v <= x);
        k.saturating_sub(1).min(xs.len().saturating_sub(2))
    }

    fn slope(&self, k: usize) -> f64 {
        if self.src.len() < 2 {
            1.0
        } else {
            (self.dst[k + 1] - self.dst[k]) / (self.src[k + 1] - self.src[k])
        }
    }

    pub fn forward(&self, s: f64) -> f64 {
        match self.src.len() {
            0 => s,
            1 => s - self.src[0] + self.dst[0],
            _ => {
                let k = self.segment(&self.src, s);
                self.dst[k] + (s - self.src[k]) * self.slope(k)
            }
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        match self.src.len() {
            0 => t,
            1 => t - self.dst[0] + self.src[0],
            _ => {
                let k = self.segment(&self.dst, t);
                self.src[k] + (t - self.dst[k]) / self.slope(k)
            }
        }
    }

    /// `dτ/ds` at target time `t`.
    pub fn slope_at_target(&self, t: f64) -> f64 {
        if self.src.len() < 2 {
            1.0
        } else {
            self.slope(self.segment(&self.dst, t))
        }
    }
}

/// Frames of a source clip sampled at a fractional frame position.
pub fn sample_frame(clip: &MotionClip, u: f64) -> MotionFrame {
    let n = clip.len();
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    let a = u - i0 as f64;
    let (f0, f1) = (clip.frame(i0), clip.frame(i1));
    if a == 0.0 {
        return f0.clone();
    }
    let lerp = |x: f64, y: f64| x + a * (y - x);
    MotionFrame {
        root_velocity: [
            lerp(f0.root_velocity[0], f1.root_velocity[0]),
            lerp(f0.root_velocity[1], f1.root_velocity[1]),
            lerp(f0.root_velocity[2], f1.root_velocity[2]),
        ],
        root_rotation: f0.root_rotation.slerp(f1.root_rotation, a).canonical(),
        joints: f0
            .joints
            .iter()
            .zip(&f1.joints)
            .map(|(p, q)| p.slerp(*q, a).canonical())
            .collect(),
    }
}

/// A time-warped clip placed on the global frame grid `g / fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedClip {
    pub clip: MotionClip,
    /// Global grid index of the first output frame.
    pub start_frame: i64,
}

/// Time-warps `clip` so each kinematic beat (a frame index, which may equal
/// the clip length to denote its end) lands on its paired musical beat.
///
/// Beats are paired in order and surplus entries ignored. The source spans
/// `[0, N/fps)`; output frames are the grid points `g / fps` whose time falls
/// in the warped span. Ground velocities are divided by the local warp slope.
pub fn align_beats(clip: &MotionClip, kin_beats: &[usize], music_beats: &[f64]) -> Result<WarpedClip> {
    let fps = clip.fps();
    let m = kin_beats.len().min(music_beats.len());
    let src: Vec<f64> = kin_beats[..m].iter().map(|&k| k as f64 / fps).collect();
    let warp = TimeWarp::new(src, music_beats[..m].to_vec())?;
    if clip.is_empty() {
        return Ok(WarpedClip {
            clip: clip.clone(),
            start_frame: 0,
        });
    }
    let begin = warp.forward(0.0);
    let end = warp.forward(clip.len() as f64 / fps);
    let first = (begin * fps - 1e-9).ceil() as i64;
    let stop = (end * fps - 1e-9).ceil() as i64;
    let frames = (first..stop)
        .map(|g| {
            let t = g as f64 / fps;
            let mut f = sample_frame(clip, warp.inverse(t) * fps);
            let slope = warp.slope_at_target(t);
            f.root_velocity[0] /= slope;
            f.root_velocity[2] /= slope;
            f
        })
        .collect();
    Ok(WarpedClip {
        clip: clip.with_frames(frames)?,
        start_frame: first,
    })
}
