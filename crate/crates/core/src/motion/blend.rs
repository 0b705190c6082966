use super::clip::{MotionClip, MotionFrame};
use super::quat::Quat;
use crate::error::{Error, Result};

/// First frame of the transition window for a junction at `junction`.
pub fn window_start(junction: usize, window: usize) -> usize {
    junction - window / 2
}

/// Concatenates `prev` and `next` and replaces the `window` frames centred
/// on the junction with an interpolation between the frames just outside the
/// window: joints by slerp, root parameters linearly (rotation renormalised).
pub fn linear_blend(prev: &MotionClip, next: &MotionClip, window: usize) -> Result<MotionClip> {
    prev.check_compatible(next)?;
    let (left, right) = (window / 2, window - window / 2);
    if left > prev.len() || right > next.len() {
        return Err(Error::param(
            "window",
            format!(
                "{window} frames does not fit around a junction of {} and {} frames",
                prev.len(),
                next.len()
            ),
        ));
    }
    let joined = prev.concat(next)?;
    if window == 0 {
        return Ok(joined);
    }
    let n = joined.len();
    let start = window_start(prev.len(), window);
    let before = joined.frame(start.saturating_sub(1)).clone();
    let after = joined.frame((start + window).min(n - 1)).clone();
    let mut frames = joined.frames().to_vec();
    for i in 0..window {
        let a = (i + 1) as f64 / (window + 1) as f64;
        frames[start + i] = interpolate(&before, &after, a);
    }
    joined.with_frames(frames)
}

fn interpolate(p: &MotionFrame, q: &MotionFrame, a: f64) -> MotionFrame {
    let lerp = |x: f64, y: f64| x + a * (y - x);
    let (r0, mut r1) = (p.root_rotation, q.root_rotation);
    if r0.dot(r1) < 0.0 {
        r1 = r1.neg();
    }
    MotionFrame {
        root_velocity: [
            lerp(p.root_velocity[0], q.root_velocity[0]),
            lerp(p.root_velocity[1], q.root_velocity[1]),
            lerp(p.root_velocity[2], q.root_velocity[2]),
        ],
        root_rotation: Quat::new(lerp(r0.w, r1.w), lerp(r0.x, r1.x), lerp(r0.y, r1.y), lerp(r0.z, r1.z))
            .normalized()
            .canonical(),
        joints: p.joints.iter().zip(&q.joints).map(|(x, y)| x.slerp(*y, a).canonical()).collect(),
    }
}
