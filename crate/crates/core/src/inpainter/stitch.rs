use super::model::Inpainter;
use crate::cau::{CauCatalog, CauSequence, TokenKind};
use crate::error::{Error, Result};
use crate::motion::{align_beats, align_root_points, detect_kinematic_beats, MotionClip, MotionFrame, Quat};
use crate::music::BeatGrid;

/// Beat-aligned pieces laid end to end before any inpainting.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    pub clip: MotionClip,
    /// Frames where a CAU starts right after another piece.
    pub junctions: Vec<usize>,
    /// `(token, first frame, frame count)` per piece.
    pub pieces: Vec<(usize, usize, usize)>,
}

fn hold(frame: &MotionFrame) -> MotionFrame {
    let mut f = frame.clone();
    f.root_velocity[0] = 0.0;
    f.root_velocity[2] = 0.0;
    f
}

/// Frames `[ceil(a·fps), ceil(b·fps))` of a span on the global grid.
fn grid_frames(a: f64, b: f64, fps: f64) -> (i64, i64) {
    let f = |t: f64| (t * fps - 1e-9).ceil() as i64;
    (f(a), f(b))
}

/// Places every token of `seq` on the global frame grid: NIL holds the
/// current pose for its beat, a CAU is root-aligned to what precedes it and
/// time-warped so its kinematic beats land on the musical beats of its span.
pub fn assemble(seq: &CauSequence, catalog: &CauCatalog, grid: &BeatGrid) -> Result<Assembly> {
    seq.validate(catalog)?;
    let (skeleton, fps) = catalog
        .motion_format()
        .ok_or_else(|| Error::Validation("catalog has no CAU clips".into()))?;
    let joints = skeleton.rotating_joints();
    let rest_height = catalog
        .cau_ids()
        .next()
        .and_then(|id| catalog.clip(id).ok())
        .map_or(0.0, |c| c.frame(0).root_velocity[1]);
    let mut frames: Vec<MotionFrame> = Vec::new();
    let mut junctions = Vec::new();
    let mut pieces = Vec::new();
    for item in &seq.items {
        let kind = catalog.kind(item.token)?;
        if kind == TokenKind::Eod {
            break;
        }
        let (t0, t1) = (grid.time_of_beat(item.start_beat), grid.time_of_beat(item.end_beat));
        let (g0, g1) = grid_frames(t0, t1, fps);
        if g0 != frames.len() as i64 {
            return Err(Error::State(format!(
                "piece for token {} starts at frame {g0}, expected {}",
                item.token,
                frames.len()
            )));
        }
        match kind {
            TokenKind::Nil => {
                let pose = frames.last().map_or_else(|| MotionFrame::rest(joints, rest_height), hold);
                let count = (g1 - g0).max(0) as usize;
                pieces.push((item.token, frames.len(), count));
                frames.extend(std::iter::repeat(pose).take(count));
            }
            TokenKind::Cau => {
                let source = catalog.clip(item.token)?;
                let clip = match frames.last() {
                    Some(last) => {
                        let prev = MotionClip::new(skeleton.clone(), fps, vec![last.clone()])?;
                        align_root_points(&prev, source)?
                    }
                    None => (**source).clone(),
                };
                let beats = item.end_beat - item.start_beat;
                let mut kin = vec![0];
                kin.extend(detect_kinematic_beats(&clip));
                kin.push(clip.len());
                let music: Vec<f64> = (item.start_beat..=item.end_beat).map(|b| grid.time_of_beat(b)).collect();
                let (kin, music) = if kin.len() == beats + 1 { (kin, music) } else { (vec![0, clip.len()], vec![t0, t1]) };
                let warped = align_beats(&clip, &kin, &music)?;
                if warped.clip.is_empty() {
                    continue;
                }
                if warped.start_frame != frames.len() as i64 {
                    return Err(Error::State(format!(
                        "warped clip starts at frame {}, expected {}",
                        warped.start_frame,
                        frames.len()
                    )));
                }
                if !frames.is_empty() {
                    junctions.push(frames.len());
                }
                pieces.push((item.token, frames.len(), warped.clip.len()));
                frames.extend(warped.clip.frames().iter().cloned());
            }
            TokenKind::Sod | TokenKind::Eod => unreachable!("rejected by validation"),
        }
    }
    let clip = if frames.is_empty() {
        MotionClip::empty(skeleton, fps)?
    } else {
        MotionClip::new(skeleton, fps, frames)?
    };
    Ok(Assembly { clip, junctions, pieces })
}

/// Index into `[0, n)` reflecting at both ends.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Predicted frames `[start, end)` moved onto the surrounding context: the
/// offsets between prediction and context at frames `start - 1` and `end` are
/// interpolated across the range and applied to the prediction.
pub fn fit_to_context(pred: &[MotionFrame], context: &[MotionFrame], start: usize, end: usize) -> Result<Vec<MotionFrame>> {
    if start == 0 || end >= pred.len() || start > end || pred.len() != context.len() {
        return Err(Error::param(
            "range",
            format!("[{start}, {end}) needs context on both sides within {} frames", pred.len()),
        ));
    }
    let offset = |p: Quat, c: Quat| c * p.normalized().conj();
    let (pb, cb, pa, ca) = (&pred[start - 1], &context[start - 1], &pred[end], &context[end]);
    let joints_before: Vec<Quat> = pb.joints.iter().zip(&cb.joints).map(|(p, c)| offset(*p, *c)).collect();
    let joints_after: Vec<Quat> = pa.joints.iter().zip(&ca.joints).map(|(p, c)| offset(*p, *c)).collect();
    let (root_before, root_after) = (offset(pb.root_rotation, cb.root_rotation), offset(pa.root_rotation, ca.root_rotation));
    let span = (end - start + 1) as f64;
    Ok((start..end)
        .map(|k| {
            let a = (k - start + 1) as f64 / span;
            let f = &pred[k];
            let mut root_velocity = f.root_velocity;
            for (c, v) in root_velocity.iter_mut().enumerate() {
                let (db, da) = (cb.root_velocity[c] - pb.root_velocity[c], ca.root_velocity[c] - pa.root_velocity[c]);
                *v += db + a * (da - db);
            }
            MotionFrame {
                root_velocity,
                root_rotation: (root_before.slerp(root_after, a) * f.root_rotation.normalized()).normalized(),
                joints: f
                    .joints
                    .iter()
                    .enumerate()
                    .map(|(j, q)| (joints_before[j].slerp(joints_after[j], a) * q.normalized()).normalized())
                    .collect(),
            }
        })
        .collect())
}

/// Inpaints the transition window around each junction in turn. The model sees
/// `clip_len` frames centred on the junction; only its masked frames are kept,
/// fitted to the context on either side.
pub fn inpaint_junctions(model: &Inpainter, clip: &MotionClip, junctions: &[usize]) -> Result<MotionClip> {
    if !model.trained {
        return Err(Error::State("inpainter checkpoint is untrained".into()));
    }
    let n = model.config.clip_len;
    let half = (n / 2) as i64;
    let (m0, m1) = (model.config.mask_start(), model.config.mask_start() + model.config.window);
    let mut frames = clip.frames().to_vec();
    let total = frames.len();
    for &j in junctions {
        if j == 0 || j >= total {
            return Err(Error::Index { index: j, size: total });
        }
        let idx: Vec<i64> = (j as i64 - half..j as i64 + half).collect();
        let window: Vec<MotionFrame> = idx.iter().map(|&i| frames[reflect(i, total)].clone()).collect();
        let out = model.inpaint(&clip.with_frames(window.clone())?)?;
        let fitted = fit_to_context(out.frames(), &window, m0, m1)?;
        for (&i, f) in idx[m0..m1].iter().zip(fitted) {
            if (0..total as i64).contains(&i) {
                frames[i as usize] = f;
            }
        }
    }
    clip.with_frames(frames)
}

/// Full second stage: assemble the sequence and inpaint every junction.
pub fn stitch(seq: &CauSequence, catalog: &CauCatalog, grid: &BeatGrid, model: &Inpainter) -> Result<MotionClip> {
    if !model.trained {
        return Err(Error::State("inpainter checkpoint is untrained".into()));
    }
    let a = assemble(seq, catalog, grid)?;
    if a.junctions.is_empty() {
        return Ok(a.clip);
    }
    let out = inpaint_junctions(model, &a.clip, &a.junctions)?;
    let frames = out
        .frames()
        .iter()
        .map(|f| {
            let mut f = f.clone();
            f.root_rotation = f.root_rotation.normalized().canonical();
            f.joints.iter_mut().for_each(|q| *q = q.normalized().canonical());
            f
        })
        .collect();
    out.with_frames(frames)
}
