use std::ops::Range;

use crate::error::{Error, Result};
use crate::motion::{geodesic_distance, MotionClip};

/// Mean geodesic distance over every joint of the frames in `rows`.
pub fn geodesic_report(gen: &MotionClip, gt: &MotionClip, rows: Range<usize>) -> Result<f64> {
    if gen.len() != gt.len() {
        return Err(Error::dim("clip length", gt.len(), gen.len()));
    }
    gen.check_compatible(gt)?;
    if rows.end > gt.len() {
        return Err(Error::Index {
            index: rows.end,
            size: gt.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rows {
        for (a, b) in gen.frame(r).joints.iter().zip(&gt.frame(r).joints) {
            total += geodesic_distance(*a, *b)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// `len`-frame crops of `clip` centred on each junction that leaves room on both sides.
pub fn junction_cases(clip: &MotionClip, junctions: &[usize], len: usize) -> Result<Vec<MotionClip>> {
    let half = len / 2;
    junctions
        .iter()
        .filter(|&&j| j >= half && j - half + len <= clip.len())
        .map(|&j| clip.slice(j - half, j - half + len))
        .collect()
}
