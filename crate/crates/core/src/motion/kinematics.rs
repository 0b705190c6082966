use super::clip::MotionClip;
use super::quat::{Quat, Vec3};

/// World root position per frame: ground displacements summed up to and
/// including the frame, height taken as is.
pub fn root_positions(clip: &MotionClip) -> Vec<Vec3> {
    let (mut x, mut z) = (0.0, 0.0);
    clip.frames()
        .iter()
        .map(|f| {
            x += f.root_velocity[0];
            z += f.root_velocity[2];
            [x, f.root_velocity[1], z]
        })
        .collect()
}

/// World positions of every skeleton joint (root included) for every frame.
pub fn forward_kinematics(clip: &MotionClip) -> Vec<Vec<Vec3>> {
    let joints = clip.skeleton().joints();
    let roots = root_positions(clip);
    clip.frames()
        .iter()
        .zip(roots)
        .map(|(f, root)| {
            let mut global = vec![Quat::IDENTITY; joints.len()];
            let mut pos = vec![[0.0; 3]; joints.len()];
            global[0] = f.root_rotation;
            pos[0] = root;
            for k in 1..joints.len() {
                let p = joints[k].parent.expect("non-root joints have parents");
                let off = global[p].rotate(joints[k].offset);
                pos[k] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
                global[k] = global[p] * f.joints[k - 1];
            }
            pos
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeatDetector {
    /// Deceleration must exceed this fraction of the clip's largest deceleration.
    pub relative_threshold: f64,
    /// Minimum frame gap between reported beats; `None` means `fps / 10`.
    pub min_separation: Option<usize>,
    /// Absolute floor that keeps rounding noise from registering as beats.
    pub floor: f64,
}

impl Default for BeatDetector {
    fn default() -> Self {
        Self {
            relative_threshold: 0.6,
            min_separation: None,
            floor: 1e-9,
        }
    }
}

/// Summed end-effector speed, `v[i] = Σ ‖p_i − p_{i−1}‖` for `i ≥ 1` (`v[0] = 0`).
pub fn end_effector_speed(clip: &MotionClip) -> Vec<f64> {
    let leaves = clip.skeleton().end_effectors();
    let kp = forward_kinematics(clip);
    let mut v = vec![0.0; kp.len()];
    for i in 1..kp.len() {
        v[i] = leaves
            .iter()
            .map(|&l| {
                let (a, b) = (kp[i][l], kp[i - 1][l]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .sum();
    }
    v
}

impl BeatDetector {
    pub fn separation(&self, fps: f64) -> usize {
        self.min_separation.unwrap_or(((fps / 10.0).round() as usize).max(1))
    }

    /// Frames of sudden end-effector deceleration, in increasing order.
    ///
    /// Deceleration at frame `i` is `v[i] − v[i+1]`; candidates are strict-left
    /// local maxima above the threshold, kept greedily from the largest.
    pub fn detect(&self, clip: &MotionClip) -> Vec<usize> {
        let n = clip.len();
        if n < 3 {
            return Vec::new();
        }
        let v = end_effector_speed(clip);
        let mut d = vec![f64::NEG_INFINITY; n];
        for i in 1..n - 1 {
            d[i] = v[i] - v[i + 1];
        }
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let threshold = (self.relative_threshold * max).max(self.floor);
        let mut cand: Vec<usize> = (1..n - 1)
            .filter(|&i| d[i] > threshold && d[i] > d[i - 1] && d[i] >= d[i + 1])
            .collect();
        cand.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
        let sep = self.separation(clip.fps());
        let mut kept: Vec<usize> = Vec::new();
        for c in cand {
            if kept.iter().all(|&k| k.abs_diff(c) >= sep) {
                kept.push(c);
            }
        }
        kept.sort_unstable();
        kept
    }
}

pub fn detect_kinematic_beats(clip: &MotionClip) -> Vec<usize> {
    BeatDetector::default().detect(clip)
}
