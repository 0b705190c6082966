use super::clip::MotionClip;
use super::quat::{geodesic_distance, Quat};
use super::ROOT_PARAMS;
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

fn check_lengths(pred: &MotionClip, gt: &MotionClip) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::dim("frames", gt.len(), pred.len()));
    }
    let (jp, jg) = (pred.skeleton().rotating_joints(), gt.skeleton().rotating_joints());
    if jp != jg {
        return Err(Error::dim("joints", jg, jp));
    }
    Ok(())
}

/// Sum over frames and joints of the geodesic distance between joint rotations.
pub fn joint_rotation_loss(pred: &MotionClip, gt: &MotionClip) -> Result<f64> {
    check_lengths(pred, gt)?;
    let mut total = 0.0;
    for (a, b) in pred.frames().iter().zip(gt.frames()) {
        for (qa, qb) in a.joints.iter().zip(&b.joints) {
            total += geodesic_distance(*qa, *qb)?;
        }
    }
    Ok(total)
}

/// Sum over frames of the L1 distance between the seven root parameters.
pub fn root_point_loss(pred: &MotionClip, gt: &MotionClip) -> Result<f64> {
    check_lengths(pred, gt)?;
    let (a, b) = (pred.root_matrix(), gt.root_matrix());
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum())
}

/// Joint loss on raw `N×4J` matrices; prediction quaternions are normalised first.
pub fn joint_rotation_loss_rows(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() % 4 != 0 {
        return Err(Error::dim("joint rows", gt.len(), pred.len()));
    }
    pred.chunks_exact(4)
        .zip(gt.chunks_exact(4))
        .map(|(a, b)| geodesic_distance(Quat::from_slice(a).normalized(), Quat::from_slice(b)))
        .sum()
}

pub fn root_point_loss_rows(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() % ROOT_PARAMS != 0 {
        return Err(Error::dim("root rows", gt.len(), pred.len()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum())
}

/// Differentiable joint loss against a constant unit-quaternion target.
pub fn joint_rotation_loss_graph(g: &mut Graph, pred: Var, gt: &[f64]) -> Result<Var> {
    g.geodesic_sum(pred, gt)
}

/// Differentiable root loss against a constant target.
pub fn root_point_loss_graph(g: &mut Graph, pred: Var, gt: &[f64]) -> Result<Var> {
    g.l1_sum(pred, gt)
}
