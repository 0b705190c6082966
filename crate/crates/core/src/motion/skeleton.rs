use serde::{Deserialize, Serialize};

use super::quat::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

/// Joint hierarchy, root first, each parent listed before its children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Validation("skeleton has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::Validation(format!("root joint `{}` has a parent", j.name))),
                (_, None) => return Err(Error::Validation(format!("joint `{}` is a second root", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::Validation(format!(
                        "joint `{}` (index {i}) has parent {p}, which is not listed before it",
                        j.name
                    )))
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("joint `{}` has a non-finite offset", j.name)));
            }
            if joints[..i].iter().any(|o| o.name == j.name) {
                return Err(Error::Validation(format!("duplicate joint name `{}`", j.name)));
            }
        }
        Ok(Self { joints })
    }

    /// Root plus eight rotating joints: spine, head, two two-segment arms and two legs.
    pub fn desk_default() -> Self {
        let j = |name: &str, parent: Option<usize>, offset: Vec3| Joint {
            name: name.into(),
            parent,
            offset,
        };
        Self::new(vec![
            j("root", None, [0.0, 0.0, 0.0]),
            j("spine", Some(0), [0.0, 0.3, 0.0]),
            j("head", Some(1), [0.0, 0.3, 0.0]),
            j("l_arm", Some(1), [0.2, 0.25, 0.0]),
            j("l_forearm", Some(3), [0.3, 0.0, 0.0]),
            j("r_arm", Some(1), [-0.2, 0.25, 0.0]),
            j("r_forearm", Some(5), [-0.3, 0.0, 0.0]),
            j("l_leg", Some(0), [0.1, -0.45, 0.0]),
            j("r_leg", Some(0), [-0.1, -0.45, 0.0]),
        ])
        .expect("static skeleton is valid")
    }

    /// A single chain of `len` rotating joints, each offset `(0,1,0)` from its parent.
    pub fn chain(len: usize) -> Self {
        let mut joints = vec![Joint {
            name: "root".into(),
            parent: None,
            offset: [0.0; 3],
        }];
        for k in 1..=len {
            joints.push(Joint {
                name: format!("j{k}"),
                parent: Some(k - 1),
                offset: [0.0, 1.0, 0.0],
            });
        }
        Self::new(joints).expect("chain is valid")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Number of rotating (non-root) joints `J`.
    pub fn rotating_joints(&self) -> usize {
        self.joints.len() - 1
    }

    /// Parameters per frame, `7 + 4·J`.
    pub fn frame_params(&self) -> usize {
        super::ROOT_PARAMS + 4 * self.rotating_joints()
    }

    /// Indices of joints without children.
    pub fn end_effectors(&self) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&i| !self.joints.iter().any(|j| j.parent == Some(i)))
            .collect()
    }
}
