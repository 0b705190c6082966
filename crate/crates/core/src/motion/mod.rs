//! Quaternion skeleton motion: representation, forward kinematics, rotation
//! losses, clip preprocessing and the linear-blending baseline.

pub mod blend;
pub mod clip;
pub mod kinematics;
pub mod loss;
pub mod preprocess;
pub mod quat;
pub mod skeleton;

/// Root parameters per frame: ground velocity with height (3) plus rotation (4).
pub const ROOT_PARAMS: usize = 7;

pub use blend::linear_blend;
pub use clip::{read_keypoints, write_keypoints, MotionClip, MotionFrame};
pub use kinematics::{detect_kinematic_beats, forward_kinematics, root_positions, BeatDetector};
pub use loss::{joint_rotation_loss, root_point_loss};
pub use preprocess::{align_beats, align_root_points, TimeWarp, WarpedClip};
pub use quat::{geodesic_distance, geodesic_distance_matrix, Mat3, Quat, Vec3};
pub use skeleton::{Joint, Skeleton};
