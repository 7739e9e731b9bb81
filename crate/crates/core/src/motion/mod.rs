//! Motion representation, skeleton, rotation codec and forward kinematics.

pub mod contacts;
pub mod encode;
pub mod recover;
pub mod repr;
pub mod rotation;
pub mod skeleton;
pub mod trajectory;

pub use contacts::{detect_foot_contacts, ContactThresholds};
pub use encode::{encode_motion, encode_motion_with};
pub use recover::{recover_global_joints, recover_global_rotations};
pub use repr::{layout, JointSequence, PoseSequence, FPS, POSE_DIM};
pub use rotation::{Mat3, Rotation6D};
pub use skeleton::{Skeleton, JOINT_COUNT, KEY_JOINTS};
pub use trajectory::{extract_trajectory_targets, TRAJ_DIM, TRAJ_POS_DIM};
