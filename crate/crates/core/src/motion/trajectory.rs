use ndarray::Array2;

use super::recover::{recover_global_joints, recover_global_rotations};
use super::repr::PoseSequence;
use super::rotation::Rotation6D;
use super::skeleton::{Skeleton, KEY_JOINTS, KEY_ROTATION_JOINTS};
use crate::error::Result;
use crate::scalar::Real;

pub const TRAJ_DIM: usize = 39;
/// Width of the position block at the start of each trajectory row.
pub const TRAJ_POS_DIM: usize = 15;

/// Per-frame control trajectory: global XYZ of the five key joints followed by
/// the global 6D orientation of both ankles and both toes.
pub fn extract_trajectory_targets<R: Real>(pose: &PoseSequence<R>, skeleton: &Skeleton<R>) -> Result<Array2<R>> {
    let joints = recover_global_joints(pose, skeleton)?;
    let rotations = recover_global_rotations(pose, skeleton)?;
    let mut out = Array2::zeros((pose.frames(), TRAJ_DIM));
    for (f, rot) in rotations.iter().enumerate() {
        for (k, &j) in KEY_JOINTS.iter().enumerate() {
            let p = joints.get(f, j);
            for c in 0..3 {
                out[[f, 3 * k + c]] = p[c];
            }
        }
        for (k, &j) in KEY_ROTATION_JOINTS.iter().enumerate() {
            let six = Rotation6D::encode(&rot[j]).0;
            for c in 0..6 {
                out[[f, TRAJ_POS_DIM + 6 * k + c]] = six[c];
            }
        }
    }
    Ok(out)
}
