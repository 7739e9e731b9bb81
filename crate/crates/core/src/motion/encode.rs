//! Global joints and orientations to the 263-wide representation.

use ndarray::Array2;

use super::contacts::{detect_foot_contacts, ContactThresholds};
use super::repr::{joint_vel_col, layout, local_pos_col, local_rot_col, JointSequence, PoseSequence, FPS, POSE_DIM};
use super::rotation::{apply, matmul, rot_y, transpose, wrap_angle, yaw_of, Mat3, Rotation6D};
use super::skeleton::{Skeleton, JOINT_COUNT, PELVIS};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Encodes with the default contact thresholds.
pub fn encode_motion<R: Real>(
    joints: &JointSequence<R>,
    rotations: &[[Mat3<R>; JOINT_COUNT]],
    skeleton: &Skeleton<R>,
) -> Result<PoseSequence<R>> {
    encode_motion_with(joints, rotations, skeleton, ContactThresholds::default())
}

/// `rotations` are global joint orientations. Only the heading of the root
/// orientation is kept; headings are stored relative to frame 0 so the
/// recovered motion reproduces the input coordinates exactly.
pub fn encode_motion_with<R: Real>(
    joints: &JointSequence<R>,
    rotations: &[[Mat3<R>; JOINT_COUNT]],
    skeleton: &Skeleton<R>,
    thresholds: ContactThresholds<R>,
) -> Result<PoseSequence<R>> {
    let n = joints.frames();
    if n == 0 {
        return Err(Error::Invalid("no frames".into()));
    }
    if rotations.len() != n {
        return Err(Error::Shape(format!("{} joint frames but {} rotation frames", n, rotations.len())));
    }
    let root0 = joints.get(0, PELVIS);
    let tol = R::lit(1e-5);
    if root0[0].abs() > tol || root0[2].abs() > tol {
        return Err(Error::Invalid("frame 0 root must lie on the ground-plane origin".into()));
    }
    let fps = R::lit(FPS as f64);
    let dt = R::one() / fps;
    let mut data = Array2::zeros((n, POSE_DIM));

    // Heading relative to frame 0, unwrapped.
    let mut rel = vec![R::zero(); n];
    for f in 1..n {
        let step = wrap_angle(yaw_of(&rotations[f][PELVIS]) - yaw_of(&rotations[f - 1][PELVIS]));
        rel[f] = rel[f - 1] + step;
    }
    for f in 0..n {
        let w = if f + 1 < n { (rel[f + 1] - rel[f]) * fps } else if f > 0 { (rel[f] - rel[f - 1]) * fps } else { R::zero() };
        data[[f, layout::ROOT_ANG_VEL]] = w;
    }
    // Use the headings the decoder will integrate so both sides agree to rounding.
    let mut heading = vec![R::zero(); n];
    for f in 1..n {
        heading[f] = heading[f - 1] + data[[f - 1, layout::ROOT_ANG_VEL]] * dt;
    }
    let frames: Vec<Mat3<R>> = heading.iter().map(|&h| rot_y(h)).collect();

    for f in 0..n {
        let root = joints.get(f, PELVIS);
        data[[f, layout::ROOT_HEIGHT]] = root[1];

        let (a, b, frame_for_vel) = if f + 1 < n { (f, f + 1, f + 1) } else if f > 0 { (f - 1, f, f) } else { (f, f, f) };
        let ra = joints.get(a, PELVIS);
        let rb = joints.get(b, PELVIS);
        let delta = [(rb[0] - ra[0]) * fps, R::zero(), (rb[2] - ra[2]) * fps];
        let local_v = apply(&transpose(&frames[frame_for_vel]), &delta);
        data[[f, layout::ROOT_LIN_VEL]] = local_v[0];
        data[[f, layout::ROOT_LIN_VEL + 1]] = local_v[2];

        let inv = transpose(&frames[f]);
        for j in 1..JOINT_COUNT {
            let p = joints.get(f, j);
            let local = apply(&inv, &[p[0] - root[0], p[1], p[2] - root[2]]);
            let col = local_pos_col(j);
            data[[f, col]] = local[0];
            data[[f, col + 1]] = local[1];
            data[[f, col + 2]] = local[2];

            let parent = skeleton.parent(j).expect("non-root joint has a parent");
            let parent_rot = if parent == PELVIS { frames[f] } else { rotations[f][parent] };
            let local_rot = matmul(&transpose(&parent_rot), &rotations[f][j]);
            let six = Rotation6D::encode(&local_rot).0;
            let col = local_rot_col(j);
            for (k, v) in six.iter().enumerate() {
                data[[f, col + k]] = *v;
            }
        }

        let (a, b) = if f + 1 < n { (f, f + 1) } else if f > 0 { (f - 1, f) } else { (f, f) };
        for j in 0..JOINT_COUNT {
            let p = joints.get(a, j);
            let q = joints.get(b, j);
            let v = apply(&inv, &[(q[0] - p[0]) * fps, (q[1] - p[1]) * fps, (q[2] - p[2]) * fps]);
            let col = joint_vel_col(j);
            data[[f, col]] = v[0];
            data[[f, col + 1]] = v[1];
            data[[f, col + 2]] = v[2];
        }
    }

    let contacts = detect_foot_contacts(joints, thresholds.height, thresholds.displacement)?;
    for f in 0..n {
        for k in 0..4 {
            data[[f, layout::FOOT_CONTACT + k]] = contacts[[f, k]];
        }
    }
    PoseSequence::new_checked(data)
}
