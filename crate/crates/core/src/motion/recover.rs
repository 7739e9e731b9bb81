//! Integration of the root motion and conversion to global joint positions.

use ndarray::Array3;

use super::repr::{layout, local_pos_col, local_rot_col, JointSequence, PoseSequence, FPS};
use super::rotation::{matmul, rot_y, Mat3, Rotation6D};
use super::skeleton::{Skeleton, JOINT_COUNT};
use crate::error::Result;
use crate::scalar::Real;

/// Heading angle per frame, integrated from the root angular velocity.
///
/// Frame 0 has heading zero; the velocity stored at frame `n` advances frame `n + 1`.
pub fn root_headings<R: Real>(pose: &PoseSequence<R>) -> Vec<R> {
    let dt = R::one() / R::lit(FPS as f64);
    let d = pose.data();
    let mut out = Vec::with_capacity(pose.frames());
    let mut theta = R::zero();
    for n in 0..pose.frames() {
        out.push(theta);
        theta = theta + d[[n, layout::ROOT_ANG_VEL]] * dt;
    }
    out
}

/// Root ground projection per frame (y = 0), starting at the origin.
pub fn root_ground_positions<R: Real>(pose: &PoseSequence<R>, headings: &[R]) -> Vec<[R; 2]> {
    let dt = R::one() / R::lit(FPS as f64);
    let d = pose.data();
    let mut out = Vec::with_capacity(pose.frames());
    let (mut x, mut z) = (R::zero(), R::zero());
    for n in 0..pose.frames() {
        if n > 0 {
            let (s, c) = headings[n].sin_cos();
            let vx = d[[n - 1, layout::ROOT_LIN_VEL]];
            let vz = d[[n - 1, layout::ROOT_LIN_VEL + 1]];
            x = x + (c * vx + s * vz) * dt;
            z = z + (c * vz - s * vx) * dt;
        }
        out.push([x, z]);
    }
    out
}

/// Converts the motion representation into global joint positions.
pub fn recover_global_joints<R: Real>(pose: &PoseSequence<R>, skeleton: &Skeleton<R>) -> Result<JointSequence<R>> {
    pose.check_finite()?;
    skeleton.validate()?;
    let n = pose.frames();
    let d = pose.data();
    let headings = root_headings(pose);
    let roots = root_ground_positions(pose, &headings);
    let mut out = Array3::zeros((n, JOINT_COUNT, 3));
    for f in 0..n {
        let (s, c) = headings[f].sin_cos();
        let [rx, rz] = roots[f];
        out[[f, 0, 0]] = rx;
        out[[f, 0, 1]] = d[[f, layout::ROOT_HEIGHT]];
        out[[f, 0, 2]] = rz;
        for j in 1..JOINT_COUNT {
            let col = local_pos_col(j);
            let (lx, ly, lz) = (d[[f, col]], d[[f, col + 1]], d[[f, col + 2]]);
            out[[f, j, 0]] = c * lx + s * lz + rx;
            out[[f, j, 1]] = ly;
            out[[f, j, 2]] = c * lz - s * lx + rz;
        }
    }
    JointSequence::new(out)
}

/// Global joint orientations per frame.
///
/// The root carries only its heading; other joints chain their stored
/// parent-relative rotations on top of it.
pub fn recover_global_rotations<R: Real>(
    pose: &PoseSequence<R>,
    skeleton: &Skeleton<R>,
) -> Result<Vec<[Mat3<R>; JOINT_COUNT]>> {
    pose.check_finite()?;
    let d = pose.data();
    let headings = root_headings(pose);
    let mut out = Vec::with_capacity(pose.frames());
    for (f, theta) in headings.iter().enumerate() {
        let mut g = [rot_y(*theta); JOINT_COUNT];
        for j in 1..JOINT_COUNT {
            let col = local_rot_col(j);
            let mut six = [R::zero(); 6];
            for (k, v) in six.iter_mut().enumerate() {
                *v = d[[f, col + k]];
            }
            let local = Rotation6D(six).decode()?;
            let parent = skeleton.parent(j).expect("non-root joint has a parent");
            g[j] = matmul(&g[parent], &local);
        }
        out.push(g);
    }
    Ok(out)
}
