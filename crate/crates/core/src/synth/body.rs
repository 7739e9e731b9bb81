//! Forward kinematics from joint angles and a two-link leg solver.

use crate::motion::rotation::{apply, identity, matmul, rot_x, rot_y, rot_z, transpose, Mat3, Vec3};
use crate::motion::skeleton::{self as sk, Skeleton, JOINT_COUNT};

/// Everything needed to place the body for one frame.
#[derive(Debug, Clone)]
pub(crate) struct BodyFrame {
    pub root: Vec3<f64>,
    pub yaw: f64,
    /// Parent-relative rotations; entry 0 is unused (the root carries only `yaw`).
    pub local: [Mat3<f64>; JOINT_COUNT],
}

impl BodyFrame {
    pub fn new(root: Vec3<f64>, yaw: f64) -> Self {
        Self {
            root,
            yaw,
            local: [identity(); JOINT_COUNT],
        }
    }
}

/// Foot placement target for the leg solver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FootTarget {
    pub ankle: Vec3<f64>,
    pub yaw: f64,
    /// Rotation about the foot's lateral axis; positive tips the toe down.
    pub pitch: f64,
}

pub(crate) fn forward_kinematics(skel: &Skeleton<f64>, frame: &BodyFrame) -> ([Vec3<f64>; JOINT_COUNT], [Mat3<f64>; JOINT_COUNT]) {
    let mut pos = [[0.0; 3]; JOINT_COUNT];
    let mut rot = [identity(); JOINT_COUNT];
    pos[0] = frame.root;
    rot[0] = rot_y(frame.yaw);
    for j in 1..JOINT_COUNT {
        let p = skel.parent(j).expect("non-root");
        rot[j] = matmul(&rot[p], &frame.local[j]);
        let o = apply(&rot[p], &skel.rest_offset(j));
        pos[j] = [pos[p][0] + o[0], pos[p][1] + o[1], pos[p][2] + o[2]];
    }
    (pos, rot)
}

/// Sets hip, knee and ankle rotations of one leg so the ankle reaches `target`.
///
/// Unreachable targets are pulled onto the reachable shell; the result is still
/// a valid pose, just with the ankle short of the target.
pub(crate) fn solve_leg(skel: &Skeleton<f64>, frame: &mut BodyFrame, left: bool, target: FootTarget) {
    let (hip, knee, ankle) = if left { (sk::L_HIP, sk::L_KNEE, sk::L_ANKLE) } else { (sk::R_HIP, sk::R_KNEE, sk::R_ANKLE) };
    let (l1, l2) = skel.leg_lengths();
    let pelvis = rot_y(frame.yaw);
    let hoff = apply(&pelvis, &skel.rest_offset(hip));
    let hip_pos = [frame.root[0] + hoff[0], frame.root[1] + hoff[1], frame.root[2] + hoff[2]];
    let world = [target.ankle[0] - hip_pos[0], target.ankle[1] - hip_pos[1], target.ankle[2] - hip_pos[2]];
    let mut d = apply(&transpose(&pelvis), &world);

    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
    let reach = len.clamp((l1 - l2).abs() + 1e-4, 0.999 * (l1 + l2));
    d = d.map(|v| v * reach / len);

    let cos_k = ((reach * reach - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let k = cos_k.acos();
    // Leg vector in the hip frame before the hip rotation.
    let w = [0.0, -l1 - l2 * k.cos(), -l2 * k.sin()];
    let lateral = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let roll = d[0].atan2(-d[1]);
    let u = [0.0, -lateral, d[2]];
    let pitch = u[2].atan2(u[1]) - w[2].atan2(w[1]);

    frame.local[hip] = matmul(&rot_z(roll), &rot_x(pitch));
    frame.local[knee] = rot_x(k);
    let knee_global = matmul(&matmul(&pelvis, &frame.local[hip]), &frame.local[knee]);
    let foot_global = matmul(&rot_y(target.yaw), &rot_x(target.pitch));
    frame.local[ankle] = matmul(&transpose(&knee_global), &foot_global);
}

/// Ankle position that keeps the toe at `toe` while the heel is raised by `pitch`.
pub(crate) fn ankle_for_toe(skel: &Skeleton<f64>, toe: Vec3<f64>, yaw: f64, pitch: f64) -> Vec3<f64> {
    let off = apply(&matmul(&rot_y(yaw), &rot_x(pitch)), &skel.rest_offset(sk::L_FOOT));
    [toe[0] - off[0], toe[1] - off[1], toe[2] - off[2]]
}

/// Toe pitch that lifts the ankle `raise` meters above its flat-foot height.
pub(crate) fn heel_raise_pitch(skel: &Skeleton<f64>, raise: f64) -> f64 {
    let o = skel.rest_offset(sk::L_FOOT);
    let (a, b) = (-o[1], o[2]);
    let r = (a * a + b * b).sqrt();
    let beta = b.atan2(a);
    beta - ((a + raise.max(0.0)) / r).clamp(-1.0, 1.0).acos()
}
