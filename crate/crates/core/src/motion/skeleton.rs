//! The 22-joint body tree in the HumanML3D joint ordering.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const JOINT_COUNT: usize = 22;

pub const PELVIS: usize = 0;
pub const L_HIP: usize = 1;
pub const R_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const L_KNEE: usize = 4;
pub const R_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const L_ANKLE: usize = 7;
pub const R_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const L_FOOT: usize = 10;
pub const R_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const L_COLLAR: usize = 13;
pub const R_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const L_SHOULDER: usize = 16;
pub const R_SHOULDER: usize = 17;
pub const L_ELBOW: usize = 18;
pub const R_ELBOW: usize = 19;
pub const L_WRIST: usize = 20;
pub const R_WRIST: usize = 21;

/// Joints whose global positions form the control trajectory, in output order.
pub const KEY_JOINTS: [usize; 5] = [PELVIS, L_ANKLE, R_ANKLE, L_FOOT, R_FOOT];

/// Joints whose global orientations form the control trajectory, in output order.
pub const KEY_ROTATION_JOINTS: [usize; 4] = [L_ANKLE, R_ANKLE, L_FOOT, R_FOOT];

/// Foot-contact channel order (left heel, left toe, right heel, right toe).
pub const CONTACT_JOINTS: [usize; 4] = [L_ANKLE, L_FOOT, R_ANKLE, R_FOOT];

/// Lower-body joints used by LMPJPE.
pub const LOWER_BODY: [usize; 8] = [L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE, L_FOOT, R_FOOT];

const PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(PELVIS),
    Some(PELVIS),
    Some(PELVIS),
    Some(L_HIP),
    Some(R_HIP),
    Some(SPINE1),
    Some(L_KNEE),
    Some(R_KNEE),
    Some(SPINE2),
    Some(L_ANKLE),
    Some(R_ANKLE),
    Some(SPINE3),
    Some(SPINE3),
    Some(SPINE3),
    Some(NECK),
    Some(L_COLLAR),
    Some(R_COLLAR),
    Some(L_SHOULDER),
    Some(R_SHOULDER),
    Some(L_ELBOW),
    Some(R_ELBOW),
];

const NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

// Offsets from the parent joint in the rest pose, meters. The body faces +Z,
// its left side is +X. The ankle sits 4 cm above the toe so a flat foot
// registers as grounded under the default 5 cm contact threshold.
const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.06, 0.0],
    [-0.09, -0.06, 0.0],
    [0.0, 0.11, -0.02],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.42, 0.0],
    [0.0, -0.42, 0.0],
    [0.0, 0.06, 0.02],
    [0.0, -0.04, 0.12],
    [0.0, -0.04, 0.12],
    [0.0, 0.21, -0.02],
    [0.07, 0.12, 0.0],
    [-0.07, 0.12, 0.0],
    [0.0, 0.10, 0.04],
    [0.11, 0.02, 0.0],
    [-0.11, 0.02, 0.0],
    [0.0, -0.27, 0.0],
    [0.0, -0.27, 0.0],
    [0.0, -0.25, 0.0],
    [0.0, -0.25, 0.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<R: Real> {
    parents: [Option<usize>; JOINT_COUNT],
    rest_offsets: [[R; 3]; JOINT_COUNT],
}

impl<R: Real> Default for Skeleton<R> {
    fn default() -> Self {
        Self::standard()
    }
}

impl<R: Real> Skeleton<R> {
    pub fn standard() -> Self {
        Self::scaled(R::one())
    }

    /// The standard skeleton with every bone multiplied by `scale`.
    pub fn scaled(scale: R) -> Self {
        let rest_offsets = REST_OFFSETS.map(|o| o.map(|v| R::lit(v) * scale));
        Self {
            parents: PARENTS,
            rest_offsets,
        }
    }

    /// Builds a skeleton from explicit data, checking the tree invariants.
    pub fn new(parents: [Option<usize>; JOINT_COUNT], rest_offsets: [[R; 3]; JOINT_COUNT]) -> Result<Self> {
        let skel = Self {
            parents,
            rest_offsets,
        };
        skel.validate()?;
        Ok(skel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parents[PELVIS].is_some() {
            return Err(Error::Invalid("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                // Parents precede children, which rules out cycles and extra roots.
                Some(p) if *p < j => {}
                _ => return Err(Error::Invalid(format!("joint {j} has invalid parent {p:?}"))),
            }
        }
        let mut feet = CONTACT_JOINTS.to_vec();
        feet.sort_unstable();
        feet.dedup();
        if feet.len() != CONTACT_JOINTS.len() {
            return Err(Error::Invalid("foot joints must be distinct".into()));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        JOINT_COUNT
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>; JOINT_COUNT] {
        &self.parents
    }

    pub fn rest_offset(&self, joint: usize) -> [R; 3] {
        self.rest_offsets[joint]
    }

    pub fn name(&self, joint: usize) -> &'static str {
        NAMES[joint]
    }

    /// Returns true when `ancestor` lies on the path from the root to `joint` (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, joint: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(j) = cur {
            if j == ancestor {
                return true;
            }
            cur = self.parents[j];
        }
        false
    }

    /// Height of the pelvis above the toes in the rest pose.
    pub fn standing_pelvis_height(&self) -> R {
        let mut y = R::zero();
        let mut cur = Some(L_FOOT);
        while let Some(j) = cur {
            y = y - self.rest_offsets[j][1];
            cur = self.parents[j];
        }
        y
    }

    /// Hip-to-knee and knee-to-ankle lengths.
    pub fn leg_lengths(&self) -> (R, R) {
        let n = |o: [R; 3]| (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
        (n(self.rest_offsets[L_KNEE]), n(self.rest_offsets[L_ANKLE]))
    }
}
