//! The 263-wide per-frame motion representation and global joint sequences.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};

use super::skeleton::JOINT_COUNT;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const FPS: u32 = 20;
pub const POSE_DIM: usize = 263;

/// Column layout of one frame.
pub mod layout {
    /// Root angular velocity about the vertical axis, rad/s.
    pub const ROOT_ANG_VEL: usize = 0;
    /// Root planar velocity (x, z) in the heading frame, m/s.
    pub const ROOT_LIN_VEL: usize = 1;
    pub const ROOT_HEIGHT: usize = 3;
    /// Joints 1..22 relative to the root ground projection, heading frame.
    pub const LOCAL_POS: usize = 4;
    /// Joints 1..22 parent-relative rotations, 6D.
    pub const LOCAL_ROT: usize = LOCAL_POS + 21 * 3;
    /// All 22 joints, heading frame, m/s.
    pub const JOINT_VEL: usize = LOCAL_ROT + 21 * 6;
    pub const FOOT_CONTACT: usize = JOINT_VEL + 22 * 3;
    pub const END: usize = FOOT_CONTACT + 4;
}

const _: () = assert!(layout::END == POSE_DIM);

/// Column of the local position block for a non-root joint.
pub fn local_pos_col(joint: usize) -> usize {
    debug_assert!(joint >= 1);
    layout::LOCAL_POS + 3 * (joint - 1)
}

pub fn local_rot_col(joint: usize) -> usize {
    debug_assert!(joint >= 1);
    layout::LOCAL_ROT + 6 * (joint - 1)
}

pub fn joint_vel_col(joint: usize) -> usize {
    layout::JOINT_VEL + 3 * joint
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<R: Real> {
    data: Array2<R>,
}

impl<R: Real> PoseSequence<R> {
    pub fn new(data: Array2<R>) -> Result<Self> {
        if data.ncols() != POSE_DIM {
            return Err(Error::Shape(format!("pose width {} != {POSE_DIM}", data.ncols())));
        }
        if data.nrows() == 0 {
            return Err(Error::Invalid("pose sequence has no frames".into()));
        }
        Ok(Self { data })
    }

    /// Like `new` but also rejects non-finite entries.
    pub fn new_checked(data: Array2<R>) -> Result<Self> {
        let p = Self::new(data)?;
        p.check_finite()?;
        Ok(p)
    }

    pub fn zeros(frames: usize) -> Result<Self> {
        Self::new(Array2::zeros((frames, POSE_DIM)))
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("pose sequence"))
        }
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn fps(&self) -> u32 {
        FPS
    }

    pub fn data(&self) -> ArrayView2<'_, R> {
        self.data.view()
    }

    pub fn data_mut(&mut self) -> &mut Array2<R> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array2<R> {
        self.data
    }

    pub fn frame(&self, n: usize) -> ArrayView1<'_, R> {
        self.data.row(n)
    }

    pub fn foot_contacts(&self) -> ArrayView2<'_, R> {
        self.data.slice(s![.., layout::FOOT_CONTACT..layout::END])
    }

    pub fn cast<S: Real>(&self) -> PoseSequence<S> {
        PoseSequence {
            data: self.data.mapv(|v| S::lit(v.as_f64())),
        }
    }
}

/// Global joint positions, `N x 22 x 3`, meters; y is up, the ground is the XZ plane.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence<R: Real> {
    data: Array3<R>,
}

impl<R: Real> JointSequence<R> {
    pub fn new(data: Array3<R>) -> Result<Self> {
        let (_, j, c) = data.dim();
        if j != JOINT_COUNT || c != 3 {
            return Err(Error::Shape(format!("joint sequence shape {:?}", data.dim())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("joint sequence"));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<R> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<R> {
        self.data
    }

    pub fn get(&self, frame: usize, joint: usize) -> [R; 3] {
        [
            self.data[[frame, joint, 0]],
            self.data[[frame, joint, 1]],
            self.data[[frame, joint, 2]],
        ]
    }

    pub fn cast<S: Real>(&self) -> JointSequence<S> {
        JointSequence {
            data: self.data.mapv(|v| S::lit(v.as_f64())),
        }
    }

    /// Rigidly translates every joint by `d`.
    pub fn translated(&self, d: [R; 3]) -> Self {
        let mut data = self.data.clone();
        for mut p in data.rows_mut() {
            for k in 0..3 {
                p[k] = p[k] + d[k];
            }
        }
        Self { data }
    }
}
