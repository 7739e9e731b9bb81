//! Diffusion, pressure-motion consistency and total losses, with a differentiable
//! key-joint forward kinematics on motion tensors.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{layout, skeleton::KEY_JOINTS, FPS, JOINT_COUNT, POSE_DIM, TRAJ_DIM, TRAJ_POS_DIM};
use crate::nn::frame_mask;

const NORM_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub diff: f64,
    pub cons: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { diff: 1.0, cons: 5.0 }
    }
}

impl LossWeights {
    pub fn new(diff: f64, cons: f64) -> Result<Self> {
        if !(diff >= 0.0 && cons >= 0.0 && diff.is_finite() && cons.is_finite()) {
            return Err(Error::Invalid(format!("loss weights must be finite and >= 0, got ({diff}, {cons})")));
        }
        Ok(Self { diff, cons })
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error over every entry.
pub fn diffusion_loss(x0: &Tensor, x0_hat: &Tensor) -> Result<Tensor> {
    same_shape(x0, x0_hat)?;
    Ok((x0 - x0_hat)?.sqr()?.mean_all()?)
}

/// Mean squared error over the valid frames of a padded `B x L x D` batch.
pub fn masked_diffusion_loss(x0: &Tensor, x0_hat: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    same_shape(x0, x0_hat)?;
    let (_, l, d) = x0.dims3()?;
    let mask = frame_mask(lengths, l, x0.dtype(), x0.device())?;
    let frames: usize = lengths.iter().sum();
    if frames == 0 {
        return Err(Error::Invalid("batch has no valid frames".into()));
    }
    let se = (x0 - x0_hat)?.sqr()?.broadcast_mul(&mask)?.sum_all()?;
    Ok((se / (frames * d) as f64)?)
}

/// `L x L` matrix with `scale` where `m < n` (strict) or `m <= n` (inclusive).
fn prefix_matrix(l: usize, strict: bool, scale: f64, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f64; l * l];
    for m in 0..l {
        for n in 0..l {
            if m < n || (!strict && m == n) {
                v[m * l + n] = scale;
            }
        }
    }
    Ok(Tensor::from_vec(v, (l, l), device)?.to_dtype(dtype)?)
}

/// Global positions of the key joints, `B x L x 5 x 3`, integrated exactly like
/// `recover_global_joints`.
pub fn key_joint_positions(x: &Tensor) -> Result<Tensor> {
    let (b, l, w) = x.dims3()?;
    if w != POSE_DIM {
        return Err(Error::Shape(format!("motion width {w} != {POSE_DIM}")));
    }
    let (dtype, device) = (x.dtype(), x.device());
    let dt = 1.0 / FPS as f64;
    let col = |c: usize| -> Result<Tensor> { Ok(x.narrow(2, c, 1)?.squeeze(2)?) };
    let b2 = |t: Tensor| -> Result<Tensor> { Ok(t.reshape((b, l))?) };
    let theta = b2(col(layout::ROOT_ANG_VEL)?.matmul(&prefix_matrix(l, true, dt, dtype, device)?)?)?;
    let (c, s) = (theta.cos()?, theta.sin()?);
    let shifted = |t: Tensor| -> Result<Tensor> {
        if l == 1 {
            return Ok(t.zeros_like()?);
        }
        Ok(Tensor::cat(&[Tensor::zeros((b, 1), dtype, device)?, t.narrow(1, 0, l - 1)?], 1)?)
    };
    let vx = shifted(col(layout::ROOT_LIN_VEL)?)?;
    let vz = shifted(col(layout::ROOT_LIN_VEL + 1)?)?;
    let dx = ((&c * &vx)? + (&s * &vz)?)?;
    let dz = ((&c * &vz)? - (&s * &vx)?)?;
    let incl = prefix_matrix(l, false, dt, dtype, device)?;
    let rx = b2(dx.matmul(&incl)?)?;
    let rz = b2(dz.matmul(&incl)?)?;
    let mut joints = Vec::with_capacity(KEY_JOINTS.len());
    for &j in KEY_JOINTS.iter() {
        let p = if j == 0 {
            Tensor::stack(&[rx.clone(), col(layout::ROOT_HEIGHT)?, rz.clone()], 2)?
        } else {
            let base = crate::motion::repr::local_pos_col(j);
            let (lx, ly, lz) = (col(base)?, col(base + 1)?, col(base + 2)?);
            let gx = (((&c * &lx)? + (&s * &lz)?)? + &rx)?;
            let gz = (((&c * &lz)? - (&s * &lx)?)? + &rz)?;
            Tensor::stack(&[gx, ly, gz], 2)?
        };
        joints.push(p);
    }
    Ok(Tensor::stack(&joints, 2)?)
}

/// Binary weights over the key joints, `B x L x 5`; a frame is either fully in (5) or out (0).
#[derive(Debug, Clone)]
pub struct KeyJointMask {
    values: Tensor,
}

impl KeyJointMask {
    /// All valid frames carry the control signal.
    pub fn from_lengths(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Self> {
        let m = frame_mask(lengths, max_len, dtype, device)?;
        Ok(Self {
            values: m.broadcast_as((lengths.len(), max_len, KEY_JOINTS.len()))?.contiguous()?,
        })
    }

    /// `present[b][n]` marks frames with a control signal.
    pub fn from_frames(present: &[Vec<bool>], dtype: DType, device: &Device) -> Result<Self> {
        let l = present.iter().map(Vec::len).max().unwrap_or(0);
        let k = KEY_JOINTS.len();
        let mut v = vec![0f32; present.len() * l * k];
        for (b, row) in present.iter().enumerate() {
            for (n, &on) in row.iter().enumerate() {
                if on {
                    v[(b * l + n) * k..(b * l + n + 1) * k].fill(1.0);
                }
            }
        }
        Ok(Self {
            values: Tensor::from_vec(v, (present.len(), l, k), device)?.to_dtype(dtype)?,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    /// The mask of item `b` over all 22 joints, `L x 22`.
    pub fn joint_rows(&self, b: usize) -> Result<Array2<f32>> {
        let rows = self.values.get(b)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let mut out = Array2::zeros((rows.len(), JOINT_COUNT));
        for (n, r) in rows.iter().enumerate() {
            for (k, &j) in KEY_JOINTS.iter().enumerate() {
                out[[n, j]] = r[k];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyLoss {
    pub value: Tensor,
    /// Set when the mask is empty; the value is then zero.
    pub degenerate: bool,
}

/// Mask-weighted mean Euclidean distance between the trajectory's key-joint positions
/// and the key joints recovered from `x0_hat`.
pub fn consistency_loss(traj: &Tensor, x0_hat: &Tensor, mask: &KeyJointMask) -> Result<ConsistencyLoss> {
    let (b, l, w) = traj.dims3()?;
    let (xb, xl, _) = x0_hat.dims3()?;
    if w != TRAJ_DIM || (b, l) != (xb, xl) || mask.values.dims() != [b, l, KEY_JOINTS.len()] {
        return Err(Error::Shape(format!("trajectory {:?}, motion {:?}, mask {:?}", traj.dims(), x0_hat.dims(), mask.values.dims())));
    }
    let total = mask.values.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if total == 0.0 {
        return Ok(ConsistencyLoss {
            value: Tensor::zeros((), x0_hat.dtype(), x0_hat.device())?,
            degenerate: true,
        });
    }
    let e = traj.narrow(2, 0, TRAJ_POS_DIM)?.reshape((b, l, KEY_JOINTS.len(), 3))?;
    let r = key_joint_positions(x0_hat)?;
    let dist = ((e - r)?.sqr()?.sum(3)? + NORM_EPS)?.sqrt()?;
    let value = (dist.mul(&mask.values)?.sum_all()? / total)?;
    Ok(ConsistencyLoss { value, degenerate: false })
}

pub fn total_loss(l_diff: &Tensor, l_cons: &Tensor, w: LossWeights) -> Result<Tensor> {
    Ok(((l_diff * w.diff)? + (l_cons * w.cons)?)?)
}

pub fn total_loss_value(l_diff: f64, l_cons: f64, w: LossWeights) -> f64 {
    w.diff * l_diff + w.cons * l_cons
}
