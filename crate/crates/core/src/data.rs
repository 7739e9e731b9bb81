//! Conversion of stored records into padded training/inference batches.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::motion::{extract_trajectory_targets, Skeleton, POSE_DIM, TRAJ_DIM};
use crate::pressure::{temporal_diff, Calibration};
use crate::synth::SequenceRecord;

/// Multiplier applied to raw pressure values before they enter a network.
pub const PRESSURE_SCALE: f32 = 0.1;

/// A record with its derived network inputs and targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub pose: Array2<f32>,
    /// Scaled pressure, `N x H x W`.
    pub pressure: Array3<f32>,
    pub dpressure: Array3<f32>,
    pub traj_target: Array2<f32>,
    pub calib: Calibration,
    pub captions: Vec<String>,
}

impl Prepared {
    pub fn frames(&self) -> usize {
        self.pose.nrows()
    }

    pub fn mat_size(&self) -> (usize, usize) {
        let (_, h, w) = self.pressure.dim();
        (h, w)
    }
}

pub fn prepare(rec: &SequenceRecord) -> Result<Prepared> {
    let pose64 = rec.pose.cast::<f64>();
    let traj = extract_trajectory_targets(&pose64, &Skeleton::standard())?;
    let pressure = rec.pressure.maps().mapv(|v| v * PRESSURE_SCALE);
    let scaled = crate::pressure::PressureSequence::new(pressure.clone())?;
    Ok(Prepared {
        name: rec.name.clone(),
        pose: rec.pose.data().to_owned(),
        dpressure: temporal_diff(&scaled),
        pressure,
        traj_target: traj.mapv(|v| v as f32),
        calib: rec.calib,
        captions: rec.captions.to_vec(),
    })
}

pub fn prepare_all(recs: &[SequenceRecord]) -> Result<Vec<Prepared>> {
    recs.iter().map(prepare).collect()
}

/// Padded batch; all per-frame tensors are `B x L x ...` with `L = max(lengths)`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub lengths: Vec<usize>,
    pub pose: Tensor,
    pub pressure: Tensor,
    pub dpressure: Tensor,
    pub traj_target: Tensor,
    /// Calibration offsets `B x 2`.
    pub offset: Tensor,
}

fn pad2(items: &[&Array2<f32>], l: usize, width: usize) -> Vec<f32> {
    let mut out = vec![0f32; items.len() * l * width];
    for (b, a) in items.iter().enumerate() {
        for (i, row) in a.axis_iter(Axis(0)).enumerate() {
            let base = (b * l + i) * width;
            for (k, v) in row.iter().enumerate() {
                out[base + k] = *v;
            }
        }
    }
    out
}

fn pad3(items: &[&Array3<f32>], l: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; items.len() * l * h * w];
    for (b, a) in items.iter().enumerate() {
        let n = a.len();
        let base = b * l * h * w;
        match a.as_slice() {
            Some(s) => out[base..base + n].copy_from_slice(s),
            None => out[base..base + n].iter_mut().zip(a.iter()).for_each(|(o, v)| *o = *v),
        }
    }
    out
}

pub fn collate(items: &[&Prepared], dtype: DType, device: &Device) -> Result<Batch> {
    let first = items.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (h, w) = first.mat_size();
    if items.iter().any(|p| p.mat_size() != (h, w)) {
        return Err(Error::Shape("batch mixes mat sizes".into()));
    }
    let lengths: Vec<usize> = items.iter().map(|p| p.frames()).collect();
    let l = *lengths.iter().max().expect("non-empty");
    let b = items.len();
    let t = |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> { Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?) };
    let poses: Vec<_> = items.iter().map(|p| &p.pose).collect();
    let trajs: Vec<_> = items.iter().map(|p| &p.traj_target).collect();
    let ps: Vec<_> = items.iter().map(|p| &p.pressure).collect();
    let dps: Vec<_> = items.iter().map(|p| &p.dpressure).collect();
    let offsets: Vec<f32> = items.iter().flat_map(|p| [p.calib.offset[0] as f32, p.calib.offset[1] as f32]).collect();
    Ok(Batch {
        pose: t(pad2(&poses, l, POSE_DIM), &[b, l, POSE_DIM])?,
        traj_target: t(pad2(&trajs, l, TRAJ_DIM), &[b, l, TRAJ_DIM])?,
        pressure: t(pad3(&ps, l, h, w), &[b, l, h, w])?,
        dpressure: t(pad3(&dps, l, h, w), &[b, l, h, w])?,
        offset: t(offsets, &[b, 2])?,
        lengths,
    })
}

/// Tensor `B x L x D` back to per-item arrays truncated to their lengths.
pub fn unpad(x: &Tensor, lengths: &[usize]) -> Result<Vec<Array2<f32>>> {
    let x = x.to_dtype(DType::F32)?;
    let (_, _, d) = x.dims3()?;
    let mut out = Vec::with_capacity(lengths.len());
    for (b, &n) in lengths.iter().enumerate() {
        let v = x.get(b)?.narrow(0, 0, n)?.flatten_all()?.to_vec1::<f32>()?;
        out.push(Array2::from_shape_vec((n, d), v).expect("sized"));
    }
    Ok(out)
}
