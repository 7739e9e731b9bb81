//! Quick oracle and invariant checks run by the `selftest` subcommand.

use std::fs;
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ControlBranch, ControlInputs, GuidedModel};
use crate::data::collate;
use crate::diffusion::{make_schedule, sample_cfg, text_batch, Denoiser};
use crate::error::{Error, Result};
use crate::eval::{cop_weights, fid, frechet_from_moments};
use crate::fixtures::{prepared, records, tiny_config};
use crate::io::{joints_to_csv, parse_joints_csv, read_record, save_bundle, write_record, Bundle};
use crate::motion::{recover_global_joints, Rotation6D, Skeleton};
use crate::nn::ParamSet;
use crate::pressure::pixel_cop;
use crate::synth::{generate_motion, MotionKind, MotionRecipe};
use crate::training::{consistency_loss, masked_diffusion_loss, KeyJointMask};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("schedule", schedule),
    ("rotation_6d", rotation_6d),
    ("motion_round_trip", motion_round_trip),
    ("pixel_cop", pixel_cop_oracle),
    ("cop_weights", cop_weight_sum),
    ("frechet", frechet),
    ("diffusion_loss", diffusion_loss_oracle),
    ("consistency_on_targets", consistency_on_targets),
    ("zero_init_identity", zero_init_identity),
    ("dataset_round_trip", dataset_round_trip),
    ("checkpoint_round_trip", checkpoint_round_trip),
    ("joint_export", joint_export),
];

/// Runs every check; an error inside a check counts as a failure.
pub fn run() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

fn schedule() -> Result<(bool, String)> {
    let s = make_schedule(1000)?;
    let a1 = s.alpha_bar(1)?;
    let mut prod = 1.0;
    let mut worst: f64 = 0.0;
    let mut prev = 1.0;
    let mut monotone = true;
    for t in 1..=1000 {
        let a = s.alpha_bar(t)?;
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        prod *= 1.0 - beta;
        worst = worst.max((a - prod).abs());
        monotone &= a < prev;
        prev = a;
    }
    let ok = (a1 - 0.9999).abs() < 1e-12 && worst < 1e-12 && monotone;
    Ok((ok, format!("alpha_bar_1 {a1:.12}, product error {worst:.2e}")))
}

fn rotation_6d() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let axis: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)];
        let m = crate::motion::rotation::from_axis_angle(axis, rng.gen_range(-3.0..3.0));
        let back = Rotation6D::encode(&m).decode()?;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((m[i][j] - back[i][j]).abs());
            }
        }
    }
    Ok((worst < 1e-12, format!("max entry error {worst:.2e}")))
}

fn motion_round_trip() -> Result<(bool, String)> {
    let recipe = MotionRecipe::new(MotionKind::Walk, 40, 3);
    let m = generate_motion(&recipe)?;
    let joints = recover_global_joints(&m.pose, &Skeleton::<f64>::scaled(recipe.scale))?;
    let worst = joints
        .data()
        .iter()
        .zip(m.joints.data().iter())
        .fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
    Ok((worst < 1e-9, format!("max joint error {worst:.2e} m")))
}

fn pixel_cop_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = Array2::from_shape_fn((9, 13), |_| rng.gen_range(0.0..1.0f64));
    let (x, z) = pixel_cop(map.view()).ok_or(Error::Invalid("empty map".into()))?;
    let (mut si, mut sj, mut s) = (0.0, 0.0, 0.0);
    for r in 0..9 {
        for c in 0..13 {
            si += r as f64 * map[[r, c]];
            sj += c as f64 * map[[r, c]];
            s += map[[r, c]];
        }
    }
    let err = (x - sj / s).abs().max((z - si / s).abs());
    Ok((err < 1e-9, format!("error {err:.2e} px")))
}

fn cop_weight_sum() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let h = [0; 4].map(|_: i32| rng.gen_range(-0.1..0.5f64));
        let w = cop_weights(h, 0.05);
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    Ok((worst < 1e-9, format!("max sum error {worst:.2e}")))
}

fn frechet() -> Result<(bool, String)> {
    let d = frechet_from_moments(
        &DVector::from_element(1, 0.0),
        &DMatrix::from_element(1, 1, 1.0),
        &DVector::from_element(1, 1.0),
        &DMatrix::from_element(1, 1, 4.0),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Array2::from_shape_fn((64, 6), |_| rng.gen_range(-1.0..1.0f64));
    let same = fid(a.view(), a.view())?;
    Ok(((d - 2.0).abs() < 1e-6 && same < 1e-6, format!("1-D case {d:.9}, fid(A,A) {same:.2e}")))
}

fn diffusion_loss_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, l, d) = (3, 5, 263);
    let lengths = [5, 2, 4];
    let x: Vec<f64> = (0..b * l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..b * l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xt = Tensor::from_vec(x.clone(), (b, l, d), &Device::Cpu)?;
    let yt = Tensor::from_vec(y.clone(), (b, l, d), &Device::Cpu)?;
    let got = masked_diffusion_loss(&xt, &yt, &lengths)?.to_scalar::<f64>()?;
    let (mut s, mut n) = (0.0, 0.0);
    for (bi, &len) in lengths.iter().enumerate() {
        for f in 0..len {
            for k in 0..d {
                let i = (bi * l + f) * d + k;
                s += (x[i] - y[i]).powi(2);
            }
            n += 1.0;
        }
    }
    let want = s / (n * d as f64);
    let err = (got - want).abs();
    Ok((err < 1e-9, format!("loss {got:.9} vs {want:.9}")))
}

/// The targets extracted from a motion are reproduced by that motion exactly.
fn consistency_on_targets() -> Result<(bool, String)> {
    let cfg = tiny_config();
    let items = prepared(&cfg.data, &[MotionKind::Walk, MotionKind::Turn], 2, 6)?;
    let refs: Vec<_> = items.iter().collect();
    let batch = collate(&refs, DType::F64, &Device::Cpu)?;
    let l = batch.pose.dim(1)?;
    let mask = KeyJointMask::from_lengths(&batch.lengths, l, DType::F64, &Device::Cpu)?;
    let v = consistency_loss(&batch.traj_target, &batch.pose, &mask)?.value.to_scalar::<f64>()?;
    Ok((v < 1e-4, format!("loss {v:.2e}")))
}

/// An untrained branch leaves sampling bit-identical to the backbone alone.
fn zero_init_identity() -> Result<(bool, String)> {
    let cfg = tiny_config();
    let items = prepared(&cfg.data, &[MotionKind::Walk, MotionKind::Squat], 2, 7)?;
    let refs: Vec<_> = items.iter().collect();
    let batch = collate(&refs, DType::F32, &Device::Cpu)?;
    let bset = ParamSet::new(8, DType::F32);
    let backbone = Denoiser::new(bset.root(), &cfg.model)?;
    bset.randomize(9, 0.1)?;
    let brset = ParamSet::new(10, DType::F32);
    let branch = ControlBranch::from_backbone(&brset, &bset, &cfg.model, items[0].mat_size())?;
    let shift = branch.shift.forward(&batch.pressure, &batch.dpressure)?;
    let traj = batch.traj_target.clone();
    let emb = vec![vec![0.3f32; cfg.model.text_dim], vec![-0.2f32; cfg.model.text_dim]];
    let text = text_batch(&emb.iter().map(Vec::as_slice).collect::<Vec<_>>(), DType::F32, &Device::Cpu)?;
    let sched = make_schedule(cfg.model.diffusion_steps)?;
    let plain = GuidedModel::text_only(&backbone);
    let guided = GuidedModel::with_control(&backbone, &branch, ControlInputs { traj, shift });
    for seed in 0..2 {
        let a = sample_cfg(&plain, &text, 5.0, &sched, &batch.lengths, seed)?;
        let b = sample_cfg(&guided, &text, 5.0, &sched, &batch.lengths, seed)?;
        let differ = (a - b)?.abs()?.max_all()?.to_scalar::<f32>()?;
        if differ != 0.0 {
            return Ok((false, format!("seed {seed}: max difference {differ:e}")));
        }
    }
    Ok((true, "bit-identical".into()))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Result<Self> {
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let p = std::env::temp_dir().join(format!("plantar-selftest-{tag}-{}-{nanos}", std::process::id()));
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Self(p))
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn dataset_round_trip() -> Result<(bool, String)> {
    let cfg = tiny_config();
    let rec = records(&cfg.data, &[MotionKind::Jump], 1, 11)?.remove(0);
    let tmp = TempDir::new("data")?;
    let dir = tmp.0.join(&rec.name);
    write_record(&dir, &rec)?;
    let back = read_record(&dir)?;
    let same = back == rec;
    let payload = dir.join("pressure.f32");
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    fs::write(&payload, &bytes[..bytes.len() - 4]).map_err(|e| Error::io(&payload, e))?;
    let caught = matches!(read_record(&dir), Err(Error::PayloadSize { .. }));
    Ok((same && caught, format!("round trip {same}, truncation detected {caught}")))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let cfg = tiny_config();
    let mut set = ParamSet::new(12, DType::F32);
    Denoiser::new(set.root(), &cfg.model)?;
    set.set_frozen(true);
    let tmp = TempDir::new("ckpt")?;
    save_bundle(&tmp.0, &cfg, 0, None, &[("backbone", &set)])?;
    let mut back = ParamSet::new(13, DType::F32);
    Denoiser::new(back.root(), &cfg.model)?;
    let bundle = Bundle::read(&tmp.0)?;
    bundle.restore(&tmp.0, "backbone", &mut back)?;
    let same = back.snapshot()? == set.snapshot()? && back.is_frozen();
    let mut other = cfg.clone();
    other.training.lambda_cons = 1.0;
    let rejected = matches!(bundle.ensure_config(&other), Err(Error::ConfigMismatch(k)) if k == ["training.lambda_cons"]);
    Ok((same && rejected, format!("bit-exact {same}, altered config rejected {rejected}")))
}

fn joint_export() -> Result<(bool, String)> {
    let recipe = MotionRecipe::new(MotionKind::Sway, 40, 14);
    let joints = generate_motion(&recipe)?.joints;
    let back = parse_joints_csv(&joints_to_csv(&joints))?;
    let worst = joints.data().iter().zip(back.data().iter()).fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
    let rows_ok = back.frames() == joints.frames();
    Ok((rows_ok && worst <= 5e-7 + 1e-12, format!("max error {worst:.2e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let report = run();
        assert_eq!(report.len(), CHECKS.len());
        for c in &report {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
