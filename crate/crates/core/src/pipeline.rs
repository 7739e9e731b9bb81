//! Batched motion generation, model loading and sample files.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::control::{ControlBranch, ControlInputs, GuidedModel};
use crate::data::unpad;
use crate::diffusion::{make_schedule, sample_cfg, sample_single_step, Denoiser};
use crate::error::{Error, Result};
use crate::eval::joints_of;
use crate::features::TrajExtractor;
use crate::io::{export_joints, write_atomic, Bundle};
use crate::motion::POSE_DIM;
use crate::nn::ParamSet;
use crate::training::{make_batch, TrainItem, TrainMode};

/// Architecture keys of a bundle must agree with the run config.
fn check_model(bundle: &Bundle, cfg: &RunConfig) -> Result<()> {
    let keys: Vec<String> = bundle.config.diff(cfg).into_iter().filter(|k| k.starts_with("model.")).collect();
    if keys.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(keys))
    }
}

pub fn load_traj(dir: &Path, cfg: &RunConfig, mat: (usize, usize)) -> Result<(ParamSet, TrajExtractor)> {
    let bundle = Bundle::read(dir)?;
    check_model(&bundle, cfg)?;
    let mut set = ParamSet::new(0, DType::F32);
    let net = TrajExtractor::new(set.root(), &cfg.model, mat)?;
    bundle.restore(dir, "traj", &mut set)?;
    Ok((set, net))
}

pub fn load_backbone(dir: &Path, cfg: &RunConfig) -> Result<(ParamSet, Denoiser)> {
    let bundle = Bundle::read(dir)?;
    check_model(&bundle, cfg)?;
    let mut set = ParamSet::new(0, DType::F32);
    let net = Denoiser::new(set.root(), &cfg.model)?;
    bundle.restore(dir, "backbone", &mut set)?;
    Ok((set, net))
}

/// Returns the branch and the mode it was trained in.
pub fn load_branch(dir: &Path, cfg: &RunConfig, mat: (usize, usize)) -> Result<(ParamSet, ControlBranch, Option<TrainMode>)> {
    let bundle = Bundle::read(dir)?;
    check_model(&bundle, cfg)?;
    let mut set = ParamSet::new(0, DType::F32);
    let net = ControlBranch::new(set.root(), &cfg.model, mat)?;
    bundle.restore(dir, "branch", &mut set)?;
    let mode = bundle.mode.as_deref().map(str::parse).transpose()?;
    Ok((set, net, mode))
}

pub const SAMPLES_FILE: &str = "samples.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleIndex {
    pub mode: TrainMode,
    pub names: Vec<String>,
    pub frames: Vec<usize>,
}

/// Writes `<name>/motion.f32` (little-endian, `N x 263`) and `<name>/joints.csv` per sample.
pub fn write_samples(dir: &Path, mode: TrainMode, names: &[String], motions: &[Array2<f32>]) -> Result<()> {
    if names.len() != motions.len() {
        return Err(Error::Invalid(format!("{} names for {} motions", names.len(), motions.len())));
    }
    for (name, m) in names.iter().zip(motions) {
        let d = dir.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let bytes: Vec<u8> = m.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&d.join("motion.f32"), &bytes)?;
        export_joints(&joints_of(m)?, &d.join("joints.csv"))?;
    }
    let index = SampleIndex {
        mode,
        names: names.to_vec(),
        frames: motions.iter().map(Array2::nrows).collect(),
    };
    write_atomic(&dir.join(SAMPLES_FILE), &serde_json::to_vec_pretty(&index)?)
}

pub fn read_samples(dir: &Path) -> Result<(SampleIndex, Vec<Array2<f32>>)> {
    let path = dir.join(SAMPLES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: SampleIndex = serde_json::from_str(&text).map_err(|e| Error::Meta {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(index.names.len());
    for (name, &n) in index.names.iter().zip(&index.frames) {
        let p = dir.join(name).join("motion.f32");
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bytes.len() != n * POSE_DIM * 4 {
            return Err(Error::PayloadSize {
                path: p,
                expected: n * POSE_DIM,
                found: bytes.len() / 4,
            });
        }
        let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(Array2::from_shape_vec((n, POSE_DIM), vals).expect("size checked"));
    }
    Ok((index, out))
}

/// Generates one motion per item from its first caption, in input order.
///
/// `text_only` ignores the branch; `regression` runs a single pass from t = T.
pub fn synthesize(
    backbone: &Denoiser,
    branch: Option<&ControlBranch>,
    items: &[TrainItem],
    cfg: &RunConfig,
    mode: TrainMode,
    seed: u64,
) -> Result<Vec<Array2<f32>>> {
    let sched = make_schedule(cfg.model.diffusion_steps)?;
    let branch = if mode.uses_branch() {
        Some(branch.ok_or_else(|| Error::Invalid(format!("mode {} needs a control branch", mode.as_str())))?)
    } else {
        None
    };
    let size = cfg.sampling.batch_size.max(1);
    let mut out = Vec::with_capacity(items.len());
    for (k, chunk) in items.chunks(size).enumerate() {
        let refs: Vec<&TrainItem> = chunk.iter().collect();
        let tb = make_batch(&refs, &vec![0; refs.len()], &vec![false; refs.len()], DType::F32, &Device::Cpu)?;
        let lengths = &tb.batch.lengths;
        let mut model = GuidedModel::text_only(backbone);
        if let Some(br) = branch {
            let shift = br.shift.forward(&tb.batch.pressure, &tb.batch.dpressure)?;
            model = GuidedModel::with_control(backbone, br, ControlInputs { traj: tb.traj.clone(), shift });
            if cfg.sampling.control_scaling {
                model.scaling = Some(&sched);
            }
        }
        let batch_seed = seed.wrapping_add(k as u64);
        let x = match mode {
            TrainMode::Regression => sample_single_step(&model, &tb.text, cfg.sampling.cfg_scale, &sched, lengths, batch_seed)?,
            _ => sample_cfg(&model, &tb.text, cfg.sampling.cfg_scale, &sched, lengths, batch_seed)?,
        };
        out.extend(unpad(&x, lengths)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::HashTextEncoder;
    use crate::features::TrajExtractor;
    use crate::fixtures::{prepared, tiny_config};
    use crate::nn::ParamSet;
    use crate::synth::MotionKind;
    use crate::training::cache_items;

    #[test]
    fn output_matches_lengths_and_is_deterministic() {
        let mut cfg = tiny_config();
        cfg.sampling.batch_size = 3;
        let items = prepared(&cfg.data, &[MotionKind::Walk, MotionKind::Jump], 5, 3).unwrap();
        let mat = items[0].mat_size();
        let traj_set = ParamSet::new(1, DType::F32);
        let traj = TrajExtractor::new(traj_set.root(), &cfg.model, mat).unwrap();
        let enc = HashTextEncoder::new(cfg.model.text_dim, 0);
        let items = cache_items(items, Some(&traj), &enc).unwrap();
        let bset = ParamSet::new(2, DType::F32);
        let backbone = Denoiser::new(bset.root(), &cfg.model).unwrap();
        let brset = ParamSet::new(3, DType::F32);
        let branch = ControlBranch::from_backbone(&brset, &bset, &cfg.model, mat).unwrap();
        for mode in TrainMode::ALL {
            let a = synthesize(&backbone, Some(&branch), &items, &cfg, mode, 11).unwrap();
            let b = synthesize(&backbone, Some(&branch), &items, &cfg, mode, 11).unwrap();
            assert_eq!(a.len(), items.len());
            for (m, it) in a.iter().zip(&items) {
                assert_eq!(m.dim(), (it.data.frames(), 263));
                assert!(m.iter().all(|v| v.is_finite()));
            }
            assert_eq!(a, b);
        }
        assert!(synthesize(&backbone, None, &items, &cfg, TrainMode::Full, 0).is_err());
        assert!(synthesize(&backbone, None, &items, &cfg, TrainMode::TextOnly, 0).is_ok());

        let dir = tempfile::tempdir().unwrap();
        let motions = synthesize(&backbone, Some(&branch), &items, &cfg, TrainMode::Full, 2).unwrap();
        let names: Vec<String> = items.iter().map(|i| i.data.name.clone()).collect();
        write_samples(dir.path(), TrainMode::Full, &names, &motions).unwrap();
        let (index, back) = read_samples(dir.path()).unwrap();
        assert_eq!(index.names, names);
        assert_eq!(back, motions);
    }

    #[test]
    fn loaders_restore_saved_components() {
        let cfg = tiny_config();
        let mat = (cfg.data.mat_height, cfg.data.mat_width);
        let dir = tempfile::tempdir().unwrap();
        let mut bset = ParamSet::new(4, DType::F32);
        Denoiser::new(bset.root(), &cfg.model).unwrap();
        bset.set_frozen(true);
        crate::io::save_bundle(&dir.path().join("b"), &cfg, 3, None, &[("backbone", &bset)]).unwrap();
        let brset = ParamSet::new(5, DType::F32);
        ControlBranch::from_backbone(&brset, &bset, &cfg.model, mat).unwrap();
        brset.randomize(6, 0.1).unwrap();
        crate::io::save_bundle(&dir.path().join("c"), &cfg, 3, Some("regression"), &[("branch", &brset)]).unwrap();

        let (b2, _) = load_backbone(&dir.path().join("b"), &cfg).unwrap();
        assert!(b2.is_frozen());
        assert_eq!(b2.snapshot().unwrap(), bset.snapshot().unwrap());
        let (c2, _, mode) = load_branch(&dir.path().join("c"), &cfg, mat).unwrap();
        assert_eq!(mode, Some(TrainMode::Regression));
        assert_eq!(c2.snapshot().unwrap(), brset.snapshot().unwrap());

        let mut other = cfg.clone();
        other.model.layers += 1;
        assert!(matches!(load_backbone(&dir.path().join("b"), &other), Err(Error::ConfigMismatch(_))));
        assert!(matches!(load_traj(&dir.path().join("b"), &cfg, mat), Err(Error::Checkpoint(_))));
    }
}
