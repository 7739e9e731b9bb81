//! Record assembly, mat placement, augmentation and split construction.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{generate_motion, MotionRecipe};
use super::render::{render_pressure, RenderParams};
use super::SequenceRecord;
use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::io::dataset::write_record;
use crate::motion::rotation::{apply, matmul, rot_y};
use crate::motion::skeleton::{CONTACT_JOINTS, JOINT_COUNT, PELVIS};
use crate::motion::{encode_motion_with, recover_global_joints, recover_global_rotations, ContactThresholds, JointSequence, PoseSequence, Skeleton};
use crate::pressure::Calibration;

/// In-memory dataset, one vector per split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceRecord>,
    pub val: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[SequenceRecord]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Invalid(format!("unknown split {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub originals: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub augmented: usize,
    pub clipped_footprints: usize,
}

/// (train, val, test) counts for `n` original sequences.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 80 / 100;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// Random calibration that keeps every foot joint at least `margin_px` inside the mat.
///
/// Falls back to centering when the motion is larger than the usable area.
pub fn place_on_mat(joints: &JointSequence<f64>, cfg: &DataConfig, rng: &mut impl Rng) -> Calibration {
    let mpp = cfg.meters_per_pixel;
    let margin = 4.0 * cfg.footprint_sigma_px * mpp;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for f in 0..joints.frames() {
        for &j in CONTACT_JOINTS.iter().chain([PELVIS].iter()) {
            let p = joints.get(f, j);
            for (a, c) in [(0, 0), (1, 2)] {
                lo[a] = lo[a].min(p[c]);
                hi[a] = hi[a].max(p[c]);
            }
        }
    }
    let extent = [(cfg.mat_width - 1) as f64 * mpp, (cfg.mat_height - 1) as f64 * mpp];
    let mut offset = [0.0; 2];
    for a in 0..2 {
        let min_o = hi[a] + margin - extent[a];
        let max_o = lo[a] - margin;
        offset[a] = if min_o <= max_o {
            rng.gen_range(min_o..=max_o)
        } else {
            (lo[a] + hi[a] - extent[a]) / 2.0
        };
    }
    Calibration {
        scale: [mpp, mpp],
        offset,
    }
}

fn thresholds(cfg: &DataConfig) -> ContactThresholds<f64> {
    ContactThresholds {
        height: cfg.contact_height,
        displacement: cfg.contact_displacement,
    }
}

/// Places a motion on the mat and renders its pressure; returns the record and its clip count.
pub fn make_record(
    name: String,
    recipe: &MotionRecipe,
    pose: &PoseSequence<f64>,
    captions: [String; 5],
    cfg: &DataConfig,
    rng: &mut impl Rng,
) -> Result<(SequenceRecord, usize)> {
    let skel = Skeleton::<f64>::scaled(recipe.scale);
    let joints = recover_global_joints(pose, &skel)?;
    let calib = place_on_mat(&joints, cfg, rng);
    let contacts = pose.foot_contacts().to_owned();
    let params = RenderParams {
        sigma_px: cfg.footprint_sigma_px,
        support_temperature: cfg.support_temperature,
    };
    let out = render_pressure(&joints, contacts.view(), recipe.mass_kg, &calib, cfg.mat_height, cfg.mat_width, &params)?;
    let record = SequenceRecord {
        name,
        kind: Some(recipe.kind),
        pose: pose.cast(),
        joints: joints.cast(),
        pressure: out.pressure.cast(),
        calib,
        captions,
        mass_kg: recipe.mass_kg,
        height_m: recipe.subject_height(),
    };
    Ok((record, out.clipped))
}

/// Rotates a motion about the vertical axis through the origin and re-encodes it.
pub fn rotate_motion(pose: &PoseSequence<f64>, skel: &Skeleton<f64>, theta: f64, cfg: &DataConfig) -> Result<PoseSequence<f64>> {
    let r = rot_y(theta);
    let joints = recover_global_joints(pose, skel)?;
    let rotations: Vec<_> = recover_global_rotations(pose, skel)?
        .into_iter()
        .map(|g| {
            let mut out = g;
            for j in 0..JOINT_COUNT {
                out[j] = matmul(&r, &g[j]);
            }
            out
        })
        .collect();
    let mut data = Array3::zeros(joints.data().dim());
    for f in 0..joints.frames() {
        for j in 0..JOINT_COUNT {
            let p = apply(&r, &joints.get(f, j));
            for k in 0..3 {
                data[[f, j, k]] = p[k];
            }
        }
    }
    encode_motion_with(&JointSequence::new(data)?, &rotations, skel, thresholds(cfg))
}

/// Jointly rotated and re-placed copy of a generated motion.
pub fn augment_record(
    name: String,
    recipe: &MotionRecipe,
    pose: &PoseSequence<f64>,
    captions: [String; 5],
    cfg: &DataConfig,
    rng: &mut impl Rng,
) -> Result<(SequenceRecord, usize)> {
    let theta = rng.gen_range(-PI..PI);
    let skel = Skeleton::<f64>::scaled(recipe.scale);
    let rotated = rotate_motion(pose, &skel, theta, cfg)?;
    make_record(name, recipe, &rotated, captions, cfg, rng)
}

/// Generates all records in memory.
pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<(Dataset, DatasetSummary)> {
    let n = cfg.sequences;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(n);
    let mut ds = Dataset::default();
    let mut clipped = 0;
    let mut augmented = 0;
    for (rank, &i) in order.iter().enumerate() {
        let kind = cfg.kinds[i % cfg.kinds.len()];
        let seq_seed = seed.wrapping_mul(0x0100_0000_01b3).wrapping_add(i as u64);
        let recipe = MotionRecipe::random_in(kind, seq_seed, cfg.min_frames, cfg.max_frames);
        let motion = generate_motion(&recipe)?;
        let mut seq_rng = ChaCha8Rng::seed_from_u64(seq_seed ^ 0x5eed);
        let name = format!("{i:05}_{kind}");
        let (rec, c) = make_record(name.clone(), &recipe, &motion.pose, motion.captions.clone(), cfg, &mut seq_rng)?;
        clipped += c;
        if rank < n_train {
            ds.train.push(rec);
            for copy in 0..cfg.augment_copies {
                let (aug, c) = augment_record(format!("{name}_aug{copy}"), &recipe, &motion.pose, motion.captions.clone(), cfg, &mut seq_rng)?;
                clipped += c;
                augmented += 1;
                ds.train.push(aug);
            }
        } else if rank < n_train + n_val {
            ds.val.push(rec);
        } else {
            ds.test.push(rec);
        }
    }
    for split in [&mut ds.train, &mut ds.val, &mut ds.test] {
        split.sort_by(|a, b| a.name.cmp(&b.name));
    }
    let summary = DatasetSummary {
        originals: n,
        train: ds.train.len(),
        val: ds.val.len(),
        test: ds.test.len(),
        augmented,
        clipped_footprints: clipped,
    };
    Ok((ds, summary))
}

fn staging_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

/// Generates the dataset and writes it under `out`; nothing is left behind on failure.
pub fn build_dataset(cfg: &DataConfig, seed: u64, out: &Path) -> Result<DatasetSummary> {
    if out.exists() && std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        return Err(Error::Invalid(format!("{} exists and is not empty", out.display())));
    }
    let (ds, summary) = generate_dataset(cfg, seed)?;
    let stage = staging_path(out);
    let result = (|| -> Result<()> {
        if stage.exists() {
            std::fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        }
        for split in ["train", "val", "test"] {
            let dir = stage.join(split);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for rec in ds.split(split)? {
                write_record(&dir.join(&rec.name), rec)?;
            }
        }
        let summary_path = stage.join("dataset.json");
        std::fs::write(&summary_path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&summary_path, e))?;
        if out.exists() {
            std::fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
        }
        std::fs::rename(&stage, out).map_err(|e| Error::io(out, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&stage);
    }
    result.map(|_| summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::MotionKind;

    fn small_cfg(n: usize) -> DataConfig {
        DataConfig {
            sequences: n,
            min_frames: 40,
            max_frames: 60,
            ..DataConfig::default()
        }
    }

    #[test]
    fn split_sizes_follow_80_15_5() {
        assert_eq!(split_sizes(100), (80, 15, 5));
        assert_eq!(split_sizes(0), (0, 0, 0));
        assert_eq!(split_sizes(20), (16, 3, 1));
    }

    #[test]
    fn rotation_augmentation_matches_rotated_joints() {
        let recipe = MotionRecipe::new(MotionKind::Walk, 60, 3);
        let m = generate_motion(&recipe).unwrap();
        let skel = Skeleton::<f64>::standard();
        let theta = 0.83;
        let rotated = rotate_motion(&m.pose, &skel, theta, &DataConfig::default()).unwrap();
        let got = recover_global_joints(&rotated, &skel).unwrap();
        let r = rot_y(theta);
        for f in 0..m.joints.frames() {
            for j in 0..JOINT_COUNT {
                let want = apply(&r, &m.joints.get(f, j));
                let have = got.get(f, j);
                for k in 0..3 {
                    assert!((want[k] - have[k]).abs() < 1e-5, "frame {f} joint {j}");
                }
            }
        }
    }

    #[test]
    fn placement_keeps_feet_on_the_mat() {
        let cfg = DataConfig::default();
        let m = generate_motion(&MotionRecipe::new(MotionKind::Walk, 100, 11)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = place_on_mat(&m.joints, &cfg, &mut rng);
        for f in 0..m.joints.frames() {
            for &j in &CONTACT_JOINTS {
                let p = m.joints.get(f, j);
                let (x, z) = c.world_to_pixel(p[0], p[2]);
                assert!(x >= 0.0 && z >= 0.0 && x <= 63.0 && z <= 63.0);
            }
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        let s = build_dataset(&small_cfg(0), 1, &out).unwrap();
        assert_eq!((s.train, s.val, s.test), (0, 0, 0));
        for split in ["train", "val", "test"] {
            assert!(out.join(split).is_dir());
        }
    }

    #[test]
    fn augmentation_only_on_train() {
        let (ds, s) = generate_dataset(&small_cfg(20), 5).unwrap();
        assert_eq!(s.train, 32);
        assert_eq!((ds.val.len(), ds.test.len()), (3, 1));
        assert!(ds.val.iter().chain(&ds.test).all(|r| !r.name.contains("aug")));
        assert_eq!(ds.train.iter().filter(|r| r.name.contains("aug")).count(), 16);
    }
}
