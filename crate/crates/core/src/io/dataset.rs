//! On-disk dataset layout: `<root>/<split>/<sequence>/{meta.json, motion.f32, pressure.f32, joints.f32}`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{JointSequence, PoseSequence, FPS, JOINT_COUNT, POSE_DIM};
use crate::pressure::{Calibration, PressureSequence};
use crate::synth::{Dataset, MotionKind, SequenceRecord, CAPTION_LEVELS};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub fps: u32,
    pub mass_kg: f64,
    pub height_m: f64,
    pub calib: Calibration,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<MotionKind>,
}

fn write_f32(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() / 4,
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_record(dir: &Path, rec: &SequenceRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f32(&dir.join("motion.f32"), rec.pose.data().iter().copied())?;
    write_f32(&dir.join("pressure.f32"), rec.pressure.maps().iter().copied())?;
    write_f32(&dir.join("joints.f32"), rec.joints.data().iter().copied())?;
    let meta = SequenceMeta {
        frames: rec.frames(),
        height: rec.pressure.height(),
        width: rec.pressure.width(),
        fps: FPS,
        mass_kg: rec.mass_kg,
        height_m: rec.height_m,
        calib: rec.calib,
        captions: rec.captions.to_vec(),
        kind: rec.kind,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_record(dir: &Path) -> Result<SequenceRecord> {
    let meta_path = dir.join("meta.json");
    let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let bad = |reason: String| Error::Meta {
        path: meta_path.clone(),
        reason,
    };
    let meta: SequenceMeta = serde_json::from_slice(&text).map_err(|e| bad(e.to_string()))?;
    if meta.fps != FPS {
        return Err(bad(format!("fps {} != {FPS}", meta.fps)));
    }
    if meta.frames == 0 || meta.height == 0 || meta.width == 0 {
        return Err(bad("frames, H and W must be positive".into()));
    }
    let captions: [String; CAPTION_LEVELS] = meta
        .captions
        .clone()
        .try_into()
        .map_err(|c: Vec<String>| bad(format!("{} captions, expected {CAPTION_LEVELS}", c.len())))?;
    meta.calib.validate().map_err(|e| bad(e.to_string()))?;
    let n = meta.frames;
    let motion = read_f32(&dir.join("motion.f32"), n * POSE_DIM)?;
    let pressure = read_f32(&dir.join("pressure.f32"), n * meta.height * meta.width)?;
    let joints = read_f32(&dir.join("joints.f32"), n * JOINT_COUNT * 3)?;
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(SequenceRecord {
        name,
        kind: meta.kind,
        pose: PoseSequence::new(Array2::from_shape_vec((n, POSE_DIM), motion).expect("sized"))?,
        joints: JointSequence::new(Array3::from_shape_vec((n, JOINT_COUNT, 3), joints).expect("sized"))?,
        pressure: PressureSequence::new(Array3::from_shape_vec((n, meta.height, meta.width), pressure).expect("sized"))?,
        calib: meta.calib,
        captions,
        mass_kg: meta.mass_kg,
        height_m: meta.height_m,
    })
}

pub fn read_split(root: &Path, split: &str) -> Result<Vec<SequenceRecord>> {
    let dir = root.join(split);
    let mut names: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    names.sort();
    names.iter().map(|p| read_record(p)).collect()
}

pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    for split in SPLITS {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for rec in ds.split(split)? {
            write_record(&dir.join(&rec.name), rec)?;
        }
    }
    Ok(())
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: read_split(root, "train")?,
        val: read_split(root, "val")?,
        test: read_split(root, "test")?,
    })
}
