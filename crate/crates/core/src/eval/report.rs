//! Aggregate evaluation of generated motions against their references.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluator::Evaluator;
use super::metrics::{cop_distances, fid, foot_skating_counts, joint_errors, r_precision, trajectory_error_ratio};
use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::motion::{recover_global_joints, JointSequence, PoseSequence, Skeleton};
use crate::synth::SequenceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub sequences: usize,
    pub fid: Option<f64>,
    pub foot_skating: f64,
    pub cop_error_m: Option<f64>,
    pub lmpjpe_m: f64,
    pub mpjpe_m: f64,
    pub traj_error_ratio: f64,
    pub r_precision_top3: Option<f64>,
}

impl MetricReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }

    pub fn check_ranges(&self) -> Result<()> {
        let ratios = [Some(self.foot_skating), Some(self.traj_error_ratio), self.r_precision_top3];
        let dists = [self.fid, self.cop_error_m, Some(self.lmpjpe_m), Some(self.mpjpe_m)];
        if ratios.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) || dists.iter().flatten().any(|d| !(*d >= 0.0)) {
            return Err(Error::Invalid(format!("metric out of range: {self:?}")));
        }
        Ok(())
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Text table with one row per report.
pub fn metric_table(reports: &[MetricReport]) -> String {
    let mut s = format!(
        "{:<14} {:>9} {:>12} {:>10} {:>8} {:>8} {:>10} {:>8}\n",
        "Method", "FID", "FootSkating", "CoPError", "LMPJPE", "MPJPE", "TrajErr", "R@3"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<14} {:>9} {:>12.4} {:>10} {:>8.4} {:>8.4} {:>10.3} {:>8}\n",
            r.label,
            opt(r.fid, 3),
            r.foot_skating,
            opt(r.cop_error_m, 4),
            r.lmpjpe_m,
            r.mpjpe_m,
            r.traj_error_ratio,
            opt(r.r_precision_top3, 3),
        ));
    }
    s
}

pub fn joints_of(pose: &Array2<f32>) -> Result<JointSequence<f64>> {
    let p = PoseSequence::new(pose.mapv(|v| v as f64))?;
    recover_global_joints(&p, &Skeleton::standard())
}

/// Mean R-precision over seeded full batches (a single smaller batch when the set is short).
pub fn batched_r_precision(motion: &Array2<f64>, text: &Array2<f64>, batch: usize, k: usize, seed: u64) -> Result<f64> {
    let n = motion.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = batch.min(n);
    let mut scores = Vec::new();
    for chunk in order.chunks(size) {
        if chunk.len() < size {
            break;
        }
        let m = motion.select(ndarray::Axis(0), chunk);
        let t = text.select(ndarray::Axis(0), chunk);
        scores.push(r_precision(m.view(), t.view(), k)?);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Metrics of `preds` (one pose matrix per reference) against `refs`.
pub fn evaluate_set(label: &str, refs: &[SequenceRecord], preds: &[Array2<f32>], evaluator: Option<&Evaluator>, cfg: &EvalConfig) -> Result<MetricReport> {
    if refs.is_empty() || refs.len() != preds.len() {
        return Err(Error::Invalid(format!("{} predictions for {} references", preds.len(), refs.len())));
    }
    let mut gt_joints = Vec::with_capacity(refs.len());
    let mut pred_joints = Vec::with_capacity(refs.len());
    let (mut cop_sum, mut cop_n) = (0.0, 0usize);
    let (mut skate_bad, mut skate_total) = (0, 0);
    let (mut mp, mut lmp, mut frames) = (0.0, 0.0, 0usize);
    for (rec, pred) in refs.iter().zip(preds) {
        if pred.nrows() != rec.frames() {
            return Err(Error::Shape(format!("{}: {} predicted frames vs {}", rec.name, pred.nrows(), rec.frames())));
        }
        let g = joints_of(&rec.pose.data().to_owned())?;
        let p = joints_of(pred)?;
        let pressure = rec.pressure.cast::<f64>();
        let d = cop_distances(&pressure, &p, &rec.calib, cfg.cop_temperature)?;
        cop_sum += d.iter().sum::<f64>();
        cop_n += d.len();
        let contacts = PoseSequence::new(pred.mapv(|v| v as f64))?.foot_contacts().to_owned();
        let (b, t) = foot_skating_counts(&p, contacts.view(), cfg.skate_threshold)?;
        skate_bad += b;
        skate_total += t;
        let (m, l) = joint_errors(&p, &g)?;
        mp += m * rec.frames() as f64;
        lmp += l * rec.frames() as f64;
        frames += rec.frames();
        gt_joints.push(g);
        pred_joints.push(p);
    }
    let (fid_v, rp) = match evaluator {
        Some(ev) => {
            let gt_poses: Vec<Array2<f32>> = refs.iter().map(|r| r.pose.data().to_owned()).collect();
            let gt_refs: Vec<&Array2<f32>> = gt_poses.iter().collect();
            let pred_refs: Vec<&Array2<f32>> = preds.iter().collect();
            let fg = ev.embed_motions(&gt_refs, cfg.evaluator_batch_size)?;
            let fp = ev.embed_motions(&pred_refs, cfg.evaluator_batch_size)?;
            let texts: Vec<&str> = refs.iter().map(|r| r.captions[0].as_str()).collect();
            let ft = ev.embed_texts(&texts)?;
            let f = if refs.len() >= 2 { Some(fid(fp.view(), fg.view())?) } else { None };
            let r = if refs.len() >= cfg.r_precision_k {
                Some(batched_r_precision(&fp, &ft, cfg.r_precision_batch, cfg.r_precision_k, 0)?)
            } else {
                None
            };
            (f, r)
        }
        None => (None, None),
    };
    let report = MetricReport {
        label: label.to_string(),
        sequences: refs.len(),
        fid: fid_v,
        foot_skating: if skate_total == 0 { 0.0 } else { skate_bad as f64 / skate_total as f64 },
        cop_error_m: (cop_n > 0).then(|| cop_sum / cop_n as f64),
        lmpjpe_m: lmp / frames as f64,
        mpjpe_m: mp / frames as f64,
        traj_error_ratio: trajectory_error_ratio(&pred_joints, &gt_joints, cfg.traj_threshold)?,
        r_precision_top3: rp,
    };
    report.check_ranges()?;
    Ok(report)
}
