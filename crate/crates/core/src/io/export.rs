//! Plain-text joint export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::motion::{JointSequence, JOINT_COUNT};
use crate::scalar::Real;

/// One row per frame, 66 comma-separated values (joint-major XYZ), 6 fractional digits.
pub fn joints_to_csv<R: Real>(joints: &JointSequence<R>) -> String {
    let mut out = String::new();
    for f in 0..joints.frames() {
        for j in 0..JOINT_COUNT {
            for (k, v) in joints.get(f, j).iter().enumerate() {
                if j + k > 0 {
                    out.push(',');
                }
                write!(out, "{:.6}", v.as_f64()).expect("string write");
            }
        }
        out.push('\n');
    }
    out
}

pub fn export_joints<R: Real>(joints: &JointSequence<R>, path: &Path) -> Result<()> {
    fs::write(path, joints_to_csv(joints)).map_err(|e| Error::io(path, e))
}

pub fn parse_joints_csv(text: &str) -> Result<JointSequence<f64>> {
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("line {}: {e}", i + 1)))?;
        if row.len() != JOINT_COUNT * 3 {
            return Err(Error::Shape(format!("line {} has {} columns", i + 1, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    JointSequence::new(Array3::from_shape_vec((rows, JOINT_COUNT, 3), values).expect("sized"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_at_declared_precision() {
        let a = Array3::from_shape_fn((5, 22, 3), |(f, j, k)| (f as f64 * 0.37 + j as f64 * 1.1 - k as f64 * 0.013).sin());
        let joints = JointSequence::new(a).unwrap();
        let text = joints_to_csv(&joints);
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().all(|l| l.split(',').count() == 66));
        let back = parse_joints_csv(&text).unwrap();
        for (x, y) in joints.data().iter().zip(back.data()) {
            assert!((x - y).abs() <= 5e-7);
        }
    }

    #[test]
    fn static_pose_gives_identical_rows() {
        let a = Array3::from_shape_fn((3, 22, 3), |(_, j, k)| j as f64 * 0.1 + k as f64);
        let text = joints_to_csv(&JointSequence::new(a).unwrap());
        let rows: Vec<_> = text.lines().collect();
        assert!(rows.iter().all(|r| *r == rows[0]));
    }
}
