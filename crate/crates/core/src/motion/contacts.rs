use ndarray::Array2;

use super::repr::JointSequence;
use super::skeleton::CONTACT_JOINTS;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Height and per-frame displacement below which a foot joint counts as grounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactThresholds<R> {
    pub height: R,
    pub displacement: R,
}

impl<R: Real> Default for ContactThresholds<R> {
    fn default() -> Self {
        Self {
            height: R::lit(0.05),
            displacement: R::lit(0.005),
        }
    }
}

/// Binary `N x 4` contact flags in `CONTACT_JOINTS` order.
///
/// A joint is in contact when it is below `height_thresh` and moves less than
/// `vel_thresh` meters to the next frame. The last frame reuses the previous
/// displacement.
pub fn detect_foot_contacts<R: Real>(joints: &JointSequence<R>, height_thresh: R, vel_thresh: R) -> Result<Array2<R>> {
    let n = joints.frames();
    if n == 0 {
        return Err(Error::Invalid("no frames".into()));
    }
    if !(height_thresh > R::zero()) || !(vel_thresh > R::zero()) {
        return Err(Error::Invalid("contact thresholds must be positive".into()));
    }
    let mut out = Array2::zeros((n, CONTACT_JOINTS.len()));
    for f in 0..n {
        // Displacement to the next frame, or from the previous one at the end.
        let (a, b) = match (f + 1 < n, f > 0) {
            (true, _) => (f, f + 1),
            (false, true) => (f - 1, f),
            (false, false) => (f, f),
        };
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            let p = joints.get(a, j);
            let q = joints.get(b, j);
            let disp = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
            let h = joints.get(f, j)[1];
            if h < height_thresh && disp < vel_thresh {
                out[[f, k]] = R::one();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::skeleton::JOINT_COUNT;
    use ndarray::Array3;

    fn seq(frames: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> JointSequence<f64> {
        let mut a = Array3::zeros((frames, JOINT_COUNT, 3));
        for n in 0..frames {
            for j in 0..JOINT_COUNT {
                let p = f(n, j);
                for k in 0..3 {
                    a[[n, j, k]] = p[k];
                }
            }
        }
        JointSequence::new(a).unwrap()
    }

    #[test]
    fn grounded_static_feet_are_in_contact() {
        let j = seq(5, |_, j| [j as f64 * 0.1, 0.0, 0.0]);
        let c = detect_foot_contacts(&j, 0.05, 0.005).unwrap();
        assert!(c.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn airborne_frames_are_not_in_contact() {
        let j = seq(6, |n, _| [0.0, if (2..4).contains(&n) { 0.4 } else { 0.0 }, 0.0]);
        let c = detect_foot_contacts(&j, 0.05, 0.005).unwrap();
        for k in 0..4 {
            assert_eq!(c[[2, k]], 0.0);
            assert_eq!(c[[3, k]], 0.0);
        }
    }

    #[test]
    fn matches_brute_force_on_mixed_motion() {
        let j = seq(30, |n, jj| {
            let t = n as f64 * 0.3 + jj as f64;
            [0.01 * (t).sin() * (n % 3) as f64, 0.06 * (0.5 + 0.5 * (t * 0.7).cos()), 0.002 * n as f64]
        });
        let c = detect_foot_contacts(&j, 0.05, 0.005).unwrap();
        let d = j.data();
        for n in 0..30 {
            for (k, &jj) in CONTACT_JOINTS.iter().enumerate() {
                let (a, b) = if n + 1 < 30 { (n, n + 1) } else { (n - 1, n) };
                let mut s = 0.0;
                for x in 0..3 {
                    s += (d[[b, jj, x]] - d[[a, jj, x]]).powi(2);
                }
                let want = d[[n, jj, 1]] < 0.05 && s.sqrt() < 0.005;
                assert_eq!(c[[n, k]] == 1.0, want, "frame {n} joint {jj}");
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let j = seq(3, |_, _| [0.0; 3]);
        assert!(detect_foot_contacts(&j, 0.0, 0.005).is_err());
        let empty = JointSequence::new(Array3::<f64>::zeros((0, JOINT_COUNT, 3))).unwrap();
        assert!(detect_foot_contacts(&empty, 0.05, 0.005).is_err());
    }
}
