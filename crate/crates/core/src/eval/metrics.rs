//! Physical and distributional metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::motion::skeleton::{CONTACT_JOINTS, LOWER_BODY};
use crate::motion::{JointSequence, JOINT_COUNT};
use crate::pressure::{cop_to_world, pixel_cop, Calibration, PressureSequence};
use crate::scalar::Real;

const FID_JITTER: f64 = 1e-6;

/// Softmax weights `exp(-y/tau)` over the four contact joints.
pub fn cop_weights<R: Real>(heights: [R; 4], temperature: R) -> [R; 4] {
    let lowest = heights.iter().copied().fold(R::infinity(), R::min);
    let e = heights.map(|h| (-(h - lowest) / temperature).exp());
    let s = e[0] + e[1] + e[2] + e[3];
    e.map(|v| v / s)
}

/// Motion-side center of pressure per frame, `[x, 0, z]`.
pub fn motion_cop<R: Real>(joints: &JointSequence<R>, temperature: R) -> Result<Vec<[R; 3]>> {
    if !(temperature > R::zero()) {
        return Err(Error::Invalid("CoP temperature must be positive".into()));
    }
    Ok((0..joints.frames())
        .map(|f| {
            let heights = CONTACT_JOINTS.map(|j| joints.get(f, j)[1]);
            let w = cop_weights(heights, temperature);
            let (mut x, mut z) = (R::zero(), R::zero());
            for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
                let p = joints.get(f, j);
                x = x + w[k] * p[0];
                z = z + w[k] * p[2];
            }
            [x, R::zero(), z]
        })
        .collect())
}

/// Per-frame distances between the mat CoP and the motion CoP on frames with pressure.
pub fn cop_distances<R: Real>(pressure: &PressureSequence<R>, joints: &JointSequence<R>, calib: &Calibration, temperature: R) -> Result<Vec<R>> {
    if pressure.frames() != joints.frames() {
        return Err(Error::Shape(format!("{} pressure frames vs {} motion frames", pressure.frames(), joints.frames())));
    }
    let mc = motion_cop(joints, temperature)?;
    Ok((0..pressure.frames())
        .filter_map(|n| {
            let px = pixel_cop(pressure.frame(n))?;
            let w = cop_to_world(px, calib);
            Some(((w[0] - mc[n][0]).powi(2) + (w[2] - mc[n][2]).powi(2)).sqrt())
        })
        .collect())
}

/// Mean CoP distance over contact frames; `None` when every frame is airborne.
pub fn cop_error<R: Real>(pressure: &PressureSequence<R>, joints: &JointSequence<R>, calib: &Calibration, temperature: R) -> Result<Option<R>> {
    let d = cop_distances(pressure, joints, calib, temperature)?;
    if d.is_empty() {
        return Ok(None);
    }
    let n = R::lit(d.len() as f64);
    Ok(Some(d.into_iter().sum::<R>() / n))
}

/// `(violations, in-contact pairs)`: a pair is a (frame, contact joint) flagged above 0.5; it
/// violates when the joint moves more than `threshold` to the next frame (from the previous
/// one on the last frame).
pub fn foot_skating_counts<R: Real>(joints: &JointSequence<R>, contacts: ArrayView2<'_, R>, threshold: R) -> Result<(usize, usize)> {
    let n = joints.frames();
    if contacts.nrows() != n || contacts.ncols() != CONTACT_JOINTS.len() {
        return Err(Error::Shape(format!("contacts {:?} for {n} frames", contacts.dim())));
    }
    let half = R::lit(0.5);
    let (mut bad, mut total) = (0, 0);
    for f in 0..n {
        let (a, b) = match (f + 1 < n, f > 0) {
            (true, _) => (f, f + 1),
            (false, true) => (f - 1, f),
            (false, false) => (f, f),
        };
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            if contacts[[f, k]] > half {
                total += 1;
                let p = joints.get(a, j);
                let q = joints.get(b, j);
                let d = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
                if d > threshold {
                    bad += 1;
                }
            }
        }
    }
    Ok((bad, total))
}

pub fn foot_skating<R: Real>(joints: &JointSequence<R>, contacts: ArrayView2<'_, R>, threshold: R) -> Result<f64> {
    let (bad, total) = foot_skating_counts(joints, contacts, threshold)?;
    Ok(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
}

fn mean_joint_distance<R: Real>(pred: &JointSequence<R>, gt: &JointSequence<R>, joints: &[usize]) -> R {
    let (p, g) = (pred.data(), gt.data());
    let mut sum = R::zero();
    for f in 0..pred.frames() {
        for &j in joints {
            let mut sq = R::zero();
            for c in 0..3 {
                sq = sq + (p[[f, j, c]] - g[[f, j, c]]).powi(2);
            }
            sum = sum + sq.sqrt();
        }
    }
    sum / R::lit((pred.frames() * joints.len()) as f64)
}

/// `(MPJPE, LMPJPE)` in meters.
pub fn joint_errors<R: Real>(pred: &JointSequence<R>, gt: &JointSequence<R>) -> Result<(R, R)> {
    if pred.data().dim() != gt.data().dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.data().dim(), gt.data().dim())));
    }
    if pred.frames() == 0 {
        return Err(Error::Invalid("no frames".into()));
    }
    let all: Vec<usize> = (0..JOINT_COUNT).collect();
    Ok((mean_joint_distance(pred, gt, &all), mean_joint_distance(pred, gt, &LOWER_BODY)))
}

/// Whether the root ground position ever deviates by more than `threshold`.
pub fn trajectory_deviates<R: Real>(pred: &JointSequence<R>, gt: &JointSequence<R>, threshold: R) -> Result<bool> {
    if pred.frames() != gt.frames() {
        return Err(Error::Shape(format!("{} vs {} frames", pred.frames(), gt.frames())));
    }
    Ok((0..pred.frames()).any(|f| {
        let (p, g) = (pred.get(f, 0), gt.get(f, 0));
        ((p[0] - g[0]).powi(2) + (p[2] - g[2]).powi(2)).sqrt() > threshold
    }))
}

pub fn trajectory_error_ratio<R: Real>(preds: &[JointSequence<R>], gts: &[JointSequence<R>], threshold: R) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Invalid(format!("{} predictions for {} references", preds.len(), gts.len())));
    }
    let mut bad = 0;
    for (p, g) in preds.iter().zip(gts) {
        if trajectory_deviates(p, g, threshold)? {
            bad += 1;
        }
    }
    Ok(bad as f64 / preds.len() as f64)
}

fn moments(x: ArrayView2<'_, f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, d) = x.dim();
    if m < 2 {
        return Err(Error::Invalid(format!("need at least 2 feature rows, got {m}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }
    let mu = x.mean_axis(Axis(0)).expect("rows");
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        let c = DVector::from_iterator(d, row.iter().zip(mu.iter()).map(|(a, b)| a - b));
        cov += &c * c.transpose();
    }
    cov /= (m - 1) as f64;
    Ok((DVector::from_iterator(d, mu.iter().copied()), cov))
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let d = cov_a.nrows();
    let (mut ca, mut cb) = (cov_a.clone(), cov_b.clone());
    if min_eigenvalue(&ca) < FID_JITTER || min_eigenvalue(&cb) < FID_JITTER {
        ca += DMatrix::identity(d, d) * FID_JITTER;
        cb += DMatrix::identity(d, d) * FID_JITTER;
    }
    let ra = sym_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    (diff.dot(&diff) + ca.trace() + cb.trace() - 2.0 * tr_sqrt).max(0.0)
}

pub fn fid(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("feature widths {} vs {}", a.ncols(), b.ncols())));
    }
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    Ok(frechet_from_moments(&ma, &ca, &mb, &cb))
}

/// Top-`k` retrieval accuracy of matched rows by cosine similarity.
///
/// A motion scores when fewer than `k` texts are strictly more similar than its own.
pub fn r_precision(motion: ArrayView2<'_, f64>, text: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let b = motion.nrows();
    if text.dim() != motion.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", motion.dim(), text.dim())));
    }
    if k == 0 || b < k {
        return Err(Error::Invalid(format!("batch {b} smaller than k = {k}")));
    }
    let unit = |r: ndarray::ArrayView1<'_, f64>| {
        let n = r.dot(&r).sqrt().max(1e-12);
        r.mapv(|v| v / n)
    };
    let ts: Vec<_> = text.rows().into_iter().map(unit).collect();
    let mut hits = 0;
    for (i, m) in motion.rows().into_iter().enumerate() {
        let m = unit(m);
        let sims: Vec<f64> = ts.iter().map(|t| m.dot(t)).collect();
        let better = sims.iter().filter(|&&s| s > sims[i]).count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}
