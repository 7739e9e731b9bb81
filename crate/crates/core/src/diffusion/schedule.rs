//! Linear-beta DDPM schedule, forward noising and posterior coefficients.

use candle_core::{Device, Tensor};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Tables indexed by `t - 1` for `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub posterior_variance: Vec<f64>,
}

/// Linear betas from 1e-4 to 0.02, stretched by 1000/T so short schedules still end near pure noise.
pub fn make_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Invalid("schedule needs at least one step".into()));
    }
    let k = 1000.0 / steps as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            (k * (BETA_START + frac * (BETA_END - BETA_START))).min(0.999)
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let posterior_variance = (0..steps)
        .map(|i| {
            if i == 0 {
                betas[0]
            } else {
                betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i])
            }
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
        posterior_variance,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::OutOfRange(format!("t = {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// Sigma_t of the reverse step.
    pub fn sigma2(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_variance[self.check(t)?])
    }

    /// `(c0, ct)` with posterior mean `c0 * x0 + ct * x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let i = self.check(t)?;
        let ab = self.alpha_bars[i];
        let ab_prev = if i == 0 { 1.0 } else { self.alpha_bars[i - 1] };
        let c0 = self.betas[i] * ab_prev.sqrt() / (1.0 - ab);
        let ct = (1.0 - ab_prev) * self.alphas[i].sqrt() / (1.0 - ab);
        Ok((c0, ct))
    }

    pub fn q_sample(&self, x0: ArrayView2<'_, f64>, t: usize, eps: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x0.dim() != eps.dim() {
            return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.dim(), eps.dim())));
        }
        let ab = self.alpha_bar(t)?;
        Ok(&x0 * ab.sqrt() + &eps * (1.0 - ab).sqrt())
    }

    /// Batched forward noising: `x0` and `eps` are `B x L x D`, `t` holds one step per batch item.
    pub fn q_sample_tensor(&self, x0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor> {
        let (a, b) = self.per_item(t, x0.device(), |ab| (ab.sqrt(), (1.0 - ab).sqrt()))?;
        let a = a.to_dtype(x0.dtype())?;
        let b = b.to_dtype(x0.dtype())?;
        Ok((x0.broadcast_mul(&a)? + eps.broadcast_mul(&b)?)?)
    }

    fn per_item(&self, t: &[usize], device: &Device, f: impl Fn(f64) -> (f64, f64)) -> Result<(Tensor, Tensor)> {
        let mut a = Vec::with_capacity(t.len());
        let mut b = Vec::with_capacity(t.len());
        for &s in t {
            let (x, y) = f(self.alpha_bar(s)?);
            a.push(x);
            b.push(y);
        }
        Ok((Tensor::from_vec(a, (t.len(), 1, 1), device)?, Tensor::from_vec(b, (t.len(), 1, 1), device)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_schedule_invariants() {
        let s = make_schedule(1000).unwrap();
        assert!((s.alpha_bar(1).unwrap() - 0.9999).abs() < 1e-15);
        assert!(s.alpha_bar(1000).unwrap() < 1e-3);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s.sigma2(1).unwrap(), s.betas[0]);
        let mut acc = 1.0;
        for t in 1..=1000 {
            acc *= 1.0 - s.betas[t - 1];
            assert!((acc - s.alpha_bar(t).unwrap()).abs() < 1e-12);
            let ab = s.alpha_bar(t).unwrap();
            assert!((ab.sqrt().powi(2) + (1.0 - ab) - 1.0).abs() < 1e-12);
        }
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(1001).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = make_schedule(1000).unwrap();
        let x0 = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 - j as f64 * 0.5);
        let zero = Array2::zeros((3, 4));
        let ab = s.alpha_bar(400).unwrap();
        assert_eq!(s.q_sample(x0.view(), 400, zero.view()).unwrap(), &x0 * ab.sqrt());
        assert_eq!(s.q_sample(zero.view(), 400, x0.view()).unwrap(), &x0 * (1.0 - ab).sqrt());
        assert!(s.q_sample(x0.view(), 0, zero.view()).is_err());
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let s = make_schedule(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in [10, 500, 1000] {
            let x0 = Array2::from_elem((1, 1), 0.7);
            let ab = s.alpha_bar(t).unwrap();
            let draws: Vec<f64> = (0..10_000)
                .map(|_| {
                    let e = Array2::from_elem((1, 1), StandardNormal.sample(&mut rng));
                    s.q_sample(x0.view(), t, e.view()).unwrap()[[0, 0]] - ab.sqrt() * 0.7
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            assert!((var / (1.0 - ab) - 1.0).abs() < 0.05, "t={t} var={var}");
        }
    }

    #[test]
    fn short_schedules_reach_noise() {
        let s = make_schedule(100).unwrap();
        assert!(s.alpha_bar(100).unwrap() < 1e-3);
        let s1 = make_schedule(1).unwrap();
        assert_eq!(s1.steps(), 1);
        assert!(make_schedule(0).is_err());
    }
}
