//! Ancestral DDPM sampling with classifier-free guidance in x0 space.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::X0Model;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::POSE_DIM;
use crate::nn::frame_mask;

pub fn gaussian(shape: (usize, usize, usize), rng: &mut ChaCha8Rng, dtype: DType, device: &Device) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2;
    let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

/// Guided clean-motion estimate `u + s (c - u)`; `s == 1` uses the conditional branch alone.
pub fn guided_x0(model: &dyn X0Model, x: &Tensor, t: usize, text: &Tensor, lengths: &[usize], cfg_scale: f64) -> Result<Tensor> {
    let b = x.dim(0)?;
    let ts = vec![t; b];
    if cfg_scale == 1.0 {
        return model.predict_x0(x, &ts, text, lengths);
    }
    let x2 = Tensor::cat(&[x, x], 0)?;
    let text2 = Tensor::cat(&[text.clone(), text.zeros_like()?], 0)?;
    let lens2: Vec<usize> = lengths.iter().chain(lengths).copied().collect();
    let out = model.predict_x0(&x2, &vec![t; 2 * b], &text2, &lens2)?;
    let cond = out.narrow(0, 0, b)?;
    let uncond = out.narrow(0, b, b)?;
    Ok((&uncond + ((cond - &uncond)? * cfg_scale)?)?)
}

/// Runs t = T..1 and returns `B x max(lengths) x 263` with padded frames zeroed.
pub fn sample_cfg(model: &dyn X0Model, text: &Tensor, cfg_scale: f64, sched: &NoiseSchedule, lengths: &[usize], seed: u64) -> Result<Tensor> {
    if cfg_scale < 0.0 || !cfg_scale.is_finite() {
        return Err(Error::Invalid(format!("cfg scale {cfg_scale} must be a finite non-negative number")));
    }
    let b = lengths.len();
    let l = *lengths.iter().max().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (dtype, device) = (text.dtype(), text.device().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian((b, l, POSE_DIM), &mut rng, dtype, &device)?;
    for t in (1..=sched.steps()).rev() {
        let x0 = guided_x0(model, &x, t, text, lengths, cfg_scale)?.detach();
        let (c0, ct) = sched.posterior_coefficients(t)?;
        let mean = ((x0 * c0)? + (&x * ct)?)?;
        x = if t > 1 {
            let z = gaussian((b, l, POSE_DIM), &mut rng, dtype, &device)?;
            (mean + (z * sched.sigma2(t)?.sqrt())?)?
        } else {
            mean
        }
        .detach();
    }
    Ok(x.broadcast_mul(&frame_mask(lengths, l, dtype, &device)?)?)
}

/// Single forward pass from pure noise at t = T.
pub fn sample_single_step(model: &dyn X0Model, text: &Tensor, cfg_scale: f64, sched: &NoiseSchedule, lengths: &[usize], seed: u64) -> Result<Tensor> {
    let b = lengths.len();
    let l = *lengths.iter().max().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (dtype, device) = (text.dtype(), text.device().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian((b, l, POSE_DIM), &mut rng, dtype, &device)?;
    let x0 = guided_x0(model, &x, sched.steps(), text, lengths, cfg_scale)?.detach();
    Ok(x0.broadcast_mul(&frame_mask(lengths, l, dtype, &device)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::diffusion::{make_schedule, Denoiser};
    use crate::nn::ParamSet;
    use std::cell::RefCell;

    /// Records every call and predicts a fixed function of the text.
    struct Probe {
        calls: RefCell<Vec<usize>>,
    }

    impl X0Model for Probe {
        fn predict_x0(&self, x: &Tensor, t: &[usize], text: &Tensor, _: &[usize]) -> Result<Tensor> {
            self.calls.borrow_mut().push(t[0]);
            let s = text.sum_keepdim(1)?.unsqueeze(2)?;
            Ok(x.zeros_like()?.broadcast_add(&s)?)
        }
    }

    #[test]
    fn each_step_visited_once_and_scale_one_is_conditional() {
        let sched = make_schedule(20).unwrap();
        let probe = Probe { calls: RefCell::new(vec![]) };
        let text = Tensor::new(&[[1f32, 2.0]], &Device::Cpu).unwrap();
        sample_cfg(&probe, &text, 1.0, &sched, &[3], 0).unwrap();
        assert_eq!(*probe.calls.borrow(), (1..=20).rev().collect::<Vec<_>>());
        let x = Tensor::zeros((1, 3, POSE_DIM), DType::F32, &Device::Cpu).unwrap();
        let g = guided_x0(&probe, &x, 5, &text, &[3], 1.0).unwrap();
        assert!(g.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 3.0));
        let g5 = guided_x0(&probe, &x, 5, &text, &[3], 5.0).unwrap();
        assert!(g5.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 15.0));
        assert!(sample_cfg(&probe, &text, -1.0, &sched, &[3], 0).is_err());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let cfg = ModelConfig {
            latent_dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            text_dim: 4,
            max_len: 10,
            ..ModelConfig::default()
        };
        let ps = ParamSet::new(0, DType::F32);
        let net = Denoiser::new(ps.root(), &cfg).unwrap();
        let sched = make_schedule(10).unwrap();
        let text = Tensor::ones((2, 4), DType::F32, &Device::Cpu).unwrap();
        let a = sample_cfg(&net, &text, 5.0, &sched, &[6, 4], 7).unwrap();
        let b = sample_cfg(&net, &text, 5.0, &sched, &[6, 4], 7).unwrap();
        assert_eq!(a.to_vec3::<f32>().unwrap(), b.to_vec3::<f32>().unwrap());
        let c = sample_cfg(&net, &text, 5.0, &sched, &[6, 4], 8).unwrap();
        assert_ne!(a.to_vec3::<f32>().unwrap(), c.to_vec3::<f32>().unwrap());
        let pad = a.get(1).unwrap().narrow(0, 4, 2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(pad.iter().all(|&v| v == 0.0));
    }
}
