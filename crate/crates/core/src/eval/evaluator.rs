//! Toy motion/text evaluator trained contrastively; supplies features for FID and R-precision.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::EvalConfig;
use crate::diffusion::{HashTextEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::features::BatchSampler;
use crate::motion::POSE_DIM;
use crate::nn::{frame_mask, Linear, ParamSet, Params};

const TEXT_SEED: u64 = 0xe7a1;
const TEMPERATURE: f64 = 0.1;

/// A motion with its caption set, as seen by the evaluator.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pose: Array2<f32>,
    pub captions: Vec<String>,
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let n = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&n)?)
}

#[derive(Debug, Clone)]
pub struct Evaluator {
    frame_a: Linear,
    frame_b: Linear,
    motion_out: Linear,
    text_a: Linear,
    text_out: Linear,
    text: HashTextEncoder,
    dim: usize,
}

impl Evaluator {
    pub fn new(p: Params<'_>, dim: usize) -> Result<Self> {
        let hidden = dim.max(64);
        let text = HashTextEncoder::new(dim, TEXT_SEED);
        Ok(Self {
            frame_a: Linear::new(p.pp("frame_a"), POSE_DIM, hidden)?,
            frame_b: Linear::new(p.pp("frame_b"), hidden, hidden)?,
            motion_out: Linear::new(p.pp("motion_out"), 2 * hidden, dim)?,
            text_a: Linear::new(p.pp("text_a"), dim, hidden)?,
            text_out: Linear::new(p.pp("text_out"), hidden, dim)?,
            text,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit motion embeddings `B x dim` from a padded `B x L x 263` batch.
    pub fn motion_forward(&self, x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        let h = self.frame_b.forward(&self.frame_a.forward(x)?.gelu()?)?.gelu()?;
        let mask = frame_mask(lengths, l, x.dtype(), x.device())?;
        let lens = Tensor::from_vec(lengths.iter().map(|&n| n as f32).collect::<Vec<_>>(), (b, 1), x.device())?.to_dtype(x.dtype())?;
        let mean = h.broadcast_mul(&mask)?.sum(1)?.broadcast_div(&lens)?;
        // Masked max: padded frames pushed far below any activation.
        let neg = ((mask - 1.0)? * 1e4)?;
        let max = h.broadcast_add(&neg)?.max(1)?;
        l2_normalize(&self.motion_out.forward(&Tensor::cat(&[mean, max], 1)?)?)
    }

    pub fn text_forward(&self, prompts: &[&str], dtype: DType, device: &Device) -> Result<Tensor> {
        let v: Vec<f32> = prompts.iter().flat_map(|p| self.text.encode(p).values).collect();
        let x = Tensor::from_vec(v, (prompts.len(), self.dim), device)?.to_dtype(dtype)?;
        l2_normalize(&self.text_out.forward(&self.text_a.forward(&x)?.gelu()?)?)
    }

    pub fn embed_motions(&self, poses: &[&Array2<f32>], batch: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((poses.len(), self.dim));
        let mut row = 0;
        for chunk in poses.chunks(batch.max(1)) {
            let (x, lengths) = pad_poses(chunk)?;
            let e = self.motion_forward(&x, &lengths)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            for r in e {
                out.row_mut(row).iter_mut().zip(r).for_each(|(o, v)| *o = v);
                row += 1;
            }
        }
        Ok(out)
    }

    pub fn embed_texts(&self, prompts: &[&str]) -> Result<Array2<f64>> {
        let e = self.text_forward(prompts, DType::F32, &Device::Cpu)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(Array2::from_shape_fn((prompts.len(), self.dim), |(i, j)| e[i][j]))
    }
}

pub fn pad_poses(poses: &[&Array2<f32>]) -> Result<(Tensor, Vec<usize>)> {
    if poses.is_empty() {
        return Err(Error::Invalid("empty motion batch".into()));
    }
    let lengths: Vec<usize> = poses.iter().map(|p| p.nrows()).collect();
    let l = *lengths.iter().max().expect("non-empty");
    let mut v = vec![0f32; poses.len() * l * POSE_DIM];
    for (b, p) in poses.iter().enumerate() {
        for (n, row) in p.rows().into_iter().enumerate() {
            let base = (b * l + n) * POSE_DIM;
            v[base..base + POSE_DIM].iter_mut().zip(row.iter()).for_each(|(o, x)| *o = *x);
        }
    }
    Ok((Tensor::from_vec(v, (poses.len(), l, POSE_DIM), &Device::Cpu)?, lengths))
}

/// Symmetric InfoNCE over matched rows of unit embeddings.
fn info_nce(m: &Tensor, t: &Tensor) -> Result<Tensor> {
    let b = m.dim(0)?;
    let logits = (m.matmul(&t.t()?)? / TEMPERATURE)?;
    let targets = Tensor::arange(0u32, b as u32, m.device())?;
    let a = candle_nn::loss::cross_entropy(&logits, &targets)?;
    let c = candle_nn::loss::cross_entropy(&logits.t()?, &targets)?;
    Ok(((a + c)? * 0.5)?)
}

/// Trains the evaluator on `pairs`; returns the frozen parameters and the loss curve.
pub fn train_evaluator(pairs: &[EvalPair], cfg: &EvalConfig, seed: u64) -> Result<(ParamSet, Vec<f64>)> {
    if pairs.len() < 2 {
        return Err(Error::Invalid("evaluator needs at least two training pairs".into()));
    }
    let mut set = ParamSet::new(seed, DType::F32);
    let net = Evaluator::new(set.root(), cfg.evaluator_dim)?;
    let mut opt = AdamW::new(
        set.vars(),
        ParamsAdamW {
            lr: cfg.evaluator_lr,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    let mut sampler = BatchSampler::new(pairs.len(), seed);
    let mut curve = Vec::with_capacity(cfg.evaluator_steps);
    for step in 0..cfg.evaluator_steps {
        let idx = sampler.next(cfg.evaluator_batch_size.max(2));
        let poses: Vec<&Array2<f32>> = idx.iter().map(|&i| &pairs[i].pose).collect();
        let prompts: Vec<&str> = idx
            .iter()
            .map(|&i| {
                let c = &pairs[i].captions;
                c[rng.gen_range(0..c.len())].as_str()
            })
            .collect();
        let (x, lengths) = pad_poses(&poses)?;
        let m = net.motion_forward(&x, &lengths)?;
        let t = net.text_forward(&prompts, DType::F32, &Device::Cpu)?;
        let loss = info_nce(&m, &t)?;
        let v = loss.to_scalar::<f32>()? as f64;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "evaluator loss is not finite".into(),
            });
        }
        curve.push(v);
        opt.backward_step(&loss)?;
    }
    set.set_frozen(true);
    Ok((set, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::r_precision;
    use crate::fixtures::{prepared, tiny_config};

    #[test]
    fn embeddings_are_unit_and_padding_free() {
        let set = ParamSet::new(1, DType::F32);
        let ev = Evaluator::new(set.root(), 16).unwrap();
        let a = Array2::from_shape_fn((5, POSE_DIM), |(i, j)| ((i * 7 + j) % 11) as f32 * 0.1);
        let b = Array2::from_shape_fn((9, POSE_DIM), |(i, j)| ((i + j) % 5) as f32 * 0.2);
        let e = ev.embed_motions(&[&a, &b], 8).unwrap();
        for r in e.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
        let alone = ev.embed_motions(&[&a], 8).unwrap();
        for (x, y) in alone.row(0).iter().zip(e.row(0).iter()) {
            assert!((x - y).abs() < 1e-6);
        }
        let t = ev.embed_texts(&["a person walks", ""]).unwrap();
        assert!((t.row(0).dot(&t.row(0)).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn training_separates_pairs() {
        let cfg = tiny_config();
        let items = prepared(&cfg.data, &crate::synth::MotionKind::ALL, 12, 5).unwrap();
        let pairs: Vec<EvalPair> = items.iter().map(|p| EvalPair { pose: p.pose.clone(), captions: p.captions.clone() }).collect();
        let ecfg = EvalConfig {
            evaluator_dim: 32,
            evaluator_steps: 150,
            evaluator_batch_size: 12,
            ..EvalConfig::default()
        };
        let (set, curve) = train_evaluator(&pairs, &ecfg, 3).unwrap();
        assert!(set.is_frozen());
        assert!(curve.last().unwrap() < &curve[0]);
        let ev = Evaluator::new(set.root(), 32).unwrap();
        let poses: Vec<&Array2<f32>> = pairs.iter().map(|p| &p.pose).collect();
        let texts: Vec<&str> = pairs.iter().map(|p| p.captions[0].as_str()).collect();
        let r = r_precision(ev.embed_motions(&poses, 8).unwrap().view(), ev.embed_texts(&texts).unwrap().view(), 3).unwrap();
        assert!(r > 3.0 / 12.0, "{r}");
        assert!(train_evaluator(&pairs[..1], &ecfg, 3).is_err());
    }
}
