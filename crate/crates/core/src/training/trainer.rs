//! Training loops: backbone pretraining and control-branch training in the three run modes.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{consistency_loss, masked_diffusion_loss, total_loss, KeyJointMask, LossWeights};
use crate::config::{ModelConfig, RunConfig};
use crate::control::ControlBranch;
use crate::data::{collate, Batch, Prepared};
use crate::diffusion::{gaussian, make_schedule, Denoiser, HashTextEncoder, NoiseSchedule, TextEncoder};
use crate::error::{Error, Result};
use crate::features::{BatchSampler, TrajExtractor};
use crate::io::{write_atomic, Bundle};
use crate::motion::TRAJ_DIM;
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    TextOnly,
    Regression,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [Self::Full, Self::TextOnly, Self::Regression];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::TextOnly => "text_only",
            Self::Regression => "regression",
        }
    }

    pub fn uses_branch(self) -> bool {
        self != Self::TextOnly
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::Invalid(format!("unknown mode {s:?} (full, text_only, regression)")))
    }
}

/// A prepared sequence with its frozen trajectory features and caption embeddings.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub data: Prepared,
    pub traj: Array2<f32>,
    pub texts: Vec<Vec<f32>>,
}

/// Caption encoder shared by training and sampling.
pub fn caption_encoder(model: &ModelConfig) -> HashTextEncoder {
    HashTextEncoder::new(model.text_dim, 0)
}

/// Without an extractor the trajectory features are zero (backbone pretraining ignores them).
pub fn cache_items(items: Vec<Prepared>, traj: Option<&TrajExtractor>, encoder: &dyn TextEncoder) -> Result<Vec<TrainItem>> {
    items
        .into_iter()
        .map(|data| {
            let values = match traj {
                Some(t) => t.features(&data)?.values,
                None => Array2::zeros((data.frames(), TRAJ_DIM)),
            };
            let texts = data.captions.iter().map(|c| encoder.encode(c).values).collect();
            Ok(TrainItem { traj: values, texts, data })
        })
        .collect()
}

/// Collated batch with trajectory features and the text embeddings actually used.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub batch: Batch,
    pub traj: Tensor,
    pub text: Tensor,
    pub dropped: usize,
}

/// `captions[i]` picks the caption of item `i`; `drop[i]` replaces it with the null embedding.
pub fn make_batch(items: &[&TrainItem], captions: &[usize], drop: &[bool], dtype: DType, device: &Device) -> Result<TrainBatch> {
    let prepared: Vec<&Prepared> = items.iter().map(|i| &i.data).collect();
    let batch = collate(&prepared, dtype, device)?;
    let l = *batch.lengths.iter().max().expect("non-empty");
    let mut traj = vec![0f32; items.len() * l * TRAJ_DIM];
    for (b, it) in items.iter().enumerate() {
        for (n, row) in it.traj.rows().into_iter().enumerate() {
            let base = (b * l + n) * TRAJ_DIM;
            traj[base..base + TRAJ_DIM].iter_mut().zip(row.iter()).for_each(|(o, v)| *o = *v);
        }
    }
    let dim = items[0].texts.first().map_or(0, Vec::len);
    let mut text = Vec::with_capacity(items.len() * dim);
    for (i, it) in items.iter().enumerate() {
        if drop[i] {
            text.extend(std::iter::repeat(0f32).take(dim));
        } else {
            text.extend_from_slice(&it.texts[captions[i] % it.texts.len()]);
        }
    }
    Ok(TrainBatch {
        traj: Tensor::from_vec(traj, (items.len(), l, TRAJ_DIM), device)?.to_dtype(dtype)?,
        text: Tensor::from_vec(text, (items.len(), dim), device)?.to_dtype(dtype)?,
        dropped: drop.iter().filter(|d| **d).count(),
        batch,
    })
}

#[derive(Debug, Clone)]
pub struct Losses {
    pub diff: Tensor,
    pub cons: Tensor,
    pub total: Tensor,
    pub degenerate: bool,
    /// Largest absolute entry of the control residual (0 without a branch).
    pub residual_abs_max: f64,
}

/// Losses of the guided prediction at the given steps and noise.
pub fn compute_losses(
    backbone: &Denoiser,
    branch: Option<&ControlBranch>,
    sched: &NoiseSchedule,
    tb: &TrainBatch,
    t: &[usize],
    eps: &Tensor,
    w: LossWeights,
) -> Result<Losses> {
    let b = &tb.batch;
    let x_t = sched.q_sample_tensor(&b.pose, t, eps)?;
    let base = backbone.forward(&x_t, t, &tb.text, &b.lengths)?;
    let (x0_hat, residual_abs_max) = match branch {
        Some(br) => {
            let shift = br.shift.forward(&b.pressure, &b.dpressure)?;
            let r = br.residual(&x_t, t, &tb.text, &tb.traj, &shift, &b.lengths)?;
            let m = r.abs()?.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            ((base + r)?, m)
        }
        None => (base, 0.0),
    };
    let diff = masked_diffusion_loss(&b.pose, &x0_hat, &b.lengths)?;
    let l = x0_hat.dim(1)?;
    let mask = KeyJointMask::from_lengths(&b.lengths, l, x0_hat.dtype(), x0_hat.device())?;
    let cons = consistency_loss(&tb.traj, &x0_hat, &mask)?;
    let total = total_loss(&diff, &cons.value, w)?;
    Ok(Losses {
        diff,
        cons: cons.value,
        total,
        degenerate: cons.degenerate,
        residual_abs_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_diff: f64,
    pub l_cons: f64,
    pub total: f64,
    pub batch_size: usize,
    pub dropped: usize,
    pub residual_abs_max: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn adamw(vars: Vec<candle_core::Var>, lr: f64, weight_decay: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay,
            ..Default::default()
        },
    )?)
}

/// Control-branch trainer over a frozen backbone.
pub struct Trainer {
    pub mode: TrainMode,
    backbone: Denoiser,
    branch: ControlBranch,
    branch_set: ParamSet,
    opt: Option<AdamW>,
    sched: NoiseSchedule,
    weights: LossWeights,
    rng: ChaCha8Rng,
    sampler: Option<BatchSampler>,
    batch_size: usize,
    text_dropout: f64,
    step: usize,
    dtype: DType,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, backbone_set: &ParamSet, mode: TrainMode, mat: (usize, usize), seed: u64) -> Result<Self> {
        if !backbone_set.is_frozen() {
            return Err(Error::Invalid("backbone parameters must be frozen before control training".into()));
        }
        let dtype = backbone_set.dtype();
        let backbone = Denoiser::new(backbone_set.root(), &cfg.model)?;
        let branch_set = ParamSet::new(seed ^ 0xb7a9c4, dtype);
        let branch = ControlBranch::from_backbone(&branch_set, backbone_set, &cfg.model, mat)?;
        let t = &cfg.training;
        let opt = if mode.uses_branch() { Some(adamw(branch_set.vars(), t.lr, t.weight_decay)?) } else { None };
        Ok(Self {
            mode,
            backbone,
            branch,
            branch_set,
            opt,
            sched: make_schedule(cfg.model.diffusion_steps)?,
            weights: LossWeights::new(t.lambda_diff, t.lambda_cons)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampler: None,
            batch_size: t.batch_size,
            text_dropout: t.text_dropout,
            step: 0,
            dtype,
        })
    }

    pub fn branch(&self) -> &ControlBranch {
        &self.branch
    }

    pub fn branch_set(&self) -> &ParamSet {
        &self.branch_set
    }

    pub fn backbone(&self) -> &Denoiser {
        &self.backbone
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Loads branch weights saved by an earlier run and continues its step count.
    pub fn resume_from(&mut self, bundle: &Bundle, dir: &Path) -> Result<()> {
        bundle.restore(dir, "branch", &mut self.branch_set)?;
        self.branch_set.set_frozen(false);
        self.step = bundle.step;
        Ok(())
    }

    fn draw_t(&mut self, b: usize) -> Vec<usize> {
        let steps = self.sched.steps();
        match self.mode {
            TrainMode::Regression => vec![steps; b],
            _ => (0..b).map(|_| self.rng.gen_range(1..=steps)).collect(),
        }
    }

    /// Losses on `items` with noise and steps drawn from `seed`; the trainer state is untouched.
    pub fn probe(&self, items: &[TrainItem], seed: u64) -> Result<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut d, mut c, mut tot) = (0.0, 0.0, 0.0);
        for chunk in items.chunks(self.batch_size.max(1)) {
            let refs: Vec<&TrainItem> = chunk.iter().collect();
            let tb = make_batch(&refs, &vec![0; refs.len()], &vec![false; refs.len()], self.dtype, &Device::Cpu)?;
            let steps = self.sched.steps();
            let t: Vec<usize> = match self.mode {
                TrainMode::Regression => vec![steps; refs.len()],
                _ => (0..refs.len()).map(|_| rng.gen_range(1..=steps)).collect(),
            };
            let eps = gaussian(tb.batch.pose.dims3()?, &mut rng, self.dtype, &Device::Cpu)?;
            let branch = self.mode.uses_branch().then_some(&self.branch);
            let l = compute_losses(&self.backbone, branch, &self.sched, &tb, &t, &eps, self.weights)?;
            let k = chunk.len() as f64;
            d += scalar(&l.diff)? * k;
            c += scalar(&l.cons)? * k;
            tot += scalar(&l.total)? * k;
        }
        let n = items.len() as f64;
        Ok((d / n, c / n, tot / n))
    }

    /// One optimization step on a seeded mini-batch of `items`.
    pub fn step(&mut self, items: &[TrainItem]) -> Result<StepRecord> {
        if items.is_empty() {
            return Err(Error::Invalid("empty training split".into()));
        }
        let sampler = self.sampler.get_or_insert_with(|| BatchSampler::new(items.len(), 0x5eed));
        let idx = sampler.next(self.batch_size);
        let chosen: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
        let captions: Vec<usize> = chosen.iter().map(|it| self.rng.gen_range(0..it.texts.len().max(1))).collect();
        let p = self.text_dropout;
        let drop: Vec<bool> = chosen.iter().map(|_| self.rng.gen_bool(p)).collect();
        let tb = make_batch(&chosen, &captions, &drop, self.dtype, &Device::Cpu)?;
        let t = self.draw_t(chosen.len());
        let eps = gaussian(tb.batch.pose.dims3()?, &mut self.rng, self.dtype, &Device::Cpu)?;
        let branch = self.mode.uses_branch().then_some(&self.branch);
        let l = compute_losses(&self.backbone, branch, &self.sched, &tb, &t, &eps, self.weights)?;
        let rec = StepRecord {
            step: self.step,
            l_diff: scalar(&l.diff)?,
            l_cons: scalar(&l.cons)?,
            total: scalar(&l.total)?,
            batch_size: chosen.len(),
            dropped: tb.dropped,
            residual_abs_max: l.residual_abs_max,
        };
        if !rec.total.is_finite() {
            let names: Vec<String> = chosen.iter().map(|it| it.data.name.clone()).collect();
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite loss on batch {names:?}"),
            });
        }
        if let Some(opt) = self.opt.as_mut() {
            opt.backward_step(&l.total)?;
        }
        self.step += 1;
        Ok(rec)
    }

    pub fn batch_names(&self, items: &[TrainItem], idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| items[i].data.name.clone()).collect()
    }
}

pub fn write_curve(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut s = String::from("step,l_diff,l_cons,total\n");
    for r in records {
        s.push_str(&format!("{},{:.8},{:.8},{:.8}\n", r.step, r.l_diff, r.l_cons, r.total));
    }
    write_atomic(path, s.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<StepRecord>,
    pub branch_digest: String,
}

/// Runs `cfg.training.steps` steps. With `out`, writes `curve.csv` and periodic branch
/// checkpoints under `out/checkpoints`; a non-finite loss saves the branch and the
/// offending batch names to `out/diverged/` before returning the error.
pub fn run_training(trainer: &mut Trainer, items: &[TrainItem], steps: usize, checkpoint_every: usize, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut curve = Vec::with_capacity(steps);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
    }
    for _ in 0..steps {
        match trainer.step(items) {
            Ok(rec) => {
                if trainer.mode == TrainMode::TextOnly && rec.residual_abs_max != 0.0 {
                    return Err(Error::Invalid("text-only residual is not zero".into()));
                }
                curve.push(rec);
            }
            Err(e @ Error::Diverged { .. }) => {
                if let Some(dir) = out {
                    let d = dir.join("diverged");
                    std::fs::create_dir_all(&d).map_err(|err| Error::io(&d, err))?;
                    trainer.branch_set.save(&d.join("branch.safetensors"))?;
                    let mut f = std::fs::File::create(d.join("batch.txt")).map_err(|err| Error::io(&d, err))?;
                    writeln!(f, "{e}").map_err(|err| Error::io(&d, err))?;
                    write_curve(&dir.join("curve.csv"), &curve)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        let done = trainer.steps_done();
        if let Some(dir) = out {
            if checkpoint_every > 0 && done % checkpoint_every == 0 {
                trainer.branch_set.save(&dir.join("checkpoints").join(format!("branch_step{done:06}.safetensors")))?;
                write_curve(&dir.join("curve.csv"), &curve)?;
            }
        }
    }
    if let Some(dir) = out {
        write_curve(&dir.join("curve.csv"), &curve)?;
    }
    Ok(TrainOutcome {
        curve,
        branch_digest: trainer.branch_set.digest()?,
    })
}

/// Text-to-motion training of the backbone; returns the frozen parameters and the loss curve.
pub fn pretrain_backbone(items: &[TrainItem], cfg: &RunConfig, seed: u64) -> Result<(ParamSet, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    let t = &cfg.training;
    let mut set = ParamSet::new(seed, DType::F32);
    let net = Denoiser::new(set.root(), &cfg.model)?;
    let sched = make_schedule(cfg.model.diffusion_steps)?;
    let mut opt = adamw(set.vars(), t.backbone_lr, t.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbac4b0);
    let mut sampler = BatchSampler::new(items.len(), seed);
    let mut curve = Vec::with_capacity(t.backbone_steps);
    for step in 0..t.backbone_steps {
        let idx = sampler.next(t.batch_size);
        let chosen: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
        let captions: Vec<usize> = chosen.iter().map(|it| rng.gen_range(0..it.texts.len().max(1))).collect();
        let drop: Vec<bool> = chosen.iter().map(|_| rng.gen_bool(t.text_dropout)).collect();
        let tb = make_batch(&chosen, &captions, &drop, DType::F32, &Device::Cpu)?;
        let ts: Vec<usize> = (0..chosen.len()).map(|_| rng.gen_range(1..=sched.steps())).collect();
        let eps = gaussian(tb.batch.pose.dims3()?, &mut rng, DType::F32, &Device::Cpu)?;
        let x_t = sched.q_sample_tensor(&tb.batch.pose, &ts, &eps)?;
        let pred = net.forward(&x_t, &ts, &tb.text, &tb.batch.lengths)?;
        let loss = masked_diffusion_loss(&tb.batch.pose, &pred, &tb.batch.lengths)?;
        let v = scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "backbone loss is not finite".into(),
            });
        }
        curve.push(v);
        opt.backward_step(&loss)?;
        if t.log_every > 0 && step % t.log_every == 0 {
            log::info!("backbone step {step} loss {v:.5}");
        }
    }
    set.set_frozen(true);
    Ok((set, curve))
}
