//! Pressure feature extractors: the trajectory regressor and the posture-shift encoder.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TrainingConfig};
use crate::data::{collate, Batch, Prepared};
use crate::error::{Error, Result};
use crate::motion::{TRAJ_DIM, TRAJ_POS_DIM};
use crate::nn::{frame_mask, key_padding_bias, Attention, Conv2d, LayerNorm, Linear, ParamSet, Params};
use crate::pressure::grid_positional_encoding;

/// Spatial size of the pooled feature grid fed to the per-frame projections.
const FEATURE_GRID: usize = 4;

/// Per-frame trajectory prediction in the motion frame plus the predicted mat offset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFeatures {
    pub values: Array2<f32>,
    pub offset: [f32; 2],
}

fn conv_out(n: usize) -> usize {
    (n - 1) / 2 + 1
}

fn pooled_size(h: usize, w: usize, pool: usize, downs: usize) -> Result<(usize, usize)> {
    if h % pool != 0 || w % pool != 0 {
        return Err(Error::Shape(format!("mat {h}x{w} not divisible by pool {pool}")));
    }
    let (mut a, mut b) = (h / pool, w / pool);
    for _ in 0..downs {
        a = conv_out(a);
        b = conv_out(b);
    }
    if a % FEATURE_GRID != 0 || b % FEATURE_GRID != 0 {
        return Err(Error::Shape(format!("feature map {a}x{b} not divisible by {FEATURE_GRID}")));
    }
    Ok((a, b))
}

fn frames_nchw(x: &Tensor, pool: usize) -> Result<Tensor> {
    let (b, l, h, w) = x.dims4()?;
    let x = x.reshape((b * l, 1, h, w))?;
    Ok(if pool > 1 { x.avg_pool2d(pool)? } else { x })
}

/// Selector `2 x 39` that adds an (x, z) offset to every position column.
fn offset_selector(dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; 2 * TRAJ_DIM];
    for k in 0..TRAJ_POS_DIM / 3 {
        v[3 * k] = 1.0;
        v[TRAJ_DIM + 3 * k + 2] = 1.0;
    }
    Ok(Tensor::from_vec(v, (2, TRAJ_DIM), device)?.to_dtype(dtype)?)
}

/// Posture-shift encoder over `(P, dP, e)` with parallel 3/5/7 convolutions.
#[derive(Debug, Clone)]
pub struct ShiftExtractor {
    convs: Vec<Conv2d>,
    proj: Linear,
    grid: Tensor,
    pool: usize,
    grid_pool: usize,
    mat: (usize, usize),
    out_dim: usize,
}

impl ShiftExtractor {
    pub fn new(p: Params<'_>, cfg: &ModelConfig, mat: (usize, usize)) -> Result<Self> {
        let (fh, fw) = pooled_size(mat.0, mat.1, cfg.shift_pool, 1)?;
        if fh != fw {
            return Err(Error::Shape("shift encoder needs a square mat".into()));
        }
        let (h, w) = (mat.0 / cfg.shift_pool, mat.1 / cfg.shift_pool);
        let e = grid_positional_encoding::<f32>(h, w, cfg.grid_channels)?;
        let grid = Tensor::from_vec(e.codes().iter().copied().collect::<Vec<f32>>(), (1, cfg.grid_channels, h, w), p.device())?.to_dtype(p.dtype())?;
        let c = cfg.shift_channels;
        let convs = [3, 5, 7]
            .iter()
            .map(|&k| Conv2d::new(p.pp(format!("conv{k}")), 2 + cfg.grid_channels, c, k, 2))
            .collect::<Result<_>>()?;
        Ok(Self {
            convs,
            proj: Linear::new(p.pp("proj"), 3 * c * FEATURE_GRID * FEATURE_GRID, cfg.shift_dim)?,
            grid,
            pool: cfg.shift_pool,
            grid_pool: fh / FEATURE_GRID,
            mat,
            out_dim: cfg.shift_dim,
        })
    }

    /// `p` and `dp` are `B x L x H x W` (scaled); returns `B x L x shift_dim`.
    pub fn forward(&self, p: &Tensor, dp: &Tensor) -> Result<Tensor> {
        let (b, l, h, w) = p.dims4()?;
        if (h, w) != self.mat || dp.dims() != p.dims() {
            return Err(Error::Shape(format!("pressure {:?} / {:?} vs mat {:?}", p.dims(), dp.dims(), self.mat)));
        }
        let x = Tensor::cat(&[frames_nchw(p, self.pool)?, frames_nchw(dp, self.pool)?], 1)?;
        let mut feats = Vec::with_capacity(3);
        for conv in &self.convs {
            let y = conv.forward_channels(&x, 0, 2)?;
            let g = conv.forward_channels(&self.grid, 2, self.grid.dim(1)?)?;
            let y = y.broadcast_add(&g)?.broadcast_add(&conv.bias().reshape((1, (), 1, 1))?)?.silu()?;
            let y = if self.grid_pool > 1 { y.avg_pool2d(self.grid_pool)? } else { y };
            feats.push(y.flatten_from(1)?);
        }
        let f = self.proj.forward(&Tensor::cat(&feats, 1)?)?;
        Ok(f.reshape((b, l, self.out_dim))?)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    fn new(p: Params<'_>, c: usize) -> Result<Self> {
        Ok(Self {
            a: Conv2d::new(p.pp("a"), c, c, 3, 1)?,
            b: Conv2d::new(p.pp("b"), c, c, 3, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.b.forward(&self.a.forward(x)?.silu()?)?;
        Ok((x + y)?.silu()?)
    }
}

/// Trajectory regressor: residual conv encoder per frame, GRU plus self-attention over time.
#[derive(Debug, Clone)]
pub struct TrajExtractor {
    stem: Conv2d,
    res1: ResBlock,
    down: Conv2d,
    res2: ResBlock,
    frame_proj: Linear,
    gru: crate::nn::Gru,
    attn: Attention,
    ln: LayerNorm,
    head: Linear,
    offset_head: Linear,
    coords: Tensor,
    selector: Tensor,
    pool: usize,
    grid_pool: usize,
    mat: (usize, usize),
}

impl TrajExtractor {
    pub fn new(p: Params<'_>, cfg: &ModelConfig, mat: (usize, usize)) -> Result<Self> {
        let (fh, _) = pooled_size(mat.0, mat.1, cfg.traj_pool, 2)?;
        let c = cfg.traj_channels;
        let hd = cfg.traj_hidden;
        let heads = if hd % 4 == 0 { 4 } else { 1 };
        let (h, w) = (mat.0 / cfg.traj_pool, mat.1 / cfg.traj_pool);
        let mut coords = Vec::with_capacity(2 * h * w);
        for axis in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let v = if axis == 0 { j as f32 / (w.max(2) - 1) as f32 } else { i as f32 / (h.max(2) - 1) as f32 };
                    coords.push(2.0 * v - 1.0);
                }
            }
        }
        Ok(Self {
            stem: Conv2d::new(p.pp("stem"), 4, c, 3, 2)?,
            res1: ResBlock::new(p.pp("res1"), c)?,
            down: Conv2d::new(p.pp("down"), c, 2 * c, 3, 2)?,
            res2: ResBlock::new(p.pp("res2"), 2 * c)?,
            frame_proj: Linear::new(p.pp("frame_proj"), 2 * c * FEATURE_GRID * FEATURE_GRID, hd)?,
            gru: crate::nn::Gru::new(p.pp("gru"), hd, hd)?,
            attn: Attention::new(p.pp("attn"), hd, heads)?,
            ln: LayerNorm::new(p.pp("ln"), hd)?,
            head: Linear::new(p.pp("head"), hd, TRAJ_DIM)?,
            offset_head: Linear::new(p.pp("offset_head"), 2 * hd, 2)?,
            coords: Tensor::from_vec(coords, (1, 2, h, w), p.device())?.to_dtype(p.dtype())?,
            selector: offset_selector(p.dtype(), p.device())?,
            pool: cfg.traj_pool,
            grid_pool: fh / FEATURE_GRID,
            mat,
        })
    }

    /// Returns the offset-corrected trajectory `B x L x 39` and the offsets `B x 2`.
    pub fn forward(&self, p: &Tensor, lengths: &[usize]) -> Result<(Tensor, Tensor)> {
        let (b, l, h, w) = p.dims4()?;
        if (h, w) != self.mat {
            return Err(Error::Shape(format!("pressure {h}x{w} vs extractor mat {:?}", self.mat)));
        }
        let x = frames_nchw(p, self.pool)?;
        let n = x.dim(0)?;
        let total = x.sum_keepdim((1, 2, 3))?;
        // Unit-mass map; all-zero frames stay zero.
        let normed = x.broadcast_div(&(total + 1e-6)?)?.affine(x.dim(2)? as f64 * x.dim(3)? as f64, 0.0)?;
        let coords = self.coords.broadcast_as((n, 2, x.dim(2)?, x.dim(3)?))?;
        let x = Tensor::cat(&[x, normed, coords.contiguous()?], 1)?;
        let y = self.res1.forward(&self.stem.forward(&x)?.silu()?)?;
        let y = self.res2.forward(&self.down.forward(&y)?.silu()?)?;
        let y = if self.grid_pool > 1 { y.avg_pool2d(self.grid_pool)? } else { y };
        let f = self.frame_proj.forward(&y.flatten_from(1)?)?.silu()?.reshape((b, l, ()))?;
        let g = self.gru.forward(&f)?;
        let bias = key_padding_bias(lengths, 0, l, p.dtype(), p.device())?;
        let hseq = self.ln.forward(&(&g + self.attn.forward(&g, &g, Some(&bias))?)?)?;
        let mask = frame_mask(lengths, l, p.dtype(), p.device())?;
        let lens = Tensor::from_vec(lengths.iter().map(|&n| n as f32).collect::<Vec<_>>(), (b, 1), p.device())?.to_dtype(p.dtype())?;
        let mean = hseq.broadcast_mul(&mask)?.sum(1)?.broadcast_div(&lens)?;
        let first = hseq.narrow(1, 0, 1)?.squeeze(1)?;
        let offset = self.offset_head.forward(&Tensor::cat(&[first, mean], D::Minus1)?)?;
        let shift = offset.matmul(&self.selector)?.unsqueeze(1)?;
        let traj = self.head.forward(&hseq)?.broadcast_add(&shift)?;
        Ok((traj, offset))
    }

    pub fn features(&self, item: &Prepared) -> Result<TrajectoryFeatures> {
        let dtype = self.coords.dtype();
        let batch = collate(&[item], dtype, self.coords.device())?;
        let (t, o) = self.forward(&batch.pressure, &batch.lengths)?;
        let v = t.squeeze(0)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let o = o.squeeze(0)?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        Ok(TrajectoryFeatures {
            values: Array2::from_shape_vec((item.frames(), TRAJ_DIM), v).expect("sized"),
            offset: [o[0], o[1]],
        })
    }
}

/// Masked mean squared error of the trajectory plus the offset regression term.
pub fn traj_loss(traj: &Tensor, offset: &Tensor, batch: &Batch) -> Result<Tensor> {
    let (_, l, _) = traj.dims3()?;
    let mask = frame_mask(&batch.lengths, l, traj.dtype(), traj.device())?;
    let frames: usize = batch.lengths.iter().sum();
    let se = (traj - &batch.traj_target)?.sqr()?.broadcast_mul(&mask)?.sum_all()?;
    let traj_term = (se / (frames * TRAJ_DIM) as f64)?;
    let off_term = (offset - &batch.offset)?.sqr()?.mean_all()?;
    Ok((traj_term + off_term)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub curve: Vec<f64>,
}

impl PretrainReport {
    pub fn initial(&self) -> f64 {
        self.curve.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.curve.last().copied().unwrap_or(f64::NAN)
    }
}

/// Seeded batch index sequence: shuffled epochs over `n` items.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains the trajectory regressor on full sequences and returns its frozen parameters.
pub fn pretrain_f_traj(items: &[Prepared], model: &ModelConfig, train: &TrainingConfig, seed: u64) -> Result<(ParamSet, PretrainReport)> {
    let first = items.first().ok_or_else(|| Error::Invalid("empty training split".into()))?;
    let mut params = ParamSet::new(seed, DType::F32);
    let net = TrajExtractor::new(params.root(), model, first.mat_size())?;
    let mut opt = AdamW::new(
        params.vars(),
        ParamsAdamW {
            lr: train.traj_lr,
            weight_decay: train.weight_decay,
            ..Default::default()
        },
    )?;
    let mut sampler = BatchSampler::new(items.len(), seed ^ 0x7a11);
    let mut curve = Vec::with_capacity(train.traj_steps);
    for step in 0..train.traj_steps {
        let idx = sampler.next(train.traj_batch_size);
        let chosen: Vec<&Prepared> = idx.iter().map(|&i| &items[i]).collect();
        let batch = collate(&chosen, DType::F32, params.device())?;
        let (traj, offset) = net.forward(&batch.pressure, &batch.lengths)?;
        let loss = traj_loss(&traj, &offset, &batch)?;
        let v = loss.to_scalar::<f32>()? as f64;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "trajectory loss is not finite".into(),
            });
        }
        curve.push(v);
        opt.backward_step(&loss)?;
        if train.log_every > 0 && step % train.log_every == 0 {
            log::info!("traj step {step} loss {v:.5}");
        }
    }
    params.set_frozen(true);
    Ok((params, PretrainReport { curve }))
}
