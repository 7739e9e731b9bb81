//! Pressure-aware control branch: a ControlNet copy of the backbone, zero projections,
//! chained adapter blocks and the composed clean-motion prediction.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::diffusion::{Denoiser, DenoiserCore, NoiseSchedule, X0Model};
use crate::error::{Error, Result};
use crate::features::ShiftExtractor;
use crate::motion::{POSE_DIM, TRAJ_DIM};
use crate::nn::{key_padding_bias, sinusoidal_table, Attention, FeedForward, LayerNorm, Linear, ParamSet, Params};

/// `20 * min(sigma, 0.01) / len`.
pub fn control_strength_from_sigma(sigma2: f64, len: usize) -> f64 {
    20.0 * sigma2.min(0.01) / len.max(1) as f64
}

pub fn control_strength(t: usize, len: usize, sched: &NoiseSchedule) -> Result<f64> {
    if len == 0 {
        return Err(Error::Invalid("sequence length must be positive".into()));
    }
    Ok(control_strength_from_sigma(sched.sigma2(t)?, len))
}

#[derive(Debug, Clone)]
struct AdapterBlock {
    ln1: LayerNorm,
    sa: Attention,
    ln2: LayerNorm,
    ca: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

impl AdapterBlock {
    fn new(p: Params<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.latent_dim;
        Ok(Self {
            ln1: LayerNorm::new(p.pp("ln1"), d)?,
            sa: Attention::new(p.pp("sa"), d, cfg.heads)?,
            ln2: LayerNorm::new(p.pp("ln2"), d)?,
            ca: Attention::new(p.pp("ca"), d, cfg.heads)?,
            ln3: LayerNorm::new(p.pp("ln3"), d)?,
            ff: FeedForward::new(p.pp("ff"), d, cfg.ff_dim)?,
        })
    }
}

/// Output of the adapter stack with the cross-attention maps of every block.
#[derive(Debug, Clone)]
pub struct AdapterOutput {
    pub residual: Tensor,
    /// Per block, `B x heads x L x (1 + L)`; key 0 is the text token.
    pub cross_weights: Vec<Tensor>,
}

/// Trainable branch: ControlNet copy, Z projections, adapter blocks and the shift encoder.
#[derive(Debug, Clone)]
pub struct ControlBranch {
    pub controlnet: DenoiserCore,
    pub shift: ShiftExtractor,
    traj_proj: Linear,
    zero: Vec<Linear>,
    adapters: Vec<AdapterBlock>,
    text_proj: Linear,
    shift_proj: Linear,
    out: Linear,
    pe: Tensor,
}

impl ControlBranch {
    pub fn new(p: Params<'_>, cfg: &ModelConfig, mat: (usize, usize)) -> Result<Self> {
        let d = cfg.latent_dim;
        let positions: Vec<f64> = (0..cfg.max_len).map(|i| i as f64).collect();
        Ok(Self {
            controlnet: DenoiserCore::new(p.pp("controlnet"), cfg)?,
            shift: ShiftExtractor::new(p.pp("shift"), cfg, mat)?,
            traj_proj: Linear::new(p.pp("traj_proj"), TRAJ_DIM, d)?,
            zero: (0..cfg.layers).map(|i| Linear::zeros(p.pp(format!("zero{i}")), d, d)).collect::<Result<_>>()?,
            adapters: (0..cfg.layers).map(|i| AdapterBlock::new(p.pp(format!("adapter{i}")), cfg)).collect::<Result<_>>()?,
            text_proj: Linear::new(p.pp("text_proj"), cfg.text_dim, d)?,
            shift_proj: Linear::new(p.pp("shift_proj"), cfg.shift_dim, d)?,
            out: Linear::zeros(p.pp("out"), d, POSE_DIM)?,
            pe: sinusoidal_table(&positions, d, p.dtype(), p.device())?,
        })
    }

    /// Builds the branch in `branch` and copies the backbone stack into its ControlNet.
    pub fn from_backbone(branch: &ParamSet, backbone: &ParamSet, cfg: &ModelConfig, mat: (usize, usize)) -> Result<Self> {
        let net = Self::new(branch.root(), cfg, mat)?;
        let n = branch.copy_from(backbone, "core.", "controlnet.")?;
        if n == 0 {
            return Err(Error::Checkpoint("backbone has no core parameters".into()));
        }
        Ok(net)
    }

    pub fn depth(&self) -> usize {
        self.zero.len()
    }

    /// Per-layer ControlNet features `r`, each `B x L x d`.
    pub fn controlnet_forward(&self, x_t: &Tensor, t: &[usize], text: &Tensor, traj: &Tensor, lengths: &[usize]) -> Result<Vec<Tensor>> {
        let (b, l) = self.controlnet.check_input(x_t)?;
        let (tb, tl, tw) = traj.dims3()?;
        if (tb, tl) != (b, l) || tw != TRAJ_DIM {
            return Err(Error::Shape(format!("trajectory {:?} vs motion {:?}", traj.dims(), x_t.dims())));
        }
        let frames = (self.controlnet.embed_frames(x_t)? + self.traj_proj.forward(traj)?)?;
        self.controlnet.run(&frames, t, text, lengths)
    }

    pub fn zero_project(&self, r: &[Tensor]) -> Result<Vec<Tensor>> {
        if r.len() != self.zero.len() {
            return Err(Error::Shape(format!("{} residual levels for {} projections", r.len(), self.zero.len())));
        }
        r.iter().zip(&self.zero).map(|(x, z)| z.forward(x)).collect()
    }

    /// Chained adapter blocks over `Z(r)` with `[text; shift frames]` as cross-attention context.
    pub fn adapter_forward(&self, zr: &[Tensor], shift: &Tensor, text: &Tensor, lengths: &[usize]) -> Result<AdapterOutput> {
        if zr.len() != self.adapters.len() {
            return Err(Error::Shape(format!("{} residual levels for {} adapter blocks", zr.len(), self.adapters.len())));
        }
        let (b, l, _) = zr[0].dims3()?;
        let (sb, sl, _) = shift.dims3()?;
        if (sb, sl) != (b, l) {
            return Err(Error::Shape(format!("shift features {:?} vs residual {:?}", shift.dims(), zr[0].dims())));
        }
        let (dtype, device) = (zr[0].dtype(), zr[0].device());
        let tokens = self.shift_proj.forward(shift)?.broadcast_add(&self.pe.narrow(0, 0, l)?)?;
        let kv = Tensor::cat(&[self.text_proj.forward(text)?.unsqueeze(1)?, tokens], 1)?;
        let self_bias = key_padding_bias(lengths, 0, l, dtype, device)?;
        let cross_bias = key_padding_bias(lengths, 1, l, dtype, device)?;
        let mut h = zr[0].clone();
        let mut cross_weights = Vec::with_capacity(zr.len());
        for (blk, z) in self.adapters.iter().zip(zr) {
            let n = blk.ln1.forward(&h)?;
            h = (&h + blk.sa.forward(&n, &n, Some(&self_bias))?)?;
            let (ca, w) = blk.ca.forward_with_weights(&blk.ln2.forward(&h)?, &kv, Some(&cross_bias))?;
            h = (&h + ca)?;
            h = (&h + blk.ff.forward(&blk.ln3.forward(&h)?)?)?;
            h = (&h + z)?;
            cross_weights.push(w);
        }
        Ok(AdapterOutput {
            residual: self.out.forward(&h)?,
            cross_weights,
        })
    }

    /// `r'` for the given conditions.
    pub fn residual(&self, x_t: &Tensor, t: &[usize], text: &Tensor, traj: &Tensor, shift: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let r = self.controlnet_forward(x_t, t, text, traj, lengths)?;
        let zr = self.zero_project(&r)?;
        Ok(self.adapter_forward(&zr, shift, text, lengths)?.residual)
    }
}

/// Backbone prediction plus the control residual.
#[allow(clippy::too_many_arguments)]
pub fn guided_predict_x0(
    backbone: &Denoiser,
    branch: &ControlBranch,
    x_t: &Tensor,
    t: &[usize],
    text: &Tensor,
    traj: &Tensor,
    shift: &Tensor,
    lengths: &[usize],
) -> Result<Tensor> {
    let base = backbone.forward(x_t, t, text, lengths)?;
    let r = branch.residual(x_t, t, text, traj, shift, lengths)?;
    Ok((base + r)?)
}

/// Per-batch conditioning for sampling: trajectory `B x L x 39` and shift features `B x L x shift_dim`.
#[derive(Debug, Clone)]
pub struct ControlInputs {
    pub traj: Tensor,
    pub shift: Tensor,
}

/// `X0Model` that adds the control residual to the backbone; without a branch it is the backbone.
pub struct GuidedModel<'a> {
    pub backbone: &'a Denoiser,
    pub control: Option<(&'a ControlBranch, ControlInputs)>,
    /// Multiply `r'` by the control strength at each step.
    pub scaling: Option<&'a NoiseSchedule>,
}

impl<'a> GuidedModel<'a> {
    pub fn text_only(backbone: &'a Denoiser) -> Self {
        Self {
            backbone,
            control: None,
            scaling: None,
        }
    }

    pub fn with_control(backbone: &'a Denoiser, branch: &'a ControlBranch, inputs: ControlInputs) -> Self {
        Self {
            backbone,
            control: Some((branch, inputs)),
            scaling: None,
        }
    }
}

/// Repeats a conditioning tensor when the sampler stacks conditional and unconditional passes.
fn match_batch(x: &Tensor, b: usize) -> Result<Tensor> {
    let have = x.dim(0)?;
    if have == b {
        Ok(x.clone())
    } else if have > 0 && b % have == 0 {
        Ok(Tensor::cat(&vec![x.clone(); b / have], 0)?)
    } else {
        Err(Error::Shape(format!("control batch {have} does not divide {b}")))
    }
}

impl X0Model for GuidedModel<'_> {
    fn predict_x0(&self, x_t: &Tensor, t: &[usize], text: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let base = self.backbone.forward(x_t, t, text, lengths)?;
        let Some((branch, inputs)) = &self.control else {
            return Ok(base);
        };
        let b = x_t.dim(0)?;
        let traj = match_batch(&inputs.traj, b)?;
        let shift = match_batch(&inputs.shift, b)?;
        let mut r = branch.residual(x_t, t, text, &traj, &shift, lengths)?;
        if let Some(sched) = self.scaling {
            let l = x_t.dim(1)?;
            r = (r * control_strength(t[0], l, sched)?)?;
        }
        Ok((base + r)?)
    }
}
