//! Transformer denoiser predicting the clean motion from a noisy one.

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::POSE_DIM;
use crate::nn::{key_padding_bias, sinusoidal_table, EncoderLayer, LayerNorm, Linear, Params};

/// Input embedding and encoder stack shared by the backbone and its control copy.
#[derive(Debug, Clone)]
pub struct DenoiserCore {
    input_proj: Linear,
    time_a: Linear,
    time_b: Linear,
    text_proj: Linear,
    layers: Vec<EncoderLayer>,
    pe: Tensor,
    latent: usize,
    max_len: usize,
}

impl DenoiserCore {
    pub fn new(p: Params<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.latent_dim;
        let positions: Vec<f64> = (0..=cfg.max_len).map(|i| i as f64).collect();
        Ok(Self {
            input_proj: Linear::new(p.pp("input_proj"), POSE_DIM, d)?,
            time_a: Linear::new(p.pp("time_a"), d, d)?,
            time_b: Linear::new(p.pp("time_b"), d, d)?,
            text_proj: Linear::new(p.pp("text_proj"), cfg.text_dim, d)?,
            layers: (0..cfg.layers)
                .map(|i| EncoderLayer::new(p.pp(format!("layer{i}")), d, cfg.heads, cfg.ff_dim))
                .collect::<Result<_>>()?,
            pe: sinusoidal_table(&positions, d, p.dtype(), p.device())?,
            latent: d,
            max_len: cfg.max_len,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, l, w) = x.dims3()?;
        if w != POSE_DIM {
            return Err(Error::Shape(format!("motion width {w} != {POSE_DIM}")));
        }
        if l > self.max_len {
            return Err(Error::OutOfRange(format!("sequence length {l} exceeds {}", self.max_len)));
        }
        Ok((b, l))
    }

    /// Per-frame token embeddings `B x L x d`.
    pub fn embed_frames(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.input_proj.forward(x)
    }

    /// Conditioning token `B x 1 x d` from the diffusion step and the text embedding.
    pub fn cond_token(&self, t: &[usize], text: &Tensor) -> Result<Tensor> {
        let ts: Vec<f64> = t.iter().map(|&s| s as f64).collect();
        let emb = sinusoidal_table(&ts, self.latent, text.dtype(), text.device())?;
        let time = self.time_b.forward(&self.time_a.forward(&emb)?.silu()?)?;
        Ok((time + self.text_proj.forward(text)?)?.unsqueeze(1)?)
    }

    /// Runs the stack over `[cond; frames]` and returns the per-layer frame outputs.
    pub fn run(&self, frames: &Tensor, t: &[usize], text: &Tensor, lengths: &[usize]) -> Result<Vec<Tensor>> {
        let (b, l, _) = frames.dims3()?;
        if t.len() != b || lengths.len() != b || text.dim(0)? != b {
            return Err(Error::Shape("batch sizes of x, t, text and lengths differ".into()));
        }
        let seq = Tensor::cat(&[self.cond_token(t, text)?, frames.clone()], 1)?;
        let mut h = seq.broadcast_add(&self.pe.narrow(0, 0, l + 1)?)?;
        let bias = key_padding_bias(lengths, 1, l, frames.dtype(), frames.device())?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.forward(&h, Some(&bias))?;
            outs.push(h.narrow(1, 1, l)?);
        }
        Ok(outs)
    }
}

/// The text-conditioned backbone.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub core: DenoiserCore,
    final_ln: LayerNorm,
    out: Linear,
}

impl Denoiser {
    pub fn new(p: Params<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            core: DenoiserCore::new(p.pp("core"), cfg)?,
            final_ln: LayerNorm::new(p.pp("final_ln"), cfg.latent_dim)?,
            out: Linear::new(p.pp("out"), cfg.latent_dim, POSE_DIM)?,
        })
    }

    pub fn forward(&self, x_t: &Tensor, t: &[usize], text: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let frames = self.core.embed_frames(x_t)?;
        let outs = self.core.run(&frames, t, text, lengths)?;
        let last = outs.last().expect("at least one layer");
        self.out.forward(&self.final_ln.forward(last)?)
    }
}

/// Anything that maps `(x_t, t, text)` to a clean-motion estimate.
pub trait X0Model {
    fn predict_x0(&self, x_t: &Tensor, t: &[usize], text: &Tensor, lengths: &[usize]) -> Result<Tensor>;
}

impl X0Model for Denoiser {
    fn predict_x0(&self, x_t: &Tensor, t: &[usize], text: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        self.forward(x_t, t, text, lengths)
    }
}

/// Stacks per-item text embeddings into `B x dim`.
pub fn text_batch(embeddings: &[&[f32]], dtype: DType, device: &Device) -> Result<Tensor> {
    let dim = embeddings.first().map_or(0, |e| e.len());
    let flat: Vec<f32> = embeddings.iter().flat_map(|e| e.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (embeddings.len(), dim), device)?.to_dtype(dtype)?)
}
