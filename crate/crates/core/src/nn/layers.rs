//! Differentiable layers built from elementary tensor ops.

use candle_core::{DType, Device, Module, Tensor, D};

use super::params::{Init, Params};
use crate::error::Result;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x * 0.5)?.tanh()?.affine(0.5, 0.5)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(p: Params<'_>, input: usize, output: usize) -> Result<Self> {
        Self::with_init(p, input, output, Init::fan_in(input))
    }

    /// Both weight and bias start at exactly zero.
    pub fn zeros(p: Params<'_>, input: usize, output: usize) -> Result<Self> {
        Self::with_init(p, input, output, Init::Zeros)
    }

    pub fn with_init(p: Params<'_>, input: usize, output: usize, init: Init) -> Result<Self> {
        let weight = p.get("weight", &[output, input], init)?;
        let bias_init = if init == Init::Zeros { Init::Zeros } else { Init::fan_in(input) };
        let bias = Some(p.get("bias", &[output], bias_init)?);
        Ok(Self { weight, bias })
    }

    pub fn no_bias(p: Params<'_>, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[output, input], Init::fan_in(input))?,
            bias: None,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / input;
        let flat = x.reshape((rows, input))?.matmul(&self.weight.t()?)?;
        let flat = match &self.bias {
            Some(b) => flat.broadcast_add(b)?,
            None => flat,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.weight.dim(0)?;
        Ok(flat.reshape(out_dims)?)
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        Linear::forward(self, x).map_err(|e| candle_core::Error::Msg(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: Params<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.get("gamma", &[dim], Init::Ones)?,
            beta: p.get("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(p: Params<'_>, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(p.pp("up"), dim, hidden)?,
            down: Linear::new(p.pp("down"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(p: Params<'_>, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(p.pp("q"), dim, dim)?,
            k: Linear::new(p.pp("k"), dim, dim)?,
            v: Linear::new(p.pp("v"), dim, dim)?,
            o: Linear::new(p.pp("o"), dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query` is `B x Lq x d`, `context` is `B x Lk x d`; `key_bias` broadcasts to
    /// `B x heads x Lq x Lk` and is added to the logits. Also returns the attention weights.
    pub fn forward_with_weights(&self, query: &Tensor, context: &Tensor, key_bias: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (b, lq, d) = query.dims3()?;
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(context)?)?;
        let v = self.split(&self.v.forward(context)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut logits = (q.matmul(&k.t()?)? * scale)?;
        if let Some(bias) = key_bias {
            logits = logits.broadcast_add(bias)?;
        }
        let w = softmax_last(&logits)?;
        let out = w.matmul(&v)?.transpose(1, 2)?.reshape((b, lq, d))?;
        Ok((self.o.forward(&out)?, w))
    }

    pub fn forward(&self, query: &Tensor, context: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_weights(query, context, key_bias)?.0)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(p: Params<'_>, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(p.pp("ln1"), dim)?,
            attn: Attention::new(p.pp("attn"), dim, heads)?,
            ln2: LayerNorm::new(p.pp("ln2"), dim)?,
            ff: FeedForward::new(p.pp("ff"), dim, ff_dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, key_bias)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

/// Single-layer GRU over `B x L x in`, returning every hidden state `B x L x hidden`.
#[derive(Debug, Clone)]
pub struct Gru {
    w_ih: Linear,
    w_hh: Linear,
    hidden: usize,
}

impl Gru {
    pub fn new(p: Params<'_>, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: Linear::with_init(p.pp("ih"), input, 3 * hidden, Init::fan_in(hidden))?,
            w_hh: Linear::with_init(p.pp("hh"), hidden, 3 * hidden, Init::fan_in(hidden))?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        let hd = self.hidden;
        let gx = self.w_ih.forward(x)?;
        let mut h = Tensor::zeros((b, hd), x.dtype(), x.device())?;
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let xt = gx.narrow(1, t, 1)?.squeeze(1)?;
            let gh = self.w_hh.forward(&h)?;
            let r = sigmoid(&(xt.narrow(1, 0, hd)? + gh.narrow(1, 0, hd)?)?)?;
            let z = sigmoid(&(xt.narrow(1, hd, hd)? + gh.narrow(1, hd, hd)?)?)?;
            let n = (xt.narrow(1, 2 * hd, hd)? + (r * gh.narrow(1, 2 * hd, hd)?)?)?.tanh()?;
            // h' = n + z * (h - n)
            h = (&n + (z * (&h - &n)?)?)?;
            states.push(h.unsqueeze(1)?);
        }
        Ok(Tensor::cat(&states, 1)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(p: Params<'_>, input: usize, output: usize, kernel: usize, stride: usize) -> Result<Self> {
        let fan_in = input * kernel * kernel;
        Ok(Self {
            weight: p.get("weight", &[output, input, kernel, kernel], Init::fan_in(fan_in))?,
            bias: p.get("bias", &[output], Init::fan_in(fan_in))?,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_no_bias(x)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }

    pub fn forward_no_bias(&self, x: &Tensor) -> Result<Tensor> {
        Ok(super::conv::conv2d(x, &self.weight, self.padding, self.stride)?)
    }

    /// Convolution restricted to input channels `start..start+len` of the kernel.
    pub fn forward_channels(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let w = self.weight.narrow(1, start, len)?;
        Ok(super::conv::conv2d(x, &w, self.padding, self.stride)?)
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

/// `len x dim` sinusoidal table, sin on even and cos on odd channels.
pub fn sinusoidal_table(positions: &[f64], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for c in 0..dim {
            let i = (c / 2) as f64;
            let freq = (-(10000f64.ln()) * 2.0 * i / dim as f64).exp();
            v.push(if c % 2 == 0 { (p * freq).sin() } else { (p * freq).cos() });
        }
    }
    Ok(Tensor::from_vec(v, (positions.len(), dim), device)?.to_dtype(dtype)?)
}

/// Additive attention bias `B x 1 x 1 x (prefix + max_len)`: 0 on valid keys, a large negative value on padding.
pub fn key_padding_bias(lengths: &[usize], prefix: usize, max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let s = prefix + max_len;
    let mut v = vec![0f64; lengths.len() * s];
    for (b, &len) in lengths.iter().enumerate() {
        for k in prefix + len..s {
            v[b * s + k] = -1e9;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), 1, 1, s), device)?.to_dtype(dtype)?)
}

/// `B x L x 1` tensor with 1 on valid frames and 0 on padding.
pub fn frame_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f64; lengths.len() * max_len];
    for (b, &len) in lengths.iter().enumerate() {
        for k in 0..len.min(max_len) {
            v[b * max_len + k] = 1.0;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), max_len, 1), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;

    #[test]
    fn layer_norm_normalizes() {
        let ps = ParamSet::new(0, DType::F64);
        let ln = LayerNorm::new(ps.root(), 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn attention_rows_sum_to_one_and_mask_padding() {
        let ps = ParamSet::new(1, DType::F64);
        let attn = Attention::new(ps.root(), 8, 2).unwrap();
        let x = Tensor::randn(0f64, 1.0, (2, 5, 8), &Device::Cpu).unwrap();
        let bias = key_padding_bias(&[5, 3], 0, 5, DType::F64, &Device::Cpu).unwrap();
        let (_, w) = attn.forward_with_weights(&x, &x, Some(&bias)).unwrap();
        let sums = w.sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        let w1 = w.get(1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (i, v) in w1.iter().enumerate() {
            if i % 5 >= 3 {
                assert!(*v < 1e-300);
            }
        }
    }

    #[test]
    fn gru_is_causal() {
        let ps = ParamSet::new(2, DType::F64);
        let gru = Gru::new(ps.root(), 3, 4).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 6, 3), &Device::Cpu).unwrap();
        let y = gru.forward(&x).unwrap();
        let mut x2 = x.to_vec3::<f64>().unwrap();
        x2[0][5] = vec![9.0, 9.0, 9.0];
        let y2 = gru.forward(&Tensor::new(x2, &Device::Cpu).unwrap()).unwrap();
        let a = y.narrow(1, 0, 5).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = y2.narrow(1, 0, 5).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
        assert_eq!(y.dims(), &[1, 6, 4]);
    }

    #[test]
    fn split_channel_conv_adds_up() {
        let ps = ParamSet::new(3, DType::F64);
        let conv = Conv2d::new(ps.root(), 3, 2, 3, 2).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 3, 6, 6), &Device::Cpu).unwrap();
        let full = conv.forward_no_bias(&x).unwrap();
        let a = conv.forward_channels(&x.narrow(1, 0, 1).unwrap(), 0, 1).unwrap();
        let b = conv.forward_channels(&x.narrow(1, 1, 2).unwrap(), 1, 2).unwrap();
        let diff = (full - (a + b).unwrap()).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
    }
}
