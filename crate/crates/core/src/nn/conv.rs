//! 2-D convolution as im2col plus one matrix product, with its own backward pass.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor, WithDType};
use ndarray::{Array2, ArrayView2, LinalgScalar};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], pad: usize, stride: usize) -> candle_core::Result<Self> {
        let (&[n, c, h, w], &[o, ci, kh, kw]) = (x, k) else {
            candle_core::bail!("conv expects 4-d input and kernel, got {x:?} and {k:?}");
        };
        if c != ci {
            candle_core::bail!("conv input has {c} channels, kernel expects {ci}");
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            candle_core::bail!("conv kernel {kh}x{kw} does not fit {h}x{w} with padding {pad}");
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            pad,
            stride,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn cols(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Output indices `lo..hi` whose tap at offset `d` lands inside an axis of length `size`.
fn valid(out: usize, d: usize, stride: usize, pad: usize, size: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d).div_ceil(stride);
    let hi = if size + pad > d { ((size + pad - d - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// `cols x rows`: one row per kernel entry `(channel, di, dj)`, one column per output pixel.
fn im2col<T: LinalgScalar>(x: &[T], g: &Geometry) -> Array2<T> {
    let plane = g.ho * g.wo;
    let mut out = Array2::zeros((g.cols(), g.rows()));
    for (r, mut dst) in out.rows_mut().into_iter().enumerate() {
        let (ch, di, dj) = (r / (g.kh * g.kw), r / g.kw % g.kh, r % g.kw);
        let (i_lo, i_hi) = valid(g.ho, di, g.stride, g.pad, g.h);
        let (j_lo, j_hi) = valid(g.wo, dj, g.stride, g.pad, g.w);
        let dst = dst.as_slice_mut().expect("standard layout");
        for b in 0..g.n {
            let src = &x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
            for oi in i_lo..i_hi {
                let i = oi * g.stride + di - g.pad;
                let row = &src[i * g.w + j_lo * g.stride + dj - g.pad..(i + 1) * g.w];
                let out = &mut dst[b * plane + oi * g.wo..][j_lo..j_hi];
                for (o, v) in out.iter_mut().zip(row.iter().step_by(g.stride)) {
                    *o = *v;
                }
            }
        }
    }
    out
}

/// Adjoint of `im2col`: scatters column gradients back onto the input.
fn col2im<T: LinalgScalar>(cols: ArrayView2<'_, T>, g: &Geometry) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for (r, src) in cols.rows().into_iter().enumerate() {
        let (ch, di, dj) = (r / (g.kh * g.kw), r / g.kw % g.kh, r % g.kw);
        let (i_lo, i_hi) = valid(g.ho, di, g.stride, g.pad, g.h);
        let (j_lo, j_hi) = valid(g.wo, dj, g.stride, g.pad, g.w);
        let src = src.as_slice().expect("standard layout");
        for b in 0..g.n {
            let dst = &mut x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
            for oi in i_lo..i_hi {
                let i = oi * g.stride + di - g.pad;
                let row = &mut dst[i * g.w + j_lo * g.stride + dj - g.pad..(i + 1) * g.w];
                let vals = &src[b * plane + oi * g.wo..][j_lo..j_hi];
                for (o, v) in row.iter_mut().step_by(g.stride).zip(vals) {
                    *o = *o + *v;
                }
            }
        }
    }
    x
}

/// `(o, n * plane)` to `(n, o, plane)`.
fn to_nchw<T: LinalgScalar>(m: &Array2<T>, g: &Geometry) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut y = Vec::with_capacity(g.n * g.o * plane);
    for b in 0..g.n {
        for row in m.rows() {
            y.extend_from_slice(&row.as_slice().expect("standard layout")[b * plane..][..plane]);
        }
    }
    y
}

/// Inverse of `to_nchw`.
fn from_nchw<T: LinalgScalar>(y: &[T], g: &Geometry) -> Array2<T> {
    let plane = g.ho * g.wo;
    let mut m = Array2::zeros((g.o, g.rows()));
    for (oc, mut row) in m.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        for b in 0..g.n {
            row[b * plane..][..plane].copy_from_slice(&y[(b * g.o + oc) * plane..][..plane]);
        }
    }
    m
}

fn forward<T: LinalgScalar>(x: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    let kernel = ArrayView2::from_shape((g.o, g.cols()), k).expect("kernel size checked");
    to_nchw(&kernel.dot(&im2col(x, g)), g)
}

/// `(d input, d kernel)` for an output gradient `dy`; the input gradient only when asked for.
fn backward<T: LinalgScalar>(x: &[T], k: &[T], dy: &[T], g: &Geometry, want_dx: bool) -> (Option<Vec<T>>, Vec<T>) {
    let kernel = ArrayView2::from_shape((g.o, g.cols()), k).expect("kernel size checked");
    let dy = from_nchw(dy, g);
    let dk = dy.dot(&im2col(x, g).t());
    let dx = want_dx.then(|| col2im(kernel.t().dot(&dy).view(), g));
    (dx, dk.into_iter().collect())
}

fn contiguous<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("conv operands must be contiguous"),
    }
}

fn values<T: WithDType>(t: &Tensor) -> candle_core::Result<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

struct Conv {
    pad: usize,
    stride: usize,
}

impl Conv {
    fn grads<T: WithDType + LinalgScalar>(&self, x: &Tensor, k: &Tensor, dy: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = Geometry::new(x.dims(), k.dims(), self.pad, self.stride)?;
        let (dx, dk) = backward(&values::<T>(x)?, &values::<T>(k)?, &values::<T>(dy)?, &g, x.track_op());
        let dx = dx.map(|v| Tensor::from_vec(v, x.shape(), x.device())).transpose()?;
        Ok((dx, Some(Tensor::from_vec(dk, k.shape(), k.device())?)))
    }
}

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "im2col-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(l1.dims(), l2.dims(), self.pad, self.stride)?;
        let shape = Shape::from((g.n, g.o, g.ho, g.wo));
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(k)) => CpuStorage::F32(forward(contiguous(x, l1)?, contiguous(k, l2)?, &g)),
            (CpuStorage::F64(x), CpuStorage::F64(k)) => CpuStorage::F64(forward(contiguous(x, l1)?, contiguous(k, l2)?, &g)),
            _ => candle_core::bail!("conv supports matching f32 or f64 operands"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, k: &Tensor, _res: &Tensor, dy: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        match x.dtype() {
            DType::F32 => self.grads::<f32>(x, k, dy),
            DType::F64 => self.grads::<f64>(x, k, dy),
            d => candle_core::bail!("conv backward does not support {d:?}"),
        }
    }
}

/// Cross-correlation of `x` (`N x C x H x W`) with `kernel` (`O x C x kh x kw`), zero padding on all sides.
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: usize, stride: usize) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv { pad: padding, stride })
}
