//! Dense NCHW tensors and the handful of kernels the detector is built from.
//!
//! Every kernel here is a pure function of its inputs. Batch items are
//! processed in parallel through rayon, but each output element is produced
//! by exactly one task, so results are bit-identical regardless of thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default batch-norm epsilon.
pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Rank-4 array of `f32` in row-major N, C, H, W order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!("tensor dimensions must be >= 1, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Result<Self> {
        Self::from_vec(shape, vec![value; shape.numel()])
    }

    /// Builds a tensor whose every pixel in channel `i` holds the value `i`.
    /// Used to trace channel permutations.
    pub fn channel_tags(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let shape = Shape::new(n, c, h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for _ in 0..n {
            for ch in 0..c {
                data.extend(std::iter::repeat(ch as f32).take(h * w));
            }
        }
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// One `h × w` plane.
    pub fn channel(&self, n: usize, c: usize) -> &[f32] {
        let s = self.shape;
        let start = (n * s.c + c) * s.plane();
        &self.data[start..start + s.plane()]
    }

    /// The `i`-th batch item as its own `(1, c, h, w)` tensor.
    pub fn item(&self, i: usize) -> Result<Tensor> {
        if i >= self.shape.n {
            return Err(Error::Shape(format!("batch index {i} out of range for {}", self.shape)));
        }
        let len = self.shape.item_len();
        Tensor::from_vec(
            Shape { n: 1, ..self.shape },
            self.data[i * len..(i + 1) * len].to_vec(),
        )
    }

    /// Stacks tensors with identical `(c, h, w)` along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty tensor list".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::Shape(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape { n, ..first }, data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("cannot add {} and {}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("cannot compare {} and {}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Convolution weights. Kernel layout is `c_out × c_in × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        kernel: Vec<f32>,
        bias: Vec<f32>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let p = ConvParams {
            c_out,
            c_in,
            k,
            kernel,
            bias,
            stride,
            padding,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(
            c_out,
            c_in,
            k,
            vec![0.0; c_out * c_in * k * k],
            vec![0.0; c_out],
            stride,
            padding,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_out == 0 || self.c_in == 0 || self.k == 0 {
            return Err(Error::Shape(format!(
                "conv dims must be >= 1 (c_out {}, c_in {}, k {})",
                self.c_out, self.c_in, self.k
            )));
        }
        if self.stride == 0 {
            return Err(Error::Shape("conv stride must be >= 1".into()));
        }
        if self.kernel.len() != self.c_out * self.c_in * self.k * self.k {
            return Err(Error::Shape(format!(
                "kernel holds {} values, expected {}x{}x{}x{}",
                self.kernel.len(),
                self.c_out,
                self.c_in,
                self.k,
                self.k
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::Shape(format!(
                "bias length {} != c_out {}",
                self.bias.len(),
                self.c_out
            )));
        }
        Ok(())
    }

    /// Spatial output size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let dim = |d: usize| -> Result<usize> {
            let padded = d + 2 * self.padding;
            if padded < self.k {
                return Err(Error::Shape(format!(
                    "kernel {} exceeds padded input extent {padded}",
                    self.k
                )));
            }
            Ok((padded - self.k) / self.stride + 1)
        };
        Ok((dim(h)?, dim(w)?))
    }

    pub fn weight(&self, o: usize, i: usize, y: usize, x: usize) -> f32 {
        self.kernel[((o * self.c_in + i) * self.k + y) * self.k + x]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Inference-mode batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn new(gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32>, eps: f32) -> Result<Self> {
        let b = BnParams {
            gamma,
            beta,
            mean,
            var,
            eps,
        };
        b.validate()?;
        Ok(b)
    }

    /// Statistics for which the normalization is the identity map (`eps` = 0).
    pub fn identity(c: usize) -> Self {
        BnParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0; c],
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if c == 0 || self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(Error::Shape(format!(
                "batch-norm vectors must share a nonzero length (gamma {}, beta {}, mean {}, var {})",
                c,
                self.beta.len(),
                self.mean.len(),
                self.var.len()
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Precondition(format!("batch-norm eps must be >= 0, got {}", self.eps)));
        }
        if let Some(i) = self.var.iter().position(|&v| !(v >= 0.0) || v + self.eps <= 0.0) {
            return Err(Error::Precondition(format!(
                "batch-norm channel {i}: var {} with eps {} is not positive",
                self.var[i], self.eps
            )));
        }
        Ok(())
    }

    /// Per-channel multiplier `gamma / sqrt(var + eps)`.
    pub fn scale(&self) -> Vec<f32> {
        self.gamma
            .iter()
            .zip(&self.var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

fn im2col(x: &[f32], c: usize, h: usize, w: usize, p: &ConvParams, ho: usize, wo: usize) -> Vec<f32> {
    let k = p.k;
    let npix = ho * wo;
    let mut cols = vec![0.0f32; c * k * k * npix];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * npix;
                for oy in 0..ho {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Zero-padded 2-D cross-correlation plus bias.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    let s = input.shape;
    if s.c != p.c_in {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            p.c_in, s.c
        )));
    }
    let (ho, wo) = p.output_hw(s.h, s.w)?;
    let npix = ho * wo;
    let depth = p.c_in * p.k * p.k;
    let direct = p.k == 1 && p.stride == 1 && p.padding == 0;
    let out_shape = Shape::new(s.n, p.c_out, ho, wo);
    let mut out = vec![0.0f32; out_shape.numel()];

    out.par_chunks_mut(p.c_out * npix)
        .zip(input.data.par_chunks(s.item_len()))
        .for_each(|(o, x)| {
            let owned;
            let cols: &[f32] = if direct {
                x
            } else {
                owned = im2col(x, s.c, s.h, s.w, p, ho, wo);
                &owned
            };
            for (co, row) in o.chunks_mut(npix).enumerate() {
                row.fill(p.bias[co]);
            }
            // SAFETY: kernel is c_out × depth, cols is depth × npix and o is
            // c_out × npix, all row-major and sized by the checks above.
            unsafe {
                matrixmultiply::sgemm(
                    p.c_out,
                    depth,
                    npix,
                    1.0,
                    p.kernel.as_ptr(),
                    depth as isize,
                    1,
                    cols.as_ptr(),
                    npix as isize,
                    1,
                    1.0,
                    o.as_mut_ptr(),
                    npix as isize,
                    1,
                );
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub fn batchnorm_infer(input: &Tensor, b: &BnParams) -> Result<Tensor> {
    b.validate()?;
    let s = input.shape;
    if s.c != b.channels() {
        return Err(Error::Shape(format!(
            "batch-norm has {} channels, input has {}",
            b.channels(),
            s.c
        )));
    }
    let plane = s.plane();
    let mut out = input.clone();
    for (idx, chunk) in out.data.chunks_mut(plane).enumerate() {
        let i = idx % s.c;
        let denom = (b.var[i] + b.eps).sqrt();
        for v in chunk {
            *v = b.gamma[i] * (*v - b.mean[i]) / denom + b.beta[i];
        }
    }
    Ok(out)
}

/// Per-channel mean and (biased) variance over the batch and spatial axes.
pub fn channel_moments(input: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = input.shape;
    let mut sum = vec![0.0f64; s.c];
    let mut sq = vec![0.0f64; s.c];
    for (idx, chunk) in input.data.chunks(s.plane().max(1)).enumerate() {
        let i = idx % s.c;
        for &v in chunk {
            sum[i] += v as f64;
            sq[i] += (v as f64) * (v as f64);
        }
    }
    let count = (s.n * s.plane()).max(1) as f64;
    sum.iter()
        .zip(&sq)
        .map(|(&a, &b)| {
            let mean = a / count;
            (mean as f32, (b / count - mean * mean).max(0.0) as f32)
        })
        .unzip()
}

/// Splits the channel axis into two equal halves.
pub fn channel_split(input: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = input.shape;
    if s.c % 2 != 0 {
        return Err(Error::Precondition(format!(
            "channel_split needs an even channel count, got {}",
            s.c
        )));
    }
    let half = s.c / 2;
    let half_len = half * s.plane();
    let mut a = Vec::with_capacity(s.n * half_len);
    let mut b = Vec::with_capacity(s.n * half_len);
    for item in input.data.chunks(s.item_len()) {
        a.extend_from_slice(&item[..half_len]);
        b.extend_from_slice(&item[half_len..]);
    }
    let hs = Shape { c: half, ..s };
    Ok((Tensor::from_vec(hs, a)?, Tensor::from_vec(hs, b)?))
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::Shape(format!("cannot concat {sa} with {sb} along channels")));
    }
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    for (x, y) in a.data.chunks(sa.item_len()).zip(b.data.chunks(sb.item_len())) {
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    Tensor::from_vec(Shape { c: sa.c + sb.c, ..sa }, data)
}

/// Source channel feeding output channel `p` under a `groups`-way shuffle of
/// `c` channels: view channels as a `(groups, c / groups)` grid, transpose,
/// flatten.
pub fn shuffle_source(p: usize, c: usize, groups: usize) -> usize {
    let per_group = c / groups;
    (p % groups) * per_group + p / groups
}

pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let s = input.shape;
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::Precondition(format!(
            "channel_shuffle: {} channels not divisible into {groups} groups",
            s.c
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for item in input.data.chunks(s.item_len()) {
        for p in 0..s.c {
            let src = shuffle_source(p, s.c, groups);
            data.extend_from_slice(&item[src * plane..(src + 1) * plane]);
        }
    }
    Tensor::from_vec(s, data)
}

/// Unpadded max pooling with a square window.
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let s = input.shape;
    if k == 0 || stride == 0 {
        return Err(Error::Shape("pool window and stride must be >= 1".into()));
    }
    if k > s.h || k > s.w {
        return Err(Error::Shape(format!(
            "pool window {k} exceeds input extent {}x{}",
            s.h, s.w
        )));
    }
    let ho = (s.h - k) / stride + 1;
    let wo = (s.w - k) / stride + 1;
    let mut data = Vec::with_capacity(s.n * s.c * ho * wo);
    for plane in input.data.chunks(s.plane()) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..k {
                    let row = &plane[(oy * stride + ky) * s.w..];
                    for kx in 0..k {
                        m = m.max(row[ox * stride + kx]);
                    }
                }
                data.push(m);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, ho, wo), data)
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Precondition("upsample factor must be >= 1".into()));
    }
    let s = input.shape;
    let (ho, wo) = (s.h * factor, s.w * factor);
    let mut data = Vec::with_capacity(s.n * s.c * ho * wo);
    for plane in input.data.chunks(s.plane()) {
        for oy in 0..ho {
            let row = &plane[(oy / factor) * s.w..(oy / factor + 1) * s.w];
            for ox in 0..wo {
                data.push(row[ox / factor]);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, ho, wo), data)
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise SiLU, the network's only nonlinearity.
pub fn activation(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    activation_inplace(&mut out);
    out
}

pub fn activation_inplace(t: &mut Tensor) {
    for v in t.data.iter_mut() {
        *v = silu(*v);
    }
}
