//! Dense row-major tensors and the forward/backward kernels of the layer set.
//!
//! Spatial tensors are laid out `[height, width, channels]`, convolution
//! kernels `[filters, kernel_h, kernel_w, channels]`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return dim_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn norm_linf(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

fn hwc(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => dim_err(format!("{what} must be [H, W, C], got {s:?}")),
    }
}

/// Output extent of a strided, padded window sweep.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (h, w, c) = hwc(input, "conv2d input")?;
    let (k, kh, kw, kc) = match *kernels.shape() {
        [k, kh, kw, kc] => (k, kh, kw, kc),
        ref s => return dim_err(format!("conv2d kernels must be [K, kh, kw, C], got {s:?}")),
    };
    if kc != c {
        return dim_err(format!("conv2d kernel depth {kc} does not match input channels {c}"));
    }
    if stride == 0 {
        return dim_err("conv2d stride must be positive");
    }
    let (oh, ow) = match (
        conv_out_extent(h, kh, stride, padding),
        conv_out_extent(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return dim_err(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ))
        }
    };
    Ok(ConvGeom { h, w, c, k, kh, kw, oh, ow, stride, pad: padding })
}

impl ConvGeom {
    /// Input coordinate for output `o` and kernel tap `t`, if inside the unpadded image.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + t;
        if p < self.pad || p - self.pad >= extent {
            None
        } else {
            Some(p - self.pad)
        }
    }
}

/// Cross-correlation of an `[H, W, C]` input with `[K, kh, kw, C]` kernels.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, kernels, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.k {
            return dim_err(format!("conv2d bias has {} entries for {} filters", b.len(), g.k));
        }
    }
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![T::zero(); g.oh * g.ow * g.k];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.k..(oy * g.ow + ox + 1) * g.k];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &x[(iy * g.w + ix) * g.c..(iy * g.w + ix + 1) * g.c];
                    for (f, acc) in o.iter_mut().enumerate() {
                        let base = ((f * g.kh + ky) * g.kw + kx) * g.c;
                        let kern = &wt[base..base + g.c];
                        *acc += px.iter().zip(kern).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.oh, g.ow, g.k], out)
}

/// Input gradient, kernel gradient and bias gradient of a convolution.
pub type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>);

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
/// `want` selects which of the (input, kernel) gradients are computed.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
    want: (bool, bool),
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, kernels, stride, padding)?;
    if grad_out.shape() != [g.oh, g.ow, g.k] {
        return dim_err(format!(
            "conv2d upstream gradient {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            g.oh,
            g.ow,
            g.k
        ));
    }
    let x = input.data();
    let wt = kernels.data();
    let go = grad_out.data();
    let (want_x, want_w) = want;
    let mut gx = vec![T::zero(); if want_x { x.len() } else { 0 }];
    let mut gw = vec![T::zero(); if want_w { wt.len() } else { 0 }];
    let mut gb = vec![T::zero(); g.k];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &go[(oy * g.ow + ox) * g.k..(oy * g.ow + ox + 1) * g.k];
            for (b, &d) in gb.iter_mut().zip(o) {
                *b += d;
            }
            if !want_x && !want_w {
                continue;
            }
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let pix = (iy * g.w + ix) * g.c;
                    for (f, &d) in o.iter().enumerate() {
                        if d == T::zero() {
                            continue;
                        }
                        let base = ((f * g.kh + ky) * g.kw + kx) * g.c;
                        if want_x {
                            for (a, &w) in gx[pix..pix + g.c].iter_mut().zip(&wt[base..base + g.c]) {
                                *a += d * w;
                            }
                        }
                        if want_w {
                            for (a, &v) in gw[base..base + g.c].iter_mut().zip(&x[pix..pix + g.c]) {
                                *a += d * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        if want_x { Some(Tensor::from_vec(input.shape(), gx)?) } else { None },
        if want_w { Some(Tensor::from_vec(kernels.shape(), gw)?) } else { None },
        Tensor::from_vec(&[g.k], gb)?,
    ))
}

fn matrix_dims(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => dim_err(format!("{what} must be a matrix, got {s:?}")),
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 {
        return dim_err(format!("matmul inner extents differ: {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = ad[i * k + p];
            if s == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = matrix_dims(a, "transpose input")?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Flattened input times a `[in, out]` weight matrix plus an `[out]` bias.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n_in, n_out) = matrix_dims(weight, "dense weight")?;
    if input.len() != n_in {
        return dim_err(format!("dense layer expects {n_in} inputs, got {}", input.len()));
    }
    let mut out = match bias {
        Some(b) if b.len() == n_out => b.data().to_vec(),
        Some(b) => return dim_err(format!("dense bias has {} entries for {n_out} outputs", b.len())),
        None => vec![T::zero(); n_out],
    };
    let w = weight.data();
    for (i, &x) in input.data().iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
            *o += x * wv;
        }
    }
    Tensor::from_vec(&[n_out], out)
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n_in, n_out) = matrix_dims(weight, "dense weight")?;
    if grad_out.len() != n_out || input.len() != n_in {
        return dim_err("dense upstream gradient does not match layer extents");
    }
    let w = weight.data();
    let go = grad_out.data();
    let mut gx = vec![T::zero(); n_in];
    let mut gw = vec![T::zero(); n_in * n_out];
    for (i, &x) in input.data().iter().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        gx[i] = row.iter().zip(go).map(|(&a, &b)| a * b).sum();
        for (g, &d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(go) {
            *g = x * d;
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        grad_out.clone().reshape(&[n_out])?,
    ))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// 2x2 max pooling with stride 2; a trailing odd row or column is dropped.
/// Returns the pooled tensor and, per output entry, the flat index of the winning input.
pub fn max_pool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w, c) = hwc(input, "max-pool input")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return dim_err(format!("max-pool input {h}x{w} smaller than 2x2"));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[oh, ow, c], out)?, arg))
}

pub fn max_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return dim_err("max-pool upstream gradient does not match pooled extent");
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let m = logits.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps = logits.map(|v| (v - m).exp());
    let z = exps.sum();
    exps.map(|v| v / z)
}

pub fn log_sum_exp<T: Scalar>(logits: &Tensor<T>) -> T {
    let m = logits.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    m + logits.data().iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Cross-entropy of softmax(logits) against `label`, with its logit gradient `softmax - onehot`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    if label >= logits.len() {
        return dim_err(format!("label {label} out of range for {} classes", logits.len()));
    }
    let loss = log_sum_exp(logits) - logits.data()[label];
    let mut grad = softmax(logits);
    grad.data_mut()[label] -= T::one();
    Ok((loss, grad))
}
