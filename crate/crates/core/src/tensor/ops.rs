use std::sync::Arc;

use super::kernels::{self, ConvGeom, Lines};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Spatial axis of a `[c, h, w]` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::Height => 1,
            Axis::Width => 2,
        }
    }
}

/// A fixed linear map that can be recorded as a differentiable primitive.
/// `adjoint` must be the exact transpose of `apply`.
pub trait LinearOperator<T: Element>: Send + Sync {
    fn name(&self) -> &str;
    fn in_shape(&self) -> Vec<usize>;
    fn out_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &[T]) -> Vec<T>;
    fn adjoint(&self, y: &[T]) -> Vec<T>;
}

pub(crate) enum Op<T: Element> {
    Add,
    Sub,
    Mul,
    Scale(T),
    Sum,
    Mean,
    Square,
    MatVec,
    Conv2d { geom: ConvGeom, bias: bool },
    Conv2dTranspose { geom: ConvGeom, bias: bool },
    Gelu,
    Sigmoid,
    Concat { sizes: Vec<usize> },
    Narrow { start: usize },
    SliceRows { start: usize },
    PadRows { before: usize },
    Reshape,
    Rfft { lines: Lines },
    Irfft { lines: Lines },
    Fft { lines: Lines },
    ComplexHadamard { axis: Axis },
    Linear(Arc<dyn LinearOperator<T>>),
}

impl<T: Element> Op<T> {
    pub fn name(&self) -> &str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Square => "square",
            Op::MatVec => "matvec",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv2dTranspose { .. } => "conv2d_transpose",
            Op::Gelu => "gelu",
            Op::Sigmoid => "sigmoid",
            Op::Concat { .. } => "concat_channels",
            Op::Narrow { .. } => "split_channels",
            Op::SliceRows { .. } => "slice_rows",
            Op::PadRows { .. } => "pad_rows",
            Op::Reshape => "reshape",
            Op::Rfft { .. } => "rfft_axis",
            Op::Irfft { .. } => "irfft_axis",
            Op::Fft { .. } => "fft_axis",
            Op::ComplexHadamard { .. } => "complex_hadamard",
            Op::Linear(l) => l.name(),
        }
    }

    /// Vector-Jacobian products for each input; `None` where the input does
    /// not need a gradient.
    pub fn vjp(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let need = |i: usize| inputs.get(i).is_some_and(|t| t.requires_grad);
        let map = |i: usize, f: &dyn Fn() -> Vec<T>| need(i).then(f);
        match self {
            Op::Add => vec![map(0, &|| g.to_vec()), map(1, &|| g.to_vec())],
            Op::Sub => vec![map(0, &|| g.to_vec()), map(1, &|| g.iter().map(|v| -*v).collect())],
            Op::Mul => {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                vec![
                    map(0, &|| g.iter().zip(b).map(|(g, b)| *g * *b).collect()),
                    map(1, &|| g.iter().zip(a).map(|(g, a)| *g * *a).collect()),
                ]
            }
            Op::Scale(f) => vec![map(0, &|| g.iter().map(|v| *v * *f).collect())],
            Op::Sum => vec![map(0, &|| vec![g[0]; inputs[0].numel()])],
            Op::Mean => {
                let n = T::from_f64_lossy(inputs[0].numel() as f64);
                vec![map(0, &|| vec![g[0] / n; inputs[0].numel()])]
            }
            Op::Square => {
                let two = T::from_f64_lossy(2.0);
                vec![map(0, &|| g.iter().zip(inputs[0].data()).map(|(g, x)| two * *x * *g).collect())]
            }
            Op::MatVec => {
                let (m, v) = (inputs[0].data(), inputs[1].data());
                let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
                vec![
                    map(0, &|| {
                        let mut gm = vec![T::zero(); r * c];
                        for i in 0..r {
                            for j in 0..c {
                                gm[i * c + j] = g[i] * v[j];
                            }
                        }
                        gm
                    }),
                    map(1, &|| {
                        let mut gv = vec![T::zero(); c];
                        for i in 0..r {
                            for j in 0..c {
                                gv[j] = gv[j] + m[i * c + j] * g[i];
                            }
                        }
                        gv
                    }),
                ]
            }
            Op::Conv2d { geom, bias } => {
                let x = inputs[0].data();
                let w = inputs[1].data();
                let mut v = vec![
                    map(0, &|| kernels::conv_backward_input(g, w, *geom)),
                    map(1, &|| kernels::conv_backward_weight(x, g, *geom)),
                ];
                if *bias {
                    v.push(map(2, &|| plane_sums(g, geom.co)));
                }
                v
            }
            Op::Conv2dTranspose { geom, bias } => {
                // Forward was `conv_backward_input(x, w)`; with the roles of
                // the convolution's input and output swapped.
                let x = inputs[0].data();
                let w = inputs[1].data();
                let mut v = vec![
                    map(0, &|| kernels::conv_forward(g, w, *geom)),
                    map(1, &|| kernels::conv_backward_weight(g, x, *geom)),
                ];
                if *bias {
                    v.push(map(2, &|| plane_sums(g, geom.ci)));
                }
                v
            }
            Op::Gelu => {
                vec![map(0, &|| g.iter().zip(inputs[0].data()).map(|(g, x)| *g * kernels::gelu_grad(*x)).collect())]
            }
            Op::Sigmoid => vec![map(0, &|| g.iter().zip(out.data()).map(|(g, s)| *g * *s * (T::one() - *s)).collect())],
            Op::Concat { sizes } => {
                let plane = out.shape()[1] * out.shape()[2];
                let mut off = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let r = map(i, &|| g[off * plane..(off + c) * plane].to_vec());
                        off += c;
                        r
                    })
                    .collect()
            }
            Op::Narrow { start } => vec![map(0, &|| {
                let plane = out.shape()[1] * out.shape()[2];
                let mut gx = vec![T::zero(); inputs[0].numel()];
                gx[start * plane..start * plane + g.len()].copy_from_slice(g);
                gx
            })],
            Op::SliceRows { start } => vec![map(0, &|| {
                let (outer, rows, inner) = row_layout(inputs[0].shape());
                let len = row_layout(out.shape()).1;
                let mut gx = vec![T::zero(); inputs[0].numel()];
                for o in 0..outer {
                    for r in 0..len {
                        let src = (o * len + r) * inner;
                        let dst = (o * rows + start + r) * inner;
                        gx[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                    }
                }
                gx
            })],
            Op::PadRows { before } => vec![map(0, &|| {
                let (outer, rows, inner) = row_layout(inputs[0].shape());
                let total = row_layout(out.shape()).1;
                let mut gx = vec![T::zero(); inputs[0].numel()];
                for o in 0..outer {
                    for r in 0..rows {
                        let src = (o * total + before + r) * inner;
                        let dst = (o * rows + r) * inner;
                        gx[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                    }
                }
                gx
            })],
            Op::Reshape => vec![map(0, &|| g.to_vec())],
            Op::Rfft { lines } => vec![map(0, &|| {
                let dst = half_lines(*lines);
                kernels::rfft_lines_adjoint(g, dst, lines.len())
            })],
            Op::Irfft { lines } => vec![map(0, &|| {
                let src = full_lines(*lines, out.shape());
                kernels::irfft_lines_adjoint(g, src)
            })],
            Op::Fft { lines } => vec![map(0, &|| kernels::fft_lines(g, *lines, true))],
            Op::ComplexHadamard { axis } => {
                let z = inputs[0].data();
                let k = inputs[1].data();
                let (c2, h, w) = dims3(inputs[0].shape());
                let c = c2 / 2;
                let half = c * h * w;
                let klen = inputs[1].shape()[1];
                let kidx = |ch: usize, y: usize, x: usize| ch * klen + if *axis == Axis::Width { x } else { y };
                vec![
                    map(0, &|| {
                        let mut gz = vec![T::zero(); z.len()];
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    let i = (ch * h + y) * w + x;
                                    let (kr, ki) = (k[kidx(ch, y, x)], k[c * klen + kidx(ch, y, x)]);
                                    let (gr, gi) = (g[i], g[half + i]);
                                    gz[i] = kr * gr + ki * gi;
                                    gz[half + i] = kr * gi - ki * gr;
                                }
                            }
                        }
                        gz
                    }),
                    map(1, &|| {
                        let mut gk = vec![T::zero(); k.len()];
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    let i = (ch * h + y) * w + x;
                                    let j = kidx(ch, y, x);
                                    let (zr, zi) = (z[i], z[half + i]);
                                    let (gr, gi) = (g[i], g[half + i]);
                                    gk[j] = gk[j] + zr * gr + zi * gi;
                                    gk[c * klen + j] = gk[c * klen + j] + zr * gi - zi * gr;
                                }
                            }
                        }
                        gk
                    }),
                ]
            }
            Op::Linear(l) => vec![map(0, &|| l.adjoint(g))],
        }
    }
}

fn plane_sums<T: Element>(g: &[T], channels: usize) -> Vec<T> {
    let plane = g.len() / channels;
    g.chunks(plane).map(|c| c.iter().fold(T::zero(), |a, b| a + *b)).collect()
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    (s[0], s[1], s[2])
}

/// `(outer, rows, inner)`: rows are the second-to-last axis.
fn row_layout(s: &[usize]) -> (usize, usize, usize) {
    let n = s.len();
    let rows = s[n - 2];
    let inner = s[n - 1];
    let outer = s[..n - 2].iter().product();
    (outer, rows, inner)
}

/// Lines of the stacked half-spectrum produced from real `lines`.
fn half_lines(l: Lines) -> Lines {
    let nb = l.len() / 2 + 1;
    if l.axis == 2 {
        Lines { w: nb, ..l }
    } else {
        Lines { h: nb, ..l }
    }
}

/// Lines of the real signal reconstructed into `out_shape` from spectrum `l`.
fn full_lines(l: Lines, out_shape: &[usize]) -> Lines {
    Lines { c: out_shape[0], h: out_shape[1], w: out_shape[2], axis: l.axis }
}

fn check_rank3<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if t.shape().len() != 3 {
        return Err(Error::shape(op, &[t.shape()]));
    }
    Ok(dims3(t.shape()))
}

impl<T: Element> Tensor<T> {
    fn zip_same(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, &[self.shape(), other.shape()]));
        }
        Ok(self.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), d, Op::Add, &[self, other]))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.zip_same(other, "sub", |a, b| a - b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), d, Op::Sub, &[self, other]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.zip_same(other, "mul", |a, b| a * b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), d, Op::Mul, &[self, other]))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let d = self.data().iter().map(|v| *v * factor).collect();
        Tensor::from_op(self.shape().to_vec(), d, Op::Scale(factor), &[self])
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |a, b| a + *b);
        Tensor::from_op(vec![1], vec![s], Op::Sum, &[self])
    }

    pub fn mean(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |a, b| a + *b) / T::from_f64_lossy(self.numel() as f64);
        Tensor::from_op(vec![1], vec![s], Op::Mean, &[self])
    }

    pub fn square(&self) -> Tensor<T> {
        let d = self.data().iter().map(|v| *v * *v).collect();
        Tensor::from_op(self.shape().to_vec(), d, Op::Square, &[self])
    }

    pub fn gelu(&self) -> Tensor<T> {
        let d = self.data().iter().map(|v| kernels::gelu(*v)).collect();
        Tensor::from_op(self.shape().to_vec(), d, Op::Gelu, &[self])
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let d = self.data().iter().map(|v| kernels::sigmoid(*v)).collect();
        Tensor::from_op(self.shape().to_vec(), d, Op::Sigmoid, &[self])
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 || v.shape() != [s[1]] {
            return Err(Error::shape("matvec", &[s, v.shape()]));
        }
        let (r, c) = (s[0], s[1]);
        let m = self.data();
        let x = v.data();
        let d = (0..r).map(|i| (0..c).fold(T::zero(), |a, j| a + m[i * c + j] * x[j])).collect();
        Ok(Tensor::from_op(vec![r], d, Op::MatVec, &[self, v]))
    }

    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let (ci, h, w) = check_rank3("conv2d", self)?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[1] != ci || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", &[self.shape(), ws]));
        }
        let (co, k) = (ws[0], ws[2]);
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(Error::shape("conv2d", &[ws, b.shape()]));
            }
        }
        let (Some(ho), Some(wo)) = (kernels::conv_out_len(h, k, stride, pad), kernels::conv_out_len(w, k, stride, pad))
        else {
            return Err(Error::contract("conv2d", format!("kernel {k} stride {stride} does not fit {h}x{w}")));
        };
        let geom = ConvGeom { ci, co, h, w, ho, wo, k, stride, pad };
        let mut y = kernels::conv_forward(self.data(), weight.data(), geom);
        add_bias(&mut y, bias, ho * wo);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Tensor::from_op(vec![co, ho, wo], y, Op::Conv2d { geom, bias: bias.is_some() }, &inputs))
    }

    /// Transposed convolution; weight `[ci, co, k, k]`. Output extent is
    /// `(n - 1)·stride - 2·pad + k + out_pad`.
    pub fn conv2d_transpose(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Tensor<T>> {
        let (ci, h, w) = check_rank3("conv2d_transpose", self)?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[0] != ci || ws[2] != ws[3] || stride == 0 || out_pad >= stride {
            return Err(Error::shape("conv2d_transpose", &[self.shape(), ws]));
        }
        let (co, k) = (ws[1], ws[2]);
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(Error::shape("conv2d_transpose", &[ws, b.shape()]));
            }
        }
        let full = |n: usize| ((n - 1) * stride + k + out_pad).checked_sub(2 * pad);
        let (Some(ho), Some(wo)) = (full(h), full(w)) else {
            return Err(Error::contract("conv2d_transpose", "padding exceeds output"));
        };
        // As a convolution: input [co, ho, wo] -> output [ci, h, w].
        let geom = ConvGeom { ci: co, co: ci, h: ho, w: wo, ho: h, wo: w, k, stride, pad };
        if kernels::conv_out_len(ho, k, stride, pad) != Some(h) || kernels::conv_out_len(wo, k, stride, pad) != Some(w)
        {
            return Err(Error::contract("conv2d_transpose", "inconsistent geometry"));
        }
        let mut y = kernels::conv_backward_input(self.data(), weight.data(), geom);
        add_bias(&mut y, bias, ho * wo);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Tensor::from_op(vec![co, ho, wo], y, Op::Conv2dTranspose { geom, bias: bias.is_some() }, &inputs))
    }

    /// Stacks `[c_i, h, w]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_channels", "no inputs"))?;
        let (_, h, w) = check_rank3("concat_channels", first)?;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = check_rank3("concat_channels", p)?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("concat_channels", &[first.shape(), p.shape()]));
            }
            sizes.push(c);
            data.extend_from_slice(p.data());
        }
        let c = sizes.iter().sum();
        Ok(Tensor::from_op(vec![c, h, w], data, Op::Concat { sizes }, parts))
    }

    /// Splits along the channel axis into consecutive parts of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        let (c, h, w) = check_rank3("split_channels", self)?;
        if sizes.iter().sum::<usize>() != c || sizes.contains(&0) {
            return Err(Error::contract("split_channels", format!("sizes {sizes:?} do not partition {c} channels")));
        }
        let plane = h * w;
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&n| {
                let d = self.data()[start * plane..(start + n) * plane].to_vec();
                let t = Tensor::from_op(vec![n, h, w], d, Op::Narrow { start }, &[self]);
                start += n;
                t
            })
            .collect())
    }

    /// Keeps rows `start..start + len` of the second-to-last axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        if self.shape().len() < 2 {
            return Err(Error::shape("slice_rows", &[self.shape()]));
        }
        let (outer, rows, inner) = row_layout(self.shape());
        if len == 0 || start + len > rows {
            return Err(Error::contract("slice_rows", format!("rows {start}..{} out of 0..{rows}", start + len)));
        }
        let mut d = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * rows + start) * inner;
            d.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = len;
        Ok(Tensor::from_op(shape, d, Op::SliceRows { start }, &[self]))
    }

    /// Zero-pads the second-to-last axis.
    pub fn pad_rows(&self, before: usize, after: usize) -> Result<Tensor<T>> {
        if self.shape().len() < 2 {
            return Err(Error::shape("pad_rows", &[self.shape()]));
        }
        let (outer, rows, inner) = row_layout(self.shape());
        let total = rows + before + after;
        let mut d = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let src = o * rows * inner;
            let dst = (o * total + before) * inner;
            d[dst..dst + rows * inner].copy_from_slice(&self.data()[src..src + rows * inner]);
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = total;
        Ok(Tensor::from_op(shape, d, Op::PadRows { before }, &[self]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &[self.shape(), shape]));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape, &[self]))
    }

    /// Unnormalized real transform along a spatial axis of `[c, h, w]`.
    /// Returns `[2c, ...]` with real parts stacked over imaginary parts and
    /// `n/2 + 1` bins on the transformed axis.
    pub fn rfft_axis(&self, axis: Axis) -> Result<Tensor<T>> {
        let (c, h, w) = check_rank3("rfft_axis", self)?;
        let lines = Lines { c, h, w, axis: axis.index() };
        let d = kernels::rfft_lines(self.data(), lines);
        let shape = match axis {
            Axis::Width => vec![2 * c, h, w / 2 + 1],
            Axis::Height => vec![2 * c, h / 2 + 1, w],
        };
        Ok(Tensor::from_op(shape, d, Op::Rfft { lines }, &[self]))
    }

    /// Inverse of [`Tensor::rfft_axis`] (divides by `len`).
    pub fn irfft_axis(&self, axis: Axis, len: usize) -> Result<Tensor<T>> {
        let (c2, h, w) = check_rank3("irfft_axis", self)?;
        let bins = if axis == Axis::Width { w } else { h };
        if c2 % 2 != 0 || len == 0 || bins != len / 2 + 1 {
            return Err(Error::contract(
                "irfft_axis",
                format!("shape {:?} cannot hold a half spectrum of length {len}", self.shape()),
            ));
        }
        let lines = Lines { c: c2 / 2, h, w, axis: axis.index() };
        let d = kernels::irfft_lines(self.data(), lines, len);
        let shape = match axis {
            Axis::Width => vec![c2 / 2, h, len],
            Axis::Height => vec![c2 / 2, len, w],
        };
        Ok(Tensor::from_op(shape, d, Op::Irfft { lines }, &[self]))
    }

    /// Unnormalized complex transform of a stacked `[2c, h, w]` tensor.
    pub fn fft_axis(&self, axis: Axis) -> Result<Tensor<T>> {
        let (c2, h, w) = check_rank3("fft_axis", self)?;
        if c2 % 2 != 0 {
            return Err(Error::shape("fft_axis", &[self.shape()]));
        }
        let lines = Lines { c: c2 / 2, h, w, axis: axis.index() };
        let d = kernels::fft_lines(self.data(), lines, false);
        Ok(Tensor::from_op(self.shape().to_vec(), d, Op::Fft { lines }, &[self]))
    }

    /// Complex elementwise product of a stacked `[2c, h, w]` spectrum with a
    /// per-channel stacked kernel `[2c, n]`, `n` the extent along `axis`. The
    /// kernel is shared across the other spatial axis.
    pub fn complex_hadamard(&self, kernel: &Tensor<T>, axis: Axis) -> Result<Tensor<T>> {
        let (c2, h, w) = check_rank3("complex_hadamard", self)?;
        let n = if axis == Axis::Width { w } else { h };
        if c2 % 2 != 0 || kernel.shape() != [c2, n] {
            return Err(Error::shape("complex_hadamard", &[self.shape(), kernel.shape()]));
        }
        let c = c2 / 2;
        let half = c * h * w;
        let z = self.data();
        let k = kernel.data();
        let mut d = vec![T::zero(); z.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ch * h + y) * w + x;
                    let j = ch * n + if axis == Axis::Width { x } else { y };
                    let (kr, ki) = (k[j], k[c * n + j]);
                    let (zr, zi) = (z[i], z[half + i]);
                    d[i] = kr * zr - ki * zi;
                    d[half + i] = kr * zi + ki * zr;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), d, Op::ComplexHadamard { axis }, &[self, kernel]))
    }

    /// Applies a registered linear operator; its adjoint provides the VJP.
    pub fn linear_op(&self, op: Arc<dyn LinearOperator<T>>) -> Result<Tensor<T>> {
        if self.shape() != op.in_shape().as_slice() {
            return Err(Error::shape("linear_op", &[self.shape(), &op.in_shape()]));
        }
        let d = op.apply(self.data());
        let shape = op.out_shape();
        Ok(Tensor::from_op(shape, d, Op::Linear(op), &[self]))
    }
}

fn add_bias<T: Element>(y: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (c, chunk) in y.chunks_mut(plane).enumerate() {
            let bc = b.data()[c];
            chunk.iter_mut().for_each(|v| *v = *v + bc);
        }
    }
}
