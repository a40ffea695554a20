//! Raw numeric kernels behind the tensor primitives. Everything here works on
//! row-major slices; shape checking happens one level up.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Element;
use crate::par;

thread_local! {
    static PLANS_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static CACHE_F64: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
    static CACHE_F32: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f32>>>> = RefCell::new(HashMap::new());
}

pub(crate) fn plan_f64(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    CACHE_F64.with(|c| {
        c.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                PLANS_F64.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(len)
                    } else {
                        p.plan_fft_forward(len)
                    }
                })
            })
            .clone()
    })
}

pub(crate) fn plan_f32(len: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
    CACHE_F32.with(|c| {
        c.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                PLANS_F32.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(len)
                    } else {
                        p.plan_fft_forward(len)
                    }
                })
            })
            .clone()
    })
}

/// Geometry of the 1-D lines of a `[c, h, w]` block along `axis` (1 or 2).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lines {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub axis: usize,
}

impl Lines {
    pub fn len(&self) -> usize {
        if self.axis == 2 {
            self.w
        } else {
            self.h
        }
    }

    pub fn count(&self) -> usize {
        if self.axis == 2 {
            self.c * self.h
        } else {
            self.c * self.w
        }
    }

    /// (offset of element 0, stride) of line `i` in a `[c, h, w]` buffer.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        if self.axis == 2 {
            (i * self.w, 1)
        } else {
            let ch = i / self.w;
            let col = i % self.w;
            (ch * self.h * self.w + col, self.w)
        }
    }
}

/// Real-to-half-complex transform along `axis`. Output is stacked
/// `[2c, ...]` with the real parts in the first `c` channels and the
/// imaginary parts in the last `c`; the transformed axis has `n/2 + 1` bins.
pub(crate) fn rfft_lines<T: Element>(x: &[T], src: Lines) -> Vec<T> {
    let n = src.len();
    let nb = n / 2 + 1;
    let dst = if src.axis == 2 {
        Lines { c: src.c, h: src.h, w: nb, axis: 2 }
    } else {
        Lines { c: src.c, h: nb, w: src.w, axis: 1 }
    };
    let half = src.c * dst.h * dst.w;
    let mut out = vec![T::zero(); 2 * half];
    let plan = T::fft_plan(n, false);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..src.count() {
        let (o, s) = src.locate(i);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[o + k * s], T::zero());
        }
        plan.process(&mut buf);
        let (od, sd) = dst.locate(i);
        for (k, b) in buf.iter().take(nb).enumerate() {
            out[od + k * sd] = b.re;
            out[half + od + k * sd] = b.im;
        }
    }
    out
}

/// Inverse of [`rfft_lines`] with output length `n` along the axis,
/// normalized by `1/n`. Imaginary parts of the DC bin (and the Nyquist bin
/// for even `n`) are ignored, as a real signal cannot carry them.
pub(crate) fn irfft_lines<T: Element>(y: &[T], src: Lines, n: usize) -> Vec<T> {
    let dst = if src.axis == 2 {
        Lines { c: src.c, h: src.h, w: n, axis: 2 }
    } else {
        Lines { c: src.c, h: n, w: src.w, axis: 1 }
    };
    let half = src.c * src.h * src.w;
    let nb = src.len();
    let mut out = vec![T::zero(); src.c * dst.h * dst.w];
    let plan = T::fft_plan(n, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let inv_n = T::one() / T::from_f64_lossy(n as f64);
    for i in 0..src.count() {
        let (o, s) = src.locate(i);
        buf.iter_mut().for_each(|b| *b = Complex::new(T::zero(), T::zero()));
        for k in 0..nb {
            let re = y[o + k * s];
            let im = y[half + o + k * s];
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                buf[k] = Complex::new(re, T::zero());
            } else {
                buf[k] = Complex::new(re, im);
                buf[n - k] = Complex::new(re, -im);
            }
        }
        plan.process(&mut buf);
        let (od, sd) = dst.locate(i);
        for (k, b) in buf.iter().enumerate() {
            out[od + k * sd] = b.re * inv_n;
        }
    }
    out
}

/// Adjoint of [`rfft_lines`]: maps a stacked half-spectrum cotangent back to
/// a real signal of length `n`.
pub(crate) fn rfft_lines_adjoint<T: Element>(g: &[T], src: Lines, n: usize) -> Vec<T> {
    // x̄_n = Re Σ_k ḡ_k e^{+iθ}; an unnormalized inverse transform of the
    // zero-extended half spectrum.
    let dst = if src.axis == 2 {
        Lines { c: src.c, h: src.h, w: n, axis: 2 }
    } else {
        Lines { c: src.c, h: n, w: src.w, axis: 1 }
    };
    let half = src.c * src.h * src.w;
    let nb = src.len();
    let mut out = vec![T::zero(); src.c * dst.h * dst.w];
    let plan = T::fft_plan(n, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..src.count() {
        let (o, s) = src.locate(i);
        buf.iter_mut().for_each(|b| *b = Complex::new(T::zero(), T::zero()));
        for k in 0..nb {
            buf[k] = Complex::new(g[o + k * s], g[half + o + k * s]);
        }
        plan.process(&mut buf);
        let (od, sd) = dst.locate(i);
        for (k, b) in buf.iter().enumerate() {
            out[od + k * sd] = b.re;
        }
    }
    out
}

/// Adjoint of [`irfft_lines`]: `(c_k / n) · rfft(ḡ)` with `c_k = 2` on
/// interior bins, `1` on DC/Nyquist, and the DC/Nyquist imaginary parts zero.
pub(crate) fn irfft_lines_adjoint<T: Element>(g: &[T], src: Lines) -> Vec<T> {
    let n = src.len();
    let mut spec = rfft_lines(g, src);
    let nb = n / 2 + 1;
    let dst = if src.axis == 2 {
        Lines { c: src.c, h: src.h, w: nb, axis: 2 }
    } else {
        Lines { c: src.c, h: nb, w: src.w, axis: 1 }
    };
    let half = src.c * dst.h * dst.w;
    let inv_n = T::one() / T::from_f64_lossy(n as f64);
    let two = T::from_f64_lossy(2.0);
    for i in 0..dst.count() {
        let (o, s) = dst.locate(i);
        for k in 0..nb {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let w = if edge { inv_n } else { two * inv_n };
            spec[o + k * s] = spec[o + k * s] * w;
            spec[half + o + k * s] = if edge { T::zero() } else { spec[half + o + k * s] * w };
        }
    }
    spec
}

/// Complex-to-complex transform of a stacked `[2c, h, w]` block along `axis`.
/// `inverse` selects the unnormalized backward transform.
pub(crate) fn fft_lines<T: Element>(x: &[T], src: Lines, inverse: bool) -> Vec<T> {
    let n = src.len();
    let half = src.c * src.h * src.w;
    let mut out = vec![T::zero(); 2 * half];
    let plan = T::fft_plan(n, inverse);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..src.count() {
        let (o, s) = src.locate(i);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[o + k * s], x[half + o + k * s]);
        }
        plan.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            out[o + k * s] = b.re;
            out[half + o + k * s] = b.im;
        }
    }
    out
}

/// Output extent of a strided convolution.
pub(crate) fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    #[inline]
    fn src(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }

    /// Output positions `o < n_out` whose tap `kk` lands inside `0..n_in`.
    #[inline]
    fn span(&self, kk: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
        let lo = if kk >= self.pad { 0 } else { (self.pad - kk).div_ceil(self.stride) };
        let hi = if n_in + self.pad > kk { ((n_in + self.pad - kk - 1) / self.stride + 1).min(n_out) } else { 0 };
        lo..hi.max(lo)
    }
}

/// `y[co] = Σ_ci w[co, ci] ⋆ x[ci]` (cross-correlation), weight `[co, ci, k, k]`.
pub(crate) fn conv_forward<T: Element>(x: &[T], w: &[T], g: ConvGeom) -> Vec<T> {
    let mut y = vec![T::zero(); g.co * g.ho * g.wo];
    let plane = g.ho * g.wo;
    par::for_each_chunk(&mut y, plane, plane * g.ci * g.k * g.k, |co, out| {
        for ci in 0..g.ci {
            let xs = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let ws = &w[(co * g.ci + ci) * g.k * g.k..(co * g.ci + ci + 1) * g.k * g.k];
            for oy in 0..g.ho {
                let orow = &mut out[oy * g.wo..(oy + 1) * g.wo];
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let xrow = &xs[iy * g.w..(iy + 1) * g.w];
                    for kx in 0..g.k {
                        let wk = ws[ky * g.k + kx];
                        for ox in g.span(kx, g.w, g.wo) {
                            orow[ox] = orow[ox] + wk * xrow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    });
    y
}

/// Transpose of [`conv_forward`] with respect to `x`.
pub(crate) fn conv_backward_input<T: Element>(gy: &[T], w: &[T], g: ConvGeom) -> Vec<T> {
    let mut gx = vec![T::zero(); g.ci * g.h * g.w];
    let plane = g.h * g.w;
    par::for_each_chunk(&mut gx, plane, g.ho * g.wo * g.co * g.k * g.k, |ci, out| {
        for co in 0..g.co {
            let gs = &gy[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
            let ws = &w[(co * g.ci + ci) * g.k * g.k..(co * g.ci + ci + 1) * g.k * g.k];
            for oy in 0..g.ho {
                let grow = &gs[oy * g.wo..(oy + 1) * g.wo];
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let xrow = &mut out[iy * g.w..(iy + 1) * g.w];
                    for kx in 0..g.k {
                        let wk = ws[ky * g.k + kx];
                        for ox in g.span(kx, g.w, g.wo) {
                            let ix = ox * g.stride + kx - g.pad;
                            xrow[ix] = xrow[ix] + wk * grow[ox];
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of [`conv_forward`] with respect to the weight.
pub(crate) fn conv_backward_weight<T: Element>(x: &[T], gy: &[T], g: ConvGeom) -> Vec<T> {
    let mut gw = vec![T::zero(); g.co * g.ci * g.k * g.k];
    let per_co = g.ci * g.k * g.k;
    par::for_each_chunk(&mut gw, per_co, per_co * g.ho * g.wo, |co, out| {
        let gs = &gy[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
        for ci in 0..g.ci {
            let xs = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let span = g.span(kx, g.w, g.wo);
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        let grow = &gs[oy * g.wo..(oy + 1) * g.wo];
                        let xrow = &xs[iy * g.w..(iy + 1) * g.w];
                        for ox in span.clone() {
                            acc = acc + grow[ox] * xrow[ox * g.stride + kx - g.pad];
                        }
                    }
                    out[(ci * g.k + ky) * g.k + kx] = acc;
                }
            }
        }
    });
    gw
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub(crate) fn gelu<T: Element>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
