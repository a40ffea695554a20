//! Frequency-domain convolution along one spatial axis, and the weighted
//! two-branch block built from it.
//!
//! For a `[c, h, w]` input the width branch computes, per channel and per row,
//! `G(irfft(K ⊙ rfft(x)))`: by the convolution theorem a circular convolution
//! with the kernel whose transform is `K`. The height branch does the same
//! down each column. Complex values live as stacked real/imaginary channels,
//! so everything runs on real tensors and stays differentiable.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Gelu,
}

impl Activation {
    pub fn apply(self, x: Tensor<f64>) -> Tensor<f64> {
        match self {
            Activation::Identity => x,
            Activation::Gelu => x.gelu(),
        }
    }
}

pub const DEFAULT_ALPHA_W: f64 = 0.45;
pub const DEFAULT_ALPHA_H: f64 = 0.55;

/// Learnable spectral kernels. `k_w` is `[2c, w/2 + 1]` and `k_h` is
/// `[2c, h/2 + 1]`, real parts stacked over imaginary parts.
#[derive(Clone, Debug)]
pub struct FreqConvParams {
    pub k_w: Tensor<f64>,
    pub k_h: Tensor<f64>,
    pub alpha_w: f64,
    pub alpha_h: f64,
    pub activation: Activation,
}

impl FreqConvParams {
    /// Unit kernels (the transform of a unit impulse): the block reduces to
    /// `(alpha_w + alpha_h)·G(x)`.
    pub fn delta(channels: usize, height: usize, width: usize) -> Self {
        FreqConvParams {
            k_w: delta_kernel(channels, width),
            k_h: delta_kernel(channels, height),
            alpha_w: DEFAULT_ALPHA_W,
            alpha_h: DEFAULT_ALPHA_H,
            activation: Activation::Gelu,
        }
    }

    pub fn check(&self, h: &Tensor<f64>) -> Result<()> {
        let [c, hh, ww] = *h.shape() else {
            return Err(Error::shape("freq_conv_block", &[h.shape()]));
        };
        if self.k_w.shape() != [2 * c, ww / 2 + 1] || self.k_h.shape() != [2 * c, hh / 2 + 1] {
            return Err(Error::shape("freq_conv_block", &[h.shape(), self.k_w.shape(), self.k_h.shape()]));
        }
        if !self.alpha_w.is_finite() || !self.alpha_h.is_finite() {
            return Err(Error::contract("freq_conv_block", "branch weights must be finite"));
        }
        Ok(())
    }
}

/// Stacked complex kernel equal to `1 + 0i` on every bin.
pub fn delta_kernel(channels: usize, len: usize) -> Tensor<f64> {
    let bins = len / 2 + 1;
    let mut d = vec![0.0; 2 * channels * bins];
    d[..channels * bins].fill(1.0);
    Tensor::from_vec(&[2 * channels, bins], d).expect("consistent shape")
}

/// Transforms real spatial kernels `[c, len]` into stacked spectral kernels
/// `[2c, len/2 + 1]`.
pub fn spectral_kernel(spatial: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [c, len] = *spatial.shape() else {
        return Err(Error::shape("spectral_kernel", &[spatial.shape()]));
    };
    let spec = spatial.reshape(&[c, 1, len])?.rfft_axis(Axis::Width)?;
    spec.reshape(&[2 * c, len / 2 + 1])
}

/// `G(irfft(kernel ⊙ rfft(h)))` along `axis`, per channel.
pub fn freq_conv_axis(
    h: &Tensor<f64>,
    kernel: &Tensor<f64>,
    axis: Axis,
    activation: Activation,
) -> Result<Tensor<f64>> {
    let [c, hh, ww] = *h.shape() else {
        return Err(Error::shape("freq_conv_axis", &[h.shape()]));
    };
    let len = if axis == Axis::Width { ww } else { hh };
    if kernel.shape() != [2 * c, len / 2 + 1] {
        return Err(Error::shape("freq_conv_axis", &[h.shape(), kernel.shape()]));
    }
    let y = h.rfft_axis(axis)?.complex_hadamard(kernel, axis)?.irfft_axis(axis, len)?;
    Ok(activation.apply(y))
}

/// `alpha_w · width_branch(h) + alpha_h · height_branch(h)`.
pub fn freq_conv_block(h: &Tensor<f64>, params: &FreqConvParams) -> Result<Tensor<f64>> {
    freq_conv_block_axes(h, params, true, true)
}

/// [`freq_conv_block`] with either branch switched off; a disabled branch is
/// not evaluated, so its kernel has no influence.
pub fn freq_conv_block_axes(
    h: &Tensor<f64>,
    params: &FreqConvParams,
    width: bool,
    height: bool,
) -> Result<Tensor<f64>> {
    params.check(h)?;
    let yw = width
        .then(|| freq_conv_axis(h, &params.k_w, Axis::Width, params.activation))
        .transpose()?
        .map(|y| y.scale(params.alpha_w));
    let yh = height
        .then(|| freq_conv_axis(h, &params.k_h, Axis::Height, params.activation))
        .transpose()?
        .map(|y| y.scale(params.alpha_h));
    match (yw, yh) {
        (Some(a), Some(b)) => a.add(&b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Ok(Tensor::zeros(h.shape())),
    }
}

/// One benchmark configuration: channels, height, width, kernel size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSize {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl std::str::FromStr for BenchSize {
    type Err = String;

    /// `CxHxWxK`, e.g. `1x64x64x9`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("bad size `{s}`: {e}"))?;
        match parts[..] {
            [c, h, w, k] if c > 0 && h > 0 && w > 0 && k > 0 && k <= h.min(w) => Ok(BenchSize { c, h, w, k }),
            _ => Err(format!("bad size `{s}`: expected CxHxWxK with 1 <= K <= min(H, W)")),
        }
    }
}

/// Operation counts from the two placement strategies' complexity terms,
/// evaluated for one configuration (downsampling factor 2, encoder of two
/// 3×3 stride-2 layers, latent at a quarter of each side).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTerms {
    pub down: f64,
    pub standard: f64,
    pub fourier: f64,
    pub restore: f64,
    pub encoder: f64,
    pub latent_encoder: f64,
    pub latent_standard: f64,
    pub latent_fourier: f64,
    pub latent_restore: f64,
}

impl ComplexityTerms {
    pub fn evaluate(s: BenchSize) -> Self {
        let (c, h, w, k) = (s.c as f64, s.h as f64, s.w as f64, s.k as f64);
        let r2 = 4.0;
        let hw_r = h * w / r2;
        let enc_k2 = 9.0;
        // Downsampling first: the encoder sees the reduced image.
        let encoder = c * c * enc_k2 * (h / 2.0) * (w / 2.0) / r2 + c * c * enc_k2 * (h / 4.0) * (w / 4.0) / r2;
        let (hl, wl) = (h / 4.0, w / 4.0);
        let latent_encoder = c * c * enc_k2 * (h / 2.0) * (w / 2.0) + c * c * enc_k2 * hl * wl;
        ComplexityTerms {
            down: 2.0 * c * h * w / r2,
            standard: c * c * k * k * hw_r,
            fourier: c * hw_r * hw_r.log2() + c * hw_r,
            restore: 2.0 * c * c * k * k * hw_r,
            encoder,
            latent_encoder,
            latent_standard: c * c * k * k * hl * wl,
            latent_fourier: c * hl * wl * (hl * wl).log2() + c * hl * wl,
            latent_restore: 2.0 * c * c * k * k * hl * wl,
        }
    }

    /// Compact `key=value` list separated by `;`.
    pub fn render(&self) -> String {
        format!(
            "down={:.0};s={:.0};f={:.0};r={:.0};e={:.0};latent_e={:.0};latent_s={:.0};latent_f={:.0};latent_r={:.0}",
            self.down,
            self.standard,
            self.fourier,
            self.restore,
            self.encoder,
            self.latent_encoder,
            self.latent_standard,
            self.latent_fourier,
            self.latent_restore
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub k: usize,
    pub t_direct_ms: f64,
    pub t_fft_ms: f64,
    pub o_terms: String,
}

/// Direct 2-D circular convolution of each channel with the separable
/// `k × k` kernel `kh ⊗ kw` (kernels are `[c, k]`, centered at index 0).
pub fn direct_circular_conv2d(x: &[f64], c: usize, h: usize, w: usize, kh: &[f64], kw: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        let sy = (y + h - dy % h) % h;
                        let sx = (xx + w - dx % w) % w;
                        acc += kh[ch * k + dy] * kw[ch * k + dx] * plane[sy * w + sx];
                    }
                }
                out[ch * h * w + y * w + xx] = acc;
            }
        }
    }
    out
}

/// Zero-extends `[c, k]` taps to `[c, len]` and transforms them.
fn taps_to_spectral(taps: &[f64], c: usize, k: usize, len: usize) -> Result<Tensor<f64>> {
    let mut full = vec![0.0; c * len];
    for ch in 0..c {
        full[ch * len..ch * len + k].copy_from_slice(&taps[ch * k..(ch + 1) * k]);
    }
    spectral_kernel(&Tensor::from_vec(&[c, len], full)?)
}

/// The FFT route for [`direct_circular_conv2d`]: a width pass then a height
/// pass of [`freq_conv_axis`].
pub fn fft_circular_conv2d(x: &Tensor<f64>, kh: &[f64], kw: &[f64], k: usize) -> Result<Tensor<f64>> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::shape("fft_circular_conv2d", &[x.shape()]));
    };
    let sw = taps_to_spectral(kw, c, k, w)?;
    let sh = taps_to_spectral(kh, c, k, h)?;
    let y = freq_conv_axis(x, &sw, Axis::Width, Activation::Identity)?;
    freq_conv_axis(&y, &sh, Axis::Height, Activation::Identity)
}

fn time_ms<R>(reps: usize, mut f: impl FnMut() -> R) -> (f64, R) {
    let mut last = f();
    let start = Instant::now();
    for _ in 0..reps {
        last = f();
    }
    (start.elapsed().as_secs_f64() * 1e3 / reps as f64, last)
}

/// Times direct vs. FFT circular convolution per size, after checking the two
/// routes agree to 1e-5 relative.
pub fn bench_conv(sizes: &[BenchSize]) -> Result<Vec<BenchRow>> {
    use rand::Rng as _;
    if sizes.is_empty() {
        return Err(Error::contract("bench_conv", "no sizes given"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        let mut rng = crate::rng::derive(0xBE7C, i as u64);
        let n = s.c * s.h * s.w;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kh: Vec<f64> = (0..s.c * s.k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kw: Vec<f64> = (0..s.c * s.k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt = Tensor::from_vec(&[s.c, s.h, s.w], x.clone())?;
        let reps = (2_000_000 / (n * s.k * s.k).max(1)).clamp(1, 50);
        let (t_direct_ms, direct) = time_ms(reps, || direct_circular_conv2d(&x, s.c, s.h, s.w, &kh, &kw, s.k));
        let (t_fft_ms, fft) = time_ms(reps, || fft_circular_conv2d(&xt, &kh, &kw, s.k));
        let fft = fft?;
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = direct.iter().zip(fft.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if err / scale > 1e-5 {
            return Err(Error::contract(
                "bench_conv",
                format!("direct and FFT paths disagree by {:.3e} at {s:?}", err / scale),
            ));
        }
        rows.push(BenchRow {
            c: s.c,
            h: s.h,
            w: s.w,
            k: s.k,
            t_direct_ms,
            t_fft_ms,
            o_terms: ComplexityTerms::evaluate(s).render(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::gradcheck;
    use rand::Rng as _;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// O(n²) per-line circular convolution along `axis`.
    fn circular_oracle(x: &Tensor<f64>, taps: &[f64], axis: Axis) -> Vec<f64> {
        let [c, h, w] = *x.shape() else { unreachable!() };
        let n = if axis == Axis::Width { w } else { h };
        let d = x.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let pos = if axis == Axis::Width { xx } else { y };
                    let mut acc = 0.0;
                    for m in 0..n {
                        let src = (pos + n - m) % n;
                        let (sy, sx) = if axis == Axis::Width { (y, src) } else { (src, xx) };
                        acc += taps[ch * n + m] * d[(ch * h + sy) * w + sx];
                    }
                    out[(ch * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = rand_tensor(&[3, 8, 10], 1);
        for axis in [Axis::Width, Axis::Height] {
            let len = x.shape()[axis.index()];
            let y = freq_conv_axis(&x, &delta_kernel(3, len), axis, Activation::Identity).unwrap();
            assert!(rel_err(y.data(), x.data()) <= 1e-6);
        }
    }

    #[test]
    fn shift_kernel_shifts_by_one() {
        let x = rand_tensor(&[2, 4, 8], 2);
        let mut taps = vec![0.0; 2 * 8];
        taps[1] = 1.0;
        taps[8 + 1] = 1.0;
        let k = spectral_kernel(&Tensor::from_vec(&[2, 8], taps).unwrap()).unwrap();
        let y = freq_conv_axis(&x, &k, Axis::Width, Activation::Identity).unwrap();
        for ch in 0..2 {
            for r in 0..4 {
                for c in 0..8 {
                    let want = x.data()[(ch * 4 + r) * 8 + (c + 7) % 8];
                    assert!((y.data()[(ch * 4 + r) * 8 + c] - want).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn convolution_theorem_on_random_kernels() {
        for (shape, seed) in [([1, 8, 16], 3u64), ([4, 32, 32], 4), ([3, 6, 7], 5), ([2, 9, 5], 6)] {
            let x = rand_tensor(&shape, seed);
            for axis in [Axis::Width, Axis::Height] {
                let n = shape[axis.index()];
                let taps = rand_tensor(&[shape[0], n], seed + 100);
                let k = spectral_kernel(&taps).unwrap();
                let y = freq_conv_axis(&x, &k, axis, Activation::Identity).unwrap();
                let want = circular_oracle(&x, taps.data(), axis);
                assert!(rel_err(y.data(), &want) <= 1e-5, "{shape:?} {axis:?}");
            }
        }
    }

    #[test]
    fn mismatched_kernel_is_rejected() {
        let x = rand_tensor(&[2, 8, 8], 7);
        assert!(freq_conv_axis(&x, &delta_kernel(2, 6), Axis::Width, Activation::Identity).is_err());
        assert!(freq_conv_axis(&x, &delta_kernel(3, 8), Axis::Width, Activation::Identity).is_err());
    }

    #[test]
    fn block_defaults_and_convex_identity() {
        let p = FreqConvParams::delta(2, 6, 8);
        assert_eq!((p.alpha_h, p.alpha_w), (0.55, 0.45));
        let x = rand_tensor(&[2, 6, 8], 8);
        let p = FreqConvParams { alpha_w: 0.5, alpha_h: 0.5, activation: Activation::Identity, ..p };
        let y = freq_conv_block(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(rel_err(y.data(), x.data()) <= 1e-6);
    }

    #[test]
    fn zero_height_weight_ignores_height_kernel() {
        let x = rand_tensor(&[2, 6, 8], 9);
        let mut p = FreqConvParams::delta(2, 6, 8);
        p.alpha_h = 0.0;
        p.k_w = rand_tensor(&[4, 5], 10);
        let a = freq_conv_block(&x, &p).unwrap();
        p.k_h = rand_tensor(&[4, 4], 11);
        let b = freq_conv_block(&x, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn block_is_linear_with_identity_activation() {
        let mut p = FreqConvParams::delta(2, 6, 8);
        p.k_w = rand_tensor(&[4, 5], 12);
        p.k_h = rand_tensor(&[4, 4], 13);
        p.activation = Activation::Identity;
        let x = rand_tensor(&[2, 6, 8], 14);
        let y = rand_tensor(&[2, 6, 8], 15);
        let (a, b) = (1.7, -0.3);
        let lhs = freq_conv_block(&x.scale(a).add(&y.scale(b)).unwrap(), &p).unwrap();
        let rhs = freq_conv_block(&x, &p).unwrap().scale(a).add(&freq_conv_block(&y, &p).unwrap().scale(b)).unwrap();
        assert!(rel_err(lhs.data(), rhs.data()) <= 1e-6);
    }

    #[test]
    fn block_gradients_pass_gradcheck() {
        let x = rand_tensor(&[2, 6, 8], 16);
        let kw = rand_tensor(&[4, 5], 17);
        let kh = rand_tensor(&[4, 4], 18);
        let w = rand_tensor(&[2, 6, 8], 19);
        let params = |kw: &Tensor<f64>, kh: &Tensor<f64>| FreqConvParams {
            k_w: kw.clone(),
            k_h: kh.clone(),
            alpha_w: DEFAULT_ALPHA_W,
            alpha_h: DEFAULT_ALPHA_H,
            activation: Activation::Gelu,
        };
        let f_x = |t: &Tensor<f64>| freq_conv_block(t, &params(&kw, &kh))?.mul(&w).map(|v| v.sum());
        let f_kw = |t: &Tensor<f64>| freq_conv_block(&x, &params(t, &kh))?.mul(&w).map(|v| v.sum());
        let f_kh = |t: &Tensor<f64>| freq_conv_block(&x, &params(&kw, t))?.mul(&w).map(|v| v.sum());
        for (name, r) in
            [("x", gradcheck(f_x, &x, 1e-5)), ("k_w", gradcheck(f_kw, &kw, 1e-5)), ("k_h", gradcheck(f_kh, &kh, 1e-5))]
        {
            let r = r.unwrap();
            assert!(r.max_rel_error <= 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn bench_report_shape() {
        let rows =
            bench_conv(&[BenchSize { c: 1, h: 16, w: 16, k: 3 }, BenchSize { c: 2, h: 8, w: 12, k: 5 }]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.t_direct_ms >= 0.0 && r.t_fft_ms >= 0.0));
        assert!(rows[0].o_terms.starts_with("down="));
        assert!(bench_conv(&[]).is_err());
        assert!("1x64x64x9".parse::<BenchSize>().is_ok());
        assert!("1x64x64".parse::<BenchSize>().is_err());
        assert!("1x4x4x9".parse::<BenchSize>().is_err());
    }
}
