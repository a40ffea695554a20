//! Parallel-beam forward projection and filtered backprojection.
//!
//! Angles are `θ_i = i·π/A`, detector bin `j` sits at offset
//! `s_j = j - (D-1)/2` with `D = N`, and the ray at `(θ, s)` is the set of
//! points with `x·cosθ + y·sinθ = s`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::phantom::Image;
use crate::tensor::{kernels, LinearOperator, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_det: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_angles: usize, n_det: usize, values: Vec<f64>) -> Result<Self> {
        if n_angles == 0 || n_det == 0 || values.len() != n_angles * n_det {
            return Err(Error::contract("sinogram", format!("{} values do not form {n_angles}x{n_det}", values.len())));
        }
        Ok(Sinogram { n_angles, n_det, values })
    }

    pub fn zeros(n_angles: usize, n_det: usize) -> Self {
        Sinogram { n_angles, n_det, values: vec![0.0; n_angles * n_det] }
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.values[a * self.n_det..(a + 1) * self.n_det]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.values[a * self.n_det..(a + 1) * self.n_det]
    }

    pub fn scaled(&self, f: f64) -> Sinogram {
        Sinogram { values: self.values.iter().map(|v| v * f).collect(), ..self.clone() }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `[A, D]` tensor view (no gradient tracking).
    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::from_vec(&[self.n_angles, self.n_det], self.values.clone()).expect("consistent shape")
    }

    /// Accepts `[A, D]` or `[1, A, D]`.
    pub fn from_tensor(t: &Tensor<f64>) -> Result<Self> {
        match *t.shape() {
            [a, d] | [1, a, d] => Sinogram::new(a, d, t.to_vec()),
            _ => Err(Error::shape("sinogram", &[t.shape()])),
        }
    }

    pub fn angle(&self, i: usize) -> f64 {
        angle(i, self.n_angles)
    }
}

pub fn angle(i: usize, n_angles: usize) -> f64 {
    i as f64 * PI / n_angles as f64
}

fn bilinear(img: &[f64], n: usize, row: f64, col: f64) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
            0.0
        } else {
            img[r as usize * n + c as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Line integrals with unit-step sampling along each ray and bilinear
/// interpolation; rays that miss the inscribed circle are zero.
pub fn project(image: &Image, n_angles: usize) -> Result<Sinogram> {
    if n_angles < 2 {
        return Err(Error::contract("project", format!("need at least 2 angles, got {n_angles}")));
    }
    let n = image.size();
    let c0 = (n as f64 - 1.0) / 2.0;
    let radius = n as f64 / 2.0;
    let px = image.pixels();
    let mut values = vec![0.0; n_angles * n];
    par::for_each_chunk(&mut values, n, n * n * 4, |a, row| {
        let (sin, cos) = angle(a, n_angles).sin_cos();
        for (j, out) in row.iter_mut().enumerate() {
            let s = j as f64 - c0;
            if s.abs() > radius {
                continue;
            }
            let mut acc = 0.0;
            for m in 0..n {
                let t = m as f64 - c0;
                let x = s * cos - t * sin;
                let y = s * sin + t * cos;
                acc += bilinear(px, n, c0 - y, x + c0);
            }
            *out = acc;
        }
    });
    Sinogram::new(n_angles, n, values)
}

/// `Σ_s P_θ(s)` for every angle.
pub fn angle_sums(sino: &Sinogram) -> Vec<f64> {
    (0..sino.n_angles()).map(|a| sino.row(a).iter().sum()).collect()
}

/// Pixel sum (unit area) over the inscribed circle.
pub fn total_absorption(image: &Image) -> f64 {
    let n = image.size();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            if Image::in_fov(n, r, c) {
                acc += image.get(r, c);
            }
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    /// Ram-Lak.
    #[default]
    Ramp,
    /// Ram-Lak apodized by a Hann window.
    Hann,
}

/// Filtered backprojection as a fixed linear map `[A, D] -> [N, N]`.
pub struct FbpOperator {
    n_angles: usize,
    n_det: usize,
    pad_len: usize,
    response: Vec<f64>,
    trig: Vec<(f64, f64)>,
    /// Per image row, the column range inside the field of view.
    fov_span: Vec<(usize, usize)>,
    taps: Option<TapTable>,
}

impl FbpOperator {
    pub fn new(n_angles: usize, n_det: usize, filter: Filter) -> Self {
        let pad_len = (2 * n_det).next_power_of_two().max(64);
        let trig = (0..n_angles).map(|a| angle(a, n_angles).sin_cos()).map(|(s, c)| (c, s)).collect();
        let fov_span = (0..n_det)
            .map(|r| {
                let inside: Vec<usize> = (0..n_det).filter(|&c| Image::in_fov(n_det, r, c)).collect();
                match (inside.first(), inside.last()) {
                    (Some(&lo), Some(&hi)) => (lo, hi + 1),
                    _ => (0, 0),
                }
            })
            .collect();
        let mut op = FbpOperator {
            n_angles,
            n_det,
            pad_len,
            response: filter_response(pad_len, filter),
            trig,
            fov_span,
            taps: None,
        };
        op.taps = TapTable::build(&op);
        op
    }

    /// Frequency response of the filter on `pad_len` bins.
    pub fn response(&self) -> &[f64] {
        &self.response
    }

    fn filter_rows(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.n_det;
        let p = self.pad_len;
        let fwd = kernels::plan_f64(p, false);
        let inv = kernels::plan_f64(p, true);
        let mut out = vec![0.0; rows.len()];
        par::for_each_chunk(&mut out, d, p * 16, |a, dst| {
            let mut buf = vec![Complex::new(0.0, 0.0); p];
            for (b, v) in buf.iter_mut().zip(&rows[a * d..(a + 1) * d]) {
                b.re = *v;
            }
            fwd.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&self.response) {
                *b *= *h;
            }
            inv.process(&mut buf);
            for (o, b) in dst.iter_mut().zip(&buf) {
                *o = b.re / p as f64;
            }
        });
        out
    }

    fn scale(&self) -> f64 {
        PI / (2.0 * self.n_angles as f64)
    }

    /// Detector coordinate of pixel `(r, 0)` at angle `a`, and its step per column.
    #[inline]
    fn row_coord(&self, r: usize, a: usize) -> (f64, f64) {
        let c0 = (self.n_det as f64 - 1.0) / 2.0;
        let (cos, sin) = self.trig[a];
        (-c0 * cos + (c0 - r as f64) * sin + c0, cos)
    }

    /// Padded bin index and interpolation weight of pixel `(r, c)` at angle `a`.
    /// Inside the field of view the detector coordinate lies in (-1, n), so
    /// both taps `j, j + 1` index a row padded by one zero bin on each side.
    #[inline]
    fn tap(&self, u_start: f64, du: f64, c: usize) -> (usize, f64) {
        let v = u_start + c as f64 * du + 1.0;
        let j = (v as usize).min(self.n_det);
        (j, v - j as f64)
    }

    /// Visits the taps of image row `r` at angle `a` in column order.
    #[inline]
    fn for_taps(&self, r: usize, a: usize, mut f: impl FnMut(usize, usize, f64)) {
        let (lo, hi) = self.fov_span[r];
        match &self.taps {
            Some(t) => {
                let start = t.offsets[r * self.n_angles + a];
                for (c, (&j, &w)) in (lo..hi).zip(t.index[start..].iter().zip(&t.frac[start..])) {
                    f(c, j as usize, w);
                }
            }
            None => {
                let (u_start, du) = self.row_coord(r, a);
                for c in lo..hi {
                    let (j, w) = self.tap(u_start, du, c);
                    f(c, j, w);
                }
            }
        }
    }

    fn backproject(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n_det;
        let scale = self.scale();
        let mut qp = vec![0.0; self.n_angles * (n + 2)];
        for (dst, src) in qp.chunks_exact_mut(n + 2).zip(q.chunks_exact(n)) {
            dst[1..=n].copy_from_slice(src);
        }
        let mut img = vec![0.0; n * n];
        par::for_each_chunk(&mut img, n, n * self.n_angles, |r, row| {
            for a in 0..self.n_angles {
                let qa = &qp[a * (n + 2)..(a + 1) * (n + 2)];
                self.for_taps(r, a, |c, j, f| row[c] += (1.0 - f) * qa[j] + f * qa[j + 1]);
            }
            row.iter_mut().for_each(|v| *v *= scale);
        });
        img
    }

    /// Exact transpose of [`Self::backproject`].
    fn backproject_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n_det;
        let scale = self.scale();
        let mut q = vec![0.0; self.n_angles * n];
        par::for_each_chunk(&mut q, n, n * n, |a, qa| {
            let mut buf = vec![0.0; n + 2];
            for r in 0..n {
                let grow = &g[r * n..(r + 1) * n];
                self.for_taps(r, a, |c, j, f| {
                    let gv = grow[c] * scale;
                    buf[j] += (1.0 - f) * gv;
                    buf[j + 1] += f * gv;
                });
            }
            qa.copy_from_slice(&buf[1..=n]);
        });
        q
    }
}

/// Precomputed interpolation taps, laid out by image row, then angle, then
/// column within the row's field-of-view span.
struct TapTable {
    offsets: Vec<usize>,
    index: Vec<u32>,
    frac: Vec<f64>,
}

/// Geometries with more taps than this interpolate on the fly.
const MAX_TABLE_TAPS: usize = 1 << 23;

impl TapTable {
    fn build(op: &FbpOperator) -> Option<TapTable> {
        let total: usize = op.fov_span.iter().map(|(lo, hi)| hi - lo).sum::<usize>() * op.n_angles;
        if total > MAX_TABLE_TAPS {
            return None;
        }
        let mut t = TapTable {
            offsets: Vec::with_capacity(op.n_det * op.n_angles),
            index: Vec::with_capacity(total),
            frac: Vec::with_capacity(total),
        };
        for r in 0..op.n_det {
            let (lo, hi) = op.fov_span[r];
            for a in 0..op.n_angles {
                t.offsets.push(t.index.len());
                let (u_start, du) = op.row_coord(r, a);
                for c in lo..hi {
                    let (j, w) = op.tap(u_start, du, c);
                    t.index.push(j as u32);
                    t.frac.push(w);
                }
            }
        }
        Some(t)
    }
}

impl LinearOperator<f64> for FbpOperator {
    fn name(&self) -> &str {
        "fbp"
    }

    fn in_shape(&self) -> Vec<usize> {
        vec![self.n_angles, self.n_det]
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n_det, self.n_det]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.backproject(&self.filter_rows(x))
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        // The row filter is a crop of a circulant with a real, even
        // response, hence symmetric.
        self.filter_rows(&self.backproject_adjoint(y))
    }
}

/// Ram-Lak response built from the sampled spatial kernel
/// (`h[0] = 1/4`, `h[odd n] = -1/(πn)²`), which keeps the DC term exact.
fn filter_response(p: usize, filter: Filter) -> Vec<f64> {
    let mut h = vec![Complex::new(0.0, 0.0); p];
    h[0].re = 0.25;
    for (i, v) in h.iter_mut().enumerate().skip(1) {
        if i % 2 == 1 {
            let d = i.min(p - i) as f64;
            v.re = -1.0 / (PI * d).powi(2);
        }
    }
    kernels::plan_f64(p, false).process(&mut h);
    (0..p)
        .map(|k| {
            let ramp = 2.0 * h[k].re;
            match filter {
                Filter::Ramp => ramp,
                Filter::Hann => {
                    let omega = PI * k.min(p - k) as f64 / p as f64;
                    ramp * (1.0 + omega.cos()) / 2.0
                }
            }
        })
        .collect()
}

/// Filtered backprojection: zero-pad rows to the next power of two ≥ 2D,
/// filter, backproject with linear interpolation, scale by π/(2A), and zero
/// everything outside the inscribed circle.
pub fn fbp(sino: &Sinogram, filter: Filter) -> Image {
    let op = FbpOperator::new(sino.n_angles(), sino.n_det(), filter);
    Image::new(sino.n_det(), op.apply(sino.values())).expect("square output")
}

/// Differentiable FBP of an `[A, D]` tensor.
pub fn fbp_tensor(sino: &Tensor<f64>, filter: Filter) -> Result<Tensor<f64>> {
    let [a, d] = *sino.shape() else {
        return Err(Error::shape("fbp", &[sino.shape()]));
    };
    sino.linear_op(cached_operator(a, d, filter))
}

thread_local! {
    static OPERATORS: RefCell<HashMap<(usize, usize, Filter), Arc<FbpOperator>>> = RefCell::new(HashMap::new());
}

fn cached_operator(n_angles: usize, n_det: usize, filter: Filter) -> Arc<FbpOperator> {
    OPERATORS.with(|m| {
        m.borrow_mut()
            .entry((n_angles, n_det, filter))
            .or_insert_with(|| Arc::new(FbpOperator::new(n_angles, n_det, filter)))
            .clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{render_shapes, shepp_logan, Shape};
    use crate::tensor::gradcheck;

    fn disk(n: usize, r: f64) -> Image {
        let mut px = vec![0.0; n * n];
        for row in 0..n {
            for c in 0..n {
                let (x, y) = Image::coords(n, row, c);
                if x * x + y * y <= r * r {
                    px[row * n + c] = 1.0;
                }
            }
        }
        Image::new(n, px).unwrap()
    }

    #[test]
    fn central_chord_of_disk() {
        let img = render_shapes(64, &[Shape::Circle { cx: 0.0, cy: 0.0, radius: 16.0, intensity: 1.0 }]);
        let s = project(&img, 36).unwrap();
        for a in 0..36 {
            // Bins 31 and 32 straddle the center at s = ∓0.5.
            let v = 0.5 * (s.row(a)[31] + s.row(a)[32]);
            let chord = 2.0 * (256.0f64 - 0.25).sqrt();
            assert!((v - chord).abs() / chord < 0.01, "angle {a}: {v} vs {chord}");
        }
    }

    #[test]
    fn zero_and_linearity() {
        let z = project(&Image::zeros(32), 8).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(angle_sums(&z).iter().all(|&v| v == 0.0));
        let img = shepp_logan(32).unwrap();
        let p1 = project(&img, 10).unwrap();
        let p2 = project(&img.scaled(2.0), 10).unwrap();
        assert_eq!(p1.scaled(2.0), p2);
        let sums = angle_sums(&p1);
        let sums3 = angle_sums(&p1.scaled(3.0));
        for (a, b) in sums.iter().zip(&sums3) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs());
        }
        assert!(project(&img, 1).is_err());
    }

    #[test]
    fn zeroth_moment_is_angle_independent() {
        let img = shepp_logan(128).unwrap();
        let sums = angle_sums(&project(&img, 180).unwrap());
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let dev = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        assert!(dev / mean <= 0.01, "deviation {}", dev / mean);
        let total = total_absorption(&img);
        assert!((mean - total).abs() / total <= 0.01);
    }

    #[test]
    fn total_absorption_of_disk() {
        let d = disk(64, 16.0);
        let t = total_absorption(&d);
        assert!((t - PI * 256.0).abs() / (PI * 256.0) < 0.01);
        assert_eq!(total_absorption(&Image::zeros(16)), 0.0);
        assert_eq!(total_absorption(&d.scaled(2.0)), 2.0 * t);
    }

    #[test]
    fn fbp_reconstructs_disk() {
        let d = disk(64, 16.0);
        let rec = fbp(&project(&d, 180).unwrap(), Filter::Ramp);
        let mut err = 0.0;
        let mut count = 0;
        for r in 0..64 {
            for c in 0..64 {
                let (x, y) = Image::coords(64, r, c);
                if x * x + y * y <= 14.0 * 14.0 {
                    err += (rec.get(r, c) - 1.0).abs();
                    count += 1;
                }
            }
        }
        let mae = err / count as f64;
        assert!(mae <= 0.05, "mae {mae}");
        let hann = fbp(&project(&d, 180).unwrap(), Filter::Hann);
        assert!((hann.get(32, 32) - 1.0).abs() < 0.1);
    }

    #[test]
    fn fbp_zero_and_linear() {
        let z = fbp(&Sinogram::zeros(12, 16), Filter::Ramp);
        assert!(z.pixels().iter().all(|&v| v == 0.0));
        let s = project(&shepp_logan(32).unwrap(), 20).unwrap();
        assert_eq!(fbp(&s.scaled(2.0), Filter::Ramp), fbp(&s, Filter::Ramp).scaled(2.0));
    }

    #[test]
    fn fbp_adjoint_identity() {
        let op = FbpOperator::new(9, 16, Filter::Hann);
        let mut r = crate::rng::seeded(3);
        use rand::Rng as _;
        let x: Vec<f64> = (0..9 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..16 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
        let lhs: f64 = op.apply(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(op.adjoint(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn fbp_gradcheck() {
        let s = project(&shepp_logan(16).unwrap(), 12).unwrap().to_tensor();
        let w = Tensor::from_vec(&[16, 16], (0..256).map(|i| ((i * 7) % 13) as f64 / 13.0).collect()).unwrap();
        let r = gradcheck(|t| Ok(fbp_tensor(t, Filter::Ramp)?.mul(&w)?.sum()), &s, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-3, "{r:?}");
    }
}
