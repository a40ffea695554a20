//! Image quality metrics and masked-row evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::radon::Sinogram;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
/// PSNR reported for a zero-error pair.
pub const PSNR_SENTINEL: f64 = 99.0;

/// A borrowed row-major 2-D array.
#[derive(Clone, Copy, Debug)]
pub struct Grid<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> Grid<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::contract("grid", format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn of_sinogram(s: &'a Sinogram) -> Self {
        Grid { rows: s.n_angles(), cols: s.n_det(), data: s.values() }
    }
}

fn check_pair(op: &'static str, a: &Grid, b: &Grid, data_range: f64) -> Result<()> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::shape(op, &[&[a.rows, a.cols], &[b.rows, b.cols]]));
    }
    if !(data_range > 0.0) {
        return Err(Error::contract(op, format!("data_range must be positive, got {data_range}")));
    }
    Ok(())
}

fn gaussian_1d(win: usize) -> Vec<f64> {
    let c = (win / 2) as f64;
    (0..win).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
}

/// Windowed SSIM averaged over all valid window positions. The window shrinks
/// to the largest odd size that fits inputs thinner than 7.
pub fn ssim(a: &Grid, b: &Grid, data_range: f64) -> Result<f64> {
    check_pair("ssim", a, b, data_range)?;
    let m = a.rows.min(a.cols).min(SSIM_WINDOW);
    let win = if m % 2 == 1 { m } else { m - 1 };
    let g = gaussian_1d(win);
    let w: Vec<f64> = (0..win * win).map(|i| g[i / win] * g[i % win]).collect();
    let wsum: f64 = w.iter().sum();
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (nr, nc) = (a.rows - win + 1, a.cols - win + 1);
    let mut total = 0.0;
    for r0 in 0..nr {
        for c0 in 0..nc {
            let at = |x: &Grid, k: usize| x.data[(r0 + k / win) * x.cols + c0 + k % win];
            let (mut ma, mut mb) = (0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                ma += wk * at(a, k);
                mb += wk * at(b, k);
            }
            ma /= wsum;
            mb /= wsum;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let (da, db) = (at(a, k) - ma, at(b, k) - mb);
                va += wk * da * da;
                vb += wk * db * db;
                cov += wk * da * db;
            }
            va /= wsum;
            vb /= wsum;
            cov /= wsum;
            let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            total += lum * cs;
        }
    }
    Ok(total / (nr * nc) as f64)
}

/// `10·log10(L²/MSE)`; a zero MSE gives [`PSNR_SENTINEL`].
pub fn psnr(a: &Grid, b: &Grid, data_range: f64) -> Result<f64> {
    check_pair("psnr", a, b, data_range)?;
    let mse = a.data.iter().zip(b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedScores {
    pub ssim: f64,
    pub psnr: f64,
}

/// Masked rows of `pred` and `truth`, stacked in index order, after dividing
/// both by the maximum of `truth`.
pub fn masked_rows(pred: &Sinogram, truth: &Sinogram, mask: &MaskSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if (pred.n_angles(), pred.n_det()) != (truth.n_angles(), truth.n_det()) {
        return Err(Error::shape(
            "eval_masked",
            &[&[pred.n_angles(), pred.n_det()], &[truth.n_angles(), truth.n_det()]],
        ));
    }
    if mask.n_angles != truth.n_angles() {
        return Err(Error::contract("eval_masked", "mask does not match sinogram angles"));
    }
    if mask.masked.is_empty() {
        return Err(Error::contract("eval_masked", "empty mask, nothing to evaluate"));
    }
    let peak = truth.max();
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let take =
        |s: &Sinogram| -> Vec<f64> { mask.masked.iter().flat_map(|&r| s.row(r).iter().map(|v| v * scale)).collect() };
    Ok((take(pred), take(truth)))
}

/// SSIM and PSNR (data range 1) restricted to the masked rows.
pub fn eval_masked(pred: &Sinogram, truth: &Sinogram, mask: &MaskSpec) -> Result<MaskedScores> {
    let (p, t) = masked_rows(pred, truth, mask)?;
    let rows = mask.masked.len();
    let (gp, gt) = (Grid::new(rows, truth.n_det(), &p)?, Grid::new(rows, truth.n_det(), &t)?);
    Ok(MaskedScores { ssim: ssim(&gp, &gt, 1.0)?, psnr: psnr(&gp, &gt, 1.0)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| r.random_range(0.0..1.0)).collect()
    }

    /// Direct definition: full 2-D Gaussian weights, moments via E[xy] − E[x]E[y].
    fn oracle_ssim(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
        let half = 3i64;
        let mut acc = 0.0;
        let mut count = 0.0;
        for cy in half..rows as i64 - half {
            for cx in half..cols as i64 - half {
                let (mut s, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -half..=half {
                    for dx in -half..=half {
                        let w = (-((dx * dx + dy * dy) as f64) / 4.5).exp();
                        let i = ((cy + dy) * cols as i64 + cx + dx) as usize;
                        s += w;
                        sa += w * a[i];
                        sb += w * b[i];
                        saa += w * a[i] * a[i];
                        sbb += w * b[i] * b[i];
                        sab += w * a[i] * b[i];
                    }
                }
                let (ma, mb) = (sa / s, sb / s);
                let (va, vb, cv) = (saa / s - ma * ma, sbb / s - mb * mb, sab / s - ma * mb);
                let (c1, c2) = (1e-4, 9e-4);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn ssim_matches_oracle() {
        for seed in 0..4 {
            let a = rand_vec(64 * 64, seed);
            let b: Vec<f64> = a.iter().zip(rand_vec(64 * 64, seed + 100)).map(|(x, n)| 0.7 * x + 0.3 * n).collect();
            let got = ssim(&Grid::new(64, 64, &a).unwrap(), &Grid::new(64, 64, &b).unwrap(), 1.0).unwrap();
            let want = oracle_ssim(&a, &b, 64, 64);
            assert!((got - want).abs() <= 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn ssim_closed_forms() {
        let c1 = 0.01f64.powi(2);
        let z = vec![0.0; 49];
        let o = vec![1.0; 49];
        let (gz, go) = (Grid::new(7, 7, &z).unwrap(), Grid::new(7, 7, &o).unwrap());
        assert_eq!(ssim(&gz, &go, 1.0).unwrap(), c1 / (1.0 + c1));
        let z = vec![0.0; 400];
        let o = vec![1.0; 400];
        let big = ssim(&Grid::new(20, 20, &z).unwrap(), &Grid::new(20, 20, &o).unwrap(), 1.0).unwrap();
        assert!((big - 9.999e-5).abs() < 1e-8);
        let a = rand_vec(100, 3);
        let ga = Grid::new(10, 10, &a).unwrap();
        assert_eq!(ssim(&ga, &ga, 1.0).unwrap(), 1.0);
        let b = rand_vec(100, 4);
        let gb = Grid::new(10, 10, &b).unwrap();
        assert!((ssim(&ga, &gb, 1.0).unwrap() - ssim(&gb, &ga, 1.0).unwrap()).abs() <= 1e-12);
        assert!(ssim(&ga, &Grid::new(5, 20, &b).unwrap(), 1.0).is_err());
    }

    #[test]
    fn psnr_cases() {
        // Data range 10 with unit error: L²/MSE = 100 with no rounding.
        let a = vec![0.0; 16];
        let b = vec![1.0; 16];
        let (ga, gb) = (Grid::new(4, 4, &a).unwrap(), Grid::new(4, 4, &b).unwrap());
        assert_eq!(psnr(&ga, &gb, 10.0).unwrap(), 20.0);
        let b = vec![0.1; 16];
        assert!((psnr(&ga, &Grid::new(4, 4, &b).unwrap(), 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&ga, &ga, 1.0).unwrap(), PSNR_SENTINEL);
        let c = vec![0.5; 16];
        let gain = psnr(&ga, &Grid::new(4, 4, &c).unwrap(), 10.0).unwrap() - 20.0;
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let e = vec![0.01 * k as f64; 16];
            let p = psnr(&ga, &Grid::new(4, 4, &e).unwrap(), 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn masked_evaluation() {
        let truth = Sinogram::new(8, 10, rand_vec(80, 5)).unwrap();
        let mut pred = truth.clone();
        let mask = MaskSpec::from_indices(8, &[2, 5]).unwrap();
        pred.row_mut(0).fill(7.0);
        let s = eval_masked(&pred, &truth, &mask).unwrap();
        assert_eq!((s.ssim, s.psnr), (1.0, PSNR_SENTINEL));

        pred.row_mut(5)[3] += 0.2;
        let s = eval_masked(&pred, &truth, &mask).unwrap();
        let (p, t) = masked_rows(&pred, &truth, &mask).unwrap();
        let direct = psnr(&Grid::new(2, 10, &p).unwrap(), &Grid::new(2, 10, &t).unwrap(), 1.0).unwrap();
        assert_eq!(s.psnr, direct);

        let one = MaskSpec::from_indices(8, &[4]).unwrap();
        let s = eval_masked(&pred, &truth, &one).unwrap();
        assert!(s.ssim.is_finite());
        assert!(eval_masked(&pred, &truth, &MaskSpec::from_indices(8, &[]).unwrap()).is_err());
    }
}
