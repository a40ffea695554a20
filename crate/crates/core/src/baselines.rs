//! Classical sinogram inpainting: per-bin linear interpolation across angles
//! and total-variation minimization.

use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::radon::Sinogram;

/// Smoothing inside the TV square root, keeps the gradient defined on flat regions.
pub const TV_EPS: f64 = 1e-2;

fn check(op: &'static str, s: &Sinogram, mask: &MaskSpec) -> Result<Vec<bool>> {
    if mask.n_angles != s.n_angles() {
        return Err(Error::contract(op, format!("mask has {} angles, sinogram {}", mask.n_angles, s.n_angles())));
    }
    mask.validate()?;
    if mask.masked.len() == s.n_angles() {
        return Err(Error::contract(op, "every angle is masked, nothing to interpolate from"));
    }
    Ok(mask.row_flags())
}

/// Fills each masked row bin-wise between the nearest known rows above and
/// below; gaps at either end copy the nearest known row.
pub fn linear_interp_inpaint(masked: &Sinogram, mask: &MaskSpec) -> Result<Sinogram> {
    let flags = check("linear_interp_inpaint", masked, mask)?;
    let a = masked.n_angles();
    let mut out = masked.clone();
    for r in 0..a {
        if !flags[r] {
            continue;
        }
        let below = (0..r).rev().find(|&i| !flags[i]);
        let above = (r + 1..a).find(|&i| !flags[i]);
        let row: Vec<f64> = match (below, above) {
            (Some(lo), Some(hi)) => {
                let t = (r - lo) as f64 / (hi - lo) as f64;
                masked.row(lo).iter().zip(masked.row(hi)).map(|(x, y)| x + t * (y - x)).collect()
            }
            (Some(k), None) | (None, Some(k)) => masked.row(k).to_vec(),
            (None, None) => unreachable!("at least one known row"),
        };
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Smoothed isotropic TV, forward differences with replicated borders.
pub fn tv_objective(s: &Sinogram) -> f64 {
    let (a, d) = (s.n_angles(), s.n_det());
    let v = s.values();
    let mut acc = 0.0;
    for r in 0..a {
        for c in 0..d {
            let x = v[r * d + c];
            let dy = if r + 1 < a { v[(r + 1) * d + c] - x } else { 0.0 };
            let dx = if c + 1 < d { v[r * d + c + 1] - x } else { 0.0 };
            acc += (dx * dx + dy * dy + TV_EPS * TV_EPS).sqrt();
        }
    }
    acc
}

fn tv_gradient(s: &Sinogram) -> Vec<f64> {
    let (a, d) = (s.n_angles(), s.n_det());
    let v = s.values();
    let mut g = vec![0.0; a * d];
    for r in 0..a {
        for c in 0..d {
            let i = r * d + c;
            let dy = if r + 1 < a { v[i + d] - v[i] } else { 0.0 };
            let dx = if c + 1 < d { v[i + 1] - v[i] } else { 0.0 };
            let n = (dx * dx + dy * dy + TV_EPS * TV_EPS).sqrt();
            let (px, py) = (dx / n, dy / n);
            g[i] -= px + py;
            if c + 1 < d {
                g[i + 1] += px;
            }
            if r + 1 < a {
                g[i + d] += py;
            }
        }
    }
    g
}

/// Projected gradient descent on [`tv_objective`] over the masked rows,
/// starting from the linear fill. Returns the iterate with the lowest objective.
pub fn tv_inpaint(masked: &Sinogram, mask: &MaskSpec, iterations: usize, step: f64) -> Result<Sinogram> {
    let flags = check("tv_inpaint", masked, mask)?;
    if iterations == 0 {
        return Err(Error::contract("tv_inpaint", "iterations must be at least 1"));
    }
    let d = masked.n_det();
    let mut x = linear_interp_inpaint(masked, mask)?;
    let mut best = x.clone();
    let mut best_obj = tv_objective(&x);
    if mask.masked.is_empty() {
        return Ok(best);
    }
    for it in 0..iterations {
        let g = tv_gradient(&x);
        for &r in &mask.masked {
            let row = x.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                *v -= step * g[r * d + c];
            }
        }
        // Known rows are never written above; this keeps them bit-identical.
        debug_assert!((0..masked.n_angles()).filter(|&r| !flags[r]).all(|r| x.row(r) == masked.row(r)));
        let obj = tv_objective(&x);
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!("tv_inpaint objective at iteration {it}")));
        }
        if obj < best_obj {
            best_obj = obj;
            best = x.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{apply_mask, sample_mask};
    use crate::rng;
    use rand::Rng as _;

    fn rand_sino(a: usize, d: usize, seed: u64) -> Sinogram {
        let mut r = rng::seeded(seed);
        Sinogram::new(a, d, (0..a * d).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn masked_mae(x: &Sinogram, truth: &Sinogram, mask: &MaskSpec) -> f64 {
        let n = (mask.masked.len() * truth.n_det()) as f64;
        mask.masked.iter().flat_map(|&r| x.row(r).iter().zip(truth.row(r)).map(|(a, b)| (a - b).abs())).sum::<f64>() / n
    }

    #[test]
    fn linear_cases() {
        let mut s = rand_sino(5, 6, 1);
        let r0 = s.row(1).to_vec();
        s.row_mut(3).copy_from_slice(&r0);
        let m = MaskSpec::from_indices(5, &[2]).unwrap();
        s.row_mut(1).copy_from_slice(&r0);
        let (masked, _) = apply_mask(&s, &m).unwrap();
        let out = linear_interp_inpaint(&masked, &m).unwrap();
        assert_eq!(out.row(2), r0.as_slice());

        let empty = MaskSpec::from_indices(5, &[]).unwrap();
        assert_eq!(linear_interp_inpaint(&s, &empty).unwrap(), s);
        let all = MaskSpec::from_indices(5, &[0, 1, 2, 3, 4]).unwrap();
        assert!(linear_interp_inpaint(&s, &all).is_err());

        let edge = MaskSpec::from_indices(5, &[0, 4]).unwrap();
        let out = linear_interp_inpaint(&s, &edge).unwrap();
        assert_eq!(out.row(0), s.row(1));
        assert_eq!(out.row(4), s.row(3));
    }

    #[test]
    fn linear_recovers_affine_rows() {
        let (a, d) = (40, 9);
        let s = Sinogram::new(a, d, (0..a * d).map(|i| 0.3 + 0.01 * (i / d) as f64 - 0.02 * (i % d) as f64).collect())
            .unwrap();
        for seed in 0..20 {
            let mut m = sample_mask(a, 0.5, seed).unwrap();
            m.masked.retain(|&r| r != 0 && r != a - 1);
            let (masked, _) = apply_mask(&s, &m).unwrap();
            let out = linear_interp_inpaint(&masked, &m).unwrap();
            for (x, y) in out.values().iter().zip(s.values()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn tv_cases() {
        let s = rand_sino(12, 10, 2);
        let empty = MaskSpec::from_indices(12, &[]).unwrap();
        assert_eq!(tv_inpaint(&s, &empty, 5, 0.1).unwrap(), s);
        let m = sample_mask(12, 0.4, 3).unwrap();
        let (masked, _) = apply_mask(&s, &m).unwrap();
        let out = tv_inpaint(&masked, &m, 50, 0.1).unwrap();
        for r in 0..12 {
            if !m.is_masked(r) {
                assert_eq!(out.row(r), s.row(r));
            }
        }
        let start = linear_interp_inpaint(&masked, &m).unwrap();
        assert!(tv_objective(&out) <= tv_objective(&start));
        assert!(tv_inpaint(&masked, &m, 0, 0.1).is_err());
    }

    #[test]
    fn tv_completes_two_bands() {
        let (a, d) = (60, 40);
        let band = |r: usize, c: usize| if (c as f64) < 14.0 + 0.2 * r as f64 { 0.2 } else { 0.8 };
        let s = Sinogram::new(a, d, (0..a * d).map(|i| band(i / d, i % d)).collect()).unwrap();
        let mut m = sample_mask(a, 0.1, 7).unwrap();
        m.masked.retain(|&r| r != 0 && r != a - 1);
        let (masked, _) = apply_mask(&s, &m).unwrap();
        let out = tv_inpaint(&masked, &m, 200, 0.1).unwrap();
        let mae = masked_mae(&out, &s, &m);
        assert!(mae <= 0.01, "masked MAE {mae}");
    }
}
