//! Sparse-view masks: whole projection angles (sinogram rows) removed at random.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radon::Sinogram;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub n_angles: usize,
    pub ratio: f64,
    /// Sorted, distinct masked angle indices.
    pub masked: Vec<usize>,
    pub seed: u64,
}

impl MaskSpec {
    /// Mask built from explicit indices (deduplicated and sorted).
    pub fn from_indices(n_angles: usize, indices: &[usize]) -> Result<Self> {
        let mut masked = indices.to_vec();
        masked.sort_unstable();
        masked.dedup();
        if masked.last().is_some_and(|&i| i >= n_angles) {
            return Err(Error::contract("mask", format!("index out of 0..{n_angles}")));
        }
        Ok(MaskSpec { n_angles, ratio: masked.len() as f64 / n_angles.max(1) as f64, masked, seed: 0 })
    }

    pub fn is_masked(&self, row: usize) -> bool {
        self.masked.binary_search(&row).is_ok()
    }

    /// Per-row flags.
    pub fn row_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.n_angles];
        for &i in &self.masked {
            f[i] = true;
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::contract("mask", format!("ratio {} outside [0, 1]", self.ratio)));
        }
        if self.masked.windows(2).any(|w| w[0] >= w[1]) || self.masked.last().is_some_and(|&i| i >= self.n_angles) {
            return Err(Error::contract("mask", "indices must be sorted, distinct and in range"));
        }
        Ok(())
    }
}

/// Number of masked rows for a ratio: `round(ratio · A)`, halves away from zero.
pub fn masked_count(n_angles: usize, ratio: f64) -> usize {
    ((ratio * n_angles as f64).round() as usize).min(n_angles)
}

/// Uniform sample without replacement of `round(ratio·A)` angle indices.
pub fn sample_mask(n_angles: usize, ratio: f64, seed: u64) -> Result<MaskSpec> {
    if n_angles == 0 {
        return Err(Error::contract("sample_mask", "need at least one angle"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::contract("sample_mask", format!("ratio {ratio} outside [0, 1]")));
    }
    let count = masked_count(n_angles, ratio);
    let mut r = rng::seeded(seed);
    let mut masked = rand::seq::index::sample(&mut r, n_angles, count).into_vec();
    masked.sort_unstable();
    Ok(MaskSpec { n_angles, ratio, masked, seed })
}

/// Zeroes masked rows. Returns the masked sinogram and the `A × D` indicator
/// (1 on masked rows).
pub fn apply_mask(sino: &Sinogram, mask: &MaskSpec) -> Result<(Sinogram, Sinogram)> {
    if mask.n_angles != sino.n_angles() {
        return Err(Error::contract(
            "apply_mask",
            format!("mask has {} angles, sinogram {}", mask.n_angles, sino.n_angles()),
        ));
    }
    let d = sino.n_det();
    let mut out = sino.clone();
    let mut ind = Sinogram::zeros(sino.n_angles(), d);
    for &a in &mask.masked {
        out.row_mut(a).fill(0.0);
        ind.row_mut(a).fill(1.0);
    }
    Ok((out, ind))
}
