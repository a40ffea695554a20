//! Held-out evaluation, ablation arms and mask-ratio sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{linear_interp_inpaint, tv_inpaint};
use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest};
use crate::masking::{apply_mask, sample_mask, MaskSpec};
use crate::metrics::{eval_masked, MaskedScores};
use crate::model::{self, EpochRecord, NetConfig, NetParams, Placement, TrainConfig};
use crate::par;
use crate::radon::Sinogram;
use crate::tensor::Axis;

/// Mask ratios of the ablation tables.
pub const EVAL_RATIOS: [f64; 3] = [0.4, 0.6, 0.8];
pub const TV_ITERATIONS: usize = 200;
pub const TV_STEP: f64 = 0.1;

/// Network and training settings in one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()
    }
}

/// Sinograms listed in a dataset manifest, in manifest order.
pub fn load_sinograms(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Sinogram>)> {
    let m: DatasetManifest = io::read_json(manifest_path)?;
    let base = DatasetManifest::base_dir(manifest_path);
    if m.sinograms.len() != m.count {
        return Err(Error::Format {
            path: manifest_path.to_path_buf(),
            msg: format!("{} sinograms listed for {} samples (generate with angles)", m.sinograms.len(), m.count),
        });
    }
    let mut out = Vec::with_capacity(m.count);
    for name in &m.sinograms {
        let path = base.join(name);
        let (shape, data) = io::read_tensor_f64(&path)?;
        let [a, d] = shape[..] else {
            return Err(Error::Format { path, msg: format!("expected a 2-D sinogram, got shape {shape:?}") });
        };
        out.push(Sinogram::new(a, d, data)?);
    }
    Ok((m, out))
}

/// Splits off the last `holdout` samples for evaluation.
pub fn split_holdout(samples: &[Sinogram], holdout: usize) -> Result<(&[Sinogram], &[Sinogram])> {
    if holdout == 0 || holdout >= samples.len() {
        return Err(Error::contract(
            "split_holdout",
            format!("holdout {holdout} must leave both splits nonempty ({} samples)", samples.len()),
        ));
    }
    Ok(samples.split_at(samples.len() - holdout))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The evaluation mask for sample `index` at `ratio`. Every method sees the
/// same masks.
pub fn eval_mask(n_angles: usize, ratio: f64, index: usize) -> Result<MaskSpec> {
    sample_mask(n_angles, ratio, mix(ratio.to_bits() ^ mix(index as u64)))
}

#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Model(&'a NetParams),
    Linear,
    Tv { iterations: usize, step: f64 },
}

impl Method<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Model(_) => "fcdm",
            Method::Linear => "linear",
            Method::Tv { .. } => "tv",
        }
    }

    pub fn inpaint(&self, truth: &Sinogram, mask: &MaskSpec) -> Result<Sinogram> {
        match *self {
            Method::Model(p) => model::inpaint_with_mask(p, truth, mask),
            Method::Linear => linear_interp_inpaint(&apply_mask(truth, mask)?.0, mask),
            Method::Tv { iterations, step } => tv_inpaint(&apply_mask(truth, mask)?.0, mask, iterations, step),
        }
    }
}

/// Masked-row scores for each sample at one ratio (parallel over samples,
/// results in sample order).
pub fn evaluate(method: Method, samples: &[Sinogram], ratio: f64) -> Result<Vec<MaskedScores>> {
    par::map_range(samples.len(), usize::MAX / samples.len().max(1), |i| {
        let truth = &samples[i];
        let mask = eval_mask(truth.n_angles(), ratio, i)?;
        eval_masked(&method.inpaint(truth, &mask)?, truth, &mask)
    })
    .into_iter()
    .collect()
}

pub fn mean_scores(scores: &[MaskedScores]) -> MaskedScores {
    let n = scores.len().max(1) as f64;
    MaskedScores {
        ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Full,
    NoFreq,
    NoH,
    NoW,
    NoAbsorpLoss,
    NoFreqLoss,
    PlacementDownsample,
    PlacementLatent,
}

impl Arm {
    pub const ALL: [Arm; 8] = [
        Arm::Full,
        Arm::NoFreq,
        Arm::NoH,
        Arm::NoW,
        Arm::NoAbsorpLoss,
        Arm::NoFreqLoss,
        Arm::PlacementDownsample,
        Arm::PlacementLatent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoFreq => "no_freq",
            Arm::NoH => "no_h",
            Arm::NoW => "no_w",
            Arm::NoAbsorpLoss => "no_absorp_loss",
            Arm::NoFreqLoss => "no_freq_loss",
            Arm::PlacementDownsample => "placement_downsample",
            Arm::PlacementLatent => "placement_latent",
        }
    }

    /// The arm's variant of a base configuration. `full` and
    /// `placement_latent` both mean the latent block with every loss term.
    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.net.placement = Placement::Latent;
        c.net.freq_axes = vec![Axis::Width, Axis::Height];
        match self {
            Arm::Full | Arm::PlacementLatent => {}
            Arm::NoFreq => c.net.placement = Placement::None,
            Arm::NoH => c.net.freq_axes = vec![Axis::Width],
            Arm::NoW => c.net.freq_axes = vec![Axis::Height],
            Arm::NoAbsorpLoss => c.train.loss.w_absorp = 0.0,
            Arm::NoFreqLoss => c.train.loss.w_freq = 0.0,
            Arm::PlacementDownsample => c.net.placement = Placement::DownsampleFirst,
        }
        c
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Arm::ALL.iter().map(|a| a.name()).collect();
            format!("unknown arm {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub ratio: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// One trained arm: parameters, history and held-out rows for [`EVAL_RATIOS`].
#[derive(Clone, Debug)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub params: NetParams,
    pub history: Vec<EpochRecord>,
    pub rows: Vec<AblationRow>,
}

/// Trains `arm` with network and training seeds set to `seed`, then scores the
/// test split.
pub fn run_arm(arm: Arm, seed: u64, base: &RunConfig, train_set: &[Sinogram], test_set: &[Sinogram]) -> Result<ArmRun> {
    let mut cfg = arm.configure(base);
    cfg.net.seed = seed;
    cfg.train.seed = seed;
    let (params, history) = model::train(train_set, &cfg.net, &cfg.train)?;
    let mut rows = Vec::new();
    for ratio in EVAL_RATIOS {
        let m = mean_scores(&evaluate(Method::Model(&params), test_set, ratio)?);
        rows.push(AblationRow { arm: arm.name().into(), seed, ratio, ssim: m.ssim, psnr: m.psnr });
    }
    Ok(ArmRun { arm, seed, params, history, rows })
}

/// Every `(arm, seed)` pair, trained as independent jobs. Output order is
/// arms-major, then seeds, then ratios.
pub fn ablate(
    arms: &[Arm],
    seeds: &[u64],
    base: &RunConfig,
    train_set: &[Sinogram],
    test_set: &[Sinogram],
) -> Result<Vec<ArmRun>> {
    base.validate()?;
    let jobs: Vec<(Arm, u64)> = arms.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    par::map_jobs(jobs, |(a, s)| run_arm(a, s, base, train_set, test_set)).into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `sample` or `summary`.
    pub kind: String,
    pub ratio: f64,
    /// Sample index, empty on summary rows.
    pub sample: Option<usize>,
    pub ssim: f64,
    pub psnr: f64,
}

/// Per-sample rows followed by a mean row, for each ratio in order.
pub fn sweep(method: Method, samples: &[Sinogram], ratios: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &ratio in ratios {
        let scores = evaluate(method, samples, ratio)?;
        for (i, s) in scores.iter().enumerate() {
            rows.push(SweepRow { kind: "sample".into(), ratio, sample: Some(i), ssim: s.ssim, psnr: s.psnr });
        }
        let m = mean_scores(&scores);
        rows.push(SweepRow { kind: "summary".into(), ratio, sample: None, ssim: m.ssim, psnr: m.psnr });
    }
    Ok(rows)
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| model::csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| model::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{dataset_image, DatasetKind};
    use crate::radon::project;

    fn sinos(n: usize) -> Vec<Sinogram> {
        (0..n).map(|i| project(&dataset_image(DatasetKind::Shepp, 16, 8, i).unwrap(), 16).unwrap()).collect()
    }

    fn tiny() -> RunConfig {
        RunConfig {
            net: NetConfig { input_size: [16, 16], channels: 2, ..NetConfig::default() },
            train: TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() },
        }
    }

    #[test]
    fn arm_names_round_trip() {
        for a in Arm::ALL {
            assert_eq!(a.name().parse::<Arm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert!("bogus".parse::<Arm>().is_err());
        let c = Arm::NoFreq.configure(&RunConfig::default());
        assert_eq!(c.net.placement, Placement::None);
        assert_eq!(Arm::NoFreqLoss.configure(&RunConfig::default()).train.loss.w_freq, 0.0);
    }

    #[test]
    fn ablation_row_count_and_no_freq_params() {
        let data = sinos(6);
        let (tr, te) = split_holdout(&data, 2).unwrap();
        let runs = ablate(&[Arm::Full, Arm::NoFreq], &[1, 2, 3], &tiny(), tr, te).unwrap();
        let rows: Vec<_> = runs.iter().flat_map(|r| r.rows.clone()).collect();
        assert_eq!(rows.len(), 18);
        assert!(runs.iter().filter(|r| r.arm == Arm::NoFreq).all(|r| r.params.freq.is_none()));
        assert!(rows.iter().all(|r| r.ssim.is_finite()));
    }

    #[test]
    fn sweep_rows_and_shared_masks() {
        let data = sinos(3);
        let ratios: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let rows = sweep(Method::Linear, &data, &ratios).unwrap();
        let summaries: Vec<_> = rows.iter().filter(|r| r.kind == "summary").collect();
        assert_eq!(summaries.len(), 9);
        assert!(summaries.iter().all(|r| r.ssim.is_finite() && r.sample.is_none()));
        assert_eq!(rows.len(), 9 * 4);
        assert_eq!(eval_mask(16, 0.4, 2).unwrap(), eval_mask(16, 0.4, 2).unwrap());
        assert!(split_holdout(&data, 3).is_err());
    }
}
