//! The inpainting network and its training loop.
//!
//! ```text
//! x = [prefill, indicator]                              2 × A × D
//! e1 = G(conv3x3/2(x))                                   C × A/2 × D/2
//! h  = G(conv3x3/2(e1))                                  C × A/4 × D/4
//! z  = h + G(conv3x3(h)) + block(h)                      latent placement
//! d1 = G(convT3x3/2(z)) + e1
//! y  = prefill + convT3x3/2(d1)                          A × D
//! ```
//!
//! With `downsample_first` the input is average-pooled 2×, lifted by a
//! stride-1 convolution and passed through the block before the second
//! encoder layer; the latent then only gets the standard convolution. With
//! `none` the block is absent. `prefill` is a fixed classical completion of
//! the masked rows (linear interpolation by default), so the network learns a
//! correction on top of it. With `Prefill::Zero` the prefill is the masked
//! sinogram itself.
//!
//! Sinograms are divided by a per-model scale (the training set maximum) on the
//! way in and multiplied back on the way out.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::baselines::linear_interp_inpaint;
use crate::error::{Error, Result};
use crate::io;
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::masking::{apply_mask, sample_mask, MaskSpec};
use crate::radon::Sinogram;
use crate::rng;
use crate::spectral::{
    delta_kernel, freq_conv_block_axes, Activation, FreqConvParams, DEFAULT_ALPHA_H, DEFAULT_ALPHA_W,
};
use crate::tensor::{backward, Axis, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Latent,
    DownsampleFirst,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prefill {
    Zero,
    #[default]
    Linear,
}

/// Standard deviation of the noise added to the unit spectral kernels at init.
pub const FREQ_INIT_NOISE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// `[A, D]`; both divisible by 4.
    pub input_size: [usize; 2],
    pub channels: usize,
    pub placement: Placement,
    pub activation: Activation,
    pub freq_axes: Vec<Axis>,
    pub prefill: Prefill,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: [64, 64],
            channels: 8,
            placement: Placement::Latent,
            activation: Activation::Gelu,
            freq_axes: vec![Axis::Width, Axis::Height],
            prefill: Prefill::Linear,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, d] = self.input_size;
        if a < 8 || d < 8 || a % 4 != 0 || d % 4 != 0 {
            return Err(Error::Config(format!("input_size {a}x{d}: both sides must be multiples of 4, at least 8")));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.freq_axes.len() > 2 || (self.freq_axes.len() == 2 && self.freq_axes[0] == self.freq_axes[1]) {
            return Err(Error::Config(format!("freq_axes {:?} must be distinct", self.freq_axes)));
        }
        Ok(())
    }

    fn uses_axis(&self, axis: Axis) -> bool {
        self.freq_axes.contains(&axis)
    }

    /// `(h, w)` of the map the frequency block runs on.
    pub fn freq_dims(&self) -> Option<(usize, usize)> {
        let [a, d] = self.input_size;
        match self.placement {
            Placement::Latent => Some((a / 4, d / 4)),
            Placement::DownsampleFirst => Some((a / 2, d / 2)),
            Placement::None => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetParams {
    pub config: NetConfig,
    /// Divides input sinograms; set by training.
    pub scale: f64,
    pub enc1_w: Tensor,
    pub enc1_b: Tensor,
    pub enc2_w: Tensor,
    pub enc2_b: Tensor,
    pub lat_w: Tensor,
    pub lat_b: Tensor,
    pub freq: Option<FreqConvParams>,
    pub dec1_w: Tensor,
    pub dec1_b: Tensor,
    pub dec2_w: Tensor,
    pub dec2_b: Tensor,
}

impl NetParams {
    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("enc1_w", &self.enc1_w),
            ("enc1_b", &self.enc1_b),
            ("enc2_w", &self.enc2_w),
            ("enc2_b", &self.enc2_b),
            ("lat_w", &self.lat_w),
            ("lat_b", &self.lat_b),
        ];
        if let Some(f) = &self.freq {
            v.push(("k_w", &f.k_w));
            v.push(("k_h", &f.k_h));
        }
        v.extend([
            ("dec1_w", &self.dec1_w),
            ("dec1_b", &self.dec1_b),
            ("dec2_w", &self.dec2_w),
            ("dec2_b", &self.dec2_b),
        ]);
        v
    }

    /// Same structure with new tensors, given in [`tensors`](Self::tensors) order.
    pub fn with_tensors(&self, ts: Vec<Tensor>) -> Result<NetParams> {
        let expected = self.tensors();
        if ts.len() != expected.len() || ts.iter().zip(&expected).any(|(t, (_, e))| t.shape() != e.shape()) {
            return Err(Error::contract("with_tensors", "tensor list does not match the parameter layout"));
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("length checked");
        let mut p = self.clone();
        p.enc1_w = next();
        p.enc1_b = next();
        p.enc2_w = next();
        p.enc2_b = next();
        p.lat_w = next();
        p.lat_b = next();
        if let Some(f) = &mut p.freq {
            f.k_w = next();
            f.k_h = next();
        }
        p.dec1_w = next();
        p.dec1_b = next();
        p.dec2_w = next();
        p.dec2_b = next();
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Uniform in `±sqrt(3 / fan_in)` (unit variance for unit-variance inputs).
fn scaled_uniform(r: &mut rng::Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let b = (3.0 / fan_in as f64).sqrt();
    let u = Uniform::new_inclusive(-b, b).expect("finite bound");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| u.sample(r)).collect()).expect("shape").param()
}

fn noisy_delta(r: &mut rng::Rng, channels: usize, len: usize) -> Tensor {
    let noise = Normal::new(0.0, FREQ_INIT_NOISE).expect("valid sigma");
    let d: Vec<f64> = delta_kernel(channels, len).data().iter().map(|v| v + noise.sample(r)).collect();
    Tensor::from_vec(&[2 * channels, len / 2 + 1], d).expect("shape").param()
}

/// Deterministic initialization from `cfg.seed`. Biases and the output layer
/// start at zero.
pub fn init_params(cfg: &NetConfig) -> Result<NetParams> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut r = rng::seeded(cfg.seed);
    let zeros = |n: usize| Tensor::zeros(&[n]).param();
    let enc1_w = scaled_uniform(&mut r, &[c, 2, 3, 3], 2 * 9);
    let enc2_w = scaled_uniform(&mut r, &[c, c, 3, 3], c * 9);
    let lat_w = scaled_uniform(&mut r, &[c, c, 3, 3], c * 9);
    let dec1_w = scaled_uniform(&mut r, &[c, c, 3, 3], c * 9);
    // Zero output layer: an untrained network returns the prefill unchanged.
    let dec2_w = Tensor::zeros(&[c, 1, 3, 3]).param();
    let freq = cfg.freq_dims().map(|(h, w)| FreqConvParams {
        k_w: noisy_delta(&mut r, c, w),
        k_h: noisy_delta(&mut r, c, h),
        alpha_w: DEFAULT_ALPHA_W,
        alpha_h: DEFAULT_ALPHA_H,
        activation: cfg.activation,
    });
    Ok(NetParams {
        config: cfg.clone(),
        scale: 1.0,
        enc1_w,
        enc1_b: zeros(c),
        enc2_w,
        enc2_b: zeros(c),
        lat_w,
        lat_b: zeros(c),
        freq,
        dec1_w,
        dec1_b: zeros(c),
        dec2_w,
        dec2_b: zeros(1),
    })
}

fn block(p: &NetParams, h: &Tensor) -> Result<Tensor> {
    let f = p.freq.as_ref().expect("placement with a frequency block");
    let cfg = &p.config;
    freq_conv_block_axes(h, f, cfg.uses_axis(Axis::Width), cfg.uses_axis(Axis::Height))
}

fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let c = x.shape()[0];
    let mut w = vec![0.0; c * c * 4];
    for i in 0..c {
        w[(i * c + i) * 4..(i * c + i + 1) * 4].fill(0.25);
    }
    x.conv2d(&Tensor::from_vec(&[c, c, 2, 2], w)?, None, 2, 0)
}

/// The differentiable pass on normalized `[A, D]` tensors. `prefill` enters as
/// a constant.
pub fn forward_tensor(p: &NetParams, masked: &Tensor, indicator: &Tensor, prefill: &Tensor) -> Result<Tensor> {
    let cfg = &p.config;
    let [a, d] = cfg.input_size;
    for t in [masked, indicator, prefill] {
        if t.shape() != [a, d] {
            return Err(Error::shape("forward", &[t.shape(), &[a, d]]));
        }
    }
    let act = |t: Tensor| cfg.activation.apply(t);
    let x = Tensor::concat_channels(&[&prefill.reshape(&[1, a, d])?, &indicator.reshape(&[1, a, d])?])?;
    let e1 = match cfg.placement {
        Placement::Latent | Placement::None => act(x.conv2d(&p.enc1_w, Some(&p.enc1_b), 2, 1)?),
        Placement::DownsampleFirst => {
            let l = act(avg_pool2(&x)?.conv2d(&p.enc1_w, Some(&p.enc1_b), 1, 1)?);
            l.add(&block(p, &l)?)?
        }
    };
    let h = act(e1.conv2d(&p.enc2_w, Some(&p.enc2_b), 2, 1)?);
    let mut z = h.add(&act(h.conv2d(&p.lat_w, Some(&p.lat_b), 1, 1)?))?;
    if cfg.placement == Placement::Latent {
        z = z.add(&block(p, &h)?)?;
    }
    let d1 = act(z.conv2d_transpose(&p.dec1_w, Some(&p.dec1_b), 2, 1, 1)?).add(&e1)?;
    let y = d1.conv2d_transpose(&p.dec2_w, Some(&p.dec2_b), 2, 1, 1)?;
    y.reshape(&[a, d])?.add(prefill)
}

/// Rows whose indicator is set.
pub fn mask_from_indicator(indicator: &Sinogram) -> MaskSpec {
    let rows: Vec<usize> = (0..indicator.n_angles()).filter(|&r| indicator.row(r).iter().all(|&v| v != 0.0)).collect();
    MaskSpec::from_indices(indicator.n_angles(), &rows).expect("indices in range")
}

/// The fixed completion the network corrects. With every row masked there is
/// nothing to interpolate and the prefill is zero.
pub fn prefill(masked: &Sinogram, mask: &MaskSpec, kind: Prefill) -> Result<Sinogram> {
    let mut out = masked.clone();
    for &r in &mask.masked {
        out.row_mut(r).fill(0.0);
    }
    if kind == Prefill::Zero || mask.masked.len() == masked.n_angles() {
        return Ok(out);
    }
    linear_interp_inpaint(&out, mask)
}

/// Network output on a raw (unnormalized) sinogram.
pub fn forward(p: &NetParams, masked: &Sinogram, indicator: &Sinogram) -> Result<Sinogram> {
    let mask = mask_from_indicator(indicator);
    let xn = masked.scaled(1.0 / p.scale);
    let pre = prefill(&xn, &mask, p.config.prefill)?;
    let y = forward_tensor(p, &xn.to_tensor(), &indicator.to_tensor(), &pre.to_tensor())?;
    Ok(Sinogram::from_tensor(&y)?.scaled(p.scale))
}

/// Network output on masked rows, input kept on every other row.
pub fn inpaint(p: &NetParams, masked: &Sinogram, indicator: &Sinogram) -> Result<Sinogram> {
    let mask = mask_from_indicator(indicator);
    let mut out = forward(p, masked, indicator)?;
    for r in 0..masked.n_angles() {
        if !mask.is_masked(r) {
            out.row_mut(r).copy_from_slice(masked.row(r));
        }
    }
    Ok(out)
}

/// Samples a mask and inpaints `truth` with it.
pub fn inpaint_with_mask(p: &NetParams, truth: &Sinogram, mask: &MaskSpec) -> Result<Sinogram> {
    let (masked, ind) = apply_mask(truth, mask)?;
    inpaint(p, &masked, &ind)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub mask_ratio_range: [f64; 2],
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            mask_ratio_range: [0.1, 0.9],
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.mask_ratio_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("mask_ratio_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam moments must lie in [0, 1) and adam_eps must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, sizes: &[usize]) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Updated copies of `params` as fresh trainable leaves.
    pub fn step(&mut self, params: &[&Tensor], grads: &[Vec<f64>]) -> Vec<Tensor> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        params
            .iter()
            .zip(grads)
            .enumerate()
            .map(|(i, (p, g))| {
                let (m, v) = (&mut self.m[i], &mut self.v[i]);
                let data = p
                    .data()
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(j, (x, g))| {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                        x - self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps)
                    })
                    .collect();
                Tensor::from_vec(p.shape(), data).expect("same shape").param()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pixel: f64,
    pub absorp: f64,
    pub freq: f64,
}

/// Loss and parameter gradients for one masked sample (normalized units).
pub fn sample_step(
    p: &NetParams,
    truth: &Sinogram,
    mask: &MaskSpec,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let (masked, ind) = apply_mask(truth, mask)?;
    let pre = prefill(&masked, mask, p.config.prefill)?;
    let pred = forward_tensor(p, &masked.to_tensor(), &ind.to_tensor(), &pre.to_tensor())?;
    let (loss, bd) = total_loss(&pred, &truth.to_tensor(), w)?;
    let g = backward(&loss)?;
    let grads: Vec<Vec<f64>> = p.tensors().iter().map(|(_, t)| g.get(t).to_vec()).collect();
    debug_assert!(grads.iter().flatten().all(|v| v.is_finite()), "non-finite parameter gradient");
    Ok((bd, grads))
}

/// Trains from scratch on clean sinograms. Each epoch visits the samples in a
/// fresh random order; each visit draws a mask ratio uniformly from
/// `mask_ratio_range` and a random mask. Gradients are averaged over
/// `batch_size` visits per Adam step. Single-threaded and deterministic.
pub fn train(samples: &[Sinogram], net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<(NetParams, Vec<EpochRecord>)> {
    if samples.is_empty() {
        return Err(Error::contract("train", "empty dataset"));
    }
    cfg.validate()?;
    let mut params = init_params(net_cfg)?;
    let [a, d] = net_cfg.input_size;
    if let Some(s) = samples.iter().find(|s| (s.n_angles(), s.n_det()) != (a, d)) {
        return Err(Error::shape("train", &[&[s.n_angles(), s.n_det()], &[a, d]]));
    }
    let peak = samples.iter().map(Sinogram::max).fold(0.0, f64::max);
    params.scale = if peak > 0.0 { peak } else { 1.0 };
    let truths: Vec<Sinogram> = samples.iter().map(|s| s.scaled(1.0 / params.scale)).collect();

    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut r = rng::derive(cfg.seed, 1);
    let [lo, hi] = cfg.mask_ratio_range;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let mut sums = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for &i in batch {
                let ratio = if hi > lo { r.random_range(lo..=hi) } else { lo };
                let mask = sample_mask(a, ratio, r.random())?;
                let (bd, grads) = sample_step(&params, &truths[i], &mask, &cfg.loss)?;
                if !bd.total.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, sample {i}")));
                }
                sums.total += bd.total;
                sums.pixel += bd.pixel;
                sums.absorp += bd.absorp;
                sums.freq += bd.freq;
                for (a, g) in acc.iter_mut().zip(grads) {
                    a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|v| *v *= inv);
            let current: Vec<&Tensor> = params.tensors().into_iter().map(|(_, t)| t).collect();
            let updated = adam.step(&current, &acc);
            params = params.with_tensors(updated)?;
        }
        let n = samples.len() as f64;
        history.push(EpochRecord {
            epoch,
            loss: sums.total / n,
            pixel: sums.pixel / n,
            absorp: sums.absorp / n,
            freq: sums.freq / n,
        });
    }
    Ok((params, history))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for rec in history {
        w.serialize(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

pub const MODEL_MANIFEST: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub config: NetConfig,
    pub scale: f64,
    pub alpha_w: Option<f64>,
    pub alpha_h: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

/// Writes every tensor as `<name>.sint` plus `model.json`.
pub fn save(p: &NetParams, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, t) in p.tensors() {
        let file = format!("{name}.sint");
        io::write_tensor_f64(&dir.join(&file), t.shape(), t.data())?;
        entries.push(TensorEntry { name: name.into(), file, shape: t.shape().to_vec() });
    }
    let manifest = ModelManifest {
        config: p.config.clone(),
        scale: p.scale,
        alpha_w: p.freq.as_ref().map(|f| f.alpha_w),
        alpha_h: p.freq.as_ref().map(|f| f.alpha_h),
        tensors: entries,
    };
    io::write_json(&dir.join(MODEL_MANIFEST), &manifest)
}

pub fn load(dir: &Path) -> Result<NetParams> {
    let path = dir.join(MODEL_MANIFEST);
    let m: ModelManifest = io::read_json(&path)?;
    let mut p = init_params(&m.config)?;
    p.scale = m.scale;
    if let Some(f) = &mut p.freq {
        f.alpha_w = m.alpha_w.unwrap_or(DEFAULT_ALPHA_W);
        f.alpha_h = m.alpha_h.unwrap_or(DEFAULT_ALPHA_H);
    }
    let names: Vec<&str> = p.tensors().iter().map(|(n, _)| *n).collect();
    if names.len() != m.tensors.len() || names.iter().zip(&m.tensors).any(|(n, e)| *n != e.name) {
        return Err(Error::Format { path, msg: "tensor list does not match the configured network".into() });
    }
    let mut ts = Vec::with_capacity(names.len());
    for e in &m.tensors {
        let (shape, data) = io::read_tensor_f64(&dir.join(&e.file))?;
        ts.push(Tensor::from_vec(&shape, data)?.param());
    }
    p.with_tensors(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{dataset_image, DatasetKind};
    use crate::radon::project;
    use crate::spectral::freq_conv_block;
    use crate::tensor::gradcheck;

    fn small_cfg(placement: Placement) -> NetConfig {
        NetConfig { input_size: [16, 16], channels: 3, placement, seed: 5, ..NetConfig::default() }
    }

    fn sinos(n: usize, size: usize, a: usize) -> Vec<Sinogram> {
        (0..n).map(|i| project(&dataset_image(DatasetKind::Shepp, size, 3, i).unwrap(), a).unwrap()).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&NetConfig::default()).unwrap();
        let b = init_params(&NetConfig::default()).unwrap();
        for ((n, x), (_, y)) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.data(), y.data(), "{n}");
        }
        let none = init_params(&NetConfig { placement: Placement::None, ..NetConfig::default() }).unwrap();
        assert!(none.freq.is_none());
        assert!(none.tensors().iter().all(|(n, _)| !n.starts_with("k_")));
        assert!(init_params(&NetConfig { input_size: [30, 64], ..NetConfig::default() }).is_err());
    }

    #[test]
    fn freq_block_starts_near_identity() {
        let p = init_params(&NetConfig::default()).unwrap();
        let mut f = p.freq.clone().unwrap();
        f.activation = Activation::Identity;
        let ones = Tensor::full(&[8, 16, 16], 1.0);
        let y = freq_conv_block(&ones, &f).unwrap();
        let dev = y.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev <= 0.05, "max deviation {dev}");
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let s = &sinos(1, 16, 16)[0];
        let mask = sample_mask(16, 0.5, 1).unwrap();
        let (m, ind) = apply_mask(s, &mask).unwrap();
        for pl in [Placement::Latent, Placement::DownsampleFirst, Placement::None] {
            let p = init_params(&small_cfg(pl)).unwrap();
            let y = forward(&p, &m, &ind).unwrap();
            assert_eq!((y.n_angles(), y.n_det()), (16, 16));
            assert_eq!(y, forward(&p, &m, &ind).unwrap());
        }
        let p = init_params(&small_cfg(Placement::Latent)).unwrap();
        assert!(forward(&p, &Sinogram::zeros(8, 16), &Sinogram::zeros(8, 16)).is_err());
    }

    #[test]
    fn inpaint_keeps_known_rows() {
        let s = &sinos(1, 16, 16)[0];
        let p = init_params(&small_cfg(Placement::Latent)).unwrap();
        let empty = sample_mask(16, 0.0, 0).unwrap();
        assert_eq!(&inpaint_with_mask(&p, s, &empty).unwrap(), s);
        let full = sample_mask(16, 1.0, 0).unwrap();
        let (m, ind) = apply_mask(s, &full).unwrap();
        assert_eq!(inpaint(&p, &m, &ind).unwrap(), forward(&p, &m, &ind).unwrap());
        let half = sample_mask(16, 0.5, 2).unwrap();
        let out = inpaint_with_mask(&p, s, &half).unwrap();
        for r in (0..16).filter(|&r| !half.is_masked(r)) {
            assert_eq!(out.row(r), s.row(r));
        }
    }

    #[test]
    fn disabled_kernels_have_no_influence() {
        let s = &sinos(1, 16, 16)[0];
        let mask = sample_mask(16, 0.5, 1).unwrap();
        let (m, ind) = apply_mask(s, &mask).unwrap();
        let cfg = NetConfig { freq_axes: vec![Axis::Width], ..small_cfg(Placement::Latent) };
        let mut p = init_params(&cfg).unwrap();
        // The output layer starts at zero, which would hide every kernel.
        p.dec2_w = Tensor::full(p.dec2_w.shape(), 0.1);
        let mut q = p.clone();
        q.freq.as_mut().unwrap().k_h = Tensor::full(q.freq.as_ref().unwrap().k_h.shape(), 3.0);
        assert_eq!(forward(&p, &m, &ind).unwrap(), forward(&q, &m, &ind).unwrap());
        let mut q = p.clone();
        q.freq.as_mut().unwrap().k_w = Tensor::full(q.freq.as_ref().unwrap().k_w.shape(), 3.0);
        assert_ne!(forward(&p, &m, &ind).unwrap(), forward(&q, &m, &ind).unwrap());
    }

    #[test]
    fn loss_gradcheck_through_network() {
        let s = sinos(1, 16, 16)[0].scaled(0.1);
        let mask = sample_mask(16, 0.4, 3).unwrap();
        let (m, ind) = apply_mask(&s, &mask).unwrap();
        let pre = prefill(&m, &mask, Prefill::Linear).unwrap().to_tensor();
        for pl in [Placement::Latent, Placement::DownsampleFirst] {
            let p = init_params(&small_cfg(pl)).unwrap();
            for name in ["enc1_w", "k_h", "dec2_w"] {
                let idx = p.tensors().iter().position(|(n, _)| *n == name).unwrap();
                let x = p.tensors()[idx].1.detach();
                let f = |t: &Tensor| -> Result<Tensor> {
                    let mut ts: Vec<Tensor> = p.tensors().iter().map(|(_, t)| t.detach()).collect();
                    ts[idx] = t.clone();
                    let q = p.with_tensors(ts)?;
                    let y = forward_tensor(&q, &m.to_tensor(), &ind.to_tensor(), &pre)?;
                    Ok(total_loss(&y, &s.to_tensor(), &LossWeights::default())?.0)
                };
                let r = gradcheck(f, &x, 1e-5).unwrap();
                assert!(r.max_rel_error <= 1e-3, "{pl:?} {name}: {r:?}");
            }
        }
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let data = sinos(8, 16, 16);
        let net = small_cfg(Placement::Latent);
        let cfg = TrainConfig { epochs: 6, batch_size: 4, learning_rate: 3e-3, ..TrainConfig::default() };
        let (p1, h1) = train(&data, &net, &cfg).unwrap();
        let (p2, h2) = train(&data, &net, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1.dec2_w.data(), p2.dec2_w.data());
        assert_eq!(h1.len(), 6);
        assert!(h1[5].loss < h1[0].loss, "{h1:?}");

        let none = NetConfig { placement: Placement::None, ..net };
        let (_, h) = train(&data, &none, &cfg).unwrap();
        assert_eq!(h.len(), 6);
        assert!(train(&[], &small_cfg(Placement::Latent), &cfg).is_err());
        let bad = TrainConfig { mask_ratio_range: [0.8, 0.2], ..cfg };
        assert!(train(&data, &small_cfg(Placement::Latent), &bad).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = sinos(2, 16, 16);
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
        let (p, h) = train(&data, &small_cfg(Placement::DownsampleFirst), &cfg).unwrap();
        save(&p, dir.path()).unwrap();
        let q = load(dir.path()).unwrap();
        assert_eq!(q.scale, p.scale);
        assert_eq!(q.config, p.config);
        for ((_, a), (_, b)) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        let hp = dir.path().join(HISTORY_FILE);
        write_history(&hp, &h).unwrap();
        let text = std::fs::read_to_string(&hp).unwrap();
        assert!(text.starts_with("epoch,loss,pixel,absorp,freq\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
