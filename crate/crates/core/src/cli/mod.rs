//! The `sinofill` command line.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.
//!
//! CSV headers:
//! * `eval`: `method,ratio,seed,ssim,psnr`
//! * `ablate`: `arm,seed,ratio,ssim,psnr`
//! * `sweep`: `kind,ratio,sample,ssim,psnr`
//! * `bench`: `C,H,W,k,t_direct_ms,t_fft_ms,o_terms`
//! * history (written by `train`): `epoch,loss,pixel,absorp,freq`

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{self, Arm, Method, RunConfig, TV_ITERATIONS, TV_STEP};
use crate::io;
use crate::masking::{sample_mask, MaskSpec};
use crate::metrics::eval_masked;
use crate::model::{self, NetParams};
use crate::phantom::{gen_dataset, DatasetKind, Image};
use crate::radon::{self, Sinogram};
use crate::spectral::{bench_conv, BenchSize};

#[derive(Debug, Parser)]
#[command(name = "sinofill", version, about = "Sinogram inpainting toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fcdm,
    Linear,
    Tv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantoms and their sinograms.
    Gen {
        #[arg(long, value_enum)]
        kind: DatasetKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Projection angles; defaults to the image size.
        #[arg(long)]
        angles: Option<usize>,
    },
    /// Parallel-beam projection of one image file.
    Project {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        angles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network; writes the model directory and history.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Leave the last N samples out of training.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
    },
    /// Mask a sinogram and fill the masked angles.
    Inpaint {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, value_parser = parse_ratio)]
        mask_ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fcdm")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TV_ITERATIONS)]
        tv_iterations: usize,
        #[arg(long, default_value_t = TV_STEP)]
        tv_step: f64,
    },
    /// Score masked rows and append one CSV row.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label for the method column.
        #[arg(long, default_value = "unknown")]
        method: String,
    },
    /// Train and score ablation arms over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        arms: Vec<Arm>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        holdout: usize,
    },
    /// Masked metrics across mask ratios.
    Sweep {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_ratio, required = true)]
        ratios: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "fcdm")]
        method: MethodArg,
        /// Score only the last N samples (all when absent).
        #[arg(long)]
        holdout: Option<usize>,
    },
    /// Time direct against FFT circular convolution.
    Bench {
        /// Comma-separated `CxHxWxK` entries.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<BenchSize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a 2-D tensor file as an 8-bit PGM.
    ExportPgm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let r: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if (0.0..=1.0).contains(&r) {
        Ok(r)
    } else {
        Err(format!("ratio {r} outside [0, 1]"))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { kind, count, size, seed, out, angles } => {
            let m = gen_dataset(kind, count, size, seed, Some(angles.unwrap_or(size)), &out)?;
            println!("wrote {} samples to {}", m.count, out.display());
            Ok(())
        }
        Command::Project { image, angles, out } => {
            let img = read_image(&image)?;
            let s = radon::project(&img, angles)?;
            write_sino(&out, &s)
        }
        Command::Train { data, config, out, holdout } => cmd_train(&data, config.as_deref(), &out, holdout),
        Command::Inpaint { model, sino, mask_ratio, seed, method, out, tv_iterations, tv_step } => {
            let truth = read_sino(&sino)?;
            let params = load_model(method, model.as_deref())?;
            let method = to_method(method, params.as_ref(), tv_iterations, tv_step);
            let mask = sample_mask(truth.n_angles(), mask_ratio, seed)?;
            let filled = method.inpaint(&truth, &mask)?;
            write_sino(&out, &filled)?;
            io::write_json(&sidecar(&out, ".mask.json"), &mask)
        }
        Command::Eval { pred, truth, mask, out, method } => {
            let (p, t) = (read_sino(&pred)?, read_sino(&truth)?);
            let m: MaskSpec = io::read_json(&mask)?;
            m.validate().map_err(|e| Error::Config(format!("{}: {e}", mask.display())))?;
            let s = eval_masked(&p, &t, &m)?;
            append_csv(&out, &EvalRow { method, ratio: m.ratio, seed: m.seed, ssim: s.ssim, psnr: s.psnr })
        }
        Command::Ablate { data, arms, seeds, out, config, holdout } => {
            let (_, samples) = experiment::load_sinograms(&data)?;
            let cfg = load_config(config.as_deref(), &samples)?;
            let (train_set, test_set) = experiment::split_holdout(&samples, holdout)?;
            let runs = experiment::ablate(&arms, &seeds, &cfg, train_set, test_set)?;
            let rows: Vec<_> = runs.into_iter().flat_map(|r| r.rows).collect();
            experiment::write_csv(&out, &rows)
        }
        Command::Sweep { model, data, ratios, out, method, holdout } => {
            let (_, samples) = experiment::load_sinograms(&data)?;
            let samples = match holdout {
                Some(n) => experiment::split_holdout(&samples, n)?.1,
                None => &samples[..],
            };
            let params = load_model(method, model.as_deref())?;
            let method = to_method(method, params.as_ref(), TV_ITERATIONS, TV_STEP);
            experiment::write_csv(&out, &experiment::sweep(method, samples, &ratios)?)
        }
        Command::Bench { sizes, out } => experiment::write_csv(&out, &bench_conv(&sizes)?),
        Command::ExportPgm { input, out } => {
            let (shape, data) = io::read_tensor_f64(&input)?;
            let [rows, cols] = shape[..] else {
                return Err(Error::Format { path: input, msg: format!("expected a 2-D tensor, got shape {shape:?}") });
            };
            io::write_pgm(&out, rows, cols, &data).map(|_| ())
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalRow {
    method: String,
    ratio: f64,
    seed: u64,
    ssim: f64,
    psnr: f64,
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path, holdout: usize) -> Result<()> {
    let (_, samples) = experiment::load_sinograms(data)?;
    let cfg = load_config(config, &samples)?;
    let train_set = if holdout == 0 { &samples[..] } else { experiment::split_holdout(&samples, holdout)?.0 };
    let (params, history) = model::train(train_set, &cfg.net, &cfg.train)?;
    model::save(&params, out)?;
    model::write_history(&out.join(model::HISTORY_FILE), &history)?;
    if let Some(last) = history.last() {
        println!("trained {} epochs, final loss {:.6e}", history.len(), last.loss);
    }
    Ok(())
}

/// The run config from `path` (defaults otherwise), sized to the data.
fn load_config(path: Option<&Path>, samples: &[Sinogram]) -> Result<RunConfig> {
    let first = samples.first().ok_or_else(|| Error::contract("config", "dataset is empty"))?;
    let dims = [first.n_angles(), first.n_det()];
    let cfg = match path {
        Some(p) => {
            let c: RunConfig = io::read_json(p)?;
            if c.net.input_size != dims {
                return Err(Error::Config(format!(
                    "{}: net.input_size {:?} does not match the data ({dims:?})",
                    p.display(),
                    c.net.input_size
                )));
            }
            c
        }
        None => {
            let mut c = RunConfig::default();
            c.net.input_size = dims;
            c
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(method: MethodArg, dir: Option<&Path>) -> Result<Option<NetParams>> {
    match (method, dir) {
        (MethodArg::Fcdm, Some(d)) => model::load(d).map(Some),
        (MethodArg::Fcdm, None) => Err(Error::Config("--method fcdm needs --model".into())),
        _ => Ok(None),
    }
}

fn to_method(m: MethodArg, params: Option<&NetParams>, iterations: usize, step: f64) -> Method<'_> {
    match (m, params) {
        (MethodArg::Fcdm, Some(p)) => Method::Model(p),
        (MethodArg::Tv, _) => Method::Tv { iterations, step },
        _ => Method::Linear,
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn read_sino(path: &Path) -> Result<Sinogram> {
    let (shape, data) = io::read_tensor_f64(path)?;
    let [a, d] = shape[..] else {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected a 2-D sinogram, got shape {shape:?}"),
        });
    };
    Sinogram::new(a, d, data)
}

pub fn write_sino(path: &Path, s: &Sinogram) -> Result<()> {
    io::write_tensor_f64(path, &[s.n_angles(), s.n_det()], s.values())
}

fn read_image(path: &Path) -> Result<Image> {
    let (shape, data) = io::read_tensor_f64(path)?;
    match shape[..] {
        [r, c] if r == c => Image::new(r, data),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected a square image, got shape {shape:?}"),
        }),
    }
}

/// Appends one row, writing the header first when the file is new or empty.
fn append_csv<R: Serialize>(path: &Path, row: &R) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|e| model::csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
