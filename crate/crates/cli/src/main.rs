//! Command-line front end: kernel generation, pair synthesis, Wiener
//! deconvolution, training, evaluation and gradient checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use infwide::data::{list_clean_images, load_image, read_pair, save_image, toy_scene, write_pair, BitDepth, SamplerConfig};
use infwide::eval::{evaluate, synthesize_set};
use infwide::network::{load_checkpoint, save_checkpoint, BranchMode, FusionMode};
use infwide::sim::{generate_kernel, BlurKernel, MAX_SIDE, MIN_SIDE};
use infwide::tensor::raw;
use infwide::train::{TrainConfig, Trainer};
use infwide::wiener::{estimate_nsr, wiener_deconvolve};
use infwide::{seed, Tensor};

#[derive(Parser, Debug)]
#[command(name = "infwide", version, about = "Low-light non-blind deblurring toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random camera-shake kernels as raw tensors and PNG previews.
    Kernels {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = MIN_SIDE)]
        min_side: usize,
        #[arg(long, default_value_t = MAX_SIDE)]
        max_side: usize,
    },
    /// Write procedural night scenes to use as clean images.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthesize degraded pairs from a directory of clean PNGs.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampler settings as JSON; missing fields take toy defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fix the camera gain K instead of sampling it.
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Image-space Wiener deconvolution of one image.
    Wiener {
        #[arg(long)]
        image: PathBuf,
        /// Kernel as a raw tensor (`.rt`) or a grayscale PNG.
        #[arg(long)]
        kernel: PathBuf,
        /// Output `.png` (16-bit) or `.rt`.
        #[arg(long)]
        out: PathBuf,
        /// Noise-to-signal ratio; estimated from the image when absent.
        #[arg(long)]
        nsr: Option<f64>,
    },
    /// Train the restoration network on clean images.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training settings as JSON (network, sampler, objective, lr, ...).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        branch: Option<BranchArg>,
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
        #[arg(long)]
        no_reblur_loss: bool,
        #[arg(long)]
        no_enhance_loss: bool,
        /// Continue from the checkpoint already in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on synthesized pairs.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BranchArg {
    Both,
    Image,
    Feature,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionArg {
    Xrfm,
    Add,
    Concat,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// PNG files in `dir`, or in `dir/clean` when that exists.
fn clean_images(dir: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let nested = dir.join("clean");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let paths = list_clean_images(&dir)?;
    if paths.is_empty() {
        bail!("no PNG images in {}", dir.display());
    }
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, load_image(&p)?))
        })
        .collect()
}

fn load_kernel(path: &Path) -> Result<BlurKernel> {
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = load_image(path)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if h != w {
            bail!("kernel image {} is not square", path.display());
        }
        let plane = img.data()[..h * w].to_vec();
        Ok(BlurKernel::new(h, plane)?)
    } else {
        Ok(BlurKernel::from_tensor(&raw::read::<f64>(path)?)?)
    }
}

fn kernels(count: usize, seed_value: u64, out: &Path, min: usize, max: usize) -> Result<()> {
    mkdir(out)?;
    for i in 0..count {
        let k = generate_kernel(seed::split(seed_value, i as u64), min, max)?;
        let t = k.to_tensor::<f64>();
        raw::write(out.join(format!("kernel_{i:04}.rt")), &t.cast::<f32>())?;
        let peak = t.data().iter().cloned().fold(0.0, f64::max);
        let preview = t.map(|v| v / peak).reshape(&[1, k.side(), k.side()])?;
        save_image(&preview, out.join(format!("kernel_{i:04}.png")), BitDepth::Eight)?;
    }
    eprintln!("wrote {count} kernels to {}", out.display());
    Ok(())
}

fn toy_data(out: &Path, count: usize, size: usize, seed_value: u64) -> Result<()> {
    mkdir(out)?;
    for i in 0..count {
        let img = toy_scene(seed::split(seed_value, i as u64), size, size);
        save_image(&img, out.join(format!("scene_{i:04}.png")), BitDepth::Sixteen)?;
    }
    eprintln!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn simulate(input: &Path, out: &Path, config: Option<&Path>, seed_value: u64, gain: Option<f64>) -> Result<()> {
    let mut sampler: SamplerConfig = match config {
        Some(p) => read_json(p)?,
        None => SamplerConfig::toy(),
    };
    if gain.is_some() {
        sampler.fixed_gain = gain;
    }
    let images = clean_images(input)?;
    let tensors: Vec<Tensor<f64>> = images.iter().map(|(_, t)| t.clone()).collect();
    let pairs = synthesize_set(&tensors, &sampler, seed_value)?;
    let root = out.join("pairs");
    for ((id, _), pair) in images.iter().zip(&pairs) {
        write_pair(root.join(id), id, pair)?;
    }
    write_json(&out.join("sampler.json"), &sampler)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), root.display());
    Ok(())
}

fn wiener(image: &Path, kernel: &Path, out: &Path, nsr: Option<f64>) -> Result<()> {
    let y = load_image(image)?;
    let k = load_kernel(kernel)?;
    let nsr = match nsr {
        Some(v) => v,
        None => estimate_nsr(&y)?.nsr,
    };
    let x = wiener_deconvolve(&y, &k, nsr)?;
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("rt")) {
        raw::write(out, &x.cast::<f32>())?;
    } else {
        save_image(&x, out, BitDepth::Sixteen)?;
    }
    eprintln!("nsr {nsr:.4e}; wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    steps: u64,
    seed_value: Option<u64>,
    branch: Option<BranchArg>,
    fusion: Option<FusionArg>,
    no_reblur: bool,
    no_enhance: bool,
    resume: bool,
) -> Result<()> {
    let ckpt = if resume { Some(load_checkpoint(out)?) } else { None };
    let mut cfg: TrainConfig = match (config, &ckpt) {
        (Some(p), _) => read_json(p)?,
        // resuming without a config continues the stored run settings
        (None, Some(c)) => serde_json::from_value(c.training.clone()).context("checkpoint training settings")?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = seed_value {
        cfg.seed = s;
    }
    if let Some(b) = branch {
        cfg.network.branch_mode = match b {
            BranchArg::Both => BranchMode::Both,
            BranchArg::Image => BranchMode::ImageOnly,
            BranchArg::Feature => BranchMode::FeatureOnly,
        };
    }
    if let Some(f) = fusion {
        cfg.network.fusion_mode = match f {
            FusionArg::Xrfm => FusionMode::Xrfm,
            FusionArg::Add => FusionMode::Add,
            FusionArg::Concat => FusionMode::Concat,
        };
    }
    cfg.objective.reblur &= !no_reblur;
    cfg.objective.enhance &= !no_enhance;

    let images: Vec<Tensor<f64>> = clean_images(data)?.into_iter().map(|(_, t)| t).collect();
    let mut trainer = match ckpt {
        Some(c) => Trainer::resume(cfg, images, c)?,
        None => Trainer::new(cfg, images)?,
    };
    mkdir(out)?;
    let monitor = trainer.monitor_batch()?;
    let initial = trainer.monitor_loss(&monitor)?;
    eprintln!("monitor loss before: {:.6}", initial.total);
    let mut log = String::new();
    let start = trainer.step_count();
    for _ in 0..steps {
        let entry = trainer.step()?;
        if entry.step % 10 == 0 || entry.step + 1 == start + steps {
            eprintln!(
                "step {:>5}  loss {:.6}  lr {:.2e}",
                entry.step, entry.loss.total, entry.lr
            );
        }
        log.push_str(&serde_json::to_string(&entry)?);
        log.push('\n');
    }
    let last = trainer.monitor_loss(&monitor)?;
    eprintln!("monitor loss after: {:.6}", last.total);
    save_checkpoint(out, &trainer.checkpoint()?)?;
    let log_path = out.join("train_log.jsonl");
    let mut previous = if resume { fs::read_to_string(&log_path).unwrap_or_default() } else { String::new() };
    previous.push_str(&log);
    fs::write(&log_path, previous).with_context(|| format!("writing {}", log_path.display()))?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "steps": trainer.step_count(),
            "initial_loss": initial,
            "final_loss": last,
        }),
    )?;
    Ok(())
}

/// Pair directories under `data/pairs`, or directly under `data`.
fn pair_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let nested = data.join("pairs");
    let root = if nested.is_dir() { nested } else { data.to_path_buf() };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no pair directories in {}", root.display());
    }
    Ok(dirs)
}

fn eval(data: &Path, ckpt: &Path, report: &Path) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let pairs = pair_dirs(data)?
        .into_iter()
        .map(|d| {
            let id = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, read_pair(&d)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = evaluate(&ckpt.network, &pairs)?;
    for g in &r.gain {
        eprintln!(
            "K={:<5} n={:<3} psnr {:.3} (wiener {:.3})  ssim {:.4} (wiener {:.4})",
            g.gain, g.count, g.psnr_mean, g.baseline_psnr_mean, g.ssim_mean, g.baseline_ssim_mean
        );
    }
    write_json(report, &r)
}

fn gradcheck(seed_value: u64) -> Result<()> {
    let checks = infwide::gradcheck::full_suite(seed_value)?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<24} {:?} rel {:.3e} (tol {:.0e}, {} entries)",
            c.name, c.shape, c.rel_error, c.tolerance, c.entries
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", checks.len());
    }
    println!("all {} gradient checks passed", checks.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Kernels {
            count,
            seed,
            out,
            min_side,
            max_side,
        } => kernels(count, seed, &out, min_side, max_side),
        Command::ToyData { out, count, size, seed } => toy_data(&out, count, size, seed),
        Command::Simulate {
            input,
            out,
            config,
            seed,
            gain,
        } => simulate(&input, &out, config.as_deref(), seed, gain),
        Command::Wiener { image, kernel, out, nsr } => wiener(&image, &kernel, &out, nsr),
        Command::Train {
            data,
            config,
            out,
            steps,
            seed,
            branch,
            fusion,
            no_reblur_loss,
            no_enhance_loss,
            resume,
        } => train(
            &data,
            config.as_deref(),
            &out,
            steps,
            seed,
            branch,
            fusion,
            no_reblur_loss,
            no_enhance_loss,
            resume,
        ),
        Command::Eval { data, ckpt, report } => eval(&data, &ckpt, &report),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
