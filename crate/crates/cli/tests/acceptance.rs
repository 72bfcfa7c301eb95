//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p infwide-cli --test acceptance`. Set
//! `ACCEPTANCE_ONLY=1,2,9` to run a subset.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use infwide::data::toy_scene;
use infwide::gradcheck;
use infwide::metrics::{gaussian_window, psnr, ssim};
use infwide::network::{Network, NetworkConfig};
use infwide::sim::{
    convolve, expected_value, generate_kernel, simulate_noise, variance, BlurKernel, ConvolveMethod, NoiseParams,
};
use infwide::wiener::wiener_deconvolve;
use infwide::{seed, Tensor};

type Verdict = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_infwide");

/// Training settings shared by the convergence, improvement and ablation
/// criteria.
const TRAIN_STEPS: u64 = 200;
/// The ablations train longer: at 200 steps the single-branch variants are
/// still close to the fused model and the ordering is within seed noise.
const ABLATION_STEPS: u64 = 1000;
const TRAIN_SEED: u64 = 2024;
const TRAIN_CONFIG: &str = r#"{
  "network": {"base_channels": 16, "unet_depth": 2, "resblocks_per_level": 1, "fm_feature_count": 16, "scales": 2},
  "sampler": {"patch": 64, "batch": 4},
  "lr": 1e-3,
  "warmup_steps": 20,
  "clip_grad_norm": 1.0
}"#;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cli(args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(BIN)
        .args(args)
        .output()
        .map_err(|e| format!("spawn {BIN}: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "infwide {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(start.elapsed())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Shared working directory with lazily produced data and trained models.
struct Workspace {
    dir: tempfile::TempDir,
    train_data: OnceCell<Result<PathBuf, String>>,
    test_set: OnceCell<Result<PathBuf, String>>,
    runs: std::cell::RefCell<BTreeMap<String, Result<Run, String>>>,
}

#[derive(Debug, Clone)]
struct Run {
    initial_loss: f64,
    final_loss: f64,
    elapsed: Duration,
    psnr: f64,
    baseline_psnr: f64,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("temp dir"),
            train_data: OnceCell::new(),
            test_set: OnceCell::new(),
            runs: Default::default(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train_data(&self) -> Result<PathBuf, String> {
        self.train_data
            .get_or_init(|| {
                let dir = self.path("train_clean");
                cli(&["toy-data", "--out", p(&dir), "--count", "16", "--size", "96", "--seed", "1"])?;
                Ok(dir)
            })
            .clone()
    }

    /// 20 toy scenes degraded at camera gain 8, disjoint from training.
    fn test_set(&self) -> Result<PathBuf, String> {
        self.test_set
            .get_or_init(|| {
                let clean = self.path("test_clean");
                let set = self.path("test_k8");
                cli(&["toy-data", "--out", p(&clean), "--count", "20", "--size", "64", "--seed", "77"])?;
                cli(&["simulate", "--in", p(&clean), "--out", p(&set), "--seed", "78", "--gain", "8"])?;
                Ok(set)
            })
            .clone()
    }

    /// Train with extra CLI flags for `steps` steps and evaluate on the test
    /// set. With `extend`, continue that earlier run up to `steps` instead of
    /// starting from scratch.
    fn run(&self, name: &str, flags: &[&str], steps: u64, extend: Option<&str>) -> Result<Run, String> {
        if let Some(r) = self.runs.borrow().get(name) {
            return r.clone();
        }
        let result = (|| {
            let data = self.train_data()?;
            let (ckpt, done) = match extend {
                Some(base) => {
                    self.run(base, flags, TRAIN_STEPS, None)?;
                    (self.path(&format!("ckpt_{base}")), TRAIN_STEPS)
                }
                None => (self.path(&format!("ckpt_{name}")), 0),
            };
            let config = self.path("train.json");
            fs::write(&config, TRAIN_CONFIG).map_err(|e| e.to_string())?;
            let count = (steps - done).to_string();
            let seed = TRAIN_SEED.to_string();
            let mut args = vec!["train", "--data", p(&data), "--out", p(&ckpt), "--steps", &count];
            if extend.is_some() {
                args.push("--resume");
            } else {
                args.extend_from_slice(&["--config", p(&config), "--seed", &seed]);
                args.extend_from_slice(flags);
            }
            let elapsed = cli(&args)?;
            let summary = read_json(&ckpt.join("summary.json"))?;
            let report_path = self.path(&format!("report_{name}.json"));
            cli(&["eval", "--data", p(&self.test_set()?), "--ckpt", p(&ckpt), "--report", p(&report_path)])?;
            let report = read_json(&report_path)?;
            let f = |v: &serde_json::Value| v.as_f64().ok_or("missing number".to_string());
            Ok(Run {
                initial_loss: f(&summary["initial_loss"]["total"])?,
                final_loss: f(&summary["final_loss"]["total"])?,
                elapsed,
                psnr: f(&report["psnr_mean"])?,
                baseline_psnr: f(&report["baseline_psnr_mean"])?,
            })
        })();
        self.runs.borrow_mut().insert(name.to_string(), result.clone());
        result
    }
}

// ---- oracles -------------------------------------------------------------

/// Direct circular convolution, kernel center at the origin.
fn direct_convolution(x: &Tensor<f64>, k: &BlurKernel) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (side, center) = (k.side(), k.side() / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..side {
                    let si = (i + h * side + center - a) % h;
                    for b in 0..side {
                        let sj = (j + w * side + center - b) % w;
                        acc += k.values()[a * side + b] * plane[si * w + sj];
                    }
                }
                out[ch * h * w + i * w + j] = acc;
            }
        }
    }
    Tensor::new(&[c, h, w], out).unwrap()
}

/// `E[max(0, n − λ)]` for `n ~ Poisson(λ)` by summing the tail above λ.
fn dark_mean_oracle(lambda: f64) -> f64 {
    let mut p = (-lambda).exp();
    let mut total = 0.0;
    for n in 1..2000u32 {
        p *= lambda / n as f64;
        if n as f64 > lambda {
            total += (n as f64 - lambda) * p;
        }
    }
    total
}

/// Single-scale SSIM by explicit window sums at every valid position.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = 11;
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            weights[i * n + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..];
        let pb = &b.data()[ch * h * w..];
        for y in 0..=h - n {
            for x in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let g = weights[i * n + j];
                        let (u, v) = (pa[(y + i) * w + x + j], pb[(y + i) * w + x + j]);
                        ma += g * u;
                        mb += g * v;
                        saa += g * u * u;
                        sbb += g * v * v;
                        sab += g * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn random_image(shape: &[usize], s: u64) -> Tensor<f64> {
    let mut rng = seed::rng(s);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

// ---- criteria ------------------------------------------------------------

fn convolution_oracle(_: &Workspace) -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let x = random_image(&[3, 64, 64], seed::split(1, case));
        let k = generate_kernel(seed::split(2, case), 13, 35).map_err(|e| e.to_string())?;
        let fast = convolve(&x, &k, ConvolveMethod::CircularFft).map_err(|e| e.to_string())?;
        let slow = direct_convolution(&x, &k);
        worst = worst.max(fast.max_abs_diff(&slow).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-10, format!("max abs error {worst:.3e} > 1e-10"))?;
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("max abs error {worst:.2e} over 20 cases in {secs:.2}s"))
}

fn wiener_exactness(_: &Workspace) -> Verdict {
    let mut worst = f64::INFINITY;
    for case in 0..10u64 {
        let x = toy_scene(seed::split(3, case), 64, 64);
        let k = generate_kernel(seed::split(4, case), 13, 35).map_err(|e| e.to_string())?;
        let y = convolve(&x, &k, ConvolveMethod::CircularFft).map_err(|e| e.to_string())?;
        let est = wiener_deconvolve(&y, &k, 1e-8).map_err(|e| e.to_string())?;
        worst = worst.min(psnr(&est, &x, 1.0).map_err(|e| e.to_string())?);
    }
    ensure(worst >= 60.0, format!("lowest PSNR {worst:.2} dB < 60 dB"))?;
    let x = random_image(&[3, 48, 40], 5);
    let delta = BlurKernel::delta(13).unwrap();
    let same = wiener_deconvolve(&x, &delta, 0.0).map_err(|e| e.to_string())?;
    let dev = same.max_abs_diff(&x).unwrap();
    ensure(dev <= 1e-10, format!("delta kernel deviates by {dev:.3e}"))?;
    Ok(format!("lowest PSNR {worst:.2} dB over 10 cases; delta deviation {dev:.1e}"))
}

fn noise_statistics(_: &Workspace) -> Verdict {
    // (N_d, σ_r, σ_β, K, intensity): corners and center of the sampling ranges.
    let settings = [
        (2.0, 0.5, 0.01, 4.0, 0.05),
        (8.0, 4.0, 0.03, 16.0, 0.3),
        (5.0, 2.0, 0.02, 8.0, 0.15),
        (2.0, 4.0, 0.03, 16.0, 0.6),
        (8.0, 0.5, 0.01, 4.0, 0.9),
    ];
    let shape = [1, 250, 400];
    let mut notes = Vec::new();
    for (i, &(n_d, sigma_r, sigma_beta, gain, level)) in settings.iter().enumerate() {
        let y = Tensor::full(&shape, level);
        let ed = dark_mean_oracle(n_d);
        let k = gain / 500.0;
        let np = 500.0 * level / gain;
        let mean_ref = k * (np + ed);

        let streaky = NoiseParams::new(n_d, sigma_r, sigma_beta, gain);
        let s = simulate_noise(&y, &streaky, seed::split(6, i as u64)).map_err(|e| e.to_string())?;
        let lib_mean = expected_value(&y, &streaky).map_err(|e| e.to_string())?.mean();
        ensure(
            (lib_mean - mean_ref).abs() <= 1e-9 * mean_ref,
            format!("setting {i}: expected_value {lib_mean} vs closed form {mean_ref}"),
        )?;
        let mean = s.mean();
        let mean_err = (mean - mean_ref).abs() / mean_ref;
        ensure(mean_err <= 0.01, format!("setting {i}: mean off by {:.3}%", 100.0 * mean_err))?;

        let flat = NoiseParams::new(n_d, sigma_r, 0.0, gain);
        let s = simulate_noise(&y, &flat, seed::split(7, i as u64)).map_err(|e| e.to_string())?;
        let m = s.mean();
        let var = s.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.numel() - 1) as f64;
        // Var D by the same tail sum, second moment.
        let mut p = (-n_d).exp();
        let mut m2 = 0.0;
        for n in 1..2000u32 {
            p *= n_d / n as f64;
            if n as f64 > n_d {
                m2 += (n as f64 - n_d).powi(2) * p;
            }
        }
        let var_ref = k * k * (np + (m2 - ed * ed) + sigma_r * sigma_r);
        let lib_var = variance(&y, &flat).map_err(|e| e.to_string())?.mean();
        ensure(
            (lib_var - var_ref).abs() <= 1e-9 * var_ref,
            format!("setting {i}: variance() {lib_var} vs closed form {var_ref}"),
        )?;
        let var_err = (var - var_ref).abs() / var_ref;
        ensure(var_err <= 0.03, format!("setting {i}: variance off by {:.3}%", 100.0 * var_err))?;
        notes.push(format!("{:.2}%/{:.2}%", 100.0 * mean_err, 100.0 * var_err));
    }
    // Dark current alone: zero signal, no readout noise, unit streak gain.
    let mut dark_notes = Vec::new();
    for (i, n_d) in [2.0, 5.0, 8.0].into_iter().enumerate() {
        let params = NoiseParams::new(n_d, 0.0, 0.0, 4.0);
        let zero = Tensor::zeros(&[1, 2000, 2000]);
        let s = simulate_noise(&zero, &params, seed::split(8, i as u64)).map_err(|e| e.to_string())?;
        let ed = s.mean() * 500.0 / 4.0;
        let oracle = dark_mean_oracle(n_d);
        let err = (ed - oracle).abs() / oracle;
        ensure(err <= 0.005, format!("E[D] at N_d={n_d}: {ed:.5} vs {oracle:.5}"))?;
        let (lib, _) = infwide::sim::dark_moments(n_d);
        ensure((lib - oracle).abs() <= 1e-9, format!("dark_moments({n_d}) = {lib} vs {oracle}"))?;
        dark_notes.push(format!("{:.2}%", 100.0 * err));
    }
    Ok(format!(
        "mean/variance errors {}; E[D] errors {}",
        notes.join(" "),
        dark_notes.join(" ")
    ))
}

fn gradient_suite(_: &Workspace) -> Verdict {
    let start = Instant::now();
    let mut checks = gradcheck::op_suite(7).map_err(|e| e.to_string())?;
    let ops = checks.len();
    let worst_op = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    checks.push(gradcheck::end_to_end(11, 2).map_err(|e| e.to_string())?);
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:?} rel {:.2e}", c.name, c.shape, c.rel_error))
        .collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    ensure(secs < 300.0, format!("suite took {secs:.0}s"))?;
    let e2e = checks.last().unwrap();
    Ok(format!(
        "{ops} op checks (worst rel {worst_op:.1e}), end-to-end rel {:.1e} over {} entries, {secs:.0}s",
        e2e.rel_error, e2e.entries
    ))
}

fn identity_at_init(_: &Workspace) -> Verdict {
    let net = Network::<f64>::new(NetworkConfig::default(), 9).map_err(|e| e.to_string())?;
    let y = random_image(&[2, 3, 32, 32], 10);
    let em = net.enhance(&y).map_err(|e| e.to_string())?.max_abs_diff(&y).unwrap();
    ensure(em == 0.0, format!("EM deviates by {em:e}"))?;
    let mut worst = 0.0f64;
    // stream widths and extents of the four blocks for base 16 on 32×32
    for (index, (channels, extent)) in [(16, 32), (32, 16), (64, 8), (32, 16)].into_iter().enumerate() {
        let a = random_image(&[1, channels, extent, extent], 11 + index as u64);
        let b = random_image(&[1, channels, extent, extent], 21 + index as u64);
        let (oa, ob) = net.cross_residual(index, &a, &b).map_err(|e| e.to_string())?;
        worst = worst.max(oa.max_abs_diff(&a).unwrap()).max(ob.max_abs_diff(&b).unwrap());
    }
    ensure(worst == 0.0, format!("XRB deviates by {worst:e}"))?;
    Ok("EM and all four XRBs are exact identities".to_string())
}

fn training_convergence(ws: &Workspace) -> Verdict {
    let run = ws.run("both", &[], TRAIN_STEPS, None)?;
    let ratio = run.final_loss / run.initial_loss;
    let secs = run.elapsed.as_secs_f64();
    let detail = format!(
        "total loss {:.4} -> {:.4} (ratio {ratio:.3}) in {secs:.0}s",
        run.initial_loss, run.final_loss
    );
    ensure(ratio <= 0.5, detail.clone())?;
    ensure(secs < 900.0, detail.clone())?;
    Ok(detail)
}

fn beats_wiener(ws: &Workspace) -> Verdict {
    let run = ws.run("both", &[], TRAIN_STEPS, None)?;
    let margin = run.psnr - run.baseline_psnr;
    let detail = format!(
        "network {:.3} dB vs Wiener {:.3} dB (margin {margin:+.3} dB) at K=8",
        run.psnr, run.baseline_psnr
    );
    ensure(margin >= 0.5, detail.clone())?;
    Ok(detail)
}

fn ablation_direction(ws: &Workspace) -> Verdict {
    let steps = ABLATION_STEPS;
    let both = ws.run("both_long", &[], steps, Some("both"))?;
    let image = ws.run("image", &["--branch", "image"], steps, None)?;
    let feature = ws.run("feature", &["--branch", "feature"], steps, None)?;
    let no_reblur = ws.run("no_reblur", &["--no-reblur-loss"], steps, None)?;
    let margins = [
        ("both-image", both.psnr - image.psnr),
        ("both-feature", both.psnr - feature.psnr),
        ("reblur-none", both.psnr - no_reblur.psnr),
    ];
    let detail = margins
        .iter()
        .map(|(n, m)| format!("{n} {m:+.3} dB"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("{detail} after {steps} steps (both at {:.3} dB)", both.psnr);
    ensure(margins.iter().all(|(_, m)| *m >= 0.0), detail.clone())?;
    Ok(detail)
}

fn metrics(_: &Workspace) -> Verdict {
    let a = Tensor::full(&[3, 16, 16], 0.3);
    let b = Tensor::full(&[3, 16, 16], 0.4);
    let db = psnr(&a, &b, 1.0).unwrap();
    ensure((db - 20.0).abs() <= 1e-3, format!("uniform 0.1 error gives {db} dB"))?;
    let x = random_image(&[3, 20, 20], 12);
    let one = ssim(&x, &x).unwrap();
    ensure((one - 1.0).abs() <= 1e-3, format!("ssim(x, x) = {one}"))?;
    let c = ssim(&Tensor::full(&[1, 16, 16], 0.2), &Tensor::full(&[1, 16, 16], 0.4)).unwrap();
    ensure((c - 0.8001).abs() <= 1e-3, format!("constant case {c}"))?;
    ensure((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-12, "window not normalized")?;
    let mut worst = 0.0f64;
    for case in 0..6u64 {
        let a = random_image(&[3, 24, 30], seed::split(13, case));
        let noisy = random_image(&[3, 24, 30], seed::split(14, case));
        let b = Tensor::from_fn(a.shape(), |i| 0.7 * a.data()[i] + 0.3 * noisy.data()[i]);
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    let scene = toy_scene(15, 40, 40);
    let k = generate_kernel(16, 13, 15).unwrap();
    let blurred = convolve(&scene, &k, ConvolveMethod::CircularFft).unwrap();
    worst = worst.max((ssim(&scene, &blurred).unwrap() - ssim_oracle(&scene, &blurred)).abs());
    ensure(worst <= 1e-8, format!("SSIM oracle gap {worst:.2e}"))?;
    Ok(format!("closed forms hold; SSIM oracle gap {worst:.1e}"))
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

fn same_raw_files(a: &Path, b: &Path) -> Result<usize, String> {
    let fa = files_with_ext(a, "rt");
    let fb = files_with_ext(b, "rt");
    ensure(!fa.is_empty(), format!("no raw tensors under {}", a.display()))?;
    ensure(fa.len() == fb.len(), "different file sets")?;
    for (x, y) in fa.iter().zip(&fb) {
        ensure(x.strip_prefix(a).ok() == y.strip_prefix(b).ok(), "different file names")?;
        let (bx, by) = (fs::read(x).unwrap(), fs::read(y).unwrap());
        ensure(bx == by, format!("{} differs", x.display()))?;
    }
    Ok(fa.len())
}

fn determinism(ws: &Workspace) -> Verdict {
    let clean = ws.path("det_clean");
    cli(&["toy-data", "--out", p(&clean), "--count", "4", "--size", "72", "--seed", "31"])?;
    let (s1, s2) = (ws.path("det_sim1"), ws.path("det_sim2"));
    for out in [&s1, &s2] {
        cli(&["simulate", "--in", p(&clean), "--out", p(out), "--seed", "32"])?;
    }
    let sim_files = same_raw_files(&s1, &s2)?;
    let config = ws.path("det_train.json");
    fs::write(
        &config,
        r#"{"network": {"base_channels": 4, "unet_depth": 2, "resblocks_per_level": 1, "fm_feature_count": 4},
            "sampler": {"patch": 32, "batch": 2, "kernel_max": 15}}"#,
    )
    .map_err(|e| e.to_string())?;
    let (t1, t2) = (ws.path("det_train1"), ws.path("det_train2"));
    for out in [&t1, &t2] {
        cli(&["train", "--data", p(&clean), "--config", p(&config), "--out", p(out), "--steps", "3", "--seed", "33"])?;
    }
    let train_files = same_raw_files(&t1, &t2)?;
    Ok(format!(
        "simulate: {sim_files} raw tensors identical; train: {train_files} raw tensors identical"
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn(&Workspace) -> Verdict); 10] = [
        (1, "convolution oracle", convolution_oracle),
        (2, "Wiener exactness", wiener_exactness),
        (3, "noise-model statistics", noise_statistics),
        (4, "gradient suite", gradient_suite),
        (5, "identity at init", identity_at_init),
        (6, "toy training convergence", training_convergence),
        (7, "improvement over Wiener", beats_wiener),
        (8, "ablation direction", ablation_direction),
        (9, "metrics", metrics),
        (10, "determinism", determinism),
    ];
    let ws = Workspace::new();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&ws)))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
