mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dunetplus::arch::{Model, NetworkConfig};
use dunetplus::data::{self, ShapeKind};
use dunetplus::gradcheck::{block_grad_checks, model_grad_check, GradCheckOptions};
use dunetplus::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use dunetplus::nn::Mode;
use dunetplus::stats::paired_t_test;
use dunetplus::train::{self, ablate, write_ablation_csv, Artifacts};
use dunetplus::{Error, Result};

use config::{env_seed, RunConfig};

const EXIT_FAIL: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "dunp", version, about = "Dual attention-gated U-Net segmentation: train, evaluate, predict, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config; writes model.dunp, log.csv, metrics.csv and config.json.
    Train {
        config: PathBuf,
        /// Overrides `seed` in the config and DUNP_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir` in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on a directory of image/mask pairs; prints per-sample CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Write mask1.png and mask2.png for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Finite-difference check of every block and of a small full model in 64-bit.
    Gradcheck {
        /// Input height and width.
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 2)]
        base_channels: usize,
        #[arg(long, default_value_t = 1)]
        in_channels: usize,
        /// Tolerance for the full model; blocks use 1e-4.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = CheckMode::Train)]
        mode: CheckMode,
    },
    /// Train the seven ablation variants and write one CSV row each.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<output_dir>/ablation.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired t-test between two per-sample metrics CSVs written by `eval`.
    Ttest {
        a: PathBuf,
        b: PathBuf,
        /// precision, recall, dsc or iou.
        #[arg(long, default_value = "dsc")]
        column: String,
    },
    /// Write a synthetic corpus of image/mask PNG pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value = "disk")]
        kind: ShapeKind,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Train { config, seed, output_dir } => cmd_train(&config, seed, output_dir),
        Command::Eval {
            checkpoint,
            data,
            out,
            threshold,
        } => cmd_eval(&checkpoint, &data, out.as_deref(), threshold),
        Command::Predict {
            checkpoint,
            image,
            out_dir,
            threshold,
        } => cmd_predict(&checkpoint, &image, &out_dir, threshold),
        Command::Gradcheck {
            size,
            seed,
            levels,
            base_channels,
            in_channels,
            tol,
            mode,
        } => {
            let cfg = NetworkConfig {
                levels,
                base_channels,
                input_size: (size, size),
                in_channels,
                ..Default::default()
            };
            let mode = match mode {
                CheckMode::Train => Mode::Train,
                CheckMode::Eval => Mode::Eval,
            };
            cmd_gradcheck(&cfg, seed_or_env(seed)?, tol, mode)
        }
        Command::Ablate { config, seed, out } => cmd_ablate(&config, seed, out),
        Command::Ttest { a, b, column } => cmd_ttest(&a, &b, &column),
        Command::Synth {
            out,
            count,
            size,
            kind,
            channels,
            seed,
        } => {
            std::fs::create_dir_all(&out)?;
            for s in data::generate_synthetic(count, (size, size), kind, channels, seed_or_env(seed)?)? {
                data::write_sample_png(&out, &s)?;
            }
            println!("wrote {count} pairs to {}", out.display());
            Ok(0)
        }
    }
}

fn seed_or_env(flag: Option<u64>) -> Result<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(0))
}

fn cmd_train(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<u8> {
    let cfg = RunConfig::load(path)?.resolve(seed, output_dir)?;
    let split = cfg.load_split()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    cfg.save(out.join("config.json"))?;
    let mut model = Model::build(&cfg.network)?;
    eprintln!(
        "training {} params on {} / {} / {} samples for {} epochs",
        model.param_count(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        cfg.train.max_epochs
    );
    let artifacts = Artifacts {
        checkpoint: Some(out.join("model.dunp")),
        log: Some(out.join("log.csv")),
    };
    let log = train::train(&mut model, &split.train, &split.val, &cfg.train, &artifacts)?;
    let (name, held_out) = if !split.test.is_empty() {
        ("test", &split.test)
    } else if !split.val.is_empty() {
        ("val", &split.val)
    } else {
        ("train", &split.train)
    };
    let report = train::evaluate(&model, held_out, cfg.train.threshold)?;
    report.write_csv(File::create(out.join("metrics.csv"))?)?;
    let s = report.aggregate(cfg.train.aggregation);
    println!(
        "best epoch {} of {}; {name} dsc {:.4} iou {:.4} precision {:.4} recall {:.4}",
        log.best_epoch.map_or(0, |e| e + 1),
        log.epochs.len(),
        s.dsc,
        s.iou,
        s.precision,
        s.recall
    );
    Ok(0)
}

fn cmd_eval(checkpoint: &Path, dir: &Path, out: Option<&Path>, threshold: f64) -> Result<u8> {
    let model = Model::load(checkpoint)?;
    let samples = data::load_dir(dir, model.config().in_channels)?;
    let report = train::evaluate(&model, &samples, threshold)?;
    match out {
        Some(p) => report.write_csv(File::create(p)?)?,
        None => report.write_csv(std::io::stdout().lock())?,
    }
    let s = report.mean();
    eprintln!(
        "{} samples: dsc {:.4} iou {:.4} precision {:.4} recall {:.4}",
        report.samples.len(),
        s.dsc,
        s.iou,
        s.precision,
        s.recall
    );
    Ok(0)
}

fn cmd_predict(checkpoint: &Path, image: &Path, out_dir: &Path, threshold: f64) -> Result<u8> {
    let model = Model::load(checkpoint)?;
    let x = data::load_image(image, model.config().in_channels)?;
    let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let out = model.predict(&x.reshape(&[1, c, h, w])?)?;
    std::fs::create_dir_all(out_dir)?;
    data::write_mask_png(out_dir.join("mask1.png"), &out.mask1, threshold)?;
    data::write_mask_png(out_dir.join("mask2.png"), &out.mask2, threshold)?;
    println!("wrote {} and {}", out_dir.join("mask1.png").display(), out_dir.join("mask2.png").display());
    Ok(0)
}

/// `net1.enc.l0.conv1.conv.w` belongs to block `net1.enc.l0`, `net1.head.w` to `net1.head`.
fn block_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    parts[..(parts.len() - 1).clamp(1, 3)].join(".")
}

fn cmd_gradcheck(cfg: &NetworkConfig, seed: u64, tol: f64, mode: Mode) -> Result<u8> {
    let mut ok = true;
    let block_opts = GradCheckOptions { seed, mode, ..Default::default() };
    for (name, r) in block_grad_checks(block_opts)? {
        ok &= r.passed;
        println!("{:<28} max rel err {:.3e}  {}", name, r.max_rel_err, verdict(r.passed));
    }
    let r = model_grad_check(cfg, GradCheckOptions { seed, mode, tol, ..GradCheckOptions::model() })?;
    let mut blocks: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
    for p in &r.params {
        let e = blocks.entry(block_of(&p.name)).or_default();
        *e = (e.0.max(p.max_rel_err), e.1 + p.checked, e.2 + p.skipped);
    }
    for (name, (err, checked, skipped)) in &blocks {
        println!("model {name:<22} max rel err {err:.3e}  ({checked} coords, {skipped} at kinks)");
    }
    ok &= r.passed;
    println!(
        "model max rel err {:.3e} (tol {:.0e}, {} coords, {} skipped at kinks)  {}",
        r.max_rel_err,
        r.tol,
        r.checked,
        r.skipped,
        verdict(r.passed)
    );
    println!("overall {}", verdict(ok));
    Ok(if ok { 0 } else { EXIT_FAIL })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_ablate(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<u8> {
    let cfg = RunConfig::load(path)?.resolve(seed, None)?;
    let split = cfg.load_split()?;
    let rows = ablate(&cfg.network, &cfg.train, &split)?;
    let out = out.unwrap_or_else(|| cfg.output_dir.join("ablation.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_ablation_csv(&rows, File::create(&out)?)?;
    for r in &rows {
        println!(
            "{:<18} params {:>8}  dsc {:.4}  iou {:.4}",
            r.variant, r.param_count, r.dsc, r.iou
        );
    }
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_ttest(a: &Path, b: &Path, column: &str) -> Result<u8> {
    let xa = MetricsReport::read_csv(File::open(a)?)?.column(column)?;
    let xb = MetricsReport::read_csv(File::open(b)?)?.column(column)?;
    let by_id: BTreeMap<&str, f64> = xb.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    if xa.len() != xb.len() || by_id.len() != xb.len() {
        return Err(Error::Value(format!(
            "sample ids do not align: {} has {} rows, {} has {}",
            a.display(),
            xa.len(),
            b.display(),
            xb.len()
        )));
    }
    let mut va = Vec::with_capacity(xa.len());
    let mut vb = Vec::with_capacity(xa.len());
    for (id, v) in &xa {
        let Some(&w) = by_id.get(id.as_str()) else {
            return Err(Error::Value(format!("sample {id:?} missing from {}", b.display())));
        };
        va.push(*v);
        vb.push(w);
    }
    let r = paired_t_test(&va, &vb)?;
    println!("t = {:.4}, df = {}, p = {:.4}", r.t, r.df, r.p);
    println!(
        "{} at 0.05",
        if r.significant(0.05) { "significant" } else { "not significant" }
    );
    Ok(0)
}
