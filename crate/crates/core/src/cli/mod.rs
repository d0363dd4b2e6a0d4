//! The `m3v` command line: one subcommand per pipeline stage.

mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::data::{generate_synthetic, load_jsonl, parse_pair, save_jsonl, split, Dataset};
use crate::error::{M3vError, Result};
use crate::policy::{calibrate, CalibrationProvenance, PolicyArtifact};
use crate::training::{evaluate, load_checkpoint, run_grad_check, save_checkpoint, score_dataset, train};

#[derive(Debug, Parser)]
#[command(name = "m3v", version, about = "Multi-view device-directed speech detection")]
pub struct Cli {
    /// Experiment file (TOML) with a top-level `seed`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed for every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Fit policy thresholds and the fusion SVM on validation data.
    Calibrate(CalibrateArgs),
    /// Score a dataset and write an evaluation report.
    Eval(EvalArgs),
    /// Score one JSONL utterance and print both policy verdicts.
    Decide(DecideArgs),
    /// Finite-difference check of every loss gradient.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<stem>.train.jsonl`, `<stem>.valid.jsonl` and
    /// `<stem>.test.jsonl` beside `--out`.
    #[arg(long)]
    pub split: bool,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub misalignment_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Policy artifact; when absent or missing only per-view metrics are
    /// reported.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// File holding the JSONL line; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Corrupt the analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub sabotage: bool,
}

/// Resolves the effective configuration: file (or defaults), then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Command::GenData(a) => {
            if let Some(n) = a.n_samples {
                cfg.gen.n_samples = n;
            }
            if let Some(p) = a.misalignment_rate {
                cfg.gen.misalignment_rate = p;
            }
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of a command that completed without error but should still
/// produce a nonzero exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(&cfg, a, out),
        Command::Train(a) => cmd_train(&cfg, a, out),
        Command::Calibrate(a) => cmd_calibrate(&cfg, a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Decide(a) => cmd_decide(a, out),
        Command::GradCheck(a) => cmd_grad_check(&cfg, a, out),
    }
}

fn stdout_err(e: std::io::Error) -> M3vError {
    M3vError::io("<stdout>", e)
}

fn summarize(name: &str, ds: &Dataset, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{name}: n={} positive={:.4} misaligned={:.4}",
        ds.len(),
        ds.positive_fraction(),
        ds.misaligned_fraction()
    )
    .map_err(stdout_err)
}

fn sibling(out: &Path, part: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    out.with_file_name(format!("{stem}.{part}.jsonl"))
}

pub fn cmd_gen_data(cfg: &RunConfig, args: &GenDataArgs, out: &mut dyn Write) -> Result<Outcome> {
    let ds = generate_synthetic(&cfg.gen)?;
    let parts = if args.split {
        Some(split(&ds, cfg.split, cfg.seed)?)
    } else {
        None
    };
    save_jsonl(&ds, &args.out)?;
    summarize("all", &ds, out)?;
    if let Some((tr, va, te)) = parts {
        for (name, part) in [("train", &tr), ("valid", &va), ("test", &te)] {
            save_jsonl(part, sibling(&args.out, name))?;
            summarize(name, part, out)?;
        }
    }
    Ok(Outcome::Success)
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs, out: &mut dyn Write) -> Result<Outcome> {
    let train_set = load_jsonl(&args.train)?;
    let valid_set = load_jsonl(&args.valid)?;
    let ckpt = train(&cfg.train, &train_set, &valid_set)?;
    save_checkpoint(&ckpt, &args.out)?;
    writeln!(
        out,
        "{:>5} {:>10} {:>9} {:>9} {:>9} {:>9} {:>10} {:>9}",
        "epoch", "total", "audio", "text", "multi", "contrast", "valid_acc", "valid_eer"
    )
    .map_err(stdout_err)?;
    for r in &ckpt.history {
        writeln!(
            out,
            "{:>5} {:>10.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>10.4} {:>9}",
            r.epoch,
            r.train.l_total,
            r.train.l_audio,
            r.train.l_text,
            r.train.l_multi,
            r.train.l_contrastive,
            r.valid_accuracy_multi,
            r.valid_eer_multi.map_or("--".to_string(), |e| format!("{e:.4}"))
        )
        .map_err(stdout_err)?;
    }
    writeln!(out, "best epoch {}", ckpt.best_epoch).map_err(stdout_err)?;
    Ok(Outcome::Success)
}

pub fn cmd_calibrate(cfg: &RunConfig, args: &CalibrateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let valid = load_jsonl(&args.valid)?;
    let scores = score_dataset(&ckpt.params, &valid)?;
    let labels: Vec<bool> = valid.samples().iter().map(|s| s.label.is_positive()).collect();
    let (thresholds, svm) = calibrate(&scores, &labels, &cfg.policy)?;
    let artifact = PolicyArtifact::new(
        thresholds,
        svm,
        CalibrationProvenance {
            dataset_digest: valid.digest(),
            n_samples: valid.len(),
            seed: cfg.policy.svm.seed,
        },
    );
    artifact.save(&args.out)?;
    let t = &artifact.thresholds;
    writeln!(
        out,
        "t_align_low {:.6}\nt_align_high {:.6}\nt_audio {:.6}\nt_text {:.6}\nt_multi {:.6}\nt_fusion {:.6}",
        t.t_align_low, t.t_align_high, t.t_audio, t.t_text, t.t_multi, t.t_fusion
    )
    .map_err(stdout_err)?;
    writeln!(
        out,
        "svm weights {:?} bias {:.6}",
        artifact.svm.weights, artifact.svm.bias
    )
    .map_err(stdout_err)?;
    Ok(Outcome::Success)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_jsonl(&args.data)?;
    let policy = match &args.policy {
        Some(p) if p.exists() => Some(PolicyArtifact::load(p)?),
        Some(p) => {
            log::warn!("policy file {} not found; reporting per-view metrics only", p.display());
            None
        }
        None => None,
    };
    let report = evaluate(&ckpt.params, &data, policy.as_ref())?;
    report.save(&args.out)?;
    write!(out, "{}", report.table()).map_err(stdout_err)?;
    Ok(Outcome::Success)
}

pub fn cmd_decide(args: &DecideArgs, out: &mut dyn Write) -> Result<Outcome> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let policy = PolicyArtifact::load(&args.policy)?;
    let line = match &args.input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| M3vError::io(p, e))?,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .lock()
                .read_line(&mut s)
                .map_err(|e| M3vError::io("<stdin>", e))?;
            s
        }
    };
    let first = line.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let pair = parse_pair(first, 1)?;
    let s = ckpt.params.score(&pair)?;
    let (d1, d2) = policy.decide(&s);
    writeln!(
        out,
        "v_align {:.6}\nv_audio {:.6}\nv_text {:.6}\nv_multi {:.6}",
        s.v_align, s.v_audio, s.v_text, s.v_multi
    )
    .map_err(stdout_err)?;
    writeln!(out, "policy1 verdict={} branch={}", d1.verdict, d1.branch).map_err(stdout_err)?;
    writeln!(
        out,
        "policy2 verdict={} margin={:.6}",
        d2.verdict,
        d2.margin.unwrap_or(f64::NAN)
    )
    .map_err(stdout_err)?;
    Ok(Outcome::Success)
}

pub fn cmd_grad_check(cfg: &RunConfig, args: &GradCheckArgs, out: &mut dyn Write) -> Result<Outcome> {
    let report = run_grad_check(&cfg.grad_check, args.sabotage)?;
    for (name, err) in &report.components {
        writeln!(out, "{name:<10} max_rel_err {err:.3e}").map_err(stdout_err)?;
    }
    let status = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(
        out,
        "{status} max_rel_err {:.3e} (tolerance {:.0e})",
        report.max_error(),
        report.tolerance
    )
    .map_err(stdout_err)?;
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}
