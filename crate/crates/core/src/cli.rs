//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::databundle::{generate_synthetic, load_bundle, load_dataset, save_bundle, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evalkit::{bench_linear, evaluate_summary, random_baseline, EvalConfig};
use crate::inference::{greedy_summarize, sample_summarize, Summary};
use crate::policy::{load_model, model_hash, policy_gradcheck, save_model, GRADCHECK_STEP};
use crate::trainer::{train_from, TrainConfig};
use crate::policy::{PolicyConfig, PolicyParams};

#[derive(Debug, Parser)]
#[command(name = "qamvs", version, about = "Query-aware multi-video summarization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of event bundles.
    Gen(GenArgs),
    /// Train a policy on a dataset directory.
    Train(TrainArgs),
    /// Decode a summary for one bundle.
    Summarize(SummarizeArgs),
    /// Score a summary against the bundle's ground truth.
    Eval(EvalArgs),
    /// Compare policy gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Time greedy decoding against input size.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub events: usize,
    #[arg(long, default_value_t = 6)]
    pub videos: usize,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 12)]
    pub images: usize,
    #[arg(long = "dim-visual", default_value_t = 16)]
    pub dim_visual: usize,
    #[arg(long = "dim-text", default_value_t = 8)]
    pub dim_text: usize,
    #[arg(long, default_value_t = 5)]
    pub concepts: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().noise_scale)]
    pub noise: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().relevance_fraction)]
    pub relevance: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "summary-len", default_value_t = 10)]
    pub summary_len: usize,
    #[arg(long = "epochs-phase1", default_value_t = 20)]
    pub epochs_phase1: usize,
    #[arg(long = "epochs-phase2", default_value_t = 10)]
    pub epochs_phase2: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    #[arg(long = "videos-per-item", default_value_t = 4)]
    pub videos_per_item: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Metrics log path; defaults to the model path with a `.metrics.jsonl` suffix.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub len: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample from the policy instead of taking the most probable frame.
    #[arg(long)]
    pub sample: bool,
    #[arg(long, default_value_t = 0, requires = "sample")]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
    /// Also report the random baseline over this many seeds.
    #[arg(long = "random-seeds")]
    pub random_seeds: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    pub frames: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub len: usize,
}

fn emit<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("json value serializes");
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn gen(a: &GenArgs, out: &mut impl Write) -> Result<()> {
    let spec = SyntheticSpec {
        n_events: a.events,
        n_videos: a.videos,
        frames_per_video: a.frames,
        n_images: a.images,
        d_visual: a.dim_visual,
        d_text: a.dim_text,
        n_concepts: a.concepts,
        relevance_fraction: a.relevance,
        noise_scale: a.noise,
        seed: a.seed,
    };
    emit(out, &json!({ "command": "gen", "out": a.out, "spec": spec }))?;
    for b in generate_synthetic(&spec)? {
        save_bundle(&b, &a.out.join(&b.event_id))?;
    }
    info!("wrote {} bundles to {}", spec.n_events, a.out.display());
    Ok(())
}

fn metrics_path(a: &TrainArgs) -> PathBuf {
    a.metrics.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    })
}

fn train(a: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let first = &data[0];
    if let Some(b) = data.iter().find(|b| (b.d_visual, b.d_text) != (first.d_visual, first.d_text)) {
        return Err(Error::format(&a.data, "d_visual", format!("event {} differs in dimensions", b.event_id)));
    }
    let cfg = TrainConfig {
        summary_len: a.summary_len,
        episodes_per_item: a.episodes,
        batch_size: a.batch,
        videos_per_item: a.videos_per_item,
        lr: a.lr,
        phase1_epochs: a.epochs_phase1,
        phase2_epochs: a.epochs_phase2,
        seed: a.seed,
        workers: a.workers,
        policy: Some(PolicyConfig::desk(first.d_visual, first.d_text)),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let mpath = metrics_path(a);
    emit(out, &json!({ "command": "train", "data": a.data, "out": a.out, "metrics": mpath, "config": cfg }))?;
    let file = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut log = BufWriter::new(file);
    emit(&mut log, &json!({ "config": cfg }))?;
    let params = PolicyParams::init(cfg.policy.expect("set above"), cfg.seed)?;
    let mut sink_err = None;
    let result = train_from(params, &data, &cfg, |m| {
        let r = emit(&mut log, m).and_then(|_| emit(&mut *out, m));
        if let Err(e) = r {
            sink_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&mpath, e))?;
    save_model(&result.params, &a.out)?;
    emit(out, &json!({ "model": a.out, "model_hash": model_hash(&result.params) }))
}

fn summarize(a: &SummarizeArgs, out: &mut impl Write) -> Result<()> {
    let params = load_model(&a.model)?;
    let bundle = load_bundle(&a.bundle)?;
    check_dims(&a.bundle, (bundle.d_visual, bundle.d_text), (params.config.d_visual, params.config.d_text))?;
    emit(
        out,
        &json!({
            "command": "summarize",
            "model": a.model,
            "bundle": a.bundle,
            "L": a.len,
            "mode": if a.sample { "sample" } else { "greedy" },
            "seed": a.sample.then_some(a.seed),
        }),
    )?;
    let s = if a.sample {
        sample_summarize(&bundle, &params, a.len, a.seed)?
    } else {
        greedy_summarize(&bundle, &params, a.len)?
    };
    s.save(&a.out)?;
    emit(out, &s)
}

fn check_dims(path: &Path, bundle: (usize, usize), model: (usize, usize)) -> Result<()> {
    if bundle != model {
        return Err(Error::format(
            path,
            "d_visual",
            format!(
                "bundle dimensions (visual {}, text {}) do not match model (visual {}, text {})",
                bundle.0, bundle.1, model.0, model.1
            ),
        ));
    }
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let cfg = EvalConfig {
        match_threshold: a.threshold,
    };
    cfg.validate()?;
    let summary = Summary::load(&a.summary)?;
    let bundle = load_bundle(&a.bundle)?;
    check_dims(&a.summary, (bundle.d_visual, bundle.d_text), (summary.d_visual, summary.d_text))?;
    if summary.event_id != bundle.event_id {
        return Err(Error::format(
            &a.summary,
            "event_id",
            format!("summary is for {:?}, bundle is {:?}", summary.event_id, bundle.event_id),
        ));
    }
    if bundle.ground_truth.as_ref().is_none_or(|g| g.is_empty()) {
        return Err(Error::format(&a.bundle, "ground_truth", "bundle has no ground truth"));
    }
    emit(out, &json!({ "command": "eval", "summary": a.summary, "bundle": a.bundle, "config": cfg }))?;
    let report = evaluate_summary(&summary, &bundle, &cfg)?;
    emit(out, &report)?;
    if let Some(n) = a.random_seeds {
        let stats = random_baseline(&bundle, summary.len, n, &cfg)?;
        emit(out, &json!({ "random_mean_f1": stats.mean_f1, "random_std_f1": stats.std_f1, "seeds": n }))?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut impl Write) -> Result<()> {
    emit(out, &json!({ "command": "gradcheck", "dim": a.dim, "tol": a.tol, "seed": a.seed, "step": GRADCHECK_STEP }))?;
    let report = policy_gradcheck(a.dim, a.tol, a.seed)?;
    for p in &report.params {
        emit(
            out,
            &json!({
                "param": p.name,
                "max_rel_error": p.max_rel_error,
                "analytic": p.analytic,
                "numeric": p.numeric,
                "ok": !p.flagged,
            }),
        )?;
    }
    emit(out, &json!({ "passed": report.passed(), "max_rel_error": report.max_rel_error() }))?;
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.flagged().map(|p| p.name.as_str()).collect();
        Err(Error::Contract(format!("gradient check failed for {}", names.join(", "))))
    }
}

fn bench(a: &BenchArgs, out: &mut impl Write) -> Result<()> {
    let params = load_model(&a.model)?;
    emit(out, &json!({ "command": "bench", "model": a.model, "frames": a.frames, "L": a.len }))?;
    let report = bench_linear(&params, &a.frames, a.len)?;
    emit(out, &report)
}

/// Runs an already-parsed invocation.
pub fn dispatch(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train(a, out),
        Command::Summarize(a) => summarize(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
