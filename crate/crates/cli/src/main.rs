use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use arcade::detector::{self, ScoreReport, ThresholdPolicy};
use arcade::harness::{self, BenchOptions, ExperimentSpec, LatentDim, SynthConfig};
use arcade::ingest::{self, FlowMode, IngestConfig, Label, SampleSet};
use arcade::model::{build_model, Checkpoint, ModelConfig};
use arcade::trainer::{self, TrainConfig, TrainState};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "arcade", version, about = "Flow-level network anomaly detection from raw bytes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration for the command; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or directory for `experiment`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a pcap/pcapng capture into a sample file.
    Preprocess(PreprocessArgs),
    /// Generate a labeled synthetic sample file.
    Synth(SynthArgs),
    /// Train on normal samples and write a checkpoint plus losses.csv.
    Train(TrainArgs),
    /// Write per-sample anomaly scores.
    Score(ScoreArgs),
    /// Fit a threshold and report detection metrics.
    Evaluate(EvaluateArgs),
    /// Run a declarative experiment with sweeps over lambda_g and n.
    Experiment,
    /// Measure scoring throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    /// Inactivity timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// `flow` or `session`.
    #[arg(long)]
    mode: Option<FlowMode>,
    #[arg(long)]
    pad_incomplete: bool,
    /// Label every sample with this class byte (0 = normal).
    #[arg(long)]
    label: Option<u8>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    normal: Option<usize>,
    #[arg(long)]
    anomalies: Option<usize>,
    /// Also write the generated packets as a pcap.
    #[arg(long)]
    pcap: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Must match the sample file when given.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda_g: Option<f64>,
    /// `<phase1>+<phase2>`, e.g. `100+50`.
    #[arg(long)]
    epochs: Option<String>,
    /// `auto` or an integer.
    #[arg(long, default_value = "auto")]
    d: LatentDim,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    /// `p99`, `max` or a fixed threshold.
    #[arg(long, default_value = "p99")]
    policy: ThresholdPolicy,
    /// Scores whose normal rows fit the threshold; defaults to `--scores`.
    #[arg(long)]
    fit_scores: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,64,256")]
    batch_sizes: Vec<usize>,
    /// Warm-up seconds before timing each batch size.
    #[arg(long, default_value_t = 5.0)]
    warmup: f64,
    #[arg(long, default_value_t = 10)]
    runs: usize,
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn required_out(common: &Common, what: &str) -> Result<PathBuf> {
    common.out.clone().with_context(|| format!("--out <{what}> is required"))
}

fn parse_epochs(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('+').unwrap_or((s, "0"));
    Ok((
        a.trim().parse().context("phase-1 epochs")?,
        b.trim().parse().context("phase-2 epochs")?,
    ))
}

fn preprocess(common: &Common, a: PreprocessArgs) -> Result<()> {
    let mut cfg: IngestConfig = load_toml(common.config.as_deref())?;
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.l = a.l.unwrap_or(cfg.l);
    cfg.timeout_s = a.timeout.unwrap_or(cfg.timeout_s);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.pad_incomplete |= a.pad_incomplete;
    let out = required_out(common, "arcd")?;

    let mut reader = ingest::open_capture(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let (samples, stats) = ingest::preprocess(reader.by_ref(), &cfg)?;
    let mut set = SampleSet::new(cfg.n, cfg.l);
    for s in &samples {
        set.push(&s.values, a.label.map(Label::from_byte))?;
    }
    set.write(&out)?;
    let cs = reader.stats();
    println!(
        "{} IP packets ({} non-IP, {} malformed{}); {} flows discarded, {} padded",
        cs.packets,
        cs.non_ip,
        cs.malformed,
        if cs.truncated { ", capture truncated" } else { "" },
        stats.discarded_flows,
        stats.padded_flows
    );
    println!("{} samples -> {}", set.len(), out.display());
    Ok(())
}

fn synth(common: &Common, a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_toml(common.config.as_deref())?;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.n_normal_flows = a.normal.unwrap_or(cfg.n_normal_flows);
    cfg.n_anomaly_flows = a.anomalies.unwrap_or(cfg.n_anomaly_flows);
    let out = required_out(common, "arcd")?;
    let corpus = harness::synth_generate(&cfg)?;
    corpus.samples.write(&out)?;
    if let Some(p) = &a.pcap {
        corpus.write_pcap(p)?;
    }
    println!(
        "{} samples from {} packets -> {}",
        corpus.samples.len(),
        corpus.packets.len(),
        out.display()
    );
    Ok(())
}

fn train(common: &Common, a: TrainArgs) -> Result<()> {
    let out = required_out(common, "ckpt")?;
    let data = SampleSet::read(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    if let Some(n) = a.n {
        ensure!(n == data.n, "--n {n} does not match the sample file (n = {})", data.n);
    }

    let (mut model, state, cfg) = match &a.resume {
        Some(path) => {
            ensure!(common.config.is_none(), "--config cannot change a resumed run");
            let (model, state, mut cfg) = trainer::resume(&Checkpoint::load(path)?)?;
            if let Some(e) = &a.epochs {
                (cfg.epochs_phase1, cfg.epochs_phase2) = parse_epochs(e)?;
            }
            println!("resuming at epoch {}", state.epoch);
            (model, state, cfg)
        }
        None => {
            let mut cfg: TrainConfig = load_toml(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            if let Some(lg) = a.lambda_g {
                cfg.adversarial.lambda_g = lg;
            }
            if let Some(e) = &a.epochs {
                (cfg.epochs_phase1, cfg.epochs_phase2) = parse_epochs(e)?;
            }
            let d = match a.d {
                LatentDim::Auto => trainer::latent_dim_from_pca(&data)?,
                LatentDim::Fixed(d) => d,
            };
            println!("latent dimension {d}");
            let mcfg = ModelConfig {
                l: data.l,
                ..ModelConfig::new(data.n, d)
            };
            let model = build_model(&mcfg, cfg.seed)?;
            let state = TrainState::new(&cfg);
            (model, state, cfg)
        }
    };
    let state = trainer::train_from(&data, &mut model, &cfg, state, cfg.total_epochs(), |r, _| {
        println!(
            "epoch {:>3}  lr {:e}  L_C {:.5}  L_G {:.5}  MSSIM {:.5}",
            r.epoch, r.lr, r.critic_loss, r.generator_loss, r.mssim
        );
        Ok(())
    })?;
    trainer::training_checkpoint(&model, &state, &cfg)?.save(&out)?;
    let losses = out.with_file_name("losses.csv");
    trainer::write_history_csv(&losses, &state.history)?;
    println!("checkpoint -> {}, history -> {}", out.display(), losses.display());
    Ok(())
}

fn score(common: &Common, a: ScoreArgs) -> Result<()> {
    let out = required_out(common, "scores.csv")?;
    let model = Checkpoint::load(&a.ckpt)?.to_model()?;
    let data = SampleSet::read(&a.data)?;
    let scores = detector::anomaly_scores_batched(&model, &data, a.batch_size)?;
    detector::write_scores_csv(&out, &scores, data.labels.as_deref())?;
    println!("{} scores -> {}", scores.len(), out.display());
    Ok(())
}

fn evaluate(common: &Common, a: EvaluateArgs) -> Result<()> {
    let (scores, labels) = detector::read_scores_csv(&a.scores)?;
    let labels = labels.context("evaluation needs a label on every score row")?;
    let fit_path = a.fit_scores.as_ref().unwrap_or(&a.scores);
    let (fit, fit_labels) = detector::read_scores_csv(fit_path)?;
    let normal: Vec<f64> = match fit_labels {
        Some(l) => fit.iter().zip(&l).filter(|(_, l)| !l.is_anomaly()).map(|(s, _)| *s).collect(),
        None => fit,
    };
    let tau = detector::fit_threshold(&normal, a.policy)?;
    let flags: Vec<bool> = labels.iter().map(|l| l.is_anomaly()).collect();
    let (_, auroc_err) = detector::evaluate(&scores, &flags, tau)?;
    let report = ScoreReport::new(scores, labels, tau, a.policy)?;
    let json = serde_json::to_string_pretty(&report.summary_json())?;
    match a.report.as_ref().or(common.out.as_ref()) {
        Some(p) => fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(e) = auroc_err {
        bail!("threshold metrics written, but {e}");
    }
    Ok(())
}

fn experiment(common: &Common) -> Result<()> {
    let path = common.config.as_ref().context("experiment needs --config <spec.toml>")?;
    let mut spec = ExperimentSpec::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = &common.out {
        spec.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    let report = harness::run_experiment(&spec)?;
    println!("report -> {}", report.dir.display());
    for p in &report.points {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "lambda_g {:<6} n {:<2} AUROC {} +- {}  F1 {} +- {}{}",
            p.lambda_g,
            p.n,
            fmt(p.auroc_mean),
            fmt(p.auroc_std),
            fmt(p.f1_mean),
            fmt(p.f1_std),
            if p.failed { "  FAILED" } else { "" }
        );
    }
    for f in &report.failures {
        eprintln!("lambda_g {} n {} seed {}: {} failed: {}", f.lambda_g, f.n, f.seed, f.stage, f.error);
    }
    ensure!(report.failures.is_empty(), "{} sweep point(s) failed", report.failures.len());
    Ok(())
}

fn bench(common: &Common, a: BenchArgs) -> Result<()> {
    ensure!(a.warmup >= 0.0, "--warmup must be non-negative");
    let model = Checkpoint::load(&a.ckpt)?.to_model()?;
    let data = SampleSet::read(&a.data)?;
    let opts = BenchOptions {
        warmup: Duration::from_secs_f64(a.warmup),
        runs: a.runs,
    };
    let rows = harness::bench_throughput(&model, &data, &a.batch_sizes, &opts)?;
    println!("{:>10} {:>14} {:>12}", "batch", "flows/s", "std");
    for r in &rows {
        println!("{:>10} {:>14.1} {:>12.1}", r.batch_size, r.mean_flows_per_s, r.std_flows_per_s);
    }
    if let Some(out) = &common.out {
        fs::write(out, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Preprocess(a) => preprocess(c, a),
        Command::Synth(a) => synth(c, a),
        Command::Train(a) => train(c, a),
        Command::Score(a) => score(c, a),
        Command::Evaluate(a) => evaluate(c, a),
        Command::Experiment => experiment(c),
        Command::Bench(a) => bench(c, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
