//! `cyclevc`: corpus generation, speaker-encoder and conversion training,
//! conversion, evaluation and ablations from one entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

mod provenance;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cyclevc_core::corpus::{self, CorpusOptions, SynthSpeakerSpec, DEFAULT_TEST_RATIO};
use cyclevc_core::dsp::{read_mel, write_mel};
use cyclevc_core::eval::{self, AblationSpec};
use cyclevc_core::speaker_encoder::{self, SpeakerEncoderNet, SpeakerTrainConfig};
use cyclevc_core::trainer::{self, TrainOutputs, VcTrainConfig};
use cyclevc_core::vc_model::{self, VcNet};

use provenance::Provenance;

#[derive(Debug, Parser)]
#[command(
    name = "cyclevc",
    version,
    about = "Zero-shot voice conversion with cycle-consistent training"
)]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config for the subcommand; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "info", value_parser = ["error", "warn", "info", "debug", "trace"])]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus.
    MakeCorpus(MakeCorpusArgs),
    /// Train the speaker encoder as a classifier.
    TrainSe(TrainSeArgs),
    /// Train the conversion network against a frozen speaker encoder.
    TrainVc(TrainVcArgs),
    /// Convert one mel to another speaker's voice.
    Convert(ConvertArgs),
    /// Reconstruction/conversion MCD and the speaker probe on a test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate an ablation grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct MakeCorpusArgs {
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts: Option<usize>,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    test_ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainSeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train on stacked chunks in their original order.
    #[arg(long)]
    no_shuffle: bool,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainVcArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    se: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop_frames: Option<usize>,
    #[arg(long)]
    bottleneck: Option<usize>,
    /// Output directory for the checkpoint, loss log and effective config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    vc: PathBuf,
    #[arg(long)]
    se: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    vc: PathBuf,
    #[arg(long)]
    se: PathBuf,
    /// Corpus directory; its test split is evaluated.
    #[arg(long)]
    test: PathBuf,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// TOML ablation spec (bottleneck_sizes, toggles, iterations).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Speaker encoder for cells that do not retrain it; trained when absent.
    #[arg(long)]
    se: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CorpusConfig {
    speakers: usize,
    utts: usize,
    seconds: f64,
    test_ratio: f64,
    seed: u64,
    /// Explicit speaker designs; the built-in set is used when absent.
    specs: Option<Vec<SynthSpeakerSpec>>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 4,
            utts: 50,
            seconds: 2.0,
            test_ratio: DEFAULT_TEST_RATIO,
            seed: 0,
            specs: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn reject_config(cli: &Cli, command: &str) -> Result<()> {
    if let Some(p) = &cli.config {
        bail!("{command} takes no config file (got {})", p.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    match &cli.command {
        Command::MakeCorpus(a) => make_corpus(cli, a, argv, started),
        Command::TrainSe(a) => train_se(cli, a, argv, started),
        Command::TrainVc(a) => train_vc(cli, a, argv, started),
        Command::Convert(a) => convert(cli, a, argv, started),
        Command::Evaluate(a) => evaluate(cli, a, argv, started),
        Command::Ablate(a) => ablate(cli, a, argv, started),
    }
}

fn make_corpus(cli: &Cli, a: &MakeCorpusArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    let mut cfg: CorpusConfig = load_config(cli.config.as_deref())?;
    if let Some(v) = a.speakers {
        cfg.speakers = v;
    }
    if let Some(v) = a.utts {
        cfg.utts = v;
    }
    if let Some(v) = a.seconds {
        cfg.seconds = v;
    }
    if let Some(v) = a.test_ratio {
        cfg.test_ratio = v;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let specs = match &cfg.specs {
        Some(specs) => specs.clone(),
        None => corpus::default_speakers(cfg.speakers)
            .into_iter()
            .map(|mut s| {
                s.rng_seed = s.rng_seed.wrapping_add(cfg.seed.wrapping_mul(1 << 20));
                s
            })
            .collect(),
    };
    let opts = CorpusOptions {
        test_ratio: cfg.test_ratio,
        split_seed: cfg.seed,
        ..Default::default()
    };
    let handle = corpus::generate_synthetic_corpus_with(&specs, cfg.utts, cfg.seconds, &opts)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    corpus::save_corpus(&handle, &a.out)?;
    log::info!(
        "wrote {} utterances ({} train / {} test) to {}",
        handle.utterances().len(),
        handle.count(corpus::Split::Train),
        handle.count(corpus::Split::Test),
        a.out.display()
    );
    let mut prov = Provenance::new("make-corpus", argv, cfg.seed, &cfg);
    prov.results = json!({
        "utterances": handle.utterances().len(),
        "train": handle.count(corpus::Split::Train),
        "test": handle.count(corpus::Split::Test),
    });
    prov.finish(started).write(&a.out.join(provenance::FILE))
}

fn train_se(cli: &Cli, a: &TrainSeArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    require_dir(&a.corpus, "corpus directory")?;
    let mut cfg: SpeakerTrainConfig = load_config(cli.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if a.no_shuffle {
        cfg.shuffle = false;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let handle = corpus::load_corpus(&a.corpus)?;
    let (net, log) = speaker_encoder::train_speaker_encoder(&handle, &cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    net.save(&a.out, cfg.seed, cfg.epochs as u64)?;
    let mut prov = Provenance::new("train-se", argv, cfg.seed, &cfg);
    prov.output_checkpoint(&a.out)?;
    prov.results = serde_json::to_value(&log)?;
    prov.finish(started).write(&provenance::sidecar(&a.out))
}

fn train_vc(cli: &Cli, a: &TrainVcArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    require_dir(&a.corpus, "corpus directory")?;
    require_file(&a.se, "speaker encoder checkpoint")?;
    let mut cfg: VcTrainConfig = load_config(cli.config.as_deref())?;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.crop_frames {
        cfg.crop_frames = v;
    }
    if let Some(v) = a.bottleneck {
        cfg.model.bottleneck = v;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let handle = corpus::load_corpus(&a.corpus)?;
    let out = TrainOutputs { dir: a.out.clone() };
    let (_, log) = trainer::train_vc(&handle, &a.se, &cfg, Some(&out))?;
    std::fs::write(a.out.join("config.toml"), toml::to_string(&cfg)?)
        .with_context(|| format!("writing config to {}", a.out.display()))?;
    let mut prov = Provenance::new("train-vc", argv, cfg.seed, &cfg);
    prov.input_checkpoint(&a.se)?;
    prov.output_checkpoint(&out.checkpoint())?;
    let n = log.steps.len();
    prov.results = json!({
        "iterations": n,
        "first_total": log.steps.first().map(|s| s.total),
        "last_total": log.steps.last().map(|s| s.total),
        "mean_total_first_100": log.mean_total(0, 100),
        "mean_total_last_100": log.mean_total(n.saturating_sub(100), n),
    });
    prov.finish(started).write(&a.out.join(provenance::FILE))
}

fn convert(cli: &Cli, a: &ConvertArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    reject_config(cli, "convert")?;
    require_file(&a.vc, "conversion checkpoint")?;
    require_file(&a.se, "speaker encoder checkpoint")?;
    require_file(&a.source, "source mel")?;
    require_file(&a.target, "target mel")?;
    let net = VcNet::load(&a.vc)?;
    let se = SpeakerEncoderNet::load(&a.se)?;
    let (source, _) = read_mel(&a.source)?;
    let (target, target_speaker) = read_mel(&a.target)?;
    let out = vc_model::convert(&net, &se, &source, &target)?;
    write_mel(&a.out, &out.quantized(), target_speaker.as_deref())?;
    let mut prov = Provenance::new("convert", argv, cli.seed.unwrap_or(0), &json!({}));
    prov.input_checkpoint(&a.vc)?;
    prov.input_checkpoint(&a.se)?;
    prov.results = json!({ "frames": out.frames(), "mel_bins": out.mel_bins() });
    prov.finish(started).write(&provenance::sidecar(&a.out))
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    reject_config(cli, "evaluate")?;
    require_file(&a.vc, "conversion checkpoint")?;
    require_file(&a.se, "speaker encoder checkpoint")?;
    require_dir(&a.test, "test corpus directory")?;
    let net = VcNet::load(&a.vc)?;
    let se = SpeakerEncoderNet::load(&a.se)?;
    let handle = corpus::load_corpus(&a.test)?;
    let report = eval::evaluate_mcd(&net, &se, &handle)?;
    let probe = eval::speaker_probe(&net, &se, &handle)?;
    report.write_csv(&a.report)?;
    println!("{}", report.render());
    println!(
        "speaker probe: {}/{} ({:.3})",
        probe.successes, probe.pairs, probe.rate
    );
    let mut prov = Provenance::new("evaluate", argv, cli.seed.unwrap_or(0), &json!({}));
    prov.input_checkpoint(&a.vc)?;
    prov.input_checkpoint(&a.se)?;
    prov.results = json!({
        "recon_avg": report.recon_avg,
        "conv_avg": report.conv_avg,
        "overall_avg": report.overall_avg,
        "probe": probe,
    });
    prov.finish(started).write(&provenance::sidecar(&a.report))
}

fn ablate(cli: &Cli, a: &AblateArgs, argv: Vec<String>, started: Instant) -> Result<()> {
    require_file(&a.spec, "ablation spec")?;
    require_dir(&a.corpus, "corpus directory")?;
    if let Some(se) = &a.se {
        require_file(se, "speaker encoder checkpoint")?;
    }
    let spec: AblationSpec = load_config(Some(&a.spec))?;
    let mut cfg: VcTrainConfig = load_config(cli.config.as_deref())?;
    let mut se_cfg = SpeakerTrainConfig::default();
    if let Some(s) = cli.seed {
        cfg.seed = s;
        se_cfg.seed = s;
    }
    let handle = corpus::load_corpus(&a.corpus)?;
    let base_se = a.se.as_deref().map(SpeakerEncoderNet::load).transpose()?;
    let table = eval::run_ablation(&handle, &spec, &cfg, &se_cfg, base_se.as_ref())?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("ablation.csv"), table.to_csv())?;
    std::fs::write(a.out.join("ablation.txt"), table.render())?;
    println!("{}", table.render());
    let mut prov = Provenance::new(
        "ablate",
        argv,
        cfg.seed,
        &json!({ "spec": spec, "train": cfg }),
    );
    if let Some(se) = &a.se {
        prov.input_checkpoint(se)?;
    }
    prov.results = json!({ "bottleneck_spread": table.bottleneck_spread() });
    prov.finish(started).write(&a.out.join(provenance::FILE))
}
