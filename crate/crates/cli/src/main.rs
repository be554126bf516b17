//! `textanim` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 backend
//! contract failure, 4 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use textanim::animate::{animate, AnimationRequest, SourceSpec};
use textanim::backend::{BackendRegistry, BackendSelection, Backends};
use textanim::config::Config;
use textanim::evaluate::{evaluate, Embedder, MetricKind};
use textanim::metrics::FeatureCache;
use textanim::train::{fit, Checkpoint, FitOptions, LossBreakdown, Trainer};
use textanim::Error;

#[derive(Parser)]
#[command(name = "textanim", version, about = "Text-driven face animation in a layered style-latent space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the motion generator and mappers.
    Train(TrainArgs),
    /// Generate one video for a single prompt.
    Animate(AnimateArgs),
    /// Generate a longer video by chaining several prompts.
    Chain(AnimateArgs),
    /// Compute FID and/or ACD over directories of frames.
    Evaluate(EvaluateArgs),
    /// Load the configured backends and run the contract checks.
    CheckBackend(BackendArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend selection: `toy`, `external` or `external:<manifest>`.
    /// `external` alone reads the manifest path from the environment.
    #[arg(long, env = PLUGIN_ENV_FLAG)]
    backend: Option<String>,
}

/// Flag-level environment override; the library reads [`PLUGIN_ENV`] for
/// the manifest path itself.
const PLUGIN_ENV_FLAG: &str = "TEXTANIM_BACKEND";

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Resume from this checkpoint (its stored configuration is used).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of training images; switches to real-image mode.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Frames per training video.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Print losses every N iterations.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args)]
struct AnimateArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source face image (PNG).
    #[arg(long, conflicts_with = "sample_seed")]
    image: Option<PathBuf>,
    /// Draw the source face from the synthesizer with this seed.
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Prompt; repeat for chaining.
    #[arg(long = "text", required = true)]
    texts: Vec<String>,
    /// Frames per prompt.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    /// Seed of the initial hidden state.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a contact sheet of all frames.
    #[arg(long)]
    contact_sheet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Generated frames, one subdirectory per video.
    gen_dir: PathBuf,
    /// Reference frames (needed for FID).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Comma-separated metrics.
    #[arg(long, value_delimiter = ',', default_value = "fid,acd")]
    metrics: Vec<String>,
    /// Report the square root of the Fréchet distance.
    #[arg(long)]
    fid_sqrt: bool,
    /// Feature cache file, reused across runs.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Vocabulary { .. } => 2,
        Error::Contract(_) => 3,
        _ => 4,
    }
}

fn load_config(args: &BackendArgs) -> Result<Config, Error> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(sel) = &args.backend {
        config.backend = BackendSelection::parse(sel)?;
    }
    Ok(config)
}

fn load_backends(config: &Config) -> Result<Backends, Error> {
    let (backends, report) = BackendRegistry::default().load(&config.backend, &config.toy)?;
    for w in report.warnings() {
        eprintln!("warning: {}: {}", w.name, w.detail);
    }
    Ok(backends)
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut config = ckpt.config.clone();
            if let Some(sel) = &args.backend.backend {
                config.backend = BackendSelection::parse(sel)?;
            }
            let backends = load_backends(&config)?;
            let mut trainer = Trainer::from_checkpoint(ckpt, backends)?;
            if let Some(n) = args.iterations {
                trainer.config.train.iterations = n;
            }
            trainer
        }
        None => {
            let mut config = load_config(&args.backend)?;
            if let Some(dir) = &args.image {
                config.train.image_dir = Some(dir.clone());
                config.train.mode = textanim::types::PipelineMode::RealImage;
            }
            if let Some(t) = args.frames {
                config.train.frames = t;
            }
            if let Some(n) = args.iterations {
                config.train.iterations = n;
            }
            if let Some(s) = args.seed {
                config.train.seed = s;
            }
            config.validate()?;
            let backends = load_backends(&config)?;
            Trainer::new(config, backends)?
        }
    };
    let every = args.log_every.max(1);
    let mut log = |i: usize, l: &LossBreakdown| {
        if i == 1 || i % every == 0 {
            eprintln!(
                "iter {i:>6}  total {:.5}  w_reg {:.5}  path_reg {:.5}  cont {:.5}  lpips {:.5}  |g| {:.3}",
                l.total, l.w_reg, l.path_reg, l.cont, l.lpips, l.grad_norm
            );
        }
    };
    let outcome = fit(
        &mut trainer,
        FitOptions {
            checkpoint_dir: Some(args.out.clone()),
            on_step: Some(&mut log),
        },
    )?;
    for p in &outcome.written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_animation(args: AnimateArgs, chain: bool) -> Result<(), Error> {
    if !chain && args.texts.len() != 1 {
        return Err(Error::InvalidArgument("animate takes exactly one --text; use chain for more".into()));
    }
    let source = match (&args.image, args.sample_seed) {
        (Some(p), None) => SourceSpec::Image(p.clone()),
        (None, Some(s)) => SourceSpec::SampleSeed(s),
        _ => return Err(Error::InvalidArgument("give exactly one of --image or --sample-seed".into())),
    };
    let config = match (&args.backend.config, &args.backend.backend) {
        (None, None) if args.checkpoint.is_file() => Checkpoint::load(&args.checkpoint)?.config,
        _ => load_config(&args.backend)?,
    };
    let backends = load_backends(&config)?;
    let req = AnimationRequest {
        source,
        prompts: args.texts,
        frames_per_prompt: args.frames,
        checkpoint: args.checkpoint,
        out_dir: args.out,
        seed: args.seed,
        contact_sheet: args.contact_sheet,
    };
    let manifest = animate(&req, &backends)?;
    println!("wrote {} frames to {}", manifest.frames.len(), req.out_dir.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let config = load_config(&args.backend)?;
    let backends = load_backends(&config)?;
    let metrics = args
        .metrics
        .iter()
        .map(|m| m.parse::<MetricKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let encoder = backends.encoder.as_ref();
    let mut cache = match &args.cache {
        Some(p) => Some(FeatureCache::open(p, &encoder.name())?),
        None => None,
    };
    let report = evaluate(
        &args.gen_dir,
        args.reference.as_deref(),
        &metrics,
        Embedder {
            encoder,
            cache: cache.as_mut(),
        },
        args.fid_sqrt,
    )?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?;
    match &args.out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn check_backend(args: BackendArgs) -> Result<(), Error> {
    let config = load_config(&args)?;
    let (_, report) = BackendRegistry::default().load(&config.backend, &config.toy)?;
    for c in &report.checks {
        println!("{:<28} {:?}  {}", c.name, c.status, c.detail);
    }
    println!("{}", report.summary());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Animate(a) => run_animation(a, false),
        Command::Chain(a) => run_animation(a, true),
        Command::Evaluate(a) => run_evaluate(a),
        Command::CheckBackend(a) => check_backend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
