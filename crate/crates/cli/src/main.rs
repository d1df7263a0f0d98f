//! `aesr`: every workflow behind one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 runtime
//! failure (details in `<output>/error.log`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::{parse_override, ConfigError, RunConfig};

pub const THREADS_ENV: &str = "AESR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "aesr", version, about = "Super-resolution with auto-encoded supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// tiny, desk or full.
    #[arg(long)]
    preset: Option<String>,
    /// Set any config key, e.g. `--set train.net.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a paired HR/LR dataset from a PNG folder (or synthetic images).
    PrepareData {
        #[command(flatten)]
        common: Common,
        /// Folder of source PNGs.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Generate this many synthetic images instead of reading a folder.
        #[arg(long, conflicts_with = "source")]
        synthetic: Option<usize>,
        /// Dataset root to create (default `<out>/data`).
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Train a generator with the pixel loss alone.
    PretrainFidelity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the encoder/decoder pair and save it frozen.
    PretrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Generator checkpoint to initialize the decoder from.
        #[arg(long)]
        decoder_init: Option<PathBuf>,
    },
    /// Adversarial SR training in baseline or aesop mode.
    TrainSr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// baseline or aesop.
        #[arg(long)]
        mode: Option<String>,
        /// Frozen autoencoder checkpoint.
        #[arg(long)]
        ae: Option<PathBuf>,
        /// Generator checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// PSNR, SSIM, LR-PSNR and AE-PSNR on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Generator checkpoint; repeat to trace a perception-distortion curve.
        #[arg(long = "generator")]
        generators: Vec<PathBuf>,
        #[arg(long)]
        ae: Option<PathBuf>,
    },
    /// Loss maps and frequency spectra.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        ae: Option<PathBuf>,
        /// PNG for the spectral report (default: a synthetic step edge).
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Exact SE/VE decompositions and the toy collapse experiment.
    SeveLab {
        #[command(flatten)]
        common: Common,
    },
    /// The full desk-scale recipe, ending in summary.csv.
    Repro {
        #[command(flatten)]
        common: Common,
        /// Folder of source PNGs (default: synthetic images).
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime { error: anyhow::Error, output: PathBuf },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn path(p: &std::path::Path) -> Value {
    Value::String(p.display().to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepareData { .. } => "prepare-data",
            Command::PretrainFidelity { .. } => "pretrain-fidelity",
            Command::PretrainAe { .. } => "pretrain-ae",
            Command::TrainSr { .. } => "train-sr",
            Command::Eval { .. } => "eval",
            Command::Diagnose { .. } => "diagnose",
            Command::SeveLab { .. } => "seve-lab",
            Command::Repro { .. } => "repro",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::PrepareData { common, .. }
            | Command::PretrainFidelity { common, .. }
            | Command::PretrainAe { common, .. }
            | Command::TrainSr { common, .. }
            | Command::Eval { common, .. }
            | Command::Diagnose { common, .. }
            | Command::SeveLab { common }
            | Command::Repro { common, .. } => common,
        }
    }

    /// Subcommand flags as config overrides, applied after `--set`.
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let int = |v: Option<u64>| v.map(|v| Value::Integer(v as i64));
        match self {
            Command::PrepareData { source, synthetic, root, scale, .. } => {
                put("data.source", source.as_deref().map(path));
                put("data.synthetic_count", int(synthetic.map(|v| v as u64)));
                put("data.root", root.as_deref().map(path));
                put("data.scale", int(scale.map(|v| v as u64)));
            }
            Command::PretrainFidelity { dataset, steps, .. } => {
                put("data.root", dataset.as_deref().map(path));
                put("fidelity.steps", int(*steps));
            }
            Command::PretrainAe { dataset, steps, decoder_init, .. } => {
                put("data.root", dataset.as_deref().map(path));
                put("ae.steps", int(*steps));
                put("ae.decoder_init", decoder_init.as_deref().map(path));
            }
            Command::TrainSr { dataset, mode, ae, init, steps, resume, .. } => {
                put("data.root", dataset.as_deref().map(path));
                put("train.mode", mode.clone().map(Value::String));
                put("train.ae_checkpoint", ae.as_deref().map(path));
                put("train.generator_init", init.as_deref().map(path));
                put("train.net.steps", int(*steps));
                put("train.resume", resume.then_some(Value::Boolean(true)));
            }
            Command::Eval { dataset, generators, ae, .. } => {
                put("data.root", dataset.as_deref().map(path));
                if !generators.is_empty() {
                    put("eval.generators", Some(Value::Array(generators.iter().map(|g| path(g)).collect())));
                }
                put("eval.ae_checkpoint", ae.as_deref().map(path));
            }
            Command::Diagnose { dataset, generator, ae, image, .. } => {
                put("data.root", dataset.as_deref().map(path));
                put("eval.generators", generator.as_deref().map(|g| Value::Array(vec![path(g)])));
                put("eval.ae_checkpoint", ae.as_deref().map(path));
                put("eval.image", image.as_deref().map(path));
            }
            Command::SeveLab { .. } => {}
            Command::Repro { images, .. } => put("data.source", images.as_deref().map(path)),
        }
        o
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let c = self.common();
        let mut overrides = Vec::new();
        if let Some(p) = &c.preset {
            overrides.push(("preset".to_string(), Value::String(p.clone())));
        }
        if let Some(s) = c.seed {
            overrides.push(("seed".to_string(), Value::Integer(s as i64)));
        }
        if let Some(o) = &c.out {
            overrides.push(("output".to_string(), path(o)));
        }
        for s in &c.set {
            overrides.push(parse_override(s)?);
        }
        overrides.extend(self.overrides());
        let default_out = PathBuf::from("runs").join(self.name());
        Ok(RunConfig::load(c.config.as_deref(), &overrides, default_out)?)
    }
}

fn configure_threads(cfg: &RunConfig) -> usize {
    let requested = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0);
    let threads = match (cfg.deterministic, requested) {
        (true, _) => 1,
        (false, Some(n)) => n,
        (false, None) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    // candle sizes its matmul thread pool from this variable.
    std::env::set_var("RAYON_NUM_THREADS", threads.to_string());
    threads
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = cli.command.resolve()?;
    let threads = configure_threads(&cfg);
    let name = cli.command.name();
    let output = cfg.output.clone();
    commands::dispatch(&cli.command, &cfg, threads).map_err(|e| match e {
        commands::CmdError::Config(msg) => Failure::Config(msg),
        commands::CmdError::Runtime(error) => Failure::Runtime { error: error.context(format!("{name} failed")), output },
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime { error, output }) => {
            let log = output.join("error.log");
            let text = format!("{error:?}\n");
            let written = std::fs::create_dir_all(&output).and_then(|_| std::fs::write(&log, &text)).is_ok();
            eprintln!("error: {error:#}");
            if written {
                eprintln!("diagnostics: {}", log.display());
            }
            ExitCode::from(3)
        }
    }
}
