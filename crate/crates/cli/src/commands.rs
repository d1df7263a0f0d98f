use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use aesr_core::autoencoder::{load_ae, pretrain_ae, save_ae, AEState, AeLogRow};
use aesr_core::data::{audit_dataset, prepare_dataset, step_edge_image, write_synthetic_folder, PairedDataset, PrepareConfig, Split};
use aesr_core::eval::{
    evaluate_dataset, export_loss_maps, mean_metric, pd_curve, spectral_report, super_resolve, write_metrics_csv,
    write_pd_csv, EvalOptions,
};
use aesr_core::networks::{build_extractor, load_checkpoint, save_checkpoint, ModelState};
use aesr_core::recipe::{encoder_lr_gap, run_repro, summary_path};
use aesr_core::rng::{purpose, step_rng};
use aesr_core::seve::{decompose_se_ve, run_toy_experiment, DiscreteJointDistribution, ToyConfig, ToyInverseProblem, ToyLossMode};
use aesr_core::tensor::load_png;
use aesr_core::train::{pretrain_fidelity_generator, train_sr, FidelityLogRow, GENERATOR_FILE, LOSS_LOG};
use anyhow::Context;
use candle_core::DType;
use log::info;
use serde::Serialize;

use crate::config::{RunConfig, SNAPSHOT_FILE};
use crate::Command;

pub const RUN_INFO_FILE: &str = "run.json";
pub const AE_FILE: &str = "ae.ckpt";

#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<aesr_core::Error> for CmdError {
    fn from(e: aesr_core::Error) -> Self {
        match e {
            aesr_core::Error::Config(msg) => CmdError::Config(msg),
            other => CmdError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        CmdError::Runtime(e)
    }
}

type Result<T> = std::result::Result<T, CmdError>;

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'static str,
    version: &'static str,
    git_describe: &'static str,
    subcommand: &'a str,
    seed: u64,
    deterministic: bool,
    threads: usize,
    argv: Vec<String>,
}

/// Creates the run directory with the config snapshot and run metadata.
fn start_run(cfg: &RunConfig, subcommand: &str, threads: usize) -> Result<()> {
    let out = &cfg.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(SNAPSHOT_FILE), cfg.to_toml()).context("writing config snapshot")?;
    let info = RunInfo {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        git_describe: env!("AESR_GIT_DESCRIBE"),
        subcommand,
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        threads,
        argv: std::env::args().collect(),
    };
    let json = serde_json::to_vec_pretty(&info).context("serializing run info")?;
    fs::write(out.join(RUN_INFO_FILE), json).context("writing run info")?;
    info!("run directory {}", out.display());
    Ok(())
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{header}").context("writing csv")?;
    for l in lines {
        writeln!(f, "{l}").context("writing csv")?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).context("serializing json")?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn dataset_root(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.data
        .root
        .clone()
        .ok_or_else(|| CmdError::Config("data.root is required (or pass --dataset)".into()))
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| CmdError::Config(format!("{key} is required")))
}

fn log_every(steps: u64) -> u64 {
    (steps / 20).max(1)
}

/// Source folder, or synthetic images written under the run directory.
fn source_images(cfg: &RunConfig) -> Result<PathBuf> {
    match &cfg.data.source {
        Some(p) => Ok(p.clone()),
        None => {
            let dir = cfg.output.join("images");
            write_synthetic_folder(&dir, cfg.data.synthetic_count, cfg.data.synthetic_size, cfg.seed)?;
            info!("wrote {} synthetic images to {}", cfg.data.synthetic_count, dir.display());
            Ok(dir)
        }
    }
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig, threads: usize) -> Result<()> {
    start_run(cfg, cmd.name(), threads)?;
    match cmd {
        Command::PrepareData { .. } => prepare(cfg),
        Command::PretrainFidelity { .. } => fidelity(cfg),
        Command::PretrainAe { .. } => autoencoder(cfg),
        Command::TrainSr { .. } => train(cfg),
        Command::Eval { .. } => eval(cfg),
        Command::Diagnose { .. } => diagnose(cfg),
        Command::SeveLab { .. } => seve_lab(cfg),
        Command::Repro { .. } => repro(cfg),
    }
}

#[derive(Serialize)]
struct PrepareSummary {
    root: PathBuf,
    written: usize,
    verified: usize,
    cropped: Vec<String>,
    audited: usize,
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    let src = source_images(cfg)?;
    let root = cfg.data.root.clone().unwrap_or_else(|| cfg.output.join("data"));
    let pc = PrepareConfig { scale: cfg.data.scale, val_every: cfg.data.val_every };
    let report = prepare_dataset(&src, &root, &pc)?;
    let audited = audit_dataset(&root)?;
    println!("dataset {}: {} written, {} verified, {} audited", root.display(), report.written, report.verified, audited);
    write_json(
        &cfg.output.join("prepare.json"),
        &PrepareSummary { root, written: report.written, verified: report.verified, cropped: report.cropped, audited },
    )
}

fn fidelity(cfg: &RunConfig) -> Result<()> {
    let ds = PairedDataset::open(&dataset_root(cfg)?, Split::Train)?;
    let every = log_every(cfg.fidelity.steps);
    let (g, rows) = pretrain_fidelity_generator(&ds, &cfg.fidelity, |r| {
        if r.step % every == 0 {
            info!("fidelity step {} pix {:.5}", r.step, r.pix);
        }
    })?;
    let ckpt = cfg.output.join(GENERATOR_FILE);
    save_checkpoint(&g, &ckpt)?;
    write_lines(&cfg.output.join(LOSS_LOG), FidelityLogRow::CSV_HEADER, rows.iter().map(|r| r.csv()))?;
    println!("generator {}", ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct AeReport {
    checksum: String,
    rec_hr_first: f64,
    rec_hr_last: f64,
    encoder_lr_l1: Option<f64>,
    bicubic_lr_l1: Option<f64>,
}

fn autoencoder(cfg: &RunConfig) -> Result<()> {
    let root = dataset_root(cfg)?;
    let ds = PairedDataset::open(&root, Split::Train)?;
    let every = log_every(cfg.ae.steps);
    let (ae, rows) = pretrain_ae(&ds, &cfg.ae, |r| {
        if r.step % every == 0 {
            info!("ae step {} rec_lr {:.5} rec_hr {:.5}", r.step, r.rec_lr, r.rec_hr);
        }
    })?;
    let ckpt = cfg.output.join(AE_FILE);
    save_ae(&ae, &ckpt)?;
    write_lines(&cfg.output.join(LOSS_LOG), AeLogRow::CSV_HEADER, rows.iter().map(|r| r.csv()))?;
    let val = PairedDataset::open(&root, Split::Val)?;
    let gap = if val.is_empty() { None } else { Some(encoder_lr_gap(&ae, &val)?) };
    write_json(
        &cfg.output.join("ae_report.json"),
        &AeReport {
            checksum: ae.checksum()?,
            rec_hr_first: rows.first().map_or(f64::NAN, |r| r.rec_hr),
            rec_hr_last: rows.last().map_or(f64::NAN, |r| r.rec_hr),
            encoder_lr_l1: gap.map(|g| g.0),
            bicubic_lr_l1: gap.map(|g| g.1),
        },
    )?;
    println!("autoencoder {}", ckpt.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let run = cfg.train_run(&dataset_root(cfg)?);
    run.validate()?;
    let every = log_every(run.steps);
    let outcome = train_sr(&run, |b| {
        if b.step % every == 0 {
            info!("sr step {} total {:.5}", b.step, b.total);
        }
    })?;
    println!("checkpoint {}", outcome.final_checkpoint.display());
    Ok(())
}

fn load_optional_ae(path: &Option<PathBuf>) -> Result<Option<AEState>> {
    Ok(match path {
        Some(p) => Some(load_ae(p)?),
        None => None,
    })
}

fn checkpoint_id(path: &Path) -> String {
    path.display().to_string()
}

fn eval(cfg: &RunConfig) -> Result<()> {
    if cfg.eval.generators.is_empty() {
        return Err(CmdError::Config("eval.generators is empty (pass --generator)".into()));
    }
    let val = PairedDataset::open(&dataset_root(cfg)?, Split::Val)?;
    let ae = load_optional_ae(&cfg.eval.ae_checkpoint)?;
    let opts = EvalOptions { quantize: cfg.eval.quantize };
    let mut gens: Vec<(String, ModelState)> = Vec::new();
    for p in &cfg.eval.generators {
        gens.push((checkpoint_id(p), load_checkpoint(p)?));
    }
    let mut records = Vec::new();
    for (id, g) in &gens {
        let r = evaluate_dataset(g, ae.as_ref().map(|a| a as _), &val, "val", id, opts)?;
        let mean = |m: &str| mean_metric(&r, m).unwrap_or(f64::NAN);
        println!(
            "{id}: psnr {:.3} ssim {:.4} lr_psnr {:.3} ae_psnr {:.3}",
            mean("psnr"),
            mean("ssim"),
            mean("lr_psnr"),
            mean("ae_psnr")
        );
        records.extend(r);
    }
    write_metrics_csv(&records, &cfg.output.join("metrics.csv"))?;
    if gens.len() > 1 {
        let ext = build_extractor(&cfg.train.net.extractor)?;
        let refs: Vec<(String, &ModelState)> = gens.iter().map(|(id, g)| (id.clone(), g)).collect();
        write_pd_csv(&pd_curve(&refs, &val, &ext)?, &cfg.output.join("pd_curve.csv"))?;
    }
    Ok(())
}

fn diagnose(cfg: &RunConfig) -> Result<()> {
    let ae = load_ae(require(&cfg.eval.ae_checkpoint, "eval.ae_checkpoint")?)?;
    if let Some(gpath) = cfg.eval.generators.first() {
        let val = PairedDataset::open(&dataset_root(cfg)?, Split::Val)?;
        let (hr, lr) = match (val.hr.first(), val.lr.first()) {
            (Some(h), Some(l)) => (h, l),
            _ => return Err(CmdError::Config("the validation split is empty".into())),
        };
        let g = load_checkpoint(gpath)?;
        let sr = super_resolve(&g, lr)?;
        let maps = export_loss_maps(&sr, hr, &ae, &cfg.output.join("loss_maps"))?;
        println!("loss maps: mean pixel {:.5}, mean aesop {:.5}", maps.mean_pixel, maps.mean_aesop);
    }
    let img = match &cfg.eval.image {
        Some(p) => load_png(p, DType::F64)?,
        None => step_edge_image(cfg.eval.spectral_size, cfg.eval.spectral_size)?,
    };
    let report = spectral_report(&img, &ae, cfg.eval.cutoff)?;
    report.write(&cfg.output.join("spectral"))?;
    println!(
        "high-frequency retention above {}: autoencoder {:.4}, ideal low-pass {:.2e}",
        report.cutoff, report.retention_ae, report.retention_lowpass
    );
    Ok(())
}

fn seve_lab(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.seve;
    let mut rng = step_rng(cfg.seed, purpose::SEVE, 0);
    let mut lines = Vec::with_capacity(s.joints);
    for i in 0..s.joints {
        let joint = DiscreteJointDistribution::random(&mut rng, s.max_support, s.max_dim)?;
        let r = decompose_se_ve(&joint, s.loss)?;
        let (cse, cve) = r.closed.as_ref().map_or((f64::NAN, f64::NAN), |c| {
            (c.se, c.prediction_variance - 2.0 * c.cross_covariance)
        });
        lines.push(format!(
            "{i},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            joint.dim(),
            joint.support_y().len(),
            joint.support_yhat().len(),
            r.se,
            r.ve,
            r.expected_loss,
            r.irreducible,
            cse,
            cve
        ));
    }
    write_lines(
        &cfg.output.join("seve.csv"),
        "joint,dim,support_y,support_yhat,se,ve,expected_loss,irreducible,closed_se,closed_ve",
        lines,
    )?;
    println!("{} joints decomposed ({:?})", s.joints, s.loss);
    let problem = ToyInverseProblem::bimodal();
    let toy = ToyConfig { steps: s.toy_steps, batch: s.toy_batch, lr: s.toy_lr, seed: cfg.seed, ..ToyConfig::default() };
    for mode in [ToyLossMode::Pixel, ToyLossMode::AesopAnalytic] {
        let report = run_toy_experiment(&problem, mode, &toy)?;
        let path = cfg.output.join(format!("toy_{}.csv", mode.name()));
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        report.write_csv(std::io::BufWriter::new(f)).context("writing toy csv")?;
        println!("{}", report.summary());
    }
    Ok(())
}

fn repro(cfg: &RunConfig) -> Result<()> {
    let images = source_images(cfg)?;
    let plan = cfg.repro_plan();
    let start = std::time::Instant::now();
    let summary = run_repro(&plan, &images, &cfg.output, |stage| {
        info!("[{:.0}s] {stage}", start.elapsed().as_secs_f64())
    })?;
    for r in &summary.rows {
        println!("{:34} baseline {:>12.5}  aesop {:>12.5}  {}", r.quantity, r.baseline, r.aesop, r.note);
    }
    println!("summary {}", summary_path(&cfg.output).display());
    Ok(())
}
