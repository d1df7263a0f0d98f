//! Presets and the end-to-end reproduction recipe: prepare data, fidelity
//! pretraining, AE pretraining, paired baseline/aesop SR runs, evaluation
//! and diagnostics.
//!
//! Output layout under the run root:
//!
//! ```text
//! plan.json
//! data/                      prepared dataset
//! fidelity/                  generator.ckpt, losses.csv
//! ae/                        ae.ckpt, losses.csv
//! baseline/, aesop/          train_sr run directories
//! eval/                      metrics.csv, pd_curve.csv, loss_maps/, spectral/
//! summary.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{pretrain_ae, save_ae, AePretrainConfig, AeLogRow};
use crate::data::{prepare_dataset, step_edge_image, PairedDataset, PrepareConfig, Split};
use crate::error::{Error, IoContext, Result};
use crate::eval::{
    evaluate_dataset, export_loss_maps, mean_metric, pd_curve, spectral_report, super_resolve,
    write_metrics_csv, write_pd_csv, EvalOptions, DEFAULT_CUTOFF,
};
use crate::losses::{LossBreakdown, LossConfig};
use crate::networks::{
    build_extractor, load_checkpoint, save_checkpoint, DiscriminatorConfig, EncoderConfig, ExtractorConfig,
    GeneratorConfig,
};
use crate::train::{
    pretrain_fidelity_generator, train_sr, FidelityConfig, FidelityLogRow, TrainRunConfig, GENERATOR_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Smallest networks at full step counts; what the acceptance suite runs.
    Tiny,
    /// Desk-scale networks and step counts.
    Desk,
    /// Full-scale constants (not runnable on a CPU in reasonable time).
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown preset `{other}` (tiny, desk, full)"))),
        }
    }
}

/// SR training settings shared by the paired runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrTemplate {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub extractor: ExtractorConfig,
    pub hr_patch: usize,
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub augment: bool,
    pub log_every: u64,
    pub ckpt_every: u64,
}

impl SrTemplate {
    pub fn run_config(
        &self,
        loss: LossConfig,
        dataset: &Path,
        ae: Option<&Path>,
        init: Option<&Path>,
        out_dir: &Path,
    ) -> TrainRunConfig {
        TrainRunConfig {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            extractor: self.extractor.clone(),
            loss,
            hr_patch: self.hr_patch,
            batch: self.batch,
            steps: self.steps,
            lr: self.lr,
            lr_d: self.lr_d,
            seed: self.seed,
            augment: self.augment,
            dataset: dataset.to_path_buf(),
            ae_checkpoint: ae.map(Path::to_path_buf),
            generator_init: init.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
            log_every: self.log_every,
            ckpt_every: self.ckpt_every,
            resume: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproPlan {
    pub preset: Preset,
    pub prepare: PrepareConfig,
    pub fidelity: FidelityConfig,
    pub ae: AePretrainConfig,
    pub sr: SrTemplate,
    pub baseline: LossConfig,
    pub aesop: LossConfig,
    pub spectral_cutoff: f64,
    /// Side of the step-edge test image used for the spectral report.
    pub spectral_size: usize,
}

impl Preset {
    pub fn plan(self, scale: usize, seed: u64) -> ReproPlan {
        let (generator, rrdb_channels, disc_nf, patch, batch, ae_patch, ae_batch, fid_steps, ae_steps, sr_steps) =
            match self {
                Preset::Tiny => (
                    GeneratorConfig { num_rrdb_blocks: 1, base_channels: 16, growth_channels: 8, scale },
                    16,
                    8,
                    32,
                    4,
                    32,
                    4,
                    1000,
                    2000,
                    2000,
                ),
                Preset::Desk => (GeneratorConfig::desk(scale), 32, 16, 64, 8, 64, 8, 2000, 2000, 2000),
                Preset::Full => (
                    GeneratorConfig { num_rrdb_blocks: 23, base_channels: 64, growth_channels: 32, scale },
                    64,
                    64,
                    128,
                    16,
                    128,
                    16,
                    300_000,
                    100_000,
                    300_000,
                ),
            };
        let ae_lr = match self {
            Preset::Tiny | Preset::Desk => 5e-4,
            Preset::Full => 1e-4,
        };
        ReproPlan {
            preset: self,
            prepare: PrepareConfig { scale, val_every: 5 },
            fidelity: FidelityConfig {
                generator: generator.clone(),
                steps: fid_steps,
                batch,
                hr_patch: patch,
                lr: 2e-4,
                seed,
                augment: true,
            },
            ae: AePretrainConfig {
                encoder: EncoderConfig { scale, rrdb_channels },
                decoder: generator.clone(),
                steps: ae_steps,
                batch: ae_batch,
                hr_patch: ae_patch,
                lr: ae_lr,
                seed: seed.wrapping_add(10),
                augment: true,
                decoder_init: None,
            },
            sr: SrTemplate {
                generator,
                discriminator: DiscriminatorConfig { base_channels: disc_nf, patch },
                extractor: ExtractorConfig::default(),
                hr_patch: patch,
                batch,
                steps: sr_steps,
                lr: 1e-4,
                lr_d: 1e-4,
                seed: seed.wrapping_add(20),
                augment: true,
                log_every: (sr_steps / 10).max(1),
                ckpt_every: (sr_steps / 4).max(1),
            },
            baseline: LossConfig::baseline(),
            aesop: LossConfig::aesop(),
            spectral_cutoff: DEFAULT_CUTOFF,
            spectral_size: 64,
        }
    }
}

/// One summary line: a quantity for both runs (or one value in `baseline`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub baseline: f64,
    pub aesop: f64,
    pub note: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReproSummary {
    pub rows: Vec<SummaryRow>,
    pub fidelity_log: Vec<FidelityLogRow>,
    pub ae_log: Vec<AeLogRow>,
    pub baseline_log: Vec<LossBreakdown>,
    pub aesop_log: Vec<LossBreakdown>,
    pub ae_checksum_before: String,
    pub ae_checksum_after: String,
    pub extractor_checksum_before: String,
    pub extractor_checksum_after: String,
    /// Held-out `mean |enc(HR) - LR|` and `mean |bicubic_down(HR) - LR|`.
    pub encoder_lr_l1: f64,
    pub bicubic_lr_l1: f64,
    pub retention_ae: f64,
    pub retention_lowpass: f64,
}

impl ReproSummary {
    pub fn row(&self, quantity: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";

fn write_csv(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut text = format!("{header}\n");
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text).at(path)
}

/// Mean L1 distance of the encoder output and of plain bicubic downscaling
/// to the stored LR images of `ds`.
pub fn encoder_lr_gap(ae: &crate::autoencoder::AEState, ds: &PairedDataset) -> Result<(f64, f64)> {
    use crate::tensor::{bicubic_downsample, ResampleSpec};
    let spec = ResampleSpec::bicubic(ds.scale);
    let (mut enc, mut bic, mut n) = (0.0, 0.0, 0usize);
    for (hr, lr) in ds.hr.iter().zip(&ds.lr) {
        let (z, _) = crate::autoencoder::ae_forward(ae, hr)?;
        let target = lr.to_vec_f64()?;
        let zv = z.to_vec_f64()?;
        let bv = bicubic_downsample(hr, &spec)?.to_vec_f64()?;
        for i in 0..target.len() {
            enc += (zv[i] - target[i]).abs();
            bic += (bv[i] - target[i]).abs();
        }
        n += target.len();
    }
    Ok((enc / n as f64, bic / n as f64))
}

/// Runs every stage on the PNG folder `images` and writes `out/summary.csv`.
pub fn run_repro(plan: &ReproPlan, images: &Path, out: &Path, mut progress: impl FnMut(&str)) -> Result<ReproSummary> {
    fs::create_dir_all(out).at(out)?;
    let plan_path = out.join("plan.json");
    fs::write(&plan_path, serde_json::to_vec_pretty(plan)?).at(&plan_path)?;
    let data = out.join("data");
    progress("prepare-data");
    prepare_dataset(images, &data, &plan.prepare)?;
    let train = PairedDataset::open(&data, Split::Train)?;
    let val = PairedDataset::open(&data, Split::Val)?;
    let mut summary = ReproSummary::default();

    progress("pretrain-fidelity");
    let fid_dir = out.join("fidelity");
    fs::create_dir_all(&fid_dir).at(&fid_dir)?;
    let (fid, rows) = pretrain_fidelity_generator(&train, &plan.fidelity, |_| {})?;
    let fid_ckpt = fid_dir.join(GENERATOR_FILE);
    save_checkpoint(&fid, &fid_ckpt)?;
    write_csv(&fid_dir.join("losses.csv"), FidelityLogRow::CSV_HEADER, rows.iter().map(|r| r.csv()))?;
    summary.fidelity_log = rows;

    progress("pretrain-ae");
    let ae_dir = out.join("ae");
    fs::create_dir_all(&ae_dir).at(&ae_dir)?;
    let ae_cfg = AePretrainConfig { decoder_init: Some(fid_ckpt.clone()), ..plan.ae.clone() };
    let (ae, rows) = pretrain_ae(&train, &ae_cfg, |_| {})?;
    let ae_ckpt = ae_dir.join("ae.ckpt");
    save_ae(&ae, &ae_ckpt)?;
    write_csv(&ae_dir.join("losses.csv"), AeLogRow::CSV_HEADER, rows.iter().map(|r| r.csv()))?;
    summary.ae_log = rows;
    summary.ae_checksum_before = ae.checksum()?;
    let extractor = build_extractor(&plan.sr.extractor)?;
    summary.extractor_checksum_before = extractor.checksum()?;
    (summary.encoder_lr_l1, summary.bicubic_lr_l1) = encoder_lr_gap(&ae, &val)?;

    progress("train-sr baseline");
    let base_cfg = plan.sr.run_config(plan.baseline.clone(), &data, Some(&ae_ckpt), Some(&fid_ckpt), &out.join("baseline"));
    summary.baseline_log = train_sr(&base_cfg, |_| {})?.log;
    progress("train-sr aesop");
    let aesop_cfg = plan.sr.run_config(plan.aesop.clone(), &data, Some(&ae_ckpt), Some(&fid_ckpt), &out.join("aesop"));
    let aesop_run = train_sr(&aesop_cfg, |_| {})?;
    summary.aesop_log = aesop_run.log;
    // Reload from disk: the trainer verified the same checksum at every checkpoint.
    summary.ae_checksum_after = crate::autoencoder::load_ae(&ae_ckpt)?.checksum()?;
    summary.extractor_checksum_after = extractor.checksum()?;

    progress("eval");
    let eval_dir = out.join("eval");
    fs::create_dir_all(&eval_dir).at(&eval_dir)?;
    let base_g = load_checkpoint(&crate::train::checkpoint_dir(&base_cfg.out_dir, plan.sr.steps).join(GENERATOR_FILE))?;
    let aesop_g = aesop_run.generator;
    let opts = EvalOptions::default();
    let mut records = evaluate_dataset(&fid, Some(&ae), &val, "val", "fidelity", opts)?;
    let base_rec = evaluate_dataset(&base_g, Some(&ae), &val, "val", "baseline", opts)?;
    let aesop_rec = evaluate_dataset(&aesop_g, Some(&ae), &val, "val", "aesop", opts)?;
    records.extend(base_rec.iter().cloned());
    records.extend(aesop_rec.iter().cloned());
    write_metrics_csv(&records, &eval_dir.join("metrics.csv"))?;
    for (metric, note) in [
        ("psnr", "luma PSNR, border s"),
        ("ssim", "luma SSIM, border s"),
        ("lr_psnr", "PSNR of degraded SR against the LR input"),
        ("ae_psnr", "PSNR between autoencoded SR and autoencoded HR"),
    ] {
        summary.rows.push(SummaryRow {
            quantity: metric.into(),
            baseline: mean_metric(&base_rec, metric).unwrap_or(f64::NAN),
            aesop: mean_metric(&aesop_rec, metric).unwrap_or(f64::NAN),
            note: note.into(),
        });
    }

    let mut checkpoints: Vec<(String, crate::networks::ModelState)> = Vec::new();
    for (tag, dir) in [("baseline", &base_cfg.out_dir), ("aesop", &aesop_cfg.out_dir)] {
        let mut steps: Vec<u64> = fs::read_dir(dir.join(crate::train::CHECKPOINT_DIR))
            .at(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_prefix("step_")?.parse().ok())
            .collect();
        steps.sort();
        for s in steps {
            let g = load_checkpoint(&crate::train::checkpoint_dir(dir, s).join(GENERATOR_FILE))?;
            checkpoints.push((format!("{tag}@{s}"), g));
        }
    }
    let refs: Vec<(String, &crate::networks::ModelState)> = checkpoints.iter().map(|(k, g)| (k.clone(), g)).collect();
    let pd = pd_curve(&refs, &val, &extractor)?;
    write_pd_csv(&pd, &eval_dir.join("pd_curve.csv"))?;

    let sr = super_resolve(&aesop_g, &val.lr[0])?.quantized()?;
    let maps = export_loss_maps(&sr, &val.hr[0], &ae, &eval_dir.join("loss_maps"))?;
    summary.rows.push(SummaryRow {
        quantity: "loss_map_mean_pixel_vs_aesop".into(),
        baseline: maps.mean_pixel,
        aesop: maps.mean_aesop,
        note: "first val image, aesop model: mean |sr-hr| (baseline column) vs mean AE-space residual".into(),
    });

    let edge = step_edge_image(plan.spectral_size, plan.spectral_size)?;
    let spec = spectral_report(&edge, &ae, plan.spectral_cutoff)?;
    spec.write(&eval_dir.join("spectral"))?;
    summary.retention_ae = spec.retention_ae;
    summary.retention_lowpass = spec.retention_lowpass;
    summary.rows.push(SummaryRow {
        quantity: "hf_retention".into(),
        baseline: spec.retention_lowpass,
        aesop: spec.retention_ae,
        note: "step edge: ideal low-pass (baseline column) vs trained AE".into(),
    });
    summary.rows.push(SummaryRow {
        quantity: "encoder_lr_l1".into(),
        baseline: summary.bicubic_lr_l1,
        aesop: summary.encoder_lr_l1,
        note: "held-out mean |bicubic_down(HR)-LR| (baseline column) vs |enc(HR)-LR|".into(),
    });
    let first = |log: &[AeLogRow]| log.first().map(|r| r.rec_hr).unwrap_or(f64::NAN);
    let last = |log: &[AeLogRow]| log.last().map(|r| r.rec_hr).unwrap_or(f64::NAN);
    summary.rows.push(SummaryRow {
        quantity: "ae_rec_hr".into(),
        baseline: first(&summary.ae_log),
        aesop: last(&summary.ae_log),
        note: "AE pretraining HR reconstruction L1: first step (baseline column) vs last step".into(),
    });
    write_csv(
        &out.join(SUMMARY_FILE),
        "quantity,baseline,aesop,note",
        summary
            .rows
            .iter()
            .map(|r| format!("{},{:e},{:e},\"{}\"", r.quantity, r.baseline, r.aesop, r.note)),
    )?;
    Ok(summary)
}

/// Path of the summary written by [`run_repro`].
pub fn summary_path(out: &Path) -> PathBuf {
    out.join(SUMMARY_FILE)
}
