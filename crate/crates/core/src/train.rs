//! Fidelity pretraining and the two-mode SR training loop.
//!
//! Run directory written by [`train_sr`]:
//!
//! ```text
//! config.json                     snapshot of the TrainRunConfig
//! losses.csv                      one LossBreakdown row per step
//! checkpoints/step_NNNNNN/        generator, discriminator, both Adam states, trainer.json
//! samples/step_NNNNNN.png         bicubic(LR) | SR | HR for the first patch of the batch
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{load_ae, AEState, AutoEncoder};
use crate::data::{sample_patch_batch, PairedDataset, SamplerConfig, Split};
use crate::error::{Error, IoContext, Result};
use crate::losses::{total_loss, LossBreakdown, LossInputs, LossMode, Norm};
use crate::networks::{
    build_discriminator, build_extractor, build_generator, load_checkpoint_for, save_checkpoint, Adam,
    DiscriminatorConfig, ExtractorConfig, GeneratorConfig, GeneratorInit, ModelConfig, ModelState,
};
use crate::rng::{purpose, step_rng};
use crate::tensor::{bicubic_upsample, save_png, ColorSpace, ImageTensor, ResampleSpec};

pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_LOG: &str = "losses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";

fn scalar(t: &Tensor) -> Result<f64> {
    crate::losses::scalar(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub generator: GeneratorConfig,
    pub steps: u64,
    pub batch: usize,
    pub hr_patch: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityLogRow {
    pub step: u64,
    pub pix: f64,
}

impl FidelityLogRow {
    pub const CSV_HEADER: &'static str = "step,pix";

    pub fn csv(&self) -> String {
        format!("{},{:e}", self.step, self.pix)
    }
}

/// Trains a generator with the L1 pixel loss alone. The result initializes
/// both the SR generator and the autoencoder's decoder.
pub fn pretrain_fidelity_generator(
    ds: &PairedDataset,
    cfg: &FidelityConfig,
    mut on_step: impl FnMut(&FidelityLogRow),
) -> Result<(ModelState, Vec<FidelityLogRow>)> {
    if cfg.generator.scale != ds.scale {
        return Err(Error::Config(format!(
            "generator scale {} does not match dataset scale {}",
            cfg.generator.scale, ds.scale
        )));
    }
    let g = build_generator(&cfg.generator, GeneratorInit::Random { seed: cfg.seed })?;
    let mut opt = Adam::new(cfg.lr);
    let sampler = SamplerConfig { hr_patch: cfg.hr_patch, batch: cfg.batch, augment: cfg.augment };
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let batch = sample_patch_batch(ds, &sampler, &mut step_rng(cfg.seed, purpose::FIDELITY, step))?;
        let loss = Norm::L1.mean_distance(&g.forward(&batch.lr)?, &batch.hr)?;
        let row = FidelityLogRow { step, pix: scalar(&loss)? };
        if !row.pix.is_finite() {
            return Err(Error::NonFinite { step, detail: "fidelity pretraining pixel loss".into() });
        }
        opt.step(&g, &loss.backward()?)?;
        on_step(&row);
        rows.push(row);
    }
    let mut g = g;
    g.set_training_step(cfg.steps);
    Ok((g, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    pub loss: crate::losses::LossConfig,
    pub hr_patch: usize,
    pub batch: usize,
    pub steps: u64,
    /// Generator learning rate.
    pub lr: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub augment: bool,
    pub dataset: PathBuf,
    /// Required in aesop mode; optional otherwise.
    #[serde(default)]
    pub ae_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub generator_init: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub log_every: u64,
    pub ckpt_every: u64,
    /// Continue from the newest checkpoint in `out_dir` if there is one.
    #[serde(default)]
    pub resume: bool,
}

impl TrainRunConfig {
    pub fn scale(&self) -> usize {
        self.generator.scale
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        ModelConfig::Generator(self.generator.clone()).validate()?;
        ModelConfig::Discriminator(self.discriminator.clone()).validate()?;
        if self.discriminator.patch != self.hr_patch {
            return Err(Error::Config(format!(
                "discriminator patch {} must equal hr_patch {}",
                self.discriminator.patch, self.hr_patch
            )));
        }
        if self.batch == 0 || self.log_every == 0 || self.ckpt_every == 0 {
            return Err(Error::Config("batch, log_every and ckpt_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.loss.mode == LossMode::Aesop && self.ae_checkpoint.is_none() {
            return Err(Error::Config("aesop mode needs ae_checkpoint".into()));
        }
        Ok(())
    }

    /// Fields that must agree between a run and the checkpoint it resumes.
    fn resume_key(&self) -> Self {
        Self { steps: 0, resume: false, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainerMeta {
    step: u64,
    ae_checksum: Option<String>,
    extractor_checksum: String,
    config: TrainRunConfig,
}

/// Result of [`train_sr`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub generator: ModelState,
    /// Rows of the steps run by this process (after any resume point).
    pub log: Vec<LossBreakdown>,
}

pub fn checkpoint_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:06}"))
}

/// Newest complete checkpoint directory, if any.
pub fn latest_checkpoint(out_dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let root = out_dir.join(CHECKPOINT_DIR);
    if !root.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&root).at(&root)? {
        let path = entry.at(&root)?.path();
        let Some(step) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if path.join("trainer.json").exists() && best.as_ref().is_none_or(|(s, _)| step > *s) {
            best = Some((step, path));
        }
    }
    Ok(best)
}

pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub lr: Tensor,
    pub hr: Tensor,
    /// Generator output before the update, detached.
    pub sr: Tensor,
}

/// Owns all mutable training state. [`SrTrainer::step`] is one generator
/// update followed by one discriminator update.
pub struct SrTrainer {
    cfg: TrainRunConfig,
    ds: PairedDataset,
    pub generator: ModelState,
    pub discriminator: ModelState,
    pub extractor: ModelState,
    pub ae: Option<AEState>,
    ae_checksum: Option<String>,
    extractor_checksum: String,
    opt_g: Adam,
    opt_d: Adam,
    step: u64,
    last_checkpoint: Option<PathBuf>,
}

impl SrTrainer {
    pub fn new(cfg: &TrainRunConfig) -> Result<Self> {
        cfg.validate()?;
        let ds = PairedDataset::open(&cfg.dataset, Split::Train)?;
        if ds.scale != cfg.scale() {
            return Err(Error::Config(format!(
                "generator scale {} does not match dataset scale {}",
                cfg.scale(),
                ds.scale
            )));
        }
        let ae = match &cfg.ae_checkpoint {
            Some(p) => {
                let ae = load_ae(p)?;
                if !ae.is_frozen() {
                    return Err(Error::AeNotFrozen);
                }
                if ae.scale() != cfg.scale() {
                    return Err(Error::Config(format!(
                        "autoencoder scale {} does not match run scale {}",
                        ae.scale(),
                        cfg.scale()
                    )));
                }
                Some(ae)
            }
            None => None,
        };
        let ae_checksum = ae.as_ref().map(|a| a.checksum()).transpose()?;
        let extractor = build_extractor(&cfg.extractor)?;
        let extractor_checksum = extractor.checksum()?;

        let resume_from = if cfg.resume { latest_checkpoint(&cfg.out_dir)? } else { None };
        let mut trainer = match resume_from {
            Some((step, dir)) => {
                let meta: TrainerMeta = serde_json::from_slice(&fs::read(dir.join("trainer.json")).at(&dir)?)?;
                if meta.config.resume_key() != cfg.resume_key() {
                    return Err(Error::Config(format!(
                        "{} was written by a different configuration",
                        dir.display()
                    )));
                }
                if meta.ae_checksum != ae_checksum {
                    return Err(Error::FreezeViolation {
                        name: "autoencoder".into(),
                        before: meta.ae_checksum.unwrap_or_default(),
                        after: ae_checksum.unwrap_or_default(),
                    });
                }
                log::info!("resuming from {} (step {step})", dir.display());
                Self {
                    generator: load_checkpoint_for(
                        &dir.join(GENERATOR_FILE),
                        &ModelConfig::Generator(cfg.generator.clone()),
                    )?,
                    discriminator: load_checkpoint_for(
                        &dir.join(DISCRIMINATOR_FILE),
                        &ModelConfig::Discriminator(cfg.discriminator.clone()),
                    )?,
                    opt_g: Adam::load(&dir.join("adam_g.ckpt"))?,
                    opt_d: Adam::load(&dir.join("adam_d.ckpt"))?,
                    step,
                    last_checkpoint: Some(dir),
                    cfg: cfg.clone(),
                    ds,
                    extractor,
                    ae,
                    ae_checksum,
                    extractor_checksum,
                }
            }
            None => {
                let init = match &cfg.generator_init {
                    Some(p) => GeneratorInit::Pretrained(p),
                    None => GeneratorInit::Random { seed: cfg.seed },
                };
                Self {
                    generator: build_generator(&cfg.generator, init)?,
                    discriminator: build_discriminator(&cfg.discriminator, cfg.seed.wrapping_add(2))?,
                    opt_g: Adam::new(cfg.lr),
                    opt_d: Adam::new(cfg.lr_d),
                    step: 0,
                    last_checkpoint: None,
                    cfg: cfg.clone(),
                    ds,
                    extractor,
                    ae,
                    ae_checksum,
                    extractor_checksum,
                }
            }
        };
        trainer.generator.set_training_step(trainer.step);
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.cfg
    }

    /// Steps completed so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig { hr_patch: self.cfg.hr_patch, batch: self.cfg.batch, augment: self.cfg.augment }
    }

    /// Fails with [`Error::FreezeViolation`] if the AE or extractor changed.
    pub fn verify_frozen(&self) -> Result<()> {
        if let (Some(ae), Some(before)) = (&self.ae, &self.ae_checksum) {
            let after = ae.checksum()?;
            if &after != before {
                return Err(Error::FreezeViolation { name: "autoencoder".into(), before: before.clone(), after });
            }
        }
        let after = self.extractor.checksum()?;
        if after != self.extractor_checksum {
            return Err(Error::FreezeViolation {
                name: "extractor".into(),
                before: self.extractor_checksum.clone(),
                after,
            });
        }
        Ok(())
    }

    /// Generator update on one batch. Returns the breakdown (without `adv_d`)
    /// and the detached SR output.
    pub fn generator_step(&mut self, lr: &Tensor, hr: &Tensor) -> Result<(LossBreakdown, Tensor)> {
        let step = self.step;
        let sr = self.generator.forward(lr)?;
        let ae_hr = match &self.ae {
            Some(ae) if self.cfg.loss.effective_aesop() > 0.0 => Some(ae.autoencode(hr)?.detach()),
            _ => None,
        };
        let aux = LossInputs {
            ae: self.ae.as_ref().map(|a| a as &dyn AutoEncoder),
            ae_hr: ae_hr.as_ref(),
            extractor: Some(&self.extractor),
            discriminator: Some(&self.discriminator),
        };
        let (total, mut b) = total_loss(&self.cfg.loss, &sr, hr, aux)?;
        b.step = step;
        if !b.is_finite() {
            return Err(self.non_finite(step, format!("{b:?}")));
        }
        self.opt_g.step(&self.generator, &total.backward()?)?;
        Ok((b, sr.detach()))
    }

    /// Discriminator update on real `hr` and fake `sr` (detached). Returns `d_loss`.
    pub fn discriminator_step(&mut self, hr: &Tensor, sr: &Tensor) -> Result<f64> {
        let real = self.discriminator.forward(hr)?;
        let fake = self.discriminator.forward(&sr.detach())?;
        let d_loss = crate::losses::relativistic_losses(&real, &fake)?.d_loss;
        let v = scalar(&d_loss)?;
        if !v.is_finite() {
            return Err(self.non_finite(self.step, format!("discriminator loss {v}")));
        }
        self.opt_d.step(&self.discriminator, &d_loss.backward()?)?;
        Ok(v)
    }

    fn non_finite(&self, step: u64, detail: String) -> Error {
        let last = match &self.last_checkpoint {
            Some(p) => format!("last good checkpoint {}", p.display()),
            None => "no checkpoint written yet".into(),
        };
        Error::NonFinite { step, detail: format!("{detail}; {last}") }
    }

    /// One full training step. The discriminator is skipped when the
    /// adversarial term is disabled.
    pub fn step(&mut self) -> Result<StepOutput> {
        let mut rng = step_rng(self.cfg.seed, purpose::SR_TRAIN, self.step);
        let batch = sample_patch_batch(&self.ds, &self.sampler(), &mut rng)?;
        let (mut b, sr) = self.generator_step(&batch.lr, &batch.hr)?;
        if self.cfg.loss.lambda_adv > 0.0 {
            b.adv_d = self.discriminator_step(&batch.hr, &sr)?;
        }
        self.step += 1;
        self.generator.set_training_step(self.step);
        self.discriminator.set_training_step(self.step);
        Ok(StepOutput { breakdown: b, lr: batch.lr, hr: batch.hr, sr })
    }

    /// Verifies the freeze contract, then writes all state for the current step.
    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        self.verify_frozen()?;
        let dir = checkpoint_dir(&self.cfg.out_dir, self.step);
        fs::create_dir_all(&dir).at(&dir)?;
        save_checkpoint(&self.generator, &dir.join(GENERATOR_FILE))?;
        save_checkpoint(&self.discriminator, &dir.join(DISCRIMINATOR_FILE))?;
        self.opt_g.save(&dir.join("adam_g.ckpt"))?;
        self.opt_d.save(&dir.join("adam_d.ckpt"))?;
        let meta = TrainerMeta {
            step: self.step,
            ae_checksum: self.ae_checksum.clone(),
            extractor_checksum: self.extractor_checksum.clone(),
            config: self.cfg.clone(),
        };
        // Written last: its presence marks the checkpoint complete.
        let path = dir.join("trainer.json");
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).at(&path)?;
        self.last_checkpoint = Some(dir.clone());
        Ok(dir)
    }
}

fn open_loss_log(out_dir: &Path, keep_before: u64) -> Result<fs::File> {
    let path = out_dir.join(LOSS_LOG);
    let mut text = format!("{}\n", LossBreakdown::CSV_HEADER);
    if keep_before > 0 && path.exists() {
        let old = fs::read_to_string(&path).at(&path)?;
        for line in old.lines().skip(1) {
            let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
            if step.is_some_and(|s| s < keep_before) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    fs::write(&path, text).at(&path)?;
    fs::OpenOptions::new().append(true).open(&path).at(&path)
}

fn save_sample(path: &Path, out: &StepOutput, scale: usize) -> Result<()> {
    let first = |t: &Tensor| -> Result<Tensor> { Ok(t.narrow(0, 0, 1)?.squeeze(0)?) };
    let lr0 = ImageTensor::new(first(&out.lr)?, ColorSpace::Rgb)?;
    let up = bicubic_upsample(&lr0, &ResampleSpec::bicubic(scale))?;
    let dtype = up.dtype();
    let grid = Tensor::cat(
        &[up.tensor(), &first(&out.sr)?.to_dtype(dtype)?, &first(&out.hr)?.to_dtype(dtype)?],
        2,
    )?;
    save_png(&ImageTensor::new(grid, ColorSpace::Rgb)?, path)
}

/// Runs (or resumes) training to `cfg.steps`, checkpointing every
/// `ckpt_every` steps and at the end.
pub fn train_sr(cfg: &TrainRunConfig, mut on_step: impl FnMut(&LossBreakdown)) -> Result<TrainOutcome> {
    let mut trainer = SrTrainer::new(cfg)?;
    fs::create_dir_all(cfg.out_dir.join("samples")).at(&cfg.out_dir)?;
    let snapshot = cfg.out_dir.join(CONFIG_FILE);
    fs::write(&snapshot, serde_json::to_vec_pretty(cfg)?).at(&snapshot)?;
    let mut csv = open_loss_log(&cfg.out_dir, trainer.steps_done())?;
    let mut log = Vec::new();
    while trainer.steps_done() < cfg.steps {
        let out = trainer.step()?;
        let b = out.breakdown;
        writeln!(csv, "{}", b.csv()).at(cfg.out_dir.join(LOSS_LOG))?;
        on_step(&b);
        log.push(b);
        let done = trainer.steps_done();
        if done % cfg.log_every == 0 {
            log::info!("step {done}: total {:.5}", b.total);
            let path = cfg.out_dir.join("samples").join(format!("step_{done:06}.png"));
            save_sample(&path, &out, cfg.scale())?;
        }
        if done % cfg.ckpt_every == 0 || done == cfg.steps {
            trainer.save_checkpoint()?;
        }
    }
    if latest_checkpoint(&cfg.out_dir)?.map(|c| c.0) != Some(trainer.steps_done()) {
        trainer.save_checkpoint()?;
    }
    csv.flush().at(cfg.out_dir.join(LOSS_LOG))?;
    let final_checkpoint = checkpoint_dir(&cfg.out_dir, trainer.steps_done());
    Ok(TrainOutcome { final_checkpoint, generator: trainer.generator, log })
}
