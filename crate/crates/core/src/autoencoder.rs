//! The HR autoencoder: a lightweight encoder whose bottleneck has exactly the
//! LR dimensions, followed by an RRDB decoder.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_patch_batch, PairedDataset, SamplerConfig};
use crate::error::{Error, Result};
use crate::networks::{
    build_encoder, build_generator, fingerprint, read_tensor_file, write_tensor_file, Adam,
    EncoderConfig, GeneratorConfig, GeneratorInit, ModelConfig, ModelState, TensorFile,
};
use crate::rng::{purpose, step_rng};
use crate::tensor::{ColorSpace, ImageTensor};

/// Anything that maps an HR-sized batch to its auto-encoded version.
pub trait AutoEncoder {
    fn scale(&self) -> usize;
    fn is_frozen(&self) -> bool;
    /// `[N,3,H,W] -> [N,3,H,W]`.
    fn autoencode(&self, x: &Tensor) -> Result<Tensor>;
}

/// Test double that returns its input unchanged.
#[derive(Clone, Copy, Debug)]
pub struct IdentityAe {
    pub scale: usize,
}

impl AutoEncoder for IdentityAe {
    fn scale(&self) -> usize {
        self.scale
    }

    fn is_frozen(&self) -> bool {
        true
    }

    fn autoencode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

#[derive(Debug)]
pub struct AEState {
    pub encoder: ModelState,
    pub decoder: ModelState,
    pub pretrain_step: u64,
    /// Set once a pretraining run has finished.
    pub pretrained: bool,
}

impl AEState {
    pub fn new(encoder: ModelState, decoder: ModelState) -> Result<Self> {
        let (es, ds) = match (encoder.config(), decoder.config()) {
            (ModelConfig::Encoder(e), ModelConfig::Generator(d)) => (e.scale, d.scale),
            _ => {
                return Err(Error::InvalidArgument(
                    "autoencoder needs an encoder and a generator-type decoder".into(),
                ))
            }
        };
        if es != ds {
            return Err(Error::InvalidArgument(format!(
                "encoder scale {es} differs from decoder scale {ds}"
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            pretrain_step: 0,
            pretrained: false,
        })
    }

    pub fn random(enc: &EncoderConfig, dec: &GeneratorConfig, seed: u64) -> Result<Self> {
        Self::new(
            build_encoder(enc, seed)?,
            build_generator(dec, GeneratorInit::Random { seed: seed.wrapping_add(1) })?,
        )
    }

    /// Returns `(bottleneck, reconstruction)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = self.encoder.forward(x)?;
        let y = self.decoder.forward(&z)?;
        Ok((z, y))
    }

    /// Combined checksum of both halves.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.encoder.checksum()?.as_bytes());
        h.update(self.decoder.checksum()?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            encoder: self.encoder.to_dtype(dtype)?,
            decoder: self.decoder.to_dtype(dtype)?,
            pretrain_step: self.pretrain_step,
            pretrained: self.pretrained,
        })
    }
}

impl AutoEncoder for AEState {
    fn scale(&self) -> usize {
        match self.encoder.config() {
            ModelConfig::Encoder(e) => e.scale,
            _ => unreachable!("checked in AEState::new"),
        }
    }

    fn is_frozen(&self) -> bool {
        self.encoder.is_frozen() && self.decoder.is_frozen()
    }

    fn autoencode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }
}

/// Image-level wrapper around [`AEState::forward`].
pub fn ae_forward(ae: &AEState, img: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    if img.color() != ColorSpace::Rgb {
        return Err(Error::ColorSpace {
            expected: ColorSpace::Rgb.name(),
            actual: img.color().name(),
        });
    }
    let batched = img.batched()?;
    let (z, y) = ae.forward(batched.tensor())?;
    let (z, y) = (ImageTensor::new(z, ColorSpace::Rgb)?, ImageTensor::new(y, ColorSpace::Rgb)?);
    if img.is_batched() {
        Ok((z, y))
    } else {
        Ok((z.unbatched()?, y.unbatched()?))
    }
}

/// Marks both halves frozen. Idempotent; warns if pretraining never finished.
pub fn freeze_ae(mut ae: AEState) -> AEState {
    if !ae.pretrained {
        log::warn!("freezing an autoencoder that has not completed pretraining");
    }
    ae.encoder.freeze();
    ae.decoder.freeze();
    ae
}

#[derive(Serialize, Deserialize)]
struct AeMeta {
    encoder: ModelConfig,
    decoder: ModelConfig,
    encoder_fingerprint: String,
    decoder_fingerprint: String,
    pretrain_step: u64,
    pretrained: bool,
    frozen: bool,
}

/// Both halves in one file, parameters prefixed `encoder.` / `decoder.`.
pub fn save_ae(ae: &AEState, path: &Path) -> Result<()> {
    let meta = AeMeta {
        encoder: ae.encoder.config().clone(),
        decoder: ae.decoder.config().clone(),
        encoder_fingerprint: ae.encoder.fingerprint(),
        decoder_fingerprint: ae.decoder.fingerprint(),
        pretrain_step: ae.pretrain_step,
        pretrained: ae.pretrained,
        frozen: ae.is_frozen(),
    };
    let mut tensors = BTreeMap::new();
    for (prefix, m) in [("encoder", &ae.encoder), ("decoder", &ae.decoder)] {
        for (k, v) in m.vars() {
            tensors.insert(format!("{prefix}.{k}"), v.as_tensor().clone());
        }
    }
    write_tensor_file(
        path,
        &TensorFile {
            meta: serde_json::to_value(meta)?,
            tensors,
        },
    )
}

pub fn load_ae(path: &Path) -> Result<AEState> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let file = read_tensor_file(path)?;
    let meta: AeMeta =
        serde_json::from_value(file.meta).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if fingerprint(&meta.encoder) != meta.encoder_fingerprint
        || fingerprint(&meta.decoder) != meta.decoder_fingerprint
    {
        return Err(corrupt("stored fingerprint does not match stored config".into()));
    }
    let mut enc = BTreeMap::new();
    let mut dec = BTreeMap::new();
    for (k, t) in file.tensors {
        if let Some(n) = k.strip_prefix("encoder.") {
            enc.insert(n.to_string(), t);
        } else if let Some(n) = k.strip_prefix("decoder.") {
            dec.insert(n.to_string(), t);
        } else {
            return Err(corrupt(format!("unexpected entry `{k}`")));
        }
    }
    let encoder = ModelState::from_tensors(meta.encoder, enc, meta.frozen, meta.pretrain_step)?;
    let decoder = ModelState::from_tensors(meta.decoder, dec, meta.frozen, meta.pretrain_step)?;
    let mut ae = AEState::new(encoder, decoder)?;
    ae.pretrain_step = meta.pretrain_step;
    ae.pretrained = meta.pretrained;
    Ok(ae)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AePretrainConfig {
    pub encoder: EncoderConfig,
    pub decoder: GeneratorConfig,
    pub steps: u64,
    pub batch: usize,
    pub hr_patch: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
    /// Generator checkpoint used to initialize the decoder.
    #[serde(default)]
    pub decoder_init: Option<PathBuf>,
}

/// Per-step losses of AE pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeLogRow {
    pub step: u64,
    /// `mean |enc(HR) - LR|`
    pub rec_lr: f64,
    /// `mean |dec(enc(HR)) - HR|`
    pub rec_hr: f64,
    pub total: f64,
}

impl AeLogRow {
    pub const CSV_HEADER: &'static str = "step,rec_lr,rec_hr,total";

    pub fn csv(&self) -> String {
        format!("{},{:e},{:e},{:e}", self.step, self.rec_lr, self.rec_hr, self.total)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Trains encoder and decoder jointly on the sum of the LR-consistency and HR
/// reconstruction L1 terms, so the encoder receives gradients from both.
/// Returns the frozen autoencoder and one log row per step.
pub fn pretrain_ae(
    ds: &PairedDataset,
    cfg: &AePretrainConfig,
    mut on_step: impl FnMut(&AeLogRow),
) -> Result<(AEState, Vec<AeLogRow>)> {
    if cfg.encoder.scale != ds.scale || cfg.decoder.scale != ds.scale {
        return Err(Error::Config(format!(
            "autoencoder scale must match dataset scale {}",
            ds.scale
        )));
    }
    let encoder = build_encoder(&cfg.encoder, cfg.seed)?;
    let decoder = match &cfg.decoder_init {
        Some(p) => build_generator(&cfg.decoder, GeneratorInit::Pretrained(p))?,
        None => build_generator(&cfg.decoder, GeneratorInit::Random { seed: cfg.seed.wrapping_add(1) })?,
    };
    let mut ae = AEState::new(encoder, decoder)?;
    let mut opt_enc = Adam::new(cfg.lr);
    let mut opt_dec = Adam::new(cfg.lr);
    let sampler = SamplerConfig {
        hr_patch: cfg.hr_patch,
        batch: cfg.batch,
        augment: cfg.augment,
    };
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let batch = sample_patch_batch(ds, &sampler, &mut step_rng(cfg.seed, purpose::AE_PRETRAIN, step))?;
        let (z, y) = ae.forward(&batch.hr)?;
        let rec_lr = (z - &batch.lr)?.abs()?.mean_all()?;
        let rec_hr = (y - &batch.hr)?.abs()?.mean_all()?;
        let total = (&rec_lr + &rec_hr)?;
        let row = AeLogRow {
            step,
            rec_lr: scalar(&rec_lr)?,
            rec_hr: scalar(&rec_hr)?,
            total: scalar(&total)?,
        };
        if !row.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("AE pretraining: rec_lr={} rec_hr={}", row.rec_lr, row.rec_hr),
            });
        }
        let grads = total.backward()?;
        opt_enc.step(&ae.encoder, &grads)?;
        opt_dec.step(&ae.decoder, &grads)?;
        on_step(&row);
        rows.push(row);
    }
    ae.pretrain_step = cfg.steps;
    ae.encoder.set_training_step(cfg.steps);
    ae.decoder.set_training_step(cfg.steps);
    ae.pretrained = true;
    Ok((freeze_ae(ae), rows))
}
