//! Generator, encoder, discriminator and feature-extractor architectures,
//! seeded initialization, and the named-parameter [`ModelState`].

mod arch;
mod checkpoint;
mod im2col;
mod layers;
mod optim;

pub use arch::{DiscriminatorConfig, EncoderConfig, ExtractorConfig, GeneratorConfig, ModelConfig};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use optim::Adam;

pub(crate) use arch::extractor_features;
pub use layers::conv2d_same;
pub(crate) use checkpoint::{read_tensor_file, write_tensor_file, TensorFile};

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use arch::{Init, ParamSpec};

/// Named parameters of one network plus its freeze flag and step counter.
///
/// A frozen state hands out detached tensors, so gradients can flow through
/// it to its inputs but never reach its parameters.
#[derive(Debug)]
pub struct ModelState {
    config: ModelConfig,
    params: BTreeMap<String, Var>,
    frozen: bool,
    training_step: u64,
}

pub enum GeneratorInit<'a> {
    Random { seed: u64 },
    Pretrained(&'a Path),
}

pub fn build_generator(cfg: &GeneratorConfig, init: GeneratorInit<'_>) -> Result<ModelState> {
    let config = ModelConfig::Generator(cfg.clone());
    match init {
        GeneratorInit::Random { seed } => ModelState::random(config, seed),
        GeneratorInit::Pretrained(path) => {
            let mut state = load_checkpoint_for(path, &config)?;
            state.frozen = false;
            state.training_step = 0;
            Ok(state)
        }
    }
}

pub fn build_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ModelState> {
    ModelState::random(ModelConfig::Encoder(cfg.clone()), seed)
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<ModelState> {
    ModelState::random(ModelConfig::Discriminator(cfg.clone()), seed)
}

/// The default perceptual extractor is always built frozen.
pub fn build_extractor(cfg: &ExtractorConfig) -> Result<ModelState> {
    let mut state = ModelState::random(ModelConfig::Extractor(cfg.clone()), cfg.seed)?;
    state.freeze();
    Ok(state)
}

/// Per-parameter RNG so that adding layers never shifts other layers' init.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

fn init_values(spec: &ParamSpec, seed: u64) -> Vec<f32> {
    let n: usize = spec.shape.iter().product();
    let mut rng = param_rng(seed, &spec.name);
    match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::KaimingNormal(scale) => {
            let gain = (2.0 / (1.0 + layers::LRELU_SLOPE * layers::LRELU_SLOPE)).sqrt();
            let std = gain / (spec.fan_in as f64).sqrt();
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| (d.sample(&mut rng) * scale) as f32).collect()
        }
        Init::DefaultUniform => {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            let d = Uniform::new(-bound, bound).expect("non-empty range");
            (0..n).map(|_| d.sample(&mut rng) as f32).collect()
        }
    }
}

impl ModelState {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = BTreeMap::new();
        for spec in config.layout()? {
            let t = Tensor::from_vec(init_values(&spec, seed), spec.shape.as_slice(), &Device::Cpu)?;
            params.insert(spec.name, Var::from_tensor(&t)?);
        }
        Ok(Self {
            config,
            params,
            frozen: false,
            training_step: 0,
        })
    }

    /// Assembles a state from loaded tensors, checking names and shapes against the layout.
    pub(crate) fn from_tensors(
        config: ModelConfig,
        mut tensors: BTreeMap<String, Tensor>,
        frozen: bool,
        training_step: u64,
    ) -> Result<Self> {
        let mut params = BTreeMap::new();
        for spec in config.layout()? {
            let t = tensors.remove(&spec.name).ok_or_else(|| {
                Error::Dimension(format!("missing parameter `{}`", spec.name))
            })?;
            if t.dims() != spec.shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.dims(),
                    spec.shape
                )));
            }
            params.insert(spec.name, Var::from_tensor(&t)?);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Dimension(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            config,
            params,
            frozen,
            training_step,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Hex SHA-256 of the canonical JSON serialization of the config.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.config)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn training_step(&self) -> u64 {
        self.training_step
    }

    pub fn set_training_step(&mut self, step: u64) {
        self.training_step = step;
    }

    pub fn dtype(&self) -> DType {
        self.params.values().next().map_or(DType::F32, |v| v.dtype())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    /// Tensor view of a parameter; detached when the model is frozen.
    pub fn param(&self, name: &str) -> Result<Tensor> {
        let v = self.var(name)?;
        Ok(if self.frozen {
            v.as_tensor().detach()
        } else {
            v.as_tensor().clone()
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Independent copy (fresh storage) with the same flags.
    pub fn duplicate(&self) -> Result<Self> {
        self.to_dtype(self.dtype())
    }

    /// Independent copy converted to `dtype`.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (k, v) in &self.params {
            let t = v.as_tensor().to_dtype(dtype)?.copy()?;
            params.insert(k.clone(), Var::from_tensor(&t)?);
        }
        Ok(Self {
            config: self.config.clone(),
            params,
            frozen: self.frozen,
            training_step: self.training_step,
        })
    }

    /// Hex SHA-256 over parameter names, shapes and raw little-endian values.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (k, v) in &self.params {
            h.update(k.as_bytes());
            for d in v.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let flat = v.as_tensor().flatten_all()?;
            match flat.dtype() {
                DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|x| h.update(x.to_le_bytes())),
                _ => flat
                    .to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .for_each(|x| h.update(x.to_le_bytes())),
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Runs the network on a `[N,3,H,W]` batch, cast to the parameter dtype.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.dtype() != self.dtype() {
            return arch::forward(self, &x.to_dtype(self.dtype())?);
        }
        arch::forward(self, x)
    }

    /// Activations of the configured feature layers (extractor models only).
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        match &self.config {
            ModelConfig::Extractor(c) if x.dtype() != self.dtype() => {
                extractor_features(self, c, &x.to_dtype(self.dtype())?)
            }
            ModelConfig::Extractor(c) => extractor_features(self, c, x),
            other => Err(Error::InvalidArgument(format!(
                "{} models have no feature layers",
                other.kind()
            ))),
        }
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_params(&self, prefix: &str) -> Result<()> {
        for (k, v) in &self.params {
            if k.starts_with(prefix) {
                v.set(&v.as_tensor().zeros_like()?)?;
            }
        }
        Ok(())
    }
}

pub fn fingerprint(config: &ModelConfig) -> String {
    let canonical = serde_json::to_value(config)
        .and_then(|v| serde_json::to_string(&v))
        .expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
