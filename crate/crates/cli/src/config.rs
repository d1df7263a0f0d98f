//! Run configuration: preset defaults, overlaid by a TOML file, overlaid by
//! command-line flags. The merged table is deserialized strictly, so a
//! misspelled key anywhere is rejected with its name.

use std::path::{Path, PathBuf};

use aesr_core::autoencoder::AePretrainConfig;
use aesr_core::data::PrepareConfig;
use aesr_core::eval::DEFAULT_CUTOFF;
use aesr_core::losses::{LossConfig, LossMode};
use aesr_core::recipe::{Preset, ReproPlan, SrTemplate};
use aesr_core::seve::PointLoss;
use aesr_core::train::{FidelityConfig, TrainRunConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Folder of source PNGs. Unset means synthetic images are generated.
    pub source: Option<PathBuf>,
    /// Prepared dataset root; defaults to `<output>/data` for prepare-data.
    pub root: Option<PathBuf>,
    pub scale: usize,
    pub val_every: usize,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: LossMode,
    pub net: SrTemplate,
    pub baseline: LossConfig,
    pub aesop: LossConfig,
    pub ae_checkpoint: Option<PathBuf>,
    pub generator_init: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Generator checkpoints; several produce a perception-distortion curve.
    pub generators: Vec<PathBuf>,
    pub ae_checkpoint: Option<PathBuf>,
    pub quantize: bool,
    /// Image for spectra and loss maps; unset uses the first validation pair
    /// for loss maps and a step edge for spectra.
    pub image: Option<PathBuf>,
    pub cutoff: f64,
    pub spectral_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeveSection {
    pub joints: usize,
    pub max_support: usize,
    pub max_dim: usize,
    pub loss: PointLoss,
    pub toy_steps: usize,
    pub toy_batch: usize,
    pub toy_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output: PathBuf,
    pub device: String,
    /// Single-threaded execution; required for bit-identical reruns.
    pub deterministic: bool,
    pub data: DataSection,
    pub fidelity: FidelityConfig,
    pub ae: AePretrainConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub seve: SeveSection,
}

impl RunConfig {
    pub fn defaults(preset: Preset, scale: usize, seed: u64, output: PathBuf) -> Self {
        let plan = preset.plan(scale, seed);
        Self {
            preset,
            seed,
            output,
            device: "cpu".into(),
            deterministic: true,
            data: DataSection {
                source: None,
                root: None,
                scale,
                val_every: plan.prepare.val_every,
                synthetic_count: 50,
                synthetic_size: 64,
            },
            fidelity: plan.fidelity,
            ae: plan.ae,
            train: TrainSection {
                mode: LossMode::Aesop,
                net: plan.sr,
                baseline: plan.baseline,
                aesop: plan.aesop,
                ae_checkpoint: None,
                generator_init: None,
                resume: false,
            },
            eval: EvalSection {
                generators: Vec::new(),
                ae_checkpoint: None,
                quantize: true,
                image: None,
                cutoff: DEFAULT_CUTOFF,
                spectral_size: plan.spectral_size,
            },
            seve: SeveSection {
                joints: 100,
                max_support: 6,
                max_dim: 3,
                loss: PointLoss::L2,
                toy_steps: 2000,
                toy_batch: 1024,
                toy_lr: 0.01,
            },
        }
    }

    /// Builds the merged configuration; `overrides` are dotted keys with values.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)], default_output: PathBuf) -> Result<Self, ConfigError> {
        let mut user = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                text.parse::<Table>().map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut user, key, value.clone())?;
        }
        // The preset, scale and seed shape every other default, so read them first.
        let preset: Preset = match user.get("preset") {
            Some(v) => v.clone().try_into().map_err(|e| ConfigError::Invalid(format!("preset: {e}")))?,
            None => Preset::Tiny,
        };
        let seed = match user.get("seed") {
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(other) => return Err(ConfigError::Invalid(format!("seed must be a non-negative integer, got {other}"))),
            None => 0,
        };
        let scale = match user.get("data").and_then(|d| d.get("scale")) {
            Some(Value::Integer(i)) if *i >= 2 => *i as usize,
            Some(other) => return Err(ConfigError::Invalid(format!("data.scale must be an integer >= 2, got {other}"))),
            None => 2,
        };
        let defaults = Self::defaults(preset, scale, seed, default_output);
        let mut merged = Table::try_from(&defaults).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.device != "cpu" {
            return Err(ConfigError::Invalid(format!("device `{}` is not available; use `cpu`", self.device)));
        }
        let s = self.data.scale;
        let scales = [
            ("fidelity.generator.scale", self.fidelity.generator.scale),
            ("ae.encoder.scale", self.ae.encoder.scale),
            ("ae.decoder.scale", self.ae.decoder.scale),
            ("train.net.generator.scale", self.train.net.generator.scale),
        ];
        for (key, v) in scales {
            if v != s {
                return Err(ConfigError::Invalid(format!("{key} = {v} differs from data.scale = {s}")));
            }
        }
        if self.train.net.discriminator.patch != self.train.net.hr_patch {
            return Err(ConfigError::Invalid("train.net.discriminator.patch must equal train.net.hr_patch".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        match self.train.mode {
            LossMode::Baseline => self.train.baseline.clone(),
            LossMode::Aesop => self.train.aesop.clone(),
        }
    }

    pub fn train_run(&self, dataset: &Path) -> TrainRunConfig {
        let mut run = self.train.net.run_config(
            self.loss(),
            dataset,
            self.train.ae_checkpoint.as_deref(),
            self.train.generator_init.as_deref(),
            &self.output,
        );
        run.resume = self.train.resume;
        run
    }

    pub fn repro_plan(&self) -> ReproPlan {
        let mut plan = self.preset.plan(self.data.scale, self.seed);
        plan.prepare = PrepareConfig { scale: self.data.scale, val_every: self.data.val_every };
        plan.fidelity = self.fidelity.clone();
        plan.ae = self.ae.clone();
        plan.sr = self.train.net.clone();
        plan.baseline = self.train.baseline.clone();
        plan.aesop = self.train.aesop.clone();
        plan.spectral_cutoff = self.eval.cutoff;
        plan.spectral_size = self.eval.spectral_size;
        plan
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# snapshot failed: {e}\n"))
    }
}

/// Splits `dotted.key=value`; the value is parsed as TOML, falling back to a bare string.
pub fn parse_override(arg: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{arg}` is not KEY=VALUE")))?;
    Ok((key.trim().to_string(), parse_value(raw.trim())))
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| ConfigError::Invalid(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: &[(&str, &str)]) -> Result<RunConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let o: Vec<(String, Value)> = overrides
            .iter()
            .map(|(a, b)| parse_override(&format!("{a}={b}")).unwrap())
            .collect();
        RunConfig::load(Some(&path), &o, "out".into())
    }

    #[test]
    fn empty_file_gives_tiny_defaults() {
        let cfg = load("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::defaults(Preset::Tiny, 2, 0, "out".into()));
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let err = load("[train.net]\nbogus_rate = 3\n", &[]).unwrap_err().to_string();
        assert!(err.contains("bogus_rate"), "{err}");
        let err = load("colour = 1\n", &[]).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = load("seed = 4\n[fidelity]\nsteps = 7\n", &[("fidelity.steps", "9"), ("train.mode", "baseline")]).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.fidelity.steps, 9);
        assert_eq!(cfg.train.mode, LossMode::Baseline);
        // Preset defaults derive from the configured seed.
        assert_eq!(cfg.ae.seed, 14);
    }

    #[test]
    fn scale_propagates_to_all_networks() {
        let cfg = load("[data]\nscale = 4\n", &[]).unwrap();
        assert_eq!(cfg.train.net.generator.scale, 4);
        assert_eq!(cfg.ae.encoder.scale, 4);
        let err = load("[data]\nscale = 4\n[ae.encoder]\nscale = 2\nrrdb_channels = 16\n", &[]).unwrap_err();
        assert!(err.to_string().contains("ae.encoder.scale"));
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = load("preset = \"desk\"\nseed = 11\n", &[("eval.cutoff", "0.2")]).unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_device_rejected() {
        assert!(load("device = \"cuda\"\n", &[]).is_err());
    }
}
