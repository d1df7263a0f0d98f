use std::collections::BTreeMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{read_tensor_file, write_tensor_file, ModelState, TensorFile};
use crate::error::{Error, Result};

/// Adam with bias correction and serializable moment buffers.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter of `model` that has a gradient in `grads`.
    pub fn step(&mut self, model: &ModelState, grads: &GradStore) -> Result<()> {
        if model.is_frozen() {
            return Err(Error::InvalidArgument("cannot update a frozen model".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in model.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = AdamMeta {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
        };
        let mut tensors = BTreeMap::new();
        for (k, t) in &self.m {
            tensors.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            tensors.insert(format!("v.{k}"), t.clone());
        }
        write_tensor_file(
            path,
            &TensorFile {
                meta: serde_json::to_value(meta)?,
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_tensor_file(path)?;
        let meta: AdamMeta = serde_json::from_value(file.meta)?;
        let mut adam = Self {
            lr: meta.lr,
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
            step: meta.step,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        };
        for (k, t) in file.tensors {
            if let Some(name) = k.strip_prefix("m.") {
                adam.m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix("v.") {
                adam.v.insert(name.to_string(), t);
            } else {
                return Err(Error::CorruptCheckpoint {
                    path: path.to_path_buf(),
                    reason: format!("unexpected optimizer entry `{k}`"),
                });
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    use crate::networks::{ExtractorConfig, ModelConfig};

    /// One Adam step moves each parameter by about `lr` against the gradient sign.
    #[test]
    fn first_step_moves_by_lr() {
        let cfg = ExtractorConfig {
            channels: vec![2],
            stride2_layers: vec![],
            feature_layers: vec![0],
            seed: 1,
        };
        let model = ModelState::random(ModelConfig::Extractor(cfg), 1).unwrap();
        let before: Vec<f32> = model.var("conv0.bias").unwrap().as_tensor().to_vec1().unwrap();
        let x = Var::from_tensor(&Tensor::ones((1, 3, 4, 4), candle_core::DType::F32, &Device::Cpu).unwrap()).unwrap();
        let loss = model.forward(x.as_tensor()).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g: Vec<f32> = grads.get(model.var("conv0.bias").unwrap().as_tensor()).unwrap().to_vec1().unwrap();
        let mut adam = Adam::new(0.01);
        adam.step(&model, &grads).unwrap();
        let after: Vec<f32> = model.var("conv0.bias").unwrap().as_tensor().to_vec1().unwrap();
        for ((b, a), g) in before.iter().zip(&after).zip(&g) {
            if g.abs() > 1e-6 {
                assert!(((b - a) - 0.01 * g.signum()).abs() < 1e-5, "{b} {a} {g}");
            }
        }
    }

    #[test]
    fn frozen_model_refused() {
        let mut model = ModelState::random(ModelConfig::Extractor(ExtractorConfig::default()), 0).unwrap();
        model.freeze();
        let x = Tensor::ones((1, 3, 8, 8), candle_core::DType::F32, &Device::Cpu).unwrap();
        let grads = model.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(Adam::new(1e-3).step(&model, &grads).is_err());
    }
}
