#![allow(dead_code)]

use aesr_core::autoencoder::{freeze_ae, AEState};
use aesr_core::networks::{
    build_discriminator, build_extractor, DiscriminatorConfig, EncoderConfig, ExtractorConfig,
    GeneratorConfig, ModelState,
};
use aesr_core::Result;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(dims: (usize, usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.0 * dims.1 * dims.2 * dims.3;
    let v: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
}

pub fn tiny_ae_f64(seed: u64) -> AEState {
    let enc = EncoderConfig { scale: 2, rrdb_channels: 8 };
    let dec = GeneratorConfig { num_rrdb_blocks: 1, base_channels: 8, growth_channels: 4, scale: 2 };
    let mut ae = AEState::random(&enc, &dec, seed).unwrap().to_dtype(DType::F64).unwrap();
    ae.pretrained = true;
    freeze_ae(ae)
}

pub fn extractor_f64() -> ModelState {
    build_extractor(&ExtractorConfig::default()).unwrap().to_dtype(DType::F64).unwrap()
}

pub fn discriminator_f64(patch: usize, seed: u64) -> ModelState {
    build_discriminator(&DiscriminatorConfig { base_channels: 4, patch }, seed)
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
}

/// Largest relative error between the backward-pass gradient and a central
/// difference, over `count` pseudo-random coordinates of `x`.
pub fn gradcheck(f: &dyn Fn(&Tensor) -> Result<Tensor>, x: &Tensor, count: usize, seed: u64) -> f64 {
    let h = 1e-6;
    let xv = Var::from_tensor(x).unwrap();
    let grads = f(xv.as_tensor()).unwrap().backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(xv.as_tensor())
        .map(|g| g.flatten_all().unwrap().to_vec1().unwrap())
        .unwrap_or_else(|| vec![0.0; x.elem_count()]);
    let base: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_slice(v, x.dims(), x.device()).unwrap();
        f(&t).unwrap().to_scalar::<f64>().unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = rng.random_range(0..base.len());
        let mut p = base.clone();
        p[i] += h;
        let mut m = base.clone();
        m[i] -= h;
        let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs());
        let rel = if denom < 1e-10 { 0.0 } else { (a - numeric).abs() / denom };
        worst = worst.max(rel);
    }
    worst
}

use aesr_core::autoencoder::{save_ae, AutoEncoder};
use aesr_core::data::{prepare_dataset, write_synthetic_folder, PrepareConfig};
use aesr_core::losses::LossConfig;
use aesr_core::train::TrainRunConfig;
use std::path::Path;

/// Synthetic paired dataset with `count` images of `size`², one val image in five.
pub fn make_dataset(root: &Path, count: usize, size: usize, scale: usize) -> std::path::PathBuf {
    let src = root.join("src");
    write_synthetic_folder(&src, count, size, 7).unwrap();
    let ds = root.join("ds");
    prepare_dataset(&src, &ds, &PrepareConfig { scale, val_every: 5 }).unwrap();
    ds
}

pub fn tiny_generator(scale: usize) -> GeneratorConfig {
    GeneratorConfig { num_rrdb_blocks: 1, base_channels: 8, growth_channels: 4, scale }
}

/// Random frozen f32 autoencoder saved to `path`.
pub fn save_random_ae(path: &Path, scale: usize, seed: u64) {
    let enc = EncoderConfig { scale, rrdb_channels: 16 };
    let mut ae = AEState::random(&enc, &tiny_generator(scale), seed).unwrap();
    ae.pretrained = true;
    let ae = freeze_ae(ae);
    assert!(ae.is_frozen());
    save_ae(&ae, path).unwrap();
}

pub fn tiny_run(dataset: &Path, out: &Path, ae: Option<&Path>, loss: LossConfig, steps: u64) -> TrainRunConfig {
    TrainRunConfig {
        generator: tiny_generator(2),
        discriminator: DiscriminatorConfig { base_channels: 4, patch: 16 },
        extractor: ExtractorConfig::default(),
        loss,
        hr_patch: 16,
        batch: 2,
        steps,
        lr: 1e-4,
        lr_d: 1e-4,
        seed: 3,
        augment: true,
        dataset: dataset.to_path_buf(),
        ae_checkpoint: ae.map(Path::to_path_buf),
        generator_init: None,
        out_dir: out.to_path_buf(),
        log_every: 10,
        ckpt_every: 10,
        resume: false,
    }
}
