mod common;

use std::fs;

use aesr_core::data::{PairedDataset, Split};
use aesr_core::losses::{LossConfig, LossMode};
use aesr_core::networks::{load_checkpoint, save_checkpoint};
use aesr_core::train::{
    latest_checkpoint, pretrain_fidelity_generator, train_sr, FidelityConfig, SrTrainer, GENERATOR_FILE,
    LOSS_LOG,
};
use aesr_core::Error;
use common::*;

#[test]
fn aesop_smoke_run_is_finite_and_checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_dataset(tmp.path(), 5, 32, 2);
    let ae = tmp.path().join("ae.ckpt");
    save_random_ae(&ae, 2, 1);
    let cfg = tiny_run(&ds, &tmp.path().join("run"), Some(&ae), LossConfig::aesop(), 200);
    let out = train_sr(&cfg, |_| {}).unwrap();
    assert_eq!(out.log.len(), 200);
    assert!(out.log.iter().all(|b| b.is_finite() && b.pix == 0.0));
    let csv = fs::read_to_string(cfg.out_dir.join(LOSS_LOG)).unwrap();
    assert_eq!(csv.lines().count(), 201);

    let g = load_checkpoint(&out.final_checkpoint.join(GENERATOR_FILE)).unwrap();
    assert_eq!(g.checksum().unwrap(), out.generator.checksum().unwrap());
    assert_eq!(g.training_step(), 200);
    let again = tmp.path().join("again.ckpt");
    save_checkpoint(&g, &again).unwrap();
    assert_eq!(
        fs::read(&again).unwrap(),
        fs::read(out.final_checkpoint.join(GENERATOR_FILE)).unwrap()
    );
    assert_eq!(latest_checkpoint(&cfg.out_dir).unwrap().unwrap().0, 200);
    assert!(cfg.out_dir.join("samples/step_000200.png").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_dataset(tmp.path(), 5, 32, 2);
    let ae = tmp.path().join("ae.ckpt");
    save_random_ae(&ae, 2, 2);

    let full = tiny_run(&ds, &tmp.path().join("full"), Some(&ae), LossConfig::aesop(), 40);
    train_sr(&full, |_| {}).unwrap();

    let mut part = tiny_run(&ds, &tmp.path().join("part"), Some(&ae), LossConfig::aesop(), 20);
    train_sr(&part, |_| {}).unwrap();
    part.steps = 40;
    part.resume = true;
    let resumed = train_sr(&part, |_| {}).unwrap();
    assert_eq!(resumed.log.first().unwrap().step, 20);

    let a = fs::read_to_string(full.out_dir.join(LOSS_LOG)).unwrap();
    let b = fs::read_to_string(part.out_dir.join(LOSS_LOG)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generator_and_discriminator_updates_are_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_dataset(tmp.path(), 5, 32, 2);
    let cfg = tiny_run(&ds, &tmp.path().join("run"), None, LossConfig::baseline(), 5);
    let mut t = SrTrainer::new(&cfg).unwrap();
    let train = PairedDataset::open(&ds, Split::Train).unwrap();
    let sampler = aesr_core::data::SamplerConfig { hr_patch: 16, batch: 2, augment: false };
    let mut rng = aesr_core::rng::step_rng(0, 99, 0);
    for _ in 0..3 {
        let batch = aesr_core::data::sample_patch_batch(&train, &sampler, &mut rng).unwrap();
        let (g0, d0) = (t.generator.checksum().unwrap(), t.discriminator.checksum().unwrap());
        let (_, sr) = t.generator_step(&batch.lr, &batch.hr).unwrap();
        let (g1, d1) = (t.generator.checksum().unwrap(), t.discriminator.checksum().unwrap());
        assert_ne!(g0, g1);
        assert_eq!(d0, d1, "discriminator moved during the generator step");
        t.discriminator_step(&batch.hr, &sr).unwrap();
        let (g2, d2) = (t.generator.checksum().unwrap(), t.discriminator.checksum().unwrap());
        assert_eq!(g1, g2, "generator moved during the discriminator step");
        assert_ne!(d1, d2);
    }
}

#[test]
fn tampered_autoencoder_aborts_at_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_dataset(tmp.path(), 5, 32, 2);
    let ae = tmp.path().join("ae.ckpt");
    save_random_ae(&ae, 2, 3);
    let cfg = tiny_run(&ds, &tmp.path().join("run"), Some(&ae), LossConfig::aesop(), 5);
    let mut t = SrTrainer::new(&cfg).unwrap();
    t.step().unwrap();
    t.save_checkpoint().unwrap();
    let var = t.ae.as_ref().unwrap().encoder.var("conv_in1.bias").unwrap();
    var.set(&(var.as_tensor() + 1.0).unwrap()).unwrap();
    assert!(matches!(t.save_checkpoint(), Err(Error::FreezeViolation { .. })));
}

#[test]
fn aesop_mode_requires_a_frozen_matching_autoencoder() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_dataset(tmp.path(), 5, 32, 2);
    let cfg = tiny_run(&ds, &tmp.path().join("run"), None, LossConfig::aesop(), 5);
    assert!(matches!(SrTrainer::new(&cfg), Err(Error::Config(_))));

    let ae4 = tmp.path().join("ae4.ckpt");
    save_random_ae(&ae4, 4, 0);
    let cfg = tiny_run(&ds, &tmp.path().join("run"), Some(&ae4), LossConfig::aesop(), 5);
    assert!(matches!(SrTrainer::new(&cfg), Err(Error::Config(_))));

    let enc = aesr_core::networks::EncoderConfig { scale: 2, rrdb_channels: 8 };
    let unfrozen = aesr_core::autoencoder::AEState::random(&enc, &tiny_generator(2), 0).unwrap();
    let p = tmp.path().join("unfrozen.ckpt");
    aesr_core::autoencoder::save_ae(&unfrozen, &p).unwrap();
    let cfg = tiny_run(&ds, &tmp.path().join("run"), Some(&p), LossConfig::aesop(), 5);
    assert!(matches!(SrTrainer::new(&cfg), Err(Error::AeNotFrozen)));
    assert_eq!(cfg.loss.mode, LossMode::Aesop);
}

#[test]
fn fidelity_pretraining_halves_loss_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = PairedDataset::open(&make_dataset(tmp.path(), 5, 32, 2), Split::Train).unwrap();
    let cfg = FidelityConfig {
        generator: tiny_generator(2),
        steps: 150,
        batch: 4,
        hr_patch: 16,
        lr: 2e-3,
        seed: 5,
        augment: true,
    };
    let (g, rows) = pretrain_fidelity_generator(&ds, &cfg, |_| {}).unwrap();
    let head: f64 = rows[..10].iter().map(|r| r.pix).sum::<f64>() / 10.0;
    let tail: f64 = rows[rows.len() - 10..].iter().map(|r| r.pix).sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
    let (g2, rows2) = pretrain_fidelity_generator(&ds, &cfg, |_| {}).unwrap();
    assert_eq!(rows, rows2);
    assert_eq!(g.checksum().unwrap(), g2.checksum().unwrap());
}
