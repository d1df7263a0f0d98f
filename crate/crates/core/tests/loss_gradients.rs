mod common;

use aesr_core::losses::{
    loss_adversarial, loss_aesop, loss_artifact, loss_perceptual, loss_pix, total_loss, LossConfig,
    LossInputs, Norm,
};
use candle_core::Tensor;
use common::*;

const TOL: f64 = 1e-4;

#[test]
fn pixel_term_gradients() {
    let hr = uniform((1, 3, 8, 8), 1);
    let x = uniform((1, 3, 8, 8), 2);
    for p in [Norm::L1, Norm::L2] {
        let err = gradcheck(&|sr: &Tensor| loss_pix(sr, &hr, p), &x, 10, 3);
        assert!(err < TOL, "{p:?}: {err}");
    }
}

#[test]
fn aesop_term_gradients() {
    let ae = tiny_ae_f64(4);
    let hr = uniform((1, 3, 8, 8), 5);
    let x = uniform((1, 3, 8, 8), 6);
    for p in [Norm::L1, Norm::L2] {
        let err = gradcheck(&|sr: &Tensor| loss_aesop(sr, &hr, &ae, p), &x, 10, 7);
        assert!(err < TOL, "{p:?}: {err}");
    }
}

#[test]
fn perceptual_term_gradients() {
    let ext = extractor_f64();
    let hr = uniform((1, 3, 8, 8), 8);
    let x = uniform((1, 3, 8, 8), 9);
    let err = gradcheck(&|sr: &Tensor| loss_perceptual(sr, &hr, &ext), &x, 10, 10);
    assert!(err < TOL, "{err}");
}

#[test]
fn adversarial_term_gradients() {
    let d = discriminator_f64(8, 11);
    let hr = uniform((2, 3, 8, 8), 12);
    let x = uniform((2, 3, 8, 8), 13);
    let err = gradcheck(&|sr: &Tensor| Ok(loss_adversarial(sr, &hr, &d)?.g_loss), &x, 10, 14);
    assert!(err < TOL, "{err}");
}

#[test]
fn artifact_term_gradients() {
    let hr = uniform((1, 3, 8, 8), 15);
    let x = uniform((1, 3, 8, 8), 16);
    let err = gradcheck(&|sr: &Tensor| loss_artifact(sr, &hr, None), &x, 10, 17);
    assert!(err < TOL, "{err}");
}

#[test]
fn full_objective_gradients_in_both_modes() {
    let ae = tiny_ae_f64(18);
    let ext = extractor_f64();
    let d = discriminator_f64(8, 19);
    let hr = uniform((2, 3, 8, 8), 20);
    let x = uniform((2, 3, 8, 8), 21);
    let aux = LossInputs { ae: Some(&ae), ae_hr: None, extractor: Some(&ext), discriminator: Some(&d) };
    for cfg in [LossConfig::baseline(), LossConfig::aesop()] {
        let err = gradcheck(&|sr: &Tensor| Ok(total_loss(&cfg, sr, &hr, aux)?.0), &x, 10, 22);
        assert!(err < TOL, "{:?}: {err}", cfg.mode);
    }
}
