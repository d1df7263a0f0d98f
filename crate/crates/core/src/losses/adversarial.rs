//! Relativistic average GAN losses.
//!
//! With `C` the discriminator logits, `Δr = C(hr) - mean C(sr)` and
//! `Δf = C(sr) - mean C(hr)`:
//!
//! ```text
//! g_loss = BCE(Δr, 0) + BCE(Δf, 1)
//! d_loss = BCE(Δr, 1) + BCE(Δf, 0)
//! ```
//!
//! Each BCE is a mean over logits. The two halves are summed, so
//! indistinguishable inputs give about `2 ln 2` for both losses.

use candle_core::Tensor;

use crate::error::Result;
use crate::networks::ModelState;

pub struct AdversarialLosses {
    pub g_loss: Tensor,
    pub d_loss: Tensor,
}

/// `softplus(x) = ln(1 + e^x)`, computed without overflow.
fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Mean binary cross-entropy of logits against a constant target.
fn bce(logits: &Tensor, target_real: bool) -> Result<Tensor> {
    let z = if target_real { logits.neg()? } else { logits.clone() };
    Ok(softplus(&z)?.mean_all()?)
}

/// Both losses share one pair of discriminator evaluations. Gradients reach
/// `sr` and the discriminator parameters; callers detach as needed.
pub fn loss_adversarial(sr: &Tensor, hr: &Tensor, disc: &ModelState) -> Result<AdversarialLosses> {
    let real = disc.forward(hr)?;
    let fake = disc.forward(sr)?;
    relativistic_losses(&real, &fake)
}

/// Relativistic losses from precomputed real and fake logits.
pub fn relativistic_losses(real: &Tensor, fake: &Tensor) -> Result<AdversarialLosses> {
    let d_real = real.broadcast_sub(&fake.mean_all()?)?;
    let d_fake = fake.broadcast_sub(&real.mean_all()?)?;
    Ok(AdversarialLosses {
        g_loss: (bce(&d_real, false)? + bce(&d_fake, true)?)?,
        d_loss: (bce(&d_real, true)? + bce(&d_fake, false)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::scalar;
    use crate::networks::{build_discriminator, Adam, DiscriminatorConfig};
    use candle_core::{DType, Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let v: Vec<f32> = (0..n * 3 * 256).map(|_| rng.random()).collect();
        Tensor::from_vec(v, (n, 3, 16, 16), &Device::Cpu).unwrap()
    }

    #[test]
    fn softplus_is_stable() {
        let x = Tensor::new(&[-800.0f64, -1.0, 0.0, 1.0, 800.0], &Device::Cpu).unwrap();
        let v: Vec<f64> = softplus(&x).unwrap().to_vec1().unwrap();
        let want = [0.0, (1.0 + (-1.0f64).exp()).ln(), 2f64.ln(), (1.0 + 1f64.exp()).ln(), 800.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    fn mean_losses(d: &ModelState, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut g, mut dl) = (0.0, 0.0);
        let reps = 20;
        for _ in 0..reps {
            let (a, b) = (batch(&mut rng, 4), batch(&mut rng, 4));
            let l = loss_adversarial(&a, &b, d).unwrap();
            g += scalar(&l.g_loss).unwrap() / reps as f64;
            dl += scalar(&l.d_loss).unwrap() / reps as f64;
        }
        (g, dl)
    }

    #[test]
    fn same_distribution_gives_two_ln2() {
        let target = 2.0 * 2f64.ln();
        let d = build_discriminator(&DiscriminatorConfig { base_channels: 8, patch: 16 }, 1).unwrap();
        // softplus is convex and the relative logits have zero mean, so 2 ln 2 is a lower bound.
        let (g, dl) = mean_losses(&d, 0);
        assert!(g >= target - 1e-3 && dl >= target - 1e-3, "g {g} d {dl}");
        assert!((g - dl).abs() < 0.05 * target, "g {g} d {dl}");
        // With small logits the bound is attained.
        for name in ["conv_out.weight", "conv_out.bias"] {
            let v = d.var(name).unwrap();
            v.set(&(v.as_tensor() * 0.01).unwrap()).unwrap();
        }
        let (g, dl) = mean_losses(&d, 0);
        assert!((g - target).abs() < 0.01 * target, "g {g}");
        assert!((dl - target).abs() < 0.01 * target, "d {dl}");
    }

    #[test]
    fn discriminator_steps_reduce_d_loss() {
        let d = build_discriminator(&DiscriminatorConfig { base_channels: 8, patch: 16 }, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = batch(&mut rng, 4);
        let fake = (batch(&mut rng, 4) * 0.3).unwrap();
        let mut opt = Adam::new(1e-3);
        let first = scalar(&loss_adversarial(&fake, &real, &d).unwrap().d_loss).unwrap();
        for _ in 0..30 {
            let l = loss_adversarial(&fake, &real, &d).unwrap();
            opt.step(&d, &l.d_loss.backward().unwrap()).unwrap();
        }
        let last = scalar(&loss_adversarial(&fake, &real, &d).unwrap().d_loss).unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn gradients_reach_sr() {
        let d = build_discriminator(&DiscriminatorConfig { base_channels: 4, patch: 16 }, 3)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sr = Var::from_tensor(&batch(&mut rng, 2).to_dtype(DType::F64).unwrap()).unwrap();
        let hr = batch(&mut rng, 2).to_dtype(DType::F64).unwrap();
        let g = loss_adversarial(sr.as_tensor(), &hr, &d).unwrap().g_loss.backward().unwrap();
        let grad = g.get(sr.as_tensor()).unwrap();
        assert!(scalar(&grad.abs().unwrap().sum_all().unwrap()).unwrap() > 0.0);
    }
}
