//! Numerical search for directions the autoencoder cannot see.
//!
//! With `J` the Jacobian of `ψ` at `x`, a near-null direction `v` has
//! `|Jv| ≪ |v|`. The search uses only `J v` (central differences) and `Jᵀ u`
//! (one backward pass), so it never forms `J`:
//!
//! 1. power iteration estimates `λmax` of `JᵀJ` (reported for scale);
//! 2. for a random `r`, conjugate gradients solve `JᵀJ a = JᵀJ r` starting
//!    from 0, so `a` is the range component of `r` and `v = r - a` lies in the
//!    null space. CG needs at most `rank J` steps, which for an autoencoder
//!    with an `s×` bottleneck is at most `3HW/s²`.

use candle_core::{DType, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoEncoder;
use crate::error::{Error, Result};
use crate::losses::scalar;
use crate::rng::{purpose, step_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullProbeConfig {
    pub power_iters: usize,
    pub cg_iters: usize,
    /// CG stops once the residual falls below this fraction of its start.
    pub cg_tol: f64,
    /// Finite-difference step relative to `|x|_∞`.
    pub fd_eps: f64,
    pub seed: u64,
}

impl Default for NullProbeConfig {
    fn default() -> Self {
        Self {
            power_iters: 30,
            cg_iters: 400,
            cg_tol: 1e-10,
            fd_eps: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NullProbe {
    /// Unit-L2 direction with the same shape as `x`, f64.
    pub direction: Tensor,
    pub lambda_max: f64,
    /// `|Jv|² / |v|²` for the returned direction.
    pub rayleigh: f64,
}

impl NullProbe {
    /// `rayleigh / λmax`: 0 for an exact null direction, 1 for the top singular direction.
    pub fn relative_gain(&self) -> f64 {
        if self.lambda_max > 0.0 {
            self.rayleigh / self.lambda_max
        } else {
            0.0
        }
    }
}

/// `(f(x + εv) - f(x - εv)) / 2ε`.
pub fn jvp_fd(f: &dyn Fn(&Tensor) -> Result<Tensor>, x: &Tensor, v: &Tensor, eps: f64) -> Result<Tensor> {
    let step = (v * eps)?;
    let plus = f(&(x + &step)?)?;
    let minus = f(&(x - &step)?)?;
    Ok(((plus - minus)? / (2.0 * eps))?)
}

fn vjp(ae: &dyn AutoEncoder, x: &Tensor, u: &Tensor) -> Result<Tensor> {
    let xv = Var::from_tensor(x)?;
    let y = ae.autoencode(xv.as_tensor())?.to_dtype(DType::F64)?;
    let grads = (y * u)?.sum_all()?.backward()?;
    let g = grads
        .get(xv.as_tensor())
        .ok_or_else(|| Error::Config("autoencoder output does not depend on its input".into()))?;
    Ok(g.to_dtype(DType::F64)?)
}

fn norm(t: &Tensor) -> Result<f64> {
    Ok(scalar(&t.sqr()?.sum_all()?)?.sqrt())
}

struct Operator<'a> {
    ae: &'a dyn AutoEncoder,
    x: Tensor,
    eps: f64,
}

impl Operator<'_> {
    fn jv(&self, v: &Tensor) -> Result<Tensor> {
        let f = |t: &Tensor| -> Result<Tensor> { Ok(self.ae.autoencode(t)?.to_dtype(DType::F64)?) };
        jvp_fd(&f, &self.x, v, self.eps)
    }

    /// Returns `(JᵀJ v, |Jv|²)`.
    fn gram(&self, v: &Tensor) -> Result<(Tensor, f64)> {
        let jv = self.jv(v)?;
        let energy = scalar(&jv.sqr()?.sum_all()?)?;
        Ok((vjp(self.ae, &self.x, &jv)?, energy))
    }
}

/// Finds a unit direction `v` at `x` (`[1,3,H,W]`) with small `|Jv|`.
/// Work is done in f64; the autoencoder should have been cast to f64 for
/// meaningful finite differences.
pub fn find_null_direction(ae: &dyn AutoEncoder, x: &Tensor, cfg: &NullProbeConfig) -> Result<NullProbe> {
    if cfg.power_iters == 0 || !(cfg.fd_eps > 0.0) {
        return Err(Error::InvalidArgument("probe needs power_iters > 0 and fd_eps > 0".into()));
    }
    let x = x.to_dtype(DType::F64)?.detach();
    let scale = scalar(&x.abs()?.max_all()?)?.max(1.0);
    let op = Operator { ae, x: x.clone(), eps: cfg.fd_eps * scale };

    let random_unit = |stream: u64| -> Result<Tensor> {
        let mut rng = step_rng(cfg.seed, purpose::PROBE, stream);
        let v: Vec<f64> = (0..x.elem_count()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = Tensor::from_vec(v, x.dims(), x.device())?;
        let n = norm(&t)?;
        Ok((t / n)?)
    };

    let mut v = random_unit(0)?;
    let mut lambda_max = 0.0;
    for _ in 0..cfg.power_iters {
        let (g, energy) = op.gram(&v)?;
        lambda_max = energy;
        let n = norm(&g)?;
        if n == 0.0 {
            break;
        }
        v = (g / n)?;
    }
    if !lambda_max.is_finite() {
        return Err(Error::NonFinite { step: 0, detail: "probe λmax".into() });
    }

    let r = random_unit(1)?;
    let (b, _) = op.gram(&r)?;
    let b_norm = norm(&b)?;
    let mut a = r.zeros_like()?;
    let mut res = b.clone();
    let mut p = b;
    let mut rs = b_norm * b_norm;
    for _ in 0..cfg.cg_iters {
        if rs.sqrt() <= cfg.cg_tol * b_norm {
            break;
        }
        let (gp, _) = op.gram(&p)?;
        let curvature = scalar(&(&p * &gp)?.sum_all()?)?;
        if !(curvature > 0.0) {
            break;
        }
        let alpha = rs / curvature;
        a = (a + (&p * alpha)?)?;
        res = (res - (gp * alpha)?)?;
        let rs_next = scalar(&res.sqr()?.sum_all()?)?;
        p = (&res + (p * (rs_next / rs))?)?;
        rs = rs_next;
    }
    let v = (r - a)?;
    let n = norm(&v)?;
    // `r` is a unit vector; a vanishing remainder means it was all range.
    if !(n > 1e-6) {
        return Err(Error::InvalidArgument("no null direction: the Jacobian has full rank".into()));
    }
    let v = (v / n)?;
    let jv = op.jv(&v)?;
    let rayleigh = scalar(&jv.sqr()?.sum_all()?)?;
    Ok(NullProbe { direction: v, lambda_max, rayleigh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::IdentityAe;
    use candle_core::Device;

    /// Keeps the mean of each 2×2 block: a linear map with a known null space.
    struct BlockMean;

    impl AutoEncoder for BlockMean {
        fn scale(&self) -> usize {
            2
        }
        fn is_frozen(&self) -> bool {
            true
        }
        fn autoencode(&self, x: &Tensor) -> Result<Tensor> {
            let (n, c, h, w) = x.dims4()?;
            let pooled = x
                .reshape((n, c, h / 2, 2, w / 2, 2))?
                .mean_keepdim(5)?
                .mean_keepdim(3)?;
            let up = pooled.broadcast_as((n, c, h / 2, 2, w / 2, 2))?.contiguous()?;
            Ok(up.reshape((n, c, h, w))?)
        }
    }

    fn input() -> Tensor {
        let v: Vec<f64> = (0..3 * 64).map(|i| ((i * 37 % 17) as f64) / 17.0).collect();
        Tensor::from_vec(v, (1, 3, 8, 8), &Device::Cpu).unwrap()
    }

    #[test]
    fn jvp_of_linear_map_is_exact() {
        let x = input();
        let v = (input() * 0.5).unwrap().sin().unwrap();
        let f = |t: &Tensor| -> Result<Tensor> { Ok((t * 3.0)?) };
        let jv = jvp_fd(&f, &x, &v, 1e-3).unwrap();
        let err = scalar(&(jv - (&v * 3.0).unwrap()).unwrap().abs().unwrap().max_all().unwrap()).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn block_mean_null_direction_found() {
        let p = find_null_direction(&BlockMean, &input(), &NullProbeConfig::default()).unwrap();
        // Block averaging is a projection, so its top eigenvalue is 1.
        assert!((p.lambda_max - 1.0).abs() < 1e-6, "{}", p.lambda_max);
        assert!(p.relative_gain() < 1e-12, "{}", p.relative_gain());
        assert!((norm(&p.direction).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_has_no_null_space() {
        let r = find_null_direction(&IdentityAe { scale: 2 }, &input(), &NullProbeConfig::default());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
