//! Training objectives. Every image loss is a mean over elements and returns a
//! scalar tensor so it can be backpropagated; inputs are `[N,3,H,W]` batches.

mod adversarial;
mod artifact;
mod nullspace;
mod perceptual;

pub use adversarial::{loss_adversarial, relativistic_losses, AdversarialLosses};
pub use artifact::{artifact_weight_map, local_variance, loss_artifact, ARTIFACT_WINDOW};
pub use nullspace::{find_null_direction, jvp_fd, NullProbe, NullProbeConfig};
pub use perceptual::{loss_perceptual, PerceptualExtractor};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoEncoder;
use crate::error::{Error, Result};
use crate::networks::ModelState;

/// Exponent of the pixel-space norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    /// `mean |a - b|^p`.
    pub fn mean_distance(self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::Dimension(format!(
                "loss inputs differ in shape: {:?} vs {:?}",
                a.dims(),
                b.dims()
            )));
        }
        let d = (a - b)?;
        Ok(match self {
            Norm::L1 => d.abs()?.mean_all()?,
            Norm::L2 => d.sqr()?.mean_all()?,
        })
    }
}

/// Pixel-space reconstruction loss.
pub fn loss_pix(sr: &Tensor, hr: &Tensor, p: Norm) -> Result<Tensor> {
    p.mean_distance(sr, hr)
}

/// Distance between the auto-encoded SR and HR images, measured after the
/// decoder. Gradients reach `sr` only; an unfrozen autoencoder is refused.
pub fn loss_aesop(sr: &Tensor, hr: &Tensor, ae: &dyn AutoEncoder, p: Norm) -> Result<Tensor> {
    if !ae.is_frozen() {
        return Err(Error::AeNotFrozen);
    }
    let target = ae.autoencode(&hr.detach())?;
    loss_aesop_with_target(sr, &target, ae, p)
}

/// As [`loss_aesop`] with a precomputed `ψ(hr)`.
pub fn loss_aesop_with_target(
    sr: &Tensor,
    ae_hr: &Tensor,
    ae: &dyn AutoEncoder,
    p: Norm,
) -> Result<Tensor> {
    if !ae.is_frozen() {
        return Err(Error::AeNotFrozen);
    }
    p.mean_distance(&ae.autoencode(sr)?, &ae_hr.detach())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Pixel + perceptual + adversarial + artifact.
    Baseline,
    /// The pixel term replaced by the auto-encoded term.
    Aesop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    pub lambda_aesop: f64,
    pub lambda_pix: f64,
    pub lambda_percep: f64,
    pub lambda_adv: f64,
    pub lambda_artif: f64,
    pub p: Norm,
}

impl LossConfig {
    pub fn baseline() -> Self {
        Self {
            mode: LossMode::Baseline,
            lambda_aesop: 0.0,
            lambda_pix: 0.01,
            lambda_percep: 1.0,
            lambda_adv: 0.005,
            lambda_artif: 1.0,
            p: Norm::L1,
        }
    }

    pub fn aesop() -> Self {
        Self {
            mode: LossMode::Aesop,
            lambda_aesop: 1.0,
            lambda_pix: 0.0,
            ..Self::baseline()
        }
    }

    /// Only the term selected by the mode is active; the other coefficient is ignored.
    pub fn effective_pix(&self) -> f64 {
        match self.mode {
            LossMode::Baseline => self.lambda_pix,
            LossMode::Aesop => 0.0,
        }
    }

    pub fn effective_aesop(&self) -> f64 {
        match self.mode {
            LossMode::Aesop => self.lambda_aesop,
            LossMode::Baseline => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_aesop,
            self.lambda_pix,
            self.lambda_percep,
            self.lambda_adv,
            self.lambda_artif,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("loss coefficients must be finite and non-negative".into()));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::aesop()
    }
}

/// Raw (unweighted) loss terms of one step plus the weighted generator total.
/// Inactive terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub aesop: f64,
    pub pix: f64,
    pub percep: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub artif: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,aesop,pix,percep,adv_g,adv_d,artif,total";

    /// Values printed with full round-trip precision.
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.aesop, self.pix, self.percep, self.adv_g, self.adv_d, self.artif, self.total
        )
    }

    /// `Σ λ·term` under `cfg`; equals `total` for breakdowns from [`total_loss`].
    pub fn weighted_sum(&self, cfg: &LossConfig) -> f64 {
        cfg.effective_aesop() * self.aesop
            + cfg.effective_pix() * self.pix
            + cfg.lambda_percep * self.percep
            + cfg.lambda_adv * self.adv_g
            + cfg.lambda_artif * self.artif
    }

    pub fn is_finite(&self) -> bool {
        [self.aesop, self.pix, self.percep, self.adv_g, self.adv_d, self.artif, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Auxiliary models a generator objective may need.
#[derive(Clone, Copy, Default)]
pub struct LossInputs<'a> {
    pub ae: Option<&'a dyn AutoEncoder>,
    /// `ψ(hr)` if already computed for this batch.
    pub ae_hr: Option<&'a Tensor>,
    pub extractor: Option<&'a dyn PerceptualExtractor>,
    pub discriminator: Option<&'a ModelState>,
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Generator objective for `cfg.mode`. Terms with a zero coefficient are not
/// evaluated, so they contribute neither value nor gradient.
pub fn total_loss(
    cfg: &LossConfig,
    sr: &Tensor,
    hr: &Tensor,
    aux: LossInputs<'_>,
) -> Result<(Tensor, LossBreakdown)> {
    cfg.validate()?;
    let mut b = LossBreakdown::default();
    let mut total = sr.zeros_like()?.sum_all()?;
    let mut add = |lambda: f64, term: Tensor, slot: &mut f64| -> Result<()> {
        *slot = scalar(&term)?;
        total = (&total + (term * lambda)?)?;
        Ok(())
    };

    let l_aesop = cfg.effective_aesop();
    if l_aesop > 0.0 {
        let ae = aux
            .ae
            .ok_or_else(|| Error::Config("aesop mode needs a frozen autoencoder".into()))?;
        let term = match aux.ae_hr {
            Some(t) => loss_aesop_with_target(sr, t, ae, cfg.p)?,
            None => loss_aesop(sr, hr, ae, cfg.p)?,
        };
        add(l_aesop, term, &mut b.aesop)?;
    }
    let l_pix = cfg.effective_pix();
    if l_pix > 0.0 {
        add(l_pix, loss_pix(sr, hr, cfg.p)?, &mut b.pix)?;
    }
    if cfg.lambda_percep > 0.0 {
        let ext = aux
            .extractor
            .ok_or_else(|| Error::Config("perceptual term needs a feature extractor".into()))?;
        add(cfg.lambda_percep, loss_perceptual(sr, hr, ext)?, &mut b.percep)?;
    }
    if cfg.lambda_adv > 0.0 {
        let d = aux
            .discriminator
            .ok_or_else(|| Error::Config("adversarial term needs a discriminator".into()))?;
        add(cfg.lambda_adv, loss_adversarial(sr, hr, d)?.g_loss, &mut b.adv_g)?;
    }
    if cfg.lambda_artif > 0.0 {
        add(cfg.lambda_artif, loss_artifact(sr, hr, None)?, &mut b.artif)?;
    }
    b.total = scalar(&total)?;
    Ok((total, b))
}
