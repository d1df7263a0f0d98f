use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::networks::ModelState;

/// A frozen network whose intermediate activations define a feature space.
pub trait PerceptualExtractor {
    fn is_frozen(&self) -> bool;
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

impl PerceptualExtractor for ModelState {
    fn is_frozen(&self) -> bool {
        ModelState::is_frozen(self)
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        ModelState::features(self, x)
    }
}

/// Sum over feature layers of the mean absolute feature difference.
pub fn loss_perceptual(sr: &Tensor, hr: &Tensor, ext: &dyn PerceptualExtractor) -> Result<Tensor> {
    if !ext.is_frozen() {
        return Err(Error::Config("perceptual extractor must be frozen".into()));
    }
    let fs = ext.features(sr)?;
    let fh = ext.features(&hr.detach())?;
    let mut total: Option<Tensor> = None;
    for (a, b) in fs.iter().zip(&fh) {
        let term = (a - b.detach())?.abs()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("extractor produced no features".into()))
}
