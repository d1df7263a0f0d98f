use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dihedral, PairedDataset};
use crate::error::{Error, Result};
use crate::tensor::{degrade, ImageTensor, ResampleSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub hr_patch: usize,
    pub batch: usize,
    /// Random flips and quarter turns.
    pub augment: bool,
}

/// Where one patch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub transform: Dihedral,
}

impl PatchOrigin {
    /// Offset of the matching LR crop.
    pub fn lr_offset(&self, scale: usize) -> (usize, usize) {
        (self.top / scale, self.left / scale)
    }
}

/// `hr` is `[B,3,P,P]`, `lr` is `[B,3,P/s,P/s]`, both `f32`.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub hr: Tensor,
    pub lr: Tensor,
    pub origins: Vec<PatchOrigin>,
}

/// Draws aligned HR/LR patch pairs.
///
/// HR offsets are multiples of the scale. The LR patch is the degradation of
/// the (augmented) HR patch itself, so `degrade(hr) == lr` holds exactly for
/// every pair; away from the patch border it also equals the stored LR crop
/// at `offset / s`.
pub fn sample_patch_batch<R: Rng>(
    ds: &PairedDataset,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<PatchBatch> {
    let (p, s) = (cfg.hr_patch, ds.scale);
    if p == 0 || p % s != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch {p} must be a positive multiple of scale {s}"
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let eligible: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.hr[i].height() >= p && ds.hr[i].width() >= p)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Dimension(format!("every image is smaller than the {p}px patch")));
    }
    let spec = ResampleSpec::bicubic(s);
    let mut hrs = Vec::with_capacity(cfg.batch);
    let mut lrs = Vec::with_capacity(cfg.batch);
    let mut origins = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let image = eligible[rng.random_range(0..eligible.len())];
        let img = &ds.hr[image];
        let top = s * rng.random_range(0..=(img.height() - p) / s);
        let left = s * rng.random_range(0..=(img.width() - p) / s);
        let transform = if cfg.augment {
            Dihedral::from_index(rng.random_range(0..8))
        } else {
            Dihedral::IDENTITY
        };
        let crop = img.crop(top, left, p, p)?;
        let hr = ImageTensor::new(transform.apply(crop.tensor())?, crop.color())?;
        let lr = degrade(&hr, &spec)?;
        hrs.push(hr.into_tensor());
        lrs.push(lr.into_tensor());
        origins.push(PatchOrigin {
            image,
            top,
            left,
            transform,
        });
    }
    Ok(PatchBatch {
        hr: Tensor::stack(&hrs, 0)?,
        lr: Tensor::stack(&lrs, 0)?,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare_dataset, write_synthetic_folder, PrepareConfig, Split};
    use crate::tensor::ColorSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(scale: usize) -> (tempfile::TempDir, PairedDataset) {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        write_synthetic_folder(&src, 4, 48, 11).unwrap();
        prepare_dataset(&src, &tmp.path().join("ds"), &PrepareConfig { scale, val_every: 0 }).unwrap();
        let ds = PairedDataset::open(&tmp.path().join("ds"), Split::Train).unwrap();
        (tmp, ds)
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn pairs_are_aligned_and_consistent_with_stored_lr() {
        let (_tmp, ds) = dataset(2);
        let cfg = SamplerConfig { hr_patch: 16, batch: 6, augment: false };
        let b = sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.lr.dims(), &[6, 3, 8, 8]);
        for (i, o) in b.origins.iter().enumerate() {
            assert_eq!(o.top % 2, 0);
            assert_eq!(o.left % 2, 0);
            let hr = ImageTensor::new(b.hr.get(i).unwrap(), ColorSpace::Rgb).unwrap();
            let lr = degrade(&hr, &ResampleSpec::bicubic(2)).unwrap();
            assert_eq!(flat(lr.tensor()), flat(&b.lr.get(i).unwrap()));
            // Interior LR pixels (two kernel taps from the border) match the stored file crop.
            let (ly, lx) = o.lr_offset(2);
            let stored = ds.lr[o.image].crop(ly + 2, lx + 2, 4, 4).unwrap();
            let mine = ImageTensor::new(b.lr.get(i).unwrap(), ColorSpace::Rgb).unwrap().crop(2, 2, 4, 4).unwrap();
            assert_eq!(flat(stored.tensor()), flat(mine.tensor()));
        }
    }

    #[test]
    fn augmentation_commutes_with_degradation() {
        let (_tmp, ds) = dataset(2);
        let cfg = SamplerConfig { hr_patch: 16, batch: 8, augment: true };
        let b = sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (i, o) in b.origins.iter().enumerate() {
            let hr = ds.hr[o.image].crop(o.top, o.left, 16, 16).unwrap();
            let lr = degrade(&hr, &ResampleSpec::bicubic(2)).unwrap();
            let expect = o.transform.apply(lr.tensor()).unwrap();
            assert_eq!(flat(&expect), flat(&b.lr.get(i).unwrap()));
        }
    }

    #[test]
    fn fixed_seed_reproduces_batches() {
        let (_tmp, ds) = dataset(4);
        let cfg = SamplerConfig { hr_patch: 16, batch: 3, augment: true };
        let a = sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(flat(&a.hr), flat(&b.hr));
        assert_eq!(a.origins, b.origins);
    }

    #[test]
    fn oversized_patch_rejected() {
        let (_tmp, ds) = dataset(2);
        let cfg = SamplerConfig { hr_patch: 64, batch: 1, augment: false };
        assert!(sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let cfg = SamplerConfig { hr_patch: 15, batch: 1, augment: false };
        assert!(sample_patch_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn patch_mean_tracks_dataset_mean() {
        let (_tmp, ds) = dataset(2);
        let cfg = SamplerConfig { hr_patch: 16, batch: 100, augment: true };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0.0;
        for _ in 0..10 {
            let b = sample_patch_batch(&ds, &cfg, &mut rng).unwrap();
            total += b.hr.mean_all().unwrap().to_scalar::<f32>().unwrap() as f64;
        }
        let mean = total / 10.0;
        assert!((mean - ds.hr_mean().unwrap()).abs() < 0.05, "{mean} vs {}", ds.hr_mean().unwrap());
    }
}
