//! Planar image arrays and the deterministic low-level operators built on them.
//!
//! Images are stored row-major as `[C, H, W]` (or batched `[N, C, H, W]`) with
//! values nominally in `[0, 1]`. Nothing on the loss path clamps; clamping and
//! 8-bit quantization happen only in [`ImageTensor::quantized`] and PNG export.

mod color;
mod io;
mod resample;
mod shuffle;
mod spectral;

pub use color::{rgb_to_y, rgb_to_y_tensor, Y_COEFFS};
pub use io::{load_png, save_png, save_plane_png};
pub use resample::{
    bicubic_downsample, bicubic_upsample, cubic_kernel, degrade, resample_weights, Kernel,
    ResampleSpec, Taps,
};
pub use shuffle::{pixel_shuffle, pixel_shuffle_tensor, pixel_unshuffle, pixel_unshuffle_tensor};
pub use spectral::{
    energy_above, fft2, lowpass_filter, lowpass_plane, radial_frequency, spectral_magnitude,
    Plane, Spectrum,
};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Y,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Y => "y",
        }
    }
}

/// Image or image batch with an explicit color-space tag.
#[derive(Clone, Debug)]
pub struct ImageTensor {
    data: Tensor,
    color: ColorSpace,
}

impl ImageTensor {
    /// Wraps a `[C,H,W]` or `[N,C,H,W]` tensor, checking the channel count and finiteness.
    pub fn new(data: Tensor, color: ColorSpace) -> Result<Self> {
        let dims = data.dims().to_vec();
        let (c, h, w) = match dims.as_slice() {
            [c, h, w] | [_, c, h, w] => (*c, *h, *w),
            _ => {
                return Err(Error::Dimension(format!(
                    "image tensors are [C,H,W] or [N,C,H,W], got {dims:?}"
                )))
            }
        };
        if c != color.channels() {
            return Err(Error::Dimension(format!(
                "{} image needs {} channels, got {c}",
                color.name(),
                color.channels()
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::Dimension(format!("empty image {h}x{w}")));
        }
        if !matches!(data.dtype(), DType::F32 | DType::F64) {
            return Err(Error::InvalidArgument(format!(
                "unsupported dtype {:?}",
                data.dtype()
            )));
        }
        let img = Self { data, color };
        if img.to_vec_f64()?.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(img)
    }

    /// Builds an unbatched image from row-major `[C,H,W]` data.
    pub fn from_vec<T: candle_core::WithDType>(
        data: Vec<T>,
        (c, h, w): (usize, usize, usize),
        color: ColorSpace,
    ) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Dimension(format!(
                "{} values do not fill [{c},{h},{w}]",
                data.len()
            )));
        }
        Self::new(Tensor::from_vec(data, (c, h, w), &Device::Cpu)?, color)
    }

    pub fn constant(value: f64, (c, h, w): (usize, usize, usize), color: ColorSpace) -> Result<Self> {
        Self::from_vec(vec![value; c * h * w], (c, h, w), color)
    }

    /// Builds an image from 8-bit levels, mapping `k -> k/255` in the requested dtype.
    pub fn from_levels(
        levels: &[u8],
        dims: &[usize],
        color: ColorSpace,
        dtype: DType,
    ) -> Result<Self> {
        let t = match dtype {
            DType::F64 => {
                let v: Vec<f64> = levels.iter().map(|&k| level_f64(k)).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            _ => {
                let v: Vec<f32> = levels.iter().map(|&k| level_f32(k)).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
        };
        Self::new(t, color)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn is_batched(&self) -> bool {
        self.data.rank() == 4
    }

    /// `(N, C, H, W)`, with `N = 1` for unbatched images.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dims();
        if d.len() == 4 {
            (d[0], d[1], d[2], d[3])
        } else {
            (1, d[0], d[1], d[2])
        }
    }

    pub fn height(&self) -> usize {
        self.dims4().2
    }

    pub fn width(&self) -> usize {
        self.dims4().3
    }

    /// Always-batched view `[N,C,H,W]`.
    pub fn batched(&self) -> Result<ImageTensor> {
        if self.is_batched() {
            return Ok(self.clone());
        }
        Ok(Self {
            data: self.data.unsqueeze(0)?,
            color: self.color,
        })
    }

    /// Drops a leading batch dimension of size one.
    pub fn unbatched(&self) -> Result<ImageTensor> {
        match self.data.dims() {
            [1, _, _, _] => Ok(Self {
                data: self.data.squeeze(0)?,
                color: self.color,
            }),
            [_, _, _] => Ok(self.clone()),
            d => Err(Error::Dimension(format!("cannot unbatch {d:?}"))),
        }
    }

    /// Splits a batch into its images.
    pub fn split(&self) -> Result<Vec<ImageTensor>> {
        let b = self.batched()?;
        (0..b.dims4().0)
            .map(|i| {
                Ok(Self {
                    data: b.data.get(i)?,
                    color: self.color,
                })
            })
            .collect()
    }

    /// Stacks unbatched images of equal shape into one batch.
    pub fn stack(images: &[ImageTensor]) -> Result<ImageTensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero images".into()))?;
        let ts: Vec<Tensor> = images
            .iter()
            .map(|i| i.unbatched().map(|u| u.data))
            .collect::<Result<_>>()?;
        Ok(Self {
            data: Tensor::stack(&ts, 0)?,
            color: first.color,
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<ImageTensor> {
        Ok(Self {
            data: self.data.to_dtype(dtype)?,
            color: self.color,
        })
    }

    pub fn to_vec_f64(&self) -> Result<Vec<f64>> {
        Ok(self
            .data
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }

    /// Same shape and tag, new contents (row-major).
    pub fn with_values(&self, values: Vec<f64>) -> Result<ImageTensor> {
        let t = Tensor::from_vec(values, self.data.dims(), &Device::Cpu)?.to_dtype(self.dtype())?;
        ImageTensor::new(t, self.color)
    }

    /// Clamps to `[0,1]` and rounds to the nearest 8-bit level.
    pub fn levels(&self) -> Result<Vec<u8>> {
        Ok(self.to_vec_f64()?.into_iter().map(to_level).collect())
    }

    /// Quantize-dequantize through 8 bits, matching what a PNG round trip produces.
    pub fn quantized(&self) -> Result<ImageTensor> {
        Self::from_levels(&self.levels()?, self.data.dims(), self.color, self.dtype())
    }

    /// Crops `[top..top+h, left..left+w]` from every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageTensor> {
        let (_, _, ih, iw) = self.dims4();
        if top + h > ih || left + w > iw || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "crop {h}x{w}+{top}+{left} outside {ih}x{iw}"
            )));
        }
        let r = self.data.rank();
        let data = self.data.narrow(r - 2, top, h)?.narrow(r - 1, left, w)?;
        Ok(Self {
            data: data.contiguous()?,
            color: self.color,
        })
    }
}

pub(crate) fn to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn level_f32(k: u8) -> f32 {
    k as f32 / 255.0
}

pub(crate) fn level_f64(k: u8) -> f64 {
    k as f64 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_channel_count() {
        let t = Tensor::zeros((2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(
            ImageTensor::new(t, ColorSpace::Rgb),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        let r = ImageTensor::from_vec(vec![0.0f32, f32::NAN, 0.0], (1, 1, 3), ColorSpace::Y);
        assert!(r.is_err());
    }

    #[test]
    fn batch_round_trip_is_lossless() {
        let img = ImageTensor::from_vec(
            (0..48).map(|i| i as f32 / 48.0).collect(),
            (3, 4, 4),
            ColorSpace::Rgb,
        )
        .unwrap();
        let back = img.batched().unwrap().unbatched().unwrap();
        assert_eq!(img.to_vec_f64().unwrap(), back.to_vec_f64().unwrap());
        assert_eq!(back.tensor().dims(), &[3, 4, 4]);
    }

    #[test]
    fn quantize_matches_level_mapping() {
        let img =
            ImageTensor::from_vec(vec![-0.2f32, 0.5, 1.3], (1, 1, 3), ColorSpace::Y).unwrap();
        assert_eq!(img.levels().unwrap(), vec![0, 128, 255]);
        let q = img.quantized().unwrap().to_vec_f64().unwrap();
        assert_eq!(q[1], (128f32 / 255.0) as f64);
    }
}
