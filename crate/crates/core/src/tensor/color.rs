use candle_core::Tensor;

use super::{ColorSpace, ImageTensor};
use crate::error::{Error, Result};

/// Full-range BT.601 luma weights on `[0,1]` data.
pub const Y_COEFFS: [f64; 3] = [0.299, 0.587, 0.114];

/// Luma of a `[...,3,H,W]` tensor on the channel axis, kept as a 1-channel tensor.
///
/// Evaluated as `g + kr (r - g) + kb (b - g)`, which equals the weighted sum
/// and returns gray inputs bit-for-bit.
pub fn rgb_to_y_tensor(t: &Tensor) -> Result<Tensor> {
    let axis = t.rank() - 3;
    let r = t.narrow(axis, 0, 1)?;
    let g = t.narrow(axis, 1, 1)?;
    let b = t.narrow(axis, 2, 1)?;
    let y = ((&g + ((&r - &g)? * Y_COEFFS[0])?)? + ((&b - &g)? * Y_COEFFS[2])?)?;
    Ok(y)
}

pub fn rgb_to_y(img: &ImageTensor) -> Result<ImageTensor> {
    if img.color() != ColorSpace::Rgb {
        return Err(Error::ColorSpace {
            expected: ColorSpace::Rgb.name(),
            actual: img.color().name(),
        });
    }
    ImageTensor::new(rgb_to_y_tensor(img.tensor())?, ColorSpace::Y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pixel(r: f64, g: f64, b: f64) -> f64 {
        let img = ImageTensor::from_vec(vec![r, g, b], (3, 1, 1), ColorSpace::Rgb).unwrap();
        rgb_to_y(&img).unwrap().to_vec_f64().unwrap()[0]
    }

    #[test]
    fn primaries() {
        assert_eq!(pixel(1.0, 1.0, 1.0), 1.0);
        assert_eq!(pixel(0.0, 0.0, 0.0), 0.0);
        assert!((pixel(1.0, 0.0, 0.0) - 0.299).abs() < 1e-15);
        assert!((pixel(0.0, 1.0, 0.0) - 0.587).abs() < 1e-15);
        assert!((pixel(0.0, 0.0, 1.0) - 0.114).abs() < 1e-15);
    }

    #[test]
    fn rejects_luma_input() {
        let img = ImageTensor::constant(0.5, (1, 2, 2), ColorSpace::Y).unwrap();
        assert!(matches!(rgb_to_y(&img), Err(Error::ColorSpace { .. })));
    }

    #[test]
    fn batched_input_keeps_batch_axis() {
        let img = ImageTensor::constant(0.25, (3, 2, 2), ColorSpace::Rgb)
            .unwrap()
            .batched()
            .unwrap();
        let y = rgb_to_y(&img).unwrap();
        assert_eq!(y.tensor().dims(), &[1, 1, 2, 2]);
    }

    proptest! {
        #[test]
        fn gray_is_exact(v in 0.0f64..1.0) {
            prop_assert_eq!(pixel(v, v, v), v);
            let img = ImageTensor::from_vec(vec![v as f32; 3], (3, 1, 1), ColorSpace::Rgb).unwrap();
            let y = rgb_to_y(&img).unwrap().to_vec_f64().unwrap()[0];
            prop_assert_eq!(y, v as f32 as f64);
        }

        #[test]
        fn matches_weighted_sum(r in 0.0f64..1.0, g in 0.0f64..1.0, b in 0.0f64..1.0) {
            let direct = Y_COEFFS[0] * r + Y_COEFFS[1] * g + Y_COEFFS[2] * b;
            prop_assert!((pixel(r, g, b) - direct).abs() < 1e-14);
        }
    }
}
