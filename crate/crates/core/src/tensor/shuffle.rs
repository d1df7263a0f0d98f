//! Space-to-depth and its inverse.
//!
//! Channel order follows the common convention: input channel `c` at
//! sub-pixel offset `(i, j)` lands in output channel `c*s*s + i*s + j`.

use candle_core::Tensor;

use super::ImageTensor;
use crate::error::{Error, Result};

/// `[N,C,H,W] -> [N,C*s*s,H/s,W/s]`, differentiable.
pub fn pixel_unshuffle_tensor(x: &Tensor, s: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Dimension(format!(
            "pixel_unshuffle: {h}x{w} is not divisible by {s}"
        )));
    }
    let (oh, ow) = (h / s, w / s);
    let y = x
        .reshape((n * c, oh, s, ow, s))?
        .permute((0, 2, 4, 1, 3))?
        .reshape((n, c * s * s, oh, ow))?;
    Ok(y)
}

/// `[N,C*s*s,H,W] -> [N,C,H*s,W*s]`, differentiable.
pub fn pixel_shuffle_tensor(x: &Tensor, s: usize) -> Result<Tensor> {
    let (n, cs, h, w) = x.dims4()?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle: {cs} channels are not divisible by {}",
            s * s
        )));
    }
    let c = cs / (s * s);
    let y = x
        .reshape((n * c, s, s, h, w))?
        .permute((0, 3, 1, 4, 2))?
        .reshape((n, c, h * s, w * s))?;
    Ok(y)
}

fn apply(img: &ImageTensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let b = img.batched()?;
    let out = f(b.tensor())?;
    Ok(if img.is_batched() { out } else { out.squeeze(0)? })
}

/// The result carries `C*s*s` channels and is therefore returned as a raw tensor.
pub fn pixel_unshuffle(img: &ImageTensor, s: usize) -> Result<Tensor> {
    apply(img, |t| pixel_unshuffle_tensor(t, s))
}

pub fn pixel_shuffle(t: &Tensor, s: usize, color: super::ColorSpace) -> Result<ImageTensor> {
    let batched = t.rank() == 4;
    let b = if batched { t.clone() } else { t.unsqueeze(0)? };
    let out = pixel_shuffle_tensor(&b, s)?;
    let out = if batched { out } else { out.squeeze(0)? };
    ImageTensor::new(out, color)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ColorSpace;
    use candle_core::Device;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_order() {
        let img = ImageTensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (1, 2, 2), ColorSpace::Y)
            .unwrap();
        let t = pixel_unshuffle(&img, 2).unwrap();
        assert_eq!(t.dims(), &[4, 1, 1]);
        assert_eq!(t.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn channel_major_order() {
        // Two channels: channel 1 values must follow all four of channel 0.
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = Tensor::from_vec(v, (1, 2, 2, 2), &Device::Cpu).unwrap();
        let u = pixel_unshuffle_tensor(&t, 2).unwrap();
        assert_eq!(
            u.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            (0..8).map(|i| i as f64).collect::<Vec<_>>()
        );
    }

    #[test]
    fn indivisible_dims_error() {
        let t = Tensor::zeros((1, 3, 5, 4), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(pixel_unshuffle_tensor(&t, 2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_sum(n in 1usize..3, c in 1usize..4, hb in 1usize..4, wb in 1usize..4, s in 1usize..4) {
            let (h, w) = (hb * s, wb * s);
            let v: Vec<f64> = (0..n * c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
            let t = Tensor::from_vec(v.clone(), (n, c, h, w), &Device::Cpu).unwrap();
            let u = pixel_unshuffle_tensor(&t, s).unwrap();
            prop_assert_eq!(u.dims(), &[n, c * s * s, hb, wb]);
            let back = pixel_shuffle_tensor(&u, s).unwrap();
            prop_assert_eq!(back.flatten_all().unwrap().to_vec1::<f64>().unwrap(), v.clone());
            let su: f64 = u.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().sum();
            let sv: f64 = v.iter().sum();
            prop_assert!((su - sv).abs() < 1e-9);
        }
    }
}
