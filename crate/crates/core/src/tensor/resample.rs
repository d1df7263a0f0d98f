//! Separable bicubic resampling.
//!
//! Downscaling widens the kernel by the scale factor (antialiasing), the usual
//! convention for building SR training pairs. Borders use mirror reflection
//! without edge repetition (`dcb|abcd|cba`), which keeps alternating patterns
//! alternating across the border.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, to_level};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Bicubic,
}

/// Integer-factor resampling parameters, shared by data preparation and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub scale: usize,
    pub kernel: Kernel,
    pub kernel_a: f64,
    pub antialias: bool,
}

impl ResampleSpec {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            scale,
            kernel: Kernel::Bicubic,
            kernel_a: -0.5,
            antialias: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        if !self.kernel_a.is_finite() {
            return Err(Error::InvalidArgument("kernel parameter must be finite".into()));
        }
        Ok(())
    }
}

/// Keys' cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps for one output sample: `(source index, weight)` with weights summing to one.
pub type Taps = Vec<(usize, f64)>;

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// 1-D resampling weights from `n_in` samples to `n_out` samples.
///
/// `factor = n_out / n_in`; below one this is a downscale and, with
/// `antialias`, the kernel support stretches by `1/factor`.
pub fn resample_weights(n_in: usize, n_out: usize, spec: &ResampleSpec) -> Vec<Taps> {
    let factor = n_out as f64 / n_in as f64;
    let stretch = if factor < 1.0 && spec.antialias {
        1.0 / factor
    } else {
        1.0
    };
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / factor - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Taps = (lo..=hi)
                .filter_map(|j| {
                    let w = cubic_kernel((center - j as f64) / stretch, spec.kernel_a);
                    (w != 0.0).then(|| (reflect(j, n_in), w))
                })
                .collect();
            let total: f64 = taps.iter().map(|(_, w)| w).sum();
            for (_, w) in taps.iter_mut() {
                *w /= total;
            }
            taps
        })
        .collect()
}

/// Applies separable weights to each `[H,W]` plane of `data` (`planes` of them).
fn apply_separable(
    data: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    rows: &[Taps],
    cols: &[Taps],
) -> Vec<f64> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = vec![0.0; planes * oh * ow];
    let mut tmp = vec![0.0; h * ow];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (ox, taps) in cols.iter().enumerate() {
                tmp[y * ow + ox] = taps.iter().map(|&(i, wt)| wt * row[i]).sum();
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, taps) in rows.iter().enumerate() {
            for ox in 0..ow {
                dst[oy * ow + ox] = taps.iter().map(|&(i, wt)| wt * tmp[i * ow + ox]).sum();
            }
        }
    }
    out
}

fn resample(img: &ImageTensor, oh: usize, ow: usize, spec: &ResampleSpec) -> Result<ImageTensor> {
    let (n, c, h, w) = img.dims4();
    let rows = resample_weights(h, oh, spec);
    let cols = resample_weights(w, ow, spec);
    let out = apply_separable(&img.to_vec_f64()?, n * c, (h, w), &rows, &cols);
    let dims: Vec<usize> = if img.is_batched() {
        vec![n, c, oh, ow]
    } else {
        vec![c, oh, ow]
    };
    let t = Tensor::from_vec(out, dims, &Device::Cpu)?.to_dtype(img.dtype())?;
    ImageTensor::new(t, img.color())
}

/// `×s` bicubic downscale. Output is not clamped.
pub fn bicubic_downsample(img: &ImageTensor, spec: &ResampleSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let (_, _, h, w) = img.dims4();
    let s = spec.scale;
    if h % s != 0 || w % s != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} is not divisible by scale {s}"
        )));
    }
    resample(img, h / s, w / s, spec)
}

/// `×s` bicubic upscale. Output is not clamped.
pub fn bicubic_upsample(img: &ImageTensor, spec: &ResampleSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let (_, _, h, w) = img.dims4();
    resample(img, h * spec.scale, w * spec.scale, spec)
}

/// The dataset degradation: bicubic downscale followed by 8-bit quantization,
/// exactly what is written to (and read back from) an LR file.
pub fn degrade(hr: &ImageTensor, spec: &ResampleSpec) -> Result<ImageTensor> {
    let lr = bicubic_downsample(hr, spec)?;
    let levels: Vec<u8> = lr.to_vec_f64()?.into_iter().map(to_level).collect();
    ImageTensor::from_levels(&levels, lr.tensor().dims(), lr.color(), lr.dtype())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ColorSpace;
    use proptest::prelude::*;

    /// Direct 2-D evaluation of the antialiased kernel, independent of the
    /// separable tap tables.
    fn oracle_down(plane: &[f64], h: usize, w: usize, s: usize, a: f64) -> Vec<f64> {
        let (oh, ow) = (h / s, w / s);
        let sf = s as f64;
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = (oy as f64 + 0.5) * sf - 0.5;
                let cx = (ox as f64 + 0.5) * sf - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                let r = 2 * s as isize + 1;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let jy = cy.floor() as isize + dy;
                        let jx = cx.floor() as isize + dx;
                        let wgt = cubic_kernel((cy - jy as f64) / sf, a)
                            * cubic_kernel((cx - jx as f64) / sf, a);
                        let v = plane[reflect(jy, h) * w + reflect(jx, w)];
                        acc += wgt * v;
                        norm += wgt;
                    }
                }
                out[oy * ow + ox] = acc / norm;
            }
        }
        out
    }

    fn plane(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> ImageTensor {
        let v: Vec<f64> = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImageTensor::from_vec(v, (1, h, w), ColorSpace::Y).unwrap()
    }

    #[test]
    fn kernel_weights_partition_unity() {
        for s in 1..5 {
            for taps in resample_weights(16 * s, 16, &ResampleSpec::bicubic(s)) {
                let sum: f64 = taps.iter().map(|t| t.1).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_is_preserved_both_directions() {
        let spec = ResampleSpec::bicubic(4);
        let img = ImageTensor::constant(0.37, (3, 16, 8), ColorSpace::Rgb).unwrap();
        for v in bicubic_downsample(&img, &spec).unwrap().to_vec_f64().unwrap() {
            assert!((v - 0.37).abs() < 1e-12);
        }
        for v in bicubic_upsample(&img, &spec).unwrap().to_vec_f64().unwrap() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_averages_to_half() {
        let img = plane(4, 4, |y, x| ((y + x) % 2) as f64);
        let out = bicubic_downsample(&img, &ResampleSpec::bicubic(2)).unwrap();
        assert_eq!(out.tensor().dims(), &[1, 2, 2]);
        let oracle = oracle_down(&img.to_vec_f64().unwrap(), 4, 4, 2, -0.5);
        for (v, o) in out.to_vec_f64().unwrap().iter().zip(&oracle) {
            assert!((v - 0.5).abs() < 1e-12, "{v}");
            assert!((v - o).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_oracle_on_random_image() {
        let mut state = 12345u64;
        let img = plane(24, 16, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        });
        for s in [2, 4] {
            let out = bicubic_downsample(&img, &ResampleSpec::bicubic(s)).unwrap();
            let oracle = oracle_down(&img.to_vec_f64().unwrap(), 24, 16, s, -0.5);
            for (v, o) in out.to_vec_f64().unwrap().iter().zip(&oracle) {
                assert!((v - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_divisible_is_rejected() {
        let img = ImageTensor::constant(0.0, (1, 5, 4), ColorSpace::Y).unwrap();
        assert!(matches!(
            bicubic_downsample(&img, &ResampleSpec::bicubic(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn single_pixel_upsamples_to_constant() {
        let img = ImageTensor::constant(0.8, (1, 1, 1), ColorSpace::Y).unwrap();
        let out = bicubic_upsample(&img, &ResampleSpec::bicubic(2)).unwrap();
        assert_eq!(out.tensor().dims(), &[1, 2, 2]);
        for v in out.to_vec_f64().unwrap() {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_upsamples_to_kernel_footprint() {
        let img = plane(8, 8, |y, x| if (y, x) == (4, 4) { 1.0 } else { 0.0 });
        let out = bicubic_upsample(&img, &ResampleSpec::bicubic(2)).unwrap();
        let v = out.to_vec_f64().unwrap();
        // Away from the border, output (oy, ox) = k(dy) k(dx) with dy the
        // offset from the upsampled sample position to source pixel 4.
        for oy in 2..14 {
            for ox in 2..14 {
                let fy = (oy as f64 + 0.5) / 2.0 - 0.5 - 4.0;
                let fx = (ox as f64 + 0.5) / 2.0 - 0.5 - 4.0;
                let expect = cubic_kernel(fy, -0.5) * cubic_kernel(fx, -0.5);
                assert!((v[oy * 16 + ox] - expect).abs() < 1e-12, "({oy},{ox})");
            }
        }
    }

    proptest! {
        #[test]
        fn downsample_is_linear(
            xs in prop::collection::vec(-1.0f64..2.0, 64),
            ys in prop::collection::vec(-1.0f64..2.0, 64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let spec = ResampleSpec::bicubic(2);
            let x = ImageTensor::from_vec(xs.clone(), (1, 8, 8), ColorSpace::Y).unwrap();
            let y = ImageTensor::from_vec(ys.clone(), (1, 8, 8), ColorSpace::Y).unwrap();
            let mix: Vec<f64> = xs.iter().zip(&ys).map(|(p, q)| a * p + b * q).collect();
            let m = ImageTensor::from_vec(mix, (1, 8, 8), ColorSpace::Y).unwrap();
            let dm = bicubic_downsample(&m, &spec).unwrap().to_vec_f64().unwrap();
            let dx = bicubic_downsample(&x, &spec).unwrap().to_vec_f64().unwrap();
            let dy = bicubic_downsample(&y, &spec).unwrap().to_vec_f64().unwrap();
            for i in 0..dm.len() {
                prop_assert!((dm[i] - (a * dx[i] + b * dy[i])).abs() < 1e-10);
            }
        }
    }
}
