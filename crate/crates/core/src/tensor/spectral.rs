//! 2-D Fourier analysis of single-channel planes.
//!
//! Radial frequency is `sqrt(fy^2 + fx^2) / sqrt(2)` with `fy, fx` in
//! cycles/pixel, so the Nyquist corner sits at exactly 0.5 and a cutoff of
//! 0.5 passes every bin.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{ColorSpace, ImageTensor};
use crate::error::{Error, Result};

/// A single real-valued `[H,W]` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} plane",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Every channel of an unbatched (or single-item batch) image.
    pub fn channels_of(img: &ImageTensor) -> Result<Vec<Plane>> {
        let img = img.unbatched()?;
        let (_, c, h, w) = img.dims4();
        let v = img.to_vec_f64()?;
        Ok(v.chunks(h * w)
            .take(c)
            .map(|d| Plane {
                height: h,
                width: w,
                data: d.to_vec(),
            })
            .collect())
    }

    /// The only plane of a luma image.
    pub fn luma_of(img: &ImageTensor) -> Result<Plane> {
        if img.color() != ColorSpace::Y {
            return Err(Error::ColorSpace {
                expected: ColorSpace::Y.name(),
                actual: img.color().name(),
            });
        }
        Ok(Self::channels_of(img)?.remove(0))
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Centered `log(1 + |F|)` magnitudes.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub log_magnitude: Vec<f64>,
}

impl Spectrum {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.log_magnitude[y * self.width + x]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn as_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.log_magnitude.clone(),
        }
    }
}

fn transform(plane: &[Complex<f64>], h: usize, w: usize, inverse: bool) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut buf = plane.to_vec();
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf
}

/// Unnormalized forward DFT, uncentered (`F[0]` is DC).
pub fn fft2(plane: &Plane) -> Vec<Complex<f64>> {
    let input: Vec<Complex<f64>> = plane.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(&input, plane.height, plane.width, false)
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let s = if k > n / 2 || (2 * k == n && k != 0) { k - n } else { k };
    s as f64 / n as f64
}

/// Normalized radial frequency of DFT bin `(ky, kx)`; in `[0, 0.5]`.
pub fn radial_frequency(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let fy = signed_freq(ky, h);
    let fx = signed_freq(kx, w);
    (fy * fy + fx * fx).sqrt() / std::f64::consts::SQRT_2
}

pub fn spectral_magnitude(img: &ImageTensor) -> Result<Spectrum> {
    spectral_magnitude_plane(&Plane::luma_of(img)?)
}

pub(crate) fn spectral_magnitude_plane(plane: &Plane) -> Result<Spectrum> {
    let (h, w) = (plane.height, plane.width);
    let f = fft2(plane);
    let mut out = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let sy = (ky + h / 2) % h;
            let sx = (kx + w / 2) % w;
            out[sy * w + sx] = f[ky * w + kx].norm().ln_1p();
        }
    }
    Ok(Spectrum {
        height: h,
        width: w,
        log_magnitude: out,
    })
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} outside (0, 0.5]"
        )));
    }
    Ok(())
}

/// Ideal circular low-pass of one plane.
pub fn lowpass_plane(plane: &Plane, cutoff: f64) -> Result<Plane> {
    check_cutoff(cutoff)?;
    let (h, w) = (plane.height, plane.width);
    let mut f = fft2(plane);
    for ky in 0..h {
        for kx in 0..w {
            if radial_frequency(ky, kx, h, w) > cutoff {
                f[ky * w + kx] = Complex::new(0.0, 0.0);
            }
        }
    }
    let back = transform(&f, h, w, true);
    let n = (h * w) as f64;
    Ok(Plane {
        height: h,
        width: w,
        data: back.iter().map(|c| c.re / n).collect(),
    })
}

/// Applies [`lowpass_plane`] to every channel.
pub fn lowpass_filter(img: &ImageTensor, cutoff: f64) -> Result<ImageTensor> {
    check_cutoff(cutoff)?;
    let planes = Plane::channels_of(img)?;
    let mut out = Vec::with_capacity(planes.len() * planes[0].data.len());
    for p in &planes {
        out.extend(lowpass_plane(p, cutoff)?.data);
    }
    img.unbatched()?.with_values(out)
}

/// Spectral energy `sum |F|^2` over bins with radial frequency above `cutoff`.
pub fn energy_above(plane: &Plane, cutoff: f64) -> f64 {
    let (h, w) = (plane.height, plane.width);
    let f = fft2(plane);
    let mut e = 0.0;
    for ky in 0..h {
        for kx in 0..w {
            if radial_frequency(ky, kx, h, w) > cutoff {
                e += f[ky * w + kx].norm_sqr();
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn luma(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> ImageTensor {
        let v: Vec<f64> = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImageTensor::from_vec(v, (1, h, w), ColorSpace::Y).unwrap()
    }

    fn noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut s = seed;
        luma(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn constant_has_only_dc() {
        let s = spectral_magnitude(&luma(8, 6, |_, _| 0.4)).unwrap();
        let (cy, cx) = s.center();
        for y in 0..8 {
            for x in 0..6 {
                let v = s.get(y, x);
                if (y, x) == (cy, cx) {
                    assert!((v - (0.4f64 * 48.0).ln_1p()).abs() < 1e-12);
                } else {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn horizontal_sinusoid_has_symmetric_peaks() {
        let img = luma(16, 16, |_, x| (2.0 * PI * 3.0 * x as f64 / 16.0).cos());
        let s = spectral_magnitude(&img).unwrap();
        let (cy, cx) = s.center();
        // 16*16/2 for a unit-amplitude cosine.
        let peak = 128.0f64.ln_1p();
        assert!((s.get(cy, cx + 3) - peak).abs() < 1e-9);
        assert!((s.get(cy, cx - 3) - peak).abs() < 1e-9);
        let others: f64 = (0..256)
            .filter(|&i| i != cy * 16 + cx + 3 && i != cy * 16 + cx - 3)
            .map(|i| s.log_magnitude[i])
            .sum();
        assert!(others < 1e-9);
    }

    #[test]
    fn parseval() {
        let p = Plane::luma_of(&noise(12, 10, 7)).unwrap();
        let f = fft2(&p);
        let lhs: f64 = f.iter().map(|c| c.norm_sqr()).sum();
        let rhs = (12 * 10) as f64 * p.energy();
        assert!((lhs - rhs).abs() < 1e-9 * rhs);
    }

    #[test]
    fn nyquist_cutoff_is_identity() {
        for (h, w) in [(16, 16), (9, 12)] {
            let img = noise(h, w, 3);
            let out = lowpass_filter(&img, 0.5).unwrap();
            for (a, b) in img.to_vec_f64().unwrap().iter().zip(out.to_vec_f64().unwrap()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_survives_any_cutoff() {
        let img = luma(8, 8, |_, _| 0.6);
        for c in [0.01, 0.1, 0.3] {
            for v in lowpass_filter(&img, c).unwrap().to_vec_f64().unwrap() {
                assert!((v - 0.6).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_above_cutoff_vanishes() {
        let img = luma(16, 16, |y, x| (2.0 * PI * (5.0 * x as f64 + 4.0 * y as f64) / 16.0).sin());
        // radial frequency sqrt(25+16)/16/sqrt2 ~ 0.283
        for v in lowpass_filter(&img, 0.2).unwrap().to_vec_f64().unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn hf_energy_removed_by_lowpass() {
        let p = Plane::luma_of(&noise(16, 16, 11)).unwrap();
        let low = lowpass_plane(&p, 0.125).unwrap();
        let total: f64 = fft2(&p).iter().map(|c| c.norm_sqr()).sum();
        assert!(energy_above(&low, 0.125) < 1e-6 * total);
    }

    #[test]
    fn cutoff_out_of_range() {
        let img = luma(4, 4, |_, _| 0.0);
        assert!(lowpass_filter(&img, 0.0).is_err());
        assert!(lowpass_filter(&img, 0.51).is_err());
    }

    #[test]
    fn radial_frequency_range() {
        assert_eq!(radial_frequency(0, 0, 8, 8), 0.0);
        assert!((radial_frequency(4, 4, 8, 8) - 0.5).abs() < 1e-15);
        assert!((radial_frequency(0, 4, 8, 8) - 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }
}
