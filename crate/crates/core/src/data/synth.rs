//! Procedural test images with natural-image-like statistics: smooth shading,
//! multi-octave noise, hard-edged shapes and high-frequency gratings.

use std::f64::consts::PI;

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ColorSpace, ImageTensor};

/// Value noise on a `cells × cells` grid, bilinearly interpolated to `h × w`.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / h as f64 * cells as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |yy: usize, xx: usize| grid[yy.min(cells) * g + xx.min(cells)];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Deterministic `[3,h,w]` RGB image on the 8-bit grid.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let mut img = vec![0.0f64; 3 * n];

    // Shaded background.
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let angle = rng.random::<f64>() * 2.0 * PI;
    let (dy, dx) = angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 + 0.5 * ((y as f64 / h as f64 - 0.5) * dy + (x as f64 / w as f64 - 0.5) * dx);
            for c in 0..3 {
                img[c * n + y * w + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    // Roughly 1/f noise: octave amplitudes halve as frequency doubles.
    let mut cells = 2;
    let mut amp = 0.25;
    while cells <= h.max(w) / 2 {
        for c in 0..3 {
            let noise = value_noise(&mut rng, h, w, cells);
            for (p, v) in img[c * n..(c + 1) * n].iter_mut().zip(noise) {
                *p += amp * v;
            }
        }
        cells *= 2;
        amp *= 0.5;
    }

    // Hard-edged shapes, some carrying a fine grating texture.
    let shapes = 3 + rng.random_range(0..5);
    for _ in 0..shapes {
        let color = random_color(&mut rng);
        let alpha = rng.random_range(0.6..1.0);
        let cy = rng.random::<f64>() * h as f64;
        let cx = rng.random::<f64>() * w as f64;
        let ry = rng.random_range(0.05..0.3) * h as f64;
        let rx = rng.random_range(0.05..0.3) * w as f64;
        let circle = rng.random_bool(0.5);
        let textured = rng.random_bool(0.5);
        let period = rng.random_range(2.0..5.0);
        let theta = rng.random::<f64>() * PI;
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if circle {
                    u * u + v * v <= 1.0
                } else {
                    u.abs() <= 1.0 && v.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                let tex = if textured {
                    let phase = (y as f64 * theta.sin() + x as f64 * theta.cos()) * 2.0 * PI / period;
                    0.2 * phase.sin()
                } else {
                    0.0
                };
                for c in 0..3 {
                    let i = c * n + y * w + x;
                    img[i] = img[i] * (1.0 - alpha) + (color[c] + tex) * alpha;
                }
            }
        }
    }

    // Sparse fine grain.
    for p in img.iter_mut() {
        *p += 0.02 * (rng.random::<f64>() - 0.5);
    }

    let levels: Vec<u8> = img.iter().map(|&v| crate::tensor::to_level(v)).collect();
    ImageTensor::from_levels(&levels, &[3, h, w], ColorSpace::Rgb, DType::F32)
}

/// `[3,h,w]` image split into a dark left half and a bright right half.
pub fn step_edge_image(h: usize, w: usize) -> Result<ImageTensor> {
    let mut v = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in w / 2..w {
                v[(c * h + y) * w + x] = 1.0;
            }
        }
    }
    ImageTensor::from_vec(v, (3, h, w), ColorSpace::Rgb)
}
