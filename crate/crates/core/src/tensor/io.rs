use std::path::Path;

use candle_core::DType;
use image::{GrayImage, RgbImage};

use super::{to_level, ColorSpace, ImageTensor, Plane};
use crate::error::{Error, Result};

/// Reads an 8-bit image as an RGB `[3,H,W]` tensor in `[0,1]`.
pub fn load_png(path: &Path, dtype: DType) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.into_raw();
    let mut planar = vec![0u8; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * h * w + i] = px[c];
        }
    }
    ImageTensor::from_levels(&planar, &[3, h, w], ColorSpace::Rgb, dtype)
}

/// Writes an unbatched image as 8-bit PNG (RGB or grayscale), clamping and rounding.
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let img = img.unbatched()?;
    let (_, c, h, w) = img.dims4();
    let levels = img.levels()?;
    let to_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    match img.color() {
        ColorSpace::Rgb => {
            let mut raw = vec![0u8; 3 * h * w];
            for i in 0..h * w {
                for ch in 0..c {
                    raw[3 * i + ch] = levels[ch * h * w + i];
                }
            }
            RgbImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer sized from dims")
                .save(path)
                .map_err(to_err)
        }
        ColorSpace::Y => GrayImage::from_raw(w as u32, h as u32, levels)
            .expect("buffer sized from dims")
            .save(path)
            .map_err(to_err),
    }
}

/// Grayscale PNG of a plane after dividing by `scale`.
pub fn save_plane_png(plane: &Plane, scale: f64, path: &Path) -> Result<()> {
    let levels: Vec<u8> = plane
        .data
        .iter()
        .map(|&v| to_level(if scale > 0.0 { v / scale } else { 0.0 }))
        .collect();
    GrayImage::from_raw(plane.width as u32, plane.height as u32, levels)
        .expect("buffer sized from dims")
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let v: Vec<f32> = (0..3 * 5 * 7).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let img = ImageTensor::from_vec(v, (3, 5, 7), ColorSpace::Rgb).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path, DType::F32).unwrap();
        assert_eq!(back.tensor().dims(), &[3, 5, 7]);
        assert_eq!(img.to_vec_f64().unwrap(), back.to_vec_f64().unwrap());
    }
}
