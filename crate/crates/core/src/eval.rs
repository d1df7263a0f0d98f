//! Distortion metrics, AE-space and LR-space consistency metrics, and the
//! diagnostic exports (loss maps, spectra, perception-distortion rows).
//!
//! All metrics are computed in f64 on `[0,1]` data with `MAX = 1`.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoEncoder;
use crate::data::PairedDataset;
use crate::error::{Error, IoContext, Result};
use crate::losses::{loss_perceptual, PerceptualExtractor};
use crate::networks::ModelState;
use crate::tensor::{
    bicubic_downsample, degrade, energy_above, lowpass_filter, rgb_to_y, save_plane_png, save_png,
    spectral_magnitude, ColorSpace, ImageTensor, Plane, ResampleSpec, Spectrum,
};

/// Stand-in for `+∞` dB so CSV logs stay numeric.
pub const PSNR_INF: f64 = 1e9;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_CUTOFF: f64 = 0.125;

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.tensor().dims() != b.tensor().dims() || a.color() != b.color() {
        return Err(Error::Dimension(format!(
            "metric inputs differ: {:?} {} vs {:?} {}",
            a.tensor().dims(),
            a.color().name(),
            b.tensor().dims(),
            b.color().name()
        )));
    }
    Ok(())
}

fn luma_if(img: &ImageTensor, on_y: bool) -> Result<ImageTensor> {
    if on_y && img.color() == ColorSpace::Rgb {
        rgb_to_y(img)
    } else {
        Ok(img.clone())
    }
}

fn luma_plane(img: &ImageTensor) -> Result<Plane> {
    Plane::luma_of(&luma_if(&img.unbatched()?, true)?)
}

fn luma_spectrum(img: &ImageTensor) -> Result<Spectrum> {
    spectral_magnitude(&luma_if(img, true)?)
}

/// Planes of an image (all batch items and channels), cropped by `border`.
fn cropped_planes(img: &ImageTensor, border: usize) -> Result<Vec<Plane>> {
    let (_, _, h, w) = img.dims4();
    if 2 * border >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "border {border} leaves nothing of a {h}x{w} image"
        )));
    }
    let mut planes = Vec::new();
    for item in img.split()? {
        let c = item.crop(border, border, h - 2 * border, w - 2 * border)?;
        planes.extend(Plane::channels_of(&c)?);
    }
    Ok(planes)
}

/// `10 log10(1 / MSE)`, optionally on luma, ignoring a `border`-pixel frame.
/// Identical inputs give [`PSNR_INF`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor, on_y: bool, border: usize) -> Result<f64> {
    same_shape(a, b)?;
    let pa = cropped_planes(&luma_if(a, on_y)?, border)?;
    let pb = cropped_planes(&luma_if(b, on_y)?, border)?;
    let (mut se, mut n) = (0.0, 0usize);
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.data.iter().zip(&y.data) {
            se += (u - v) * (u - v);
        }
        n += x.data.len();
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_INF);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_INF))
}

fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering.
fn filter_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &Plane, b: &Plane) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let taps = gaussian_taps();
    let (h, w) = (a.height, a.width);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let mu_a = filter_valid(&a.data, h, w, &taps);
    let mu_b = filter_valid(&b.data, h, w, &taps);
    let aa = filter_valid(&prod(&a.data, &a.data), h, w, &taps);
    let bb = filter_valid(&prod(&b.data, &b.data), h, w, &taps);
    let ab = filter_valid(&prod(&a.data, &b.data), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean local SSIM with an 11×11 Gaussian window (σ 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, `L = 1`, over valid window positions; averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, on_y: bool) -> Result<f64> {
    same_shape(a, b)?;
    let (_, _, h, w) = a.dims4();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("{h}x{w} is smaller than the SSIM window")));
    }
    let pa = cropped_planes(&luma_if(a, on_y)?, 0)?;
    let pb = cropped_planes(&luma_if(b, on_y)?, 0)?;
    let sum: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y)).sum();
    Ok(sum / pa.len() as f64)
}

fn autoencode_image(ae: &dyn AutoEncoder, img: &ImageTensor) -> Result<ImageTensor> {
    let batched = img.batched()?;
    let out = ae.autoencode(batched.tensor())?.to_dtype(img.dtype())?;
    let out = ImageTensor::new(out, img.color())?;
    if img.is_batched() {
        Ok(out)
    } else {
        out.unbatched()
    }
}

/// PSNR between `ψ(sr)` and `ψ(hr)` on luma with border `s`. Outputs are not clamped.
pub fn ae_psnr(sr: &ImageTensor, hr: &ImageTensor, ae: &dyn AutoEncoder) -> Result<f64> {
    if !ae.is_frozen() {
        return Err(Error::AeNotFrozen);
    }
    same_shape(sr, hr)?;
    let a = autoencode_image(ae, sr)?;
    let b = autoencode_image(ae, hr)?;
    psnr(&a, &b, true, ae.scale())
}

/// PSNR between the degraded SR image and the reference LR image, luma,
/// border 1. The degradation is the dataset's own (downscale then 8-bit
/// quantization), so an HR image scores [`PSNR_INF`] against its LR file.
pub fn lr_psnr(sr: &ImageTensor, lr_ref: &ImageTensor, spec: &ResampleSpec) -> Result<f64> {
    psnr(&degrade(sr, spec)?, lr_ref, true, 1)
}

/// As [`lr_psnr`] without the quantization step.
pub fn lr_psnr_unquantized(sr: &ImageTensor, lr_ref: &ImageTensor, spec: &ResampleSpec) -> Result<f64> {
    psnr(&bicubic_downsample(sr, spec)?, lr_ref, true, 1)
}

/// One metric value with the conventions used to compute it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub dataset: String,
    pub image: String,
    pub checkpoint: String,
    pub color_space: String,
    pub border: usize,
    pub quantized: bool,
}

impl MetricRecord {
    pub const CSV_HEADER: &'static str = "dataset,image,checkpoint,metric,value,color_space,border,quantized";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:e},{},{},{}",
            self.dataset, self.image, self.checkpoint, self.metric, self.value, self.color_space, self.border, self.quantized
        )
    }

    pub fn is_valid(&self) -> bool {
        match self.metric.as_str() {
            "ssim" => (-1.0..=1.0).contains(&self.value),
            m if m.contains("psnr") => self.value >= 0.0 && self.value <= PSNR_INF,
            _ => self.value.is_finite(),
        }
    }
}

pub fn write_metrics_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut text = format!("{}\n", MetricRecord::CSV_HEADER);
    for r in records {
        text.push_str(&r.csv());
        text.push('\n');
    }
    fs::write(path, text).at(path)
}

/// Runs the generator on a whole LR image.
pub fn super_resolve(generator: &ModelState, lr: &ImageTensor) -> Result<ImageTensor> {
    let out = generator.forward(lr.batched()?.tensor())?.to_dtype(DType::F32)?;
    ImageTensor::new(out, ColorSpace::Rgb)?.unbatched()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Round SR outputs to 8 bits (as if saved to PNG) before measuring.
    pub quantize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { quantize: true }
    }
}

/// Per-image psnr, ssim, lr_psnr and (with an autoencoder) ae_psnr for every
/// image of `ds`, sorted by (dataset, image, metric).
pub fn evaluate_dataset(
    generator: &ModelState,
    ae: Option<&dyn AutoEncoder>,
    ds: &PairedDataset,
    dataset_id: &str,
    checkpoint_id: &str,
    opts: EvalOptions,
) -> Result<Vec<MetricRecord>> {
    let s = ds.scale;
    let spec = ResampleSpec::bicubic(s);
    let mut out = Vec::new();
    for (i, entry) in ds.entries.iter().enumerate() {
        let (hr, lr) = (&ds.hr[i], &ds.lr[i]);
        let mut sr = super_resolve(generator, lr)?;
        if opts.quantize {
            sr = sr.quantized()?;
        }
        let record = |metric: &str, value: f64, border: usize| MetricRecord {
            metric: metric.into(),
            value,
            dataset: dataset_id.into(),
            image: entry.name.clone(),
            checkpoint: checkpoint_id.into(),
            color_space: "y".into(),
            border,
            quantized: opts.quantize,
        };
        out.push(record("psnr", psnr(&sr, hr, true, s)?, s));
        let (h, w) = (hr.height(), hr.width());
        let ssim_v = ssim(
            &sr.crop(s, s, h - 2 * s, w - 2 * s)?,
            &hr.crop(s, s, h - 2 * s, w - 2 * s)?,
            true,
        )?;
        out.push(record("ssim", ssim_v, s));
        out.push(record("lr_psnr", lr_psnr(&sr, lr, &spec)?, 1));
        if let Some(ae) = ae {
            out.push(record("ae_psnr", ae_psnr(&sr, hr, ae)?, s));
        }
    }
    out.sort_by(|a, b| (&a.dataset, &a.image, &a.metric).cmp(&(&b.dataset, &b.image, &b.metric)));
    Ok(out)
}

/// Mean of `metric` over records.
pub fn mean_metric(records: &[MetricRecord], metric: &str) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter(|r| r.metric == metric).map(|r| r.value).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Loss-map summary written next to the PNGs as `loss_maps.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMapReport {
    /// File name → value that maps to white.
    pub scales: Vec<(String, f64)>,
    pub mean_pixel: f64,
    pub mean_aesop: f64,
    pub mean_variance_proxy: f64,
}

fn channel_mean_abs_diff(a: &ImageTensor, b: &ImageTensor) -> Result<Plane> {
    let pa = Plane::channels_of(a)?;
    let pb = Plane::channels_of(b)?;
    let (h, w) = (pa[0].height, pa[0].width);
    let mut data = vec![0.0; h * w];
    for (x, y) in pa.iter().zip(&pb) {
        for (d, (u, v)) in data.iter_mut().zip(x.data.iter().zip(&y.data)) {
            *d += (u - v).abs() / pa.len() as f64;
        }
    }
    Plane::new(h, w, data)
}

fn max_of(p: &Plane) -> f64 {
    p.data.iter().cloned().fold(0.0, f64::max)
}

/// Writes the pixel residual `|sr-hr|`, the AE-space residual
/// `|ψ(sr)-ψ(hr)|`, the fidelity-bias image `ψ(hr)` and the variance proxy
/// `max(|sr-hr| - |ψ(sr)-ψ(hr)|, 0)`. Residual maps are channel means, each
/// divided by its own maximum; the scales are recorded.
pub fn export_loss_maps(
    sr: &ImageTensor,
    hr: &ImageTensor,
    ae: &dyn AutoEncoder,
    out_dir: &Path,
) -> Result<LossMapReport> {
    same_shape(sr, hr)?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let (sr, hr) = (sr.unbatched()?, hr.unbatched()?);
    let (ae_sr, ae_hr) = (autoencode_image(ae, &sr)?, autoencode_image(ae, &hr)?);
    let pixel = channel_mean_abs_diff(&sr, &hr)?;
    let aesop = channel_mean_abs_diff(&ae_sr, &ae_hr)?;
    let proxy = Plane::new(
        pixel.height,
        pixel.width,
        pixel.data.iter().zip(&aesop.data).map(|(p, a)| (p - a).max(0.0)).collect(),
    )?;
    let mut scales = Vec::new();
    for (name, plane) in [("pixel_residual.png", &pixel), ("aesop_residual.png", &aesop), ("variance_proxy.png", &proxy)] {
        let scale = max_of(plane);
        save_plane_png(plane, scale, &out_dir.join(name))?;
        scales.push((name.to_string(), scale));
    }
    save_png(&ae_hr, &out_dir.join("fidelity_bias.png"))?;
    scales.push(("fidelity_bias.png".into(), 1.0));
    let mean = |p: &Plane| p.data.iter().sum::<f64>() / p.data.len() as f64;
    let report = LossMapReport {
        scales,
        mean_pixel: mean(&pixel),
        mean_aesop: mean(&aesop),
        mean_variance_proxy: mean(&proxy),
    };
    let path = out_dir.join("loss_maps.json");
    fs::write(&path, serde_json::to_vec_pretty(&report)?).at(&path)?;
    Ok(report)
}

/// Spectra of an image, its autoencoding and its ideal low-pass, plus the
/// high-frequency retention of both branches.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub cutoff: f64,
    pub original: Spectrum,
    pub autoencoded: Spectrum,
    pub lowpass: Spectrum,
    /// `|log-spectrum(ψ(img)) - log-spectrum(lowpass(img))|`.
    pub difference: Spectrum,
    /// Luma energy above the cutoff in `ψ(img)` over that of `img`.
    pub retention_ae: f64,
    pub retention_lowpass: f64,
}

#[derive(Serialize)]
struct SpectralSummary {
    cutoff: f64,
    retention_ae: f64,
    retention_lowpass: f64,
}

pub fn spectral_report(img: &ImageTensor, ae: &dyn AutoEncoder, cutoff: f64) -> Result<SpectralReport> {
    let img = img.unbatched()?.to_dtype(DType::F64)?;
    let ae_img = autoencode_image(ae, &img)?;
    let lp = lowpass_filter(&img, cutoff)?;
    let base = energy_above(&luma_plane(&img)?, cutoff);
    let ratio = |x: &ImageTensor| -> Result<f64> {
        let e = energy_above(&luma_plane(x)?, cutoff);
        Ok(if base > 0.0 { e / base } else { 0.0 })
    };
    let (original, autoencoded, lowpass) = (luma_spectrum(&img)?, luma_spectrum(&ae_img)?, luma_spectrum(&lp)?);
    let difference = Spectrum {
        height: original.height,
        width: original.width,
        log_magnitude: autoencoded
            .log_magnitude
            .iter()
            .zip(&lowpass.log_magnitude)
            .map(|(a, b)| (a - b).abs())
            .collect(),
    };
    Ok(SpectralReport {
        cutoff,
        retention_ae: ratio(&ae_img)?,
        retention_lowpass: ratio(&lp)?,
        original,
        autoencoded,
        lowpass,
        difference,
    })
}

impl SpectralReport {
    /// Writes the four spectra as PNGs (shared scale) and a JSON summary.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).at(out_dir)?;
        let items = [
            ("spectrum_original.png", &self.original),
            ("spectrum_autoencoded.png", &self.autoencoded),
            ("spectrum_lowpass.png", &self.lowpass),
            ("spectrum_difference.png", &self.difference),
        ];
        let scale = items
            .iter()
            .flat_map(|(_, s)| s.log_magnitude.iter().cloned())
            .fold(0.0, f64::max);
        let mut paths = Vec::new();
        for (name, s) in items {
            let p = out_dir.join(name);
            save_plane_png(&s.as_plane(), scale, &p)?;
            paths.push(p);
        }
        let p = out_dir.join("spectral.json");
        let summary = SpectralSummary {
            cutoff: self.cutoff,
            retention_ae: self.retention_ae,
            retention_lowpass: self.retention_lowpass,
        };
        fs::write(&p, serde_json::to_vec_pretty(&summary)?).at(&p)?;
        paths.push(p);
        Ok(paths)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdRow {
    pub checkpoint: String,
    pub step: u64,
    pub psnr: f64,
    /// Higher is better; see [`perception_proxy`].
    pub perception: f64,
}

impl PdRow {
    pub const CSV_HEADER: &'static str = "checkpoint,step,psnr,perception_proxy";

    pub fn csv(&self) -> String {
        format!("{},{},{:e},{:e}", self.checkpoint, self.step, self.psnr, self.perception)
    }
}

/// Desk-scale perception score (not LPIPS): `-d · (1 + |ln r|)` where `d` is
/// the perceptual feature distance to HR and `r` the ratio of SR to HR luma
/// energy above [`DEFAULT_CUTOFF`]. Blurred (`r < 1`) and over-sharpened
/// (`r > 1`) outputs are both penalized.
pub fn perception_proxy(sr: &ImageTensor, hr: &ImageTensor, ext: &dyn PerceptualExtractor) -> Result<f64> {
    same_shape(sr, hr)?;
    let d = crate::losses::scalar(&loss_perceptual(sr.batched()?.tensor(), hr.batched()?.tensor(), ext)?)?;
    let e_sr = energy_above(&luma_plane(sr)?, DEFAULT_CUTOFF);
    let e_hr = energy_above(&luma_plane(hr)?, DEFAULT_CUTOFF);
    let r = if e_hr > 0.0 && e_sr > 0.0 { e_sr / e_hr } else { 1.0 };
    Ok(-d * (1.0 + r.ln().abs()))
}

/// One row per checkpoint, sorted by training step: mean luma PSNR and mean
/// perception proxy over `ds`.
pub fn pd_curve(
    checkpoints: &[(String, &ModelState)],
    ds: &PairedDataset,
    ext: &dyn PerceptualExtractor,
) -> Result<Vec<PdRow>> {
    let mut rows = Vec::new();
    for (id, g) in checkpoints {
        let (mut p, mut q) = (0.0, 0.0);
        for (hr, lr) in ds.hr.iter().zip(&ds.lr) {
            let sr = super_resolve(g, lr)?.quantized()?;
            p += psnr(&sr, hr, true, ds.scale)?.min(100.0);
            q += perception_proxy(&sr, hr, ext)?;
        }
        let n = ds.len() as f64;
        rows.push(PdRow { checkpoint: id.clone(), step: g.training_step(), psnr: p / n, perception: q / n });
    }
    rows.sort_by(|a, b| (a.step, &a.checkpoint).cmp(&(b.step, &b.checkpoint)));
    Ok(rows)
}

pub fn write_pd_csv(rows: &[PdRow], path: &Path) -> Result<()> {
    let mut text = format!("{}\n", PdRow::CSV_HEADER);
    for r in rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    fs::write(path, text).at(path)
}
