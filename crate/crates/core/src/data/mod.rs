//! Paired HR/LR datasets: preparation with a checksummed manifest, auditing,
//! and deterministic patch sampling.
//!
//! On-disk layout under a dataset root:
//!
//! ```text
//! manifest.jsonl      one JSON record per image (see ManifestEntry)
//! hr/<name>.png       HR image, center-cropped to dims divisible by the scale
//! lr_x<s>/<name>.png  its 8-bit bicubic downscale
//! ```

mod augment;
mod sampler;
mod synth;

pub use augment::Dihedral;
pub use sampler::{sample_patch_batch, PatchBatch, SamplerConfig};
pub use synth::{step_edge_image, synthetic_image};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::tensor::{degrade, load_png, save_png, ImageTensor, ResampleSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    /// Paths relative to the dataset root.
    pub hr: String,
    pub lr: String,
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub split: Split,
    pub source_sha256: String,
    pub hr_sha256: String,
    pub lr_sha256: String,
    /// True when the source was center-cropped to divisible dims.
    pub cropped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    pub scale: usize,
    /// Every `val_every`-th image in name order goes to the validation split.
    pub val_every: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            val_every: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareReport {
    pub written: usize,
    pub verified: usize,
    pub cropped: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).at(path)?)))
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn split_for(index: usize, val_every: usize) -> Split {
    if val_every > 0 && index % val_every == val_every - 1 {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).at(&path)?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e)?).at(&path)?;
    }
    Ok(())
}

/// Builds (or, if a manifest already exists, verifies) a paired dataset from
/// a folder of PNG images. Verification never rewrites files.
pub fn prepare_dataset(src: &Path, root: &Path, cfg: &PrepareConfig) -> Result<PrepareReport> {
    if cfg.scale == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let sources = list_pngs(src)?;
    if sources.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", src.display())));
    }
    let spec = ResampleSpec::bicubic(cfg.scale);
    if root.join(MANIFEST_FILE).exists() {
        let entries = read_manifest(root)?;
        if entries.len() != sources.len() {
            return Err(Error::Audit {
                file: MANIFEST_FILE.into(),
                reason: format!(
                    "manifest lists {} images but the source has {}",
                    entries.len(),
                    sources.len()
                ),
            });
        }
        for (entry, source) in entries.iter().zip(&sources) {
            if entry.scale != cfg.scale {
                return Err(Error::Audit {
                    file: entry.name.clone(),
                    reason: format!("prepared at scale {}, requested {}", entry.scale, cfg.scale),
                });
            }
            if sha256_file(source)? != entry.source_sha256 {
                return Err(Error::Audit {
                    file: source.display().to_string(),
                    reason: "source image changed since preparation".into(),
                });
            }
        }
        audit_dataset(root)?;
        return Ok(PrepareReport {
            verified: entries.len(),
            ..PrepareReport::default()
        });
    }

    let lr_dir = format!("lr_x{}", cfg.scale);
    for d in ["hr", lr_dir.as_str()] {
        fs::create_dir_all(root.join(d)).at(root.join(d))?;
    }
    let mut report = PrepareReport::default();
    let mut entries = Vec::new();
    for (i, source) in sources.iter().enumerate() {
        let name = source
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad file name {}", source.display())))?
            .to_string();
        let img = load_png(source, DType::F32)?;
        let (h, w) = (img.height(), img.width());
        let (ch, cw) = (h - h % cfg.scale, w - w % cfg.scale);
        if ch == 0 || cw == 0 {
            return Err(Error::Dimension(format!(
                "{} ({h}x{w}) is smaller than the scale",
                source.display()
            )));
        }
        let cropped = (ch, cw) != (h, w);
        let hr = if cropped {
            log::info!("{name}: center-cropped {h}x{w} -> {ch}x{cw}");
            report.cropped.push(name.clone());
            img.crop((h - ch) / 2, (w - cw) / 2, ch, cw)?
        } else {
            img
        };
        let lr = degrade(&hr, &spec)?;
        let hr_rel = format!("hr/{name}.png");
        let lr_rel = format!("{lr_dir}/{name}.png");
        save_png(&hr, &root.join(&hr_rel))?;
        save_png(&lr, &root.join(&lr_rel))?;
        report.written += 1;
        entries.push(ManifestEntry {
            name,
            hr_sha256: sha256_file(&root.join(&hr_rel))?,
            lr_sha256: sha256_file(&root.join(&lr_rel))?,
            hr: hr_rel,
            lr: lr_rel,
            height: ch,
            width: cw,
            scale: cfg.scale,
            split: split_for(i, cfg.val_every),
            source_sha256: sha256_file(source)?,
            cropped,
        });
    }
    write_manifest(root, &entries)?;
    Ok(report)
}

/// Checks every file checksum and that every LR file equals the degradation
/// of its HR file level-for-level.
pub fn audit_dataset(root: &Path) -> Result<usize> {
    let entries = read_manifest(root)?;
    for e in &entries {
        for (rel, want) in [(&e.hr, &e.hr_sha256), (&e.lr, &e.lr_sha256)] {
            let path = root.join(rel);
            if !path.exists() {
                return Err(Error::Audit {
                    file: rel.clone(),
                    reason: "missing".into(),
                });
            }
            if &sha256_file(&path)? != want {
                return Err(Error::Audit {
                    file: rel.clone(),
                    reason: "checksum mismatch".into(),
                });
            }
        }
        let hr = load_png(&root.join(&e.hr), DType::F32)?;
        let lr = load_png(&root.join(&e.lr), DType::F32)?;
        if degrade(&hr, &ResampleSpec::bicubic(e.scale))?.levels()? != lr.levels()? {
            return Err(Error::Audit {
                file: e.lr.clone(),
                reason: "LR is not the bicubic degradation of its HR".into(),
            });
        }
    }
    Ok(entries.len())
}

/// One split of a prepared dataset, held in memory.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub scale: usize,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    pub hr: Vec<ImageTensor>,
    pub lr: Vec<ImageTensor>,
}

impl PairedDataset {
    pub fn open(root: &Path, split: Split) -> Result<Self> {
        let entries: Vec<ManifestEntry> = read_manifest(root)?
            .into_iter()
            .filter(|e| e.split == split)
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} has no {split:?} images",
                root.display()
            )));
        }
        let scale = entries[0].scale;
        let mut hr = Vec::new();
        let mut lr = Vec::new();
        for e in &entries {
            hr.push(load_png(&root.join(&e.hr), DType::F32)?);
            lr.push(load_png(&root.join(&e.lr), DType::F32)?);
        }
        Ok(Self {
            root: root.to_path_buf(),
            scale,
            split,
            entries,
            hr,
            lr,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean pixel value over all HR images, weighting every pixel equally.
    pub fn hr_mean(&self) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for img in &self.hr {
            let v = img.to_vec_f64()?;
            n += v.len();
            sum += v.iter().sum::<f64>();
        }
        Ok(sum / n as f64)
    }
}

/// Writes `count` synthetic `size × size` PNGs named `synth_0000.png`, ….
pub fn write_synthetic_folder(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for i in 0..count {
        let img = synthetic_image(seed.wrapping_add(i as u64), size, size)?;
        save_png(&img, &dir.join(format!("synth_{i:04}.png")))?;
    }
    Ok(())
}
