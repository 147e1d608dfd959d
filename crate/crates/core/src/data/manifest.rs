use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::bicubic::bicubic_downsample;
use super::image::{load_image, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hr: PathBuf,
    pub lr: Option<PathBuf>,
}

/// `hr_path[TAB]lr_path?` records; relative paths resolve against the
/// manifest's directory. Blank lines and `#` lines are skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub scale: usize,
    pub split: String,
}

/// An HR image and its LR counterpart, `scale`× smaller.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub name: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path, scale: usize, split: &str) -> Result<Self> {
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() { p } else { base.join(p) }
        };
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let hr = resolve(parts.next().unwrap_or_default().trim());
            let lr = parts.next().map(str::trim).filter(|s| !s.is_empty()).map(resolve);
            if parts.next().is_some() {
                return Err(Error::Config(format!("manifest line has more than two fields: `{}`", line)));
            }
            entries.push(ManifestEntry { hr, lr });
        }
        Ok(DatasetManifest { entries, scale, split: split.to_string() })
    }

    /// Reads the manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>, scale: usize, split: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base, scale, split)?;
        if m.entries.is_empty() {
            return Err(Error::format(path, "manifest lists no images"));
        }
        for e in &m.entries {
            for p in std::iter::once(&e.hr).chain(&e.lr) {
                if !p.is_file() {
                    return Err(Error::format(path, format!("referenced file {} does not exist", p.display())));
                }
            }
        }
        Ok(m)
    }

    /// Loads every pair. HR images are cropped to a multiple of the scale;
    /// missing LR images are produced by bicubic downscaling.
    pub fn load_pairs(&self) -> Result<Vec<ImagePair>> {
        self.entries
            .iter()
            .map(|e| {
                let hr = load_image(&e.hr)?;
                let r = self.scale;
                let hr = hr.crop(0, 0, hr.width() / r * r, hr.height() / r * r)?;
                let lr = match &e.lr {
                    Some(p) => load_image(p)?,
                    None => bicubic_downsample(&hr, r)?,
                };
                if lr.width() * r != hr.width() || lr.height() * r != hr.height() {
                    return Err(Error::format(
                        &e.hr,
                        format!("LR {}x{} does not match HR {}x{} at scale {}", lr.width(), lr.height(), hr.width(), hr.height(), r),
                    ));
                }
                let name = e.hr.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(ImagePair { name, hr, lr })
            })
            .collect()
    }
}
