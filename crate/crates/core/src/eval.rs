//! Whole-image evaluation of a trained model.

use std::fmt;

use crate::data::{ImageBuffer, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, Psnr};
use crate::model::{infer, ForwardOptions, HimosaWeights, ModelConfig};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-image scores plus their means.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Mean PSNR over images with a finite score; `Identical` when every
    /// reconstruction is exact.
    pub fn mean_psnr(&self) -> Psnr {
        let finite: Vec<f64> = self.rows.iter().filter_map(|r| match r.psnr {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }).collect();
        if finite.is_empty() {
            Psnr::Identical
        } else {
            Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }
}

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "image\tpsnr_db\tssim")?;
        for r in &self.rows {
            writeln!(f, "{}\t{}\t{:.4}", r.name, r.psnr, r.ssim)?;
        }
        write!(f, "mean\t{}\t{:.4}", self.mean_psnr(), self.mean_ssim())
    }
}

/// Super-resolves an image.
pub fn super_resolve<T: Real>(cfg: &ModelConfig, weights: &HimosaWeights<T>, lr: &ImageBuffer, seed: u64) -> Result<ImageBuffer> {
    let (sr, _) = infer(cfg, weights, &lr.to_tensor::<T>(), &ForwardOptions { seed, ..Default::default() })?;
    ImageBuffer::from_tensor(&sr)
}

/// PSNR/SSIM on luma with a `scale`-pixel border shaved.
pub fn evaluate<T: Real>(cfg: &ModelConfig, weights: &HimosaWeights<T>, pairs: &[ImagePair], seed: u64) -> Result<EvalTable> {
    if pairs.is_empty() {
        return Err(Error::Config("no evaluation images".into()));
    }
    let rows = pairs
        .iter()
        .map(|p| {
            let sr = super_resolve(cfg, weights, &p.lr, seed)?;
            Ok(EvalRow { name: p.name.clone(), psnr: psnr(&sr, &p.hr, cfg.scale)?, ssim: ssim(&sr, &p.hr, cfg.scale)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable { rows })
}
