use std::fmt;

use crate::data::ImageBuffer;
use crate::error::{Error, Result};

/// PSNR in dB, or the marker for a zero-error comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// Decibels, with `Identical` mapped to +∞.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => write!(f, "identical"),
            Psnr::Db(v) => write!(f, "{:.4}", v),
        }
    }
}

/// BT.601 luma in [16, 235] of the shaved region, row-major, with its
/// width and height.
pub fn luma(img: &ImageBuffer, border: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (w, h) = (img.width(), img.height());
    if 2 * border >= w || 2 * border >= h {
        return Err(Error::contract("luma", format!("border {} leaves nothing of {}x{}", border, w, h)));
    }
    let (cw, ch) = (w - 2 * border, h - 2 * border);
    let mut y = Vec::with_capacity(cw * ch);
    for row in border..h - border {
        for col in border..w - border {
            let [r, g, b] = img.pixel(col, row);
            y.push(16.0 + (65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0);
        }
    }
    Ok((y, cw, ch))
}

fn same_shape(op: &'static str, a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::contract(
            op,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// PSNR of two equal-length planes with peak 255.
pub fn psnr_plane(a: &[f64], b: &[f64]) -> Psnr {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64;
    if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (255.0 * 255.0 / mse).log10())
    }
}

/// PSNR on BT.601 luma after shaving `border` pixels from every side.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<Psnr> {
    same_shape("psnr", a, b)?;
    let (ya, _, _) = luma(a, border)?;
    let (yb, _, _) = luma(b, border)?;
    Ok(psnr_plane(&ya, &yb))
}

const WIN: usize = 11;

fn gaussian_taps() -> [f64; WIN] {
    let mut t = [0.0; WIN];
    for (i, v) in t.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Separable valid-region Gaussian filter.
fn filter_valid(x: &[f64], w: usize, h: usize, taps: &[f64; WIN]) -> Vec<f64> {
    let (ow, oh) = (w - WIN + 1, h - WIN + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            horiz[y * ow + ox] = taps.iter().enumerate().map(|(j, t)| t * x[y * w + ox + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * horiz[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM on BT.601 luma: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, over windows fully inside the shaved image.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (ya, w, h) = luma(a, border)?;
    let (yb, _, _) = luma(b, border)?;
    if w < WIN || h < WIN {
        return Err(Error::contract("ssim", format!("{}x{} region is smaller than the 11x11 window", w, h)));
    }
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&ya, w, h, &taps);
    let mu_b = filter_valid(&yb, w, h, &taps);
    let saa = filter_valid(&prod(&ya, &ya), w, h, &taps);
    let sbb = filter_valid(&prod(&yb, &yb), w, h, &taps);
    let sab = filter_valid(&prod(&ya, &yb), w, h, &taps);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let (va, vb, cov) = (saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u32) -> ImageBuffer {
        let mut s = seed.wrapping_mul(2_654_435_761).wrapping_add(1);
        let data = (0..w * h * 3)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s >> 24) as u8
            })
            .collect();
        ImageBuffer::new(w, h, data).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = noise(16, 16, 1);
        assert_eq!(psnr(&a, &a, 2).unwrap(), Psnr::Identical);
        assert_eq!(ssim(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn unit_luma_offset_closed_form() {
        let a: Vec<f64> = (0..100).map(|i| 20.0 + i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let p = psnr_plane(&a, &b).db();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((p - 48.13).abs() < 0.01);
    }

    #[test]
    fn ssim_is_symmetric() {
        let (a, b) = (noise(20, 18, 2), noise(20, 18, 3));
        assert_eq!(ssim(&a, &b, 1).unwrap(), ssim(&b, &a, 1).unwrap());
    }

    #[test]
    fn errors() {
        let (a, b) = (noise(16, 16, 1), noise(16, 15, 1));
        assert!(psnr(&a, &b, 0).is_err());
        assert!(ssim(&noise(12, 12, 1), &noise(12, 12, 2), 1).is_err());
    }
}
