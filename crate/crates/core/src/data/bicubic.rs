use crate::error::{Error, Result};

use super::image::ImageBuffer;

const A: f64 = -0.5;

fn cubic(t: f64) -> f64 {
    let t = t.abs();
    let (t2, t3) = (t * t, t * t * t);
    if t < 1.0 {
        (A + 2.0) * t3 - (A + 3.0) * t2 + 1.0
    } else if t < 2.0 {
        A * t3 - 5.0 * A * t2 + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and normalised weights for each output coordinate. The
/// kernel is stretched by `r` so the filter also anti-aliases.
fn contributions(len: usize, r: usize) -> Vec<Vec<(usize, f64)>> {
    let rf = r as f64;
    (0..len / r)
        .map(|o| {
            let center = (o as f64 + 0.5) * rf - 0.5;
            let first = (center - 2.0 * rf).floor() as isize;
            let last = (center + 2.0 * rf).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for s in first..=last {
                let w = cubic((s as f64 - center) / rf);
                if w != 0.0 {
                    taps.push((s.clamp(0, len as isize - 1) as usize, w));
                }
            }
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= sum);
            taps
        })
        .collect()
}

/// `r`-fold bicubic (Catmull-Rom, a = -0.5) downscale with edge clamping,
/// computed on [0, 1] floats and rounded half away from zero.
pub fn bicubic_downsample(buf: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    let (w, h) = (buf.width(), buf.height());
    if r == 0 || w % r != 0 || h % r != 0 {
        return Err(Error::contract(
            "bicubic_downsample",
            format!("{}x{} is not divisible by scale {}", w, h, r),
        ));
    }
    if r == 1 {
        return Ok(buf.clone());
    }
    let (ow, oh) = (w / r, h / r);
    let (cx, cy) = (contributions(w, r), contributions(h, r));
    let src = buf.data();
    let mut horiz = vec![0.0f64; h * ow * 3];
    for y in 0..h {
        for (ox, taps) in cx.iter().enumerate() {
            for c in 0..3 {
                horiz[(y * ow + ox) * 3 + c] =
                    taps.iter().map(|&(sx, wt)| wt * (src[(y * w + sx) * 3 + c] as f64 / 255.0)).sum();
            }
        }
    }
    let mut out = vec![0u8; oh * ow * 3];
    for (oy, taps) in cy.iter().enumerate() {
        for ox in 0..ow {
            for c in 0..3 {
                let v: f64 = taps.iter().map(|&(sy, wt)| wt * horiz[(sy * ow + ox) * 3 + c]).sum();
                out[(oy * ow + ox) * 3 + c] = (v * 255.0).clamp(0.0, 255.0).round() as u8;
            }
        }
    }
    ImageBuffer::new(ow, oh, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let img = ImageBuffer::filled(8, 12, [3, 130, 251]);
        let d = bicubic_downsample(&img, 4).unwrap();
        assert_eq!(d, ImageBuffer::filled(2, 3, [3, 130, 251]));
    }

    #[test]
    fn scale_one_is_identity() {
        let img = ImageBuffer::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(bicubic_downsample(&img, 1).unwrap(), img);
    }

    #[test]
    fn indivisible_is_rejected() {
        let img = ImageBuffer::filled(5, 4, [0, 0, 0]);
        assert!(bicubic_downsample(&img, 2).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for taps in contributions(10, 2) {
            let s: f64 = taps.iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
