use rand::Rng;

use crate::error::{Error, Result};

use super::image::ImageBuffer;

/// Aligned LR/HR crops with their origins in the source images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPair {
    pub lr: ImageBuffer,
    pub hr: ImageBuffer,
    pub lr_origin: (usize, usize),
    pub hr_origin: (usize, usize),
}

/// Random `patch×patch` LR crop and the matching `r·patch` HR crop.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    patch: usize,
    r: usize,
    rng: &mut R,
) -> Result<PatchPair> {
    if patch == 0 || lr.width() < patch || lr.height() < patch {
        return Err(Error::contract(
            "sample_patch",
            format!("LR image {}x{} smaller than patch {}", lr.width(), lr.height(), patch),
        ));
    }
    if hr.width() < lr.width() * r || hr.height() < lr.height() * r {
        return Err(Error::contract(
            "sample_patch",
            format!("HR {}x{} is not {}x the LR {}x{}", hr.width(), hr.height(), r, lr.width(), lr.height()),
        ));
    }
    let x = rng.random_range(0..=lr.width() - patch);
    let y = rng.random_range(0..=lr.height() - patch);
    Ok(PatchPair {
        lr: lr.crop(x, y, patch, patch)?,
        hr: hr.crop(x * r, y * r, patch * r, patch * r)?,
        lr_origin: (x, y),
        hr_origin: (x * r, y * r),
    })
}

/// One of the eight symmetries of the square: `rot` quarter turns
/// clockwise, preceded by a horizontal flip when `flip` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(|i| Dihedral { rot: i % 4, flip: i >= 4 })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let i: u8 = rng.random_range(0..8);
        Dihedral { rot: i % 4, flip: i >= 4 }
    }

    pub fn apply(self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let n = img.width();
        if img.height() != n {
            return Err(Error::contract(
                "augment",
                format!("patch must be square, got {}x{}", img.width(), img.height()),
            ));
        }
        let mut out = img.clone();
        for y in 0..n {
            for x in 0..n {
                let sx = if self.flip { n - 1 - x } else { x };
                let (tx, ty) = match self.rot % 4 {
                    0 => (sx, y),
                    1 => (n - 1 - y, sx),
                    2 => (n - 1 - sx, n - 1 - y),
                    _ => (y, n - 1 - sx),
                };
                out.set_pixel(tx, ty, img.pixel(x, y));
            }
        }
        Ok(out)
    }
}

/// Applies one transform to both members of the pair.
pub fn augment(pair: &PatchPair, t: Dihedral) -> Result<PatchPair> {
    Ok(PatchPair { lr: t.apply(&pair.lr)?, hr: t.apply(&pair.hr)?, ..pair.clone() })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::new(w, h, (0..w * h * 3).map(|i| (i % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn full_patch_is_whole_pair() {
        let (hr, lr) = (ramp(8, 8), ramp(4, 4));
        let p = sample_patch(&hr, &lr, 4, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((p.lr, p.hr), (lr, hr));
    }

    #[test]
    fn alignment_and_reproducibility() {
        let (hr, lr) = (ramp(40, 36), ramp(10, 9));
        for seed in 0..20 {
            let a = sample_patch(&hr, &lr, 4, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_patch(&hr, &lr, 4, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.lr_origin.0 * 4, a.lr_origin.1 * 4), a.hr_origin);
            assert_eq!(a.hr, hr.crop(a.hr_origin.0, a.hr_origin.1, 16, 16).unwrap());
        }
    }

    #[test]
    fn too_small_is_rejected() {
        let e = sample_patch(&ramp(6, 6), &ramp(3, 3), 4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(e.is_err());
    }

    #[test]
    fn group_laws() {
        let img = ramp(5, 5);
        assert_eq!(Dihedral::IDENTITY.apply(&img).unwrap(), img);
        let quarter = Dihedral { rot: 1, flip: false };
        let mut x = img.clone();
        for _ in 0..4 {
            x = quarter.apply(&x).unwrap();
        }
        assert_eq!(x, img);
        let flip = Dihedral { rot: 0, flip: true };
        assert_eq!(flip.apply(&flip.apply(&img).unwrap()).unwrap(), img);
        let images: Vec<_> = Dihedral::all().map(|t| t.apply(&img).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(images[i], images[j]);
            }
        }
    }

    #[test]
    fn quarter_turn_is_clockwise() {
        // [a b; c d] -> [c a; d b]
        let img = ImageBuffer::new(2, 2, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4]).unwrap();
        let r = Dihedral { rot: 1, flip: false }.apply(&img).unwrap();
        assert_eq!(r.data(), &[3, 3, 3, 1, 1, 1, 4, 4, 4, 2, 2, 2]);
    }

    #[test]
    fn non_square_rejected() {
        assert!(Dihedral::IDENTITY.apply(&ramp(3, 2)).is_err());
    }
}
