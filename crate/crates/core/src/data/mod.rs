//! Image I/O, bicubic degradation, patch sampling and augmentation.

mod bicubic;
mod image;
mod manifest;
mod patch;

pub use self::image::{load_image, save_image, ImageBuffer};
pub use bicubic::bicubic_downsample;
pub use manifest::{DatasetManifest, ImagePair, ManifestEntry};
pub use patch::{augment, sample_patch, Dihedral, PatchPair};
