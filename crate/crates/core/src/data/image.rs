use std::fs;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// 8-bit sRGB image, interleaved RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::dim(
                "image",
                format!("{}x{} RGB needs {} bytes, got {}", width, height, 3 * width * height, data.len()),
            ));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        ImageBuffer { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Sub-image starting at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::contract(
                "crop",
                format!("{}x{} at ({}, {}) exceeds {}x{}", width, height, x, y, self.width, self.height),
            ));
        }
        let mut data = Vec::with_capacity(3 * width * height);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + 3 * width]);
        }
        Ok(ImageBuffer { width, height, data })
    }

    /// `[3, H, W]` tensor in [0, 1].
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let inv = T::from_f64c(1.0 / 255.0);
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            T::from_f64c(self.data[p * 3 + c] as f64) * inv
        })
    }

    /// Inverse of [`ImageBuffer::to_tensor`], clamping to [0, 1] and rounding.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let [3, h, w] = t.shape()[..] else {
            return Err(Error::dim("image", format!("expected [3, H, W], got {:?}", t.shape())));
        };
        let plane = h * w;
        let src = t.data();
        let mut data = vec![0u8; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                let v = src[c * plane + p].to_f64().unwrap_or(0.0);
                let v = if v.is_nan() { 0.0 } else { v };
                data[p * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(ImageBuffer { width: w, height: h, data })
    }
}

fn parse_ppm(path: &Path, bytes: &[u8]) -> Result<ImageBuffer> {
    let bad = |d: &str| Error::format(path, d);
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed PPM header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("malformed PPM header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("unsupported PPM maxval {}", maxval)));
    }
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(bad(&format!("truncated PPM: {} of {} pixel bytes", bytes.len() - pos, need)));
    }
    ImageBuffer::new(w, h, bytes[pos..pos + need].to_vec())
}

/// Reads a PNG or binary PPM (P6), chosen by content.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        return parse_ppm(path, &bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
            .map_err(|e| Error::format(path, &e.to_string()))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        return ImageBuffer::new(w, h, img.into_raw());
    }
    Err(Error::format(path, "unsupported image format (expected PNG or P6 PPM)"))
}

/// Writes PNG or PPM according to the extension.
pub fn save_image(buf: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm") => {
            let mut out = format!("P6\n{} {}\n255\n", buf.width, buf.height).into_bytes();
            out.extend_from_slice(&buf.data);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let img = RgbImage::from_raw(buf.width as u32, buf.height as u32, buf.data.clone())
                .ok_or_else(|| Error::format(path, "image too large"))?;
            let mut bytes = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
                .map_err(|e| Error::format(path, &e.to_string()))?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        _ => Err(Error::format(path, "unsupported output extension (use .png or .ppm)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ppm");
        let img = ImageBuffer::filled(1, 1, [255, 255, 255]);
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
        assert_eq!(fs::read(&p).unwrap(), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = ImageBuffer::new(3, 2, (0..18).map(|i| (i * 13) as u8).collect()).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn ppm_with_comment_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        fs::write(&p, b"P6\n# note\n2 1\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[1, 2, 3, 4, 5, 6]);
        fs::write(&p, b"P6\n2 1\n255\n\x01\x02").unwrap();
        let e = load_image(&p).unwrap_err().to_string();
        assert!(e.contains("c.ppm") && e.contains("truncated"), "{e}");
    }

    #[test]
    fn missing_file_names_path() {
        let e = load_image("/nonexistent/dir/a.png").unwrap_err().to_string();
        assert!(e.contains("/nonexistent/dir/a.png"), "{e}");
    }

    #[test]
    fn tensor_round_trip() {
        let img = ImageBuffer::new(2, 2, (0..12).map(|i| (i * 20) as u8).collect()).unwrap();
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
    }
}
