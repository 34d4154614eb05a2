//! Image samples and RGB image file IO.

use std::path::Path;

use ndarray::Array3;

use crate::data::mask::LabelMask;
use crate::error::{Error, Result};

/// An image with an opaque id and optional ground-truth mask.
///
/// Pixels are H x W x 3 reals in [0, 1].
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Array3<f32>,
    pub gt_mask: Option<LabelMask>,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, pixels: Array3<f32>, gt_mask: Option<LabelMask>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::Dimension(format!(
                "image must be HxWx3 with H,W >= 1, got {h}x{w}x{c}"
            )));
        }
        if let Some(m) = &gt_mask {
            if m.height() != h || m.width() != w {
                return Err(Error::Dimension(format!(
                    "gt mask {}x{} does not match image {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
        }
        let pixels = pixels.mapv(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            id: id.into(),
            pixels,
            gt_mask,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// Reads an 8-bit RGB image into [0, 1] floats.
pub fn read_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[(y as usize, x as usize, c)] = f32::from(p.0[c]) / 255.0;
        }
    }
    Ok(pixels)
}

/// Writes [0, 1] floats as an 8-bit RGB PNG.
pub fn write_image(pixels: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = pixels.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = pixels[(y as usize, x as usize, c)].clamp(0.0, 1.0);
            p.0[c] = (v * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_clamped_on_construction() {
        let mut px = Array3::zeros((2, 2, 3));
        px[(0, 0, 0)] = 1.5;
        px[(1, 1, 2)] = -0.5;
        let s = ImageSample::new("x", px, None).unwrap();
        assert_eq!(s.pixels[(0, 0, 0)], 1.0);
        assert_eq!(s.pixels[(1, 1, 2)], 0.0);
    }

    #[test]
    fn mask_dimension_mismatch_rejected() {
        let px = Array3::zeros((4, 4, 3));
        let m = LabelMask::zeros(3, 4, 2);
        assert!(ImageSample::new("x", px, Some(m)).is_err());
    }

    #[test]
    fn image_round_trip_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // values on the exact 8-bit grid survive the round trip
        let px = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c * 13) % 256) as f32 / 255.0
        });
        write_image(&px, &path).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in px.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
