//! Per-pixel label maps and the single-channel 8-bit mask file convention.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Sentinel marking pixels excluded from both loss and metrics.
pub const IGNORE: u8 = 255;

/// Per-pixel integer label map. Binary masks are the `num_classes == 2` case.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    labels: Array2<u8>,
    num_classes: u16,
}

impl LabelMask {
    /// Builds a mask, validating that every non-IGNORE value is `< num_classes`.
    pub fn new(labels: Array2<u8>, num_classes: u16) -> Result<Self> {
        if num_classes == 0 || num_classes > 255 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be in 1..=255, got {num_classes}"
            )));
        }
        for ((y, x), &v) in labels.indexed_iter() {
            if v != IGNORE && u16::from(v) >= num_classes {
                return Err(Error::MaskValue {
                    x,
                    y,
                    value: v,
                    num_classes,
                });
            }
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    /// All-zero (background) mask.
    pub fn zeros(height: usize, width: usize, num_classes: u16) -> Self {
        Self {
            labels: Array2::zeros((height, width)),
            num_classes,
        }
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[(y, x)]
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 2
    }

    /// Fraction of non-IGNORE pixels labelled foreground (any class >= 1).
    pub fn foreground_fraction(&self) -> f64 {
        let mut fg = 0usize;
        let mut counted = 0usize;
        for &v in self.labels.iter() {
            if v != IGNORE {
                counted += 1;
                if v >= 1 {
                    fg += 1;
                }
            }
        }
        if counted == 0 {
            0.0
        } else {
            fg as f64 / counted as f64
        }
    }

    /// True when no non-IGNORE pixel is foreground.
    pub fn is_empty_foreground(&self) -> bool {
        self.labels.iter().all(|&v| v == 0 || v == IGNORE)
    }

    /// Reinterprets a binary mask as single-category foreground with the given label.
    ///
    /// Pixels with value 1 become `category_index`; 0 and IGNORE are preserved.
    pub fn binary_to_category(&self, category_index: u16, num_classes: u16) -> Result<Self> {
        if !self.is_binary() {
            return Err(Error::InvalidArgument(
                "binary_to_category requires a binary mask".into(),
            ));
        }
        if category_index == 0 || category_index >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "category index {category_index} invalid for {num_classes} classes"
            )));
        }
        let cat = category_index as u8;
        let labels = self.labels.mapv(|v| match v {
            1 => cat,
            other => other,
        });
        LabelMask::new(labels, num_classes)
    }

    /// Map of the mask's foreground against the given category: fg -> 1, bg -> 0, IGNORE kept.
    pub fn to_binary_foreground(&self) -> Self {
        let labels = self.labels.mapv(|v| match v {
            IGNORE => IGNORE,
            0 => 0,
            _ => 1,
        });
        Self {
            labels,
            num_classes: 2,
        }
    }
}

/// Reads a mask from a single-channel 8-bit image file.
///
/// Values must be `< num_classes` or the IGNORE sentinel (255).
pub fn read_mask(path: &Path, num_classes: u16) -> Result<LabelMask> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let (w, h) = gray.dimensions();
    let mut labels = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in gray.enumerate_pixels() {
        labels[(y as usize, x as usize)] = p.0[0];
    }
    LabelMask::new(labels, num_classes)
}

/// Writes a mask as a single-channel 8-bit PNG. `write_mask` then `read_mask`
/// is the identity on labels.
pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0[0] = mask.get(y as usize, x as usize);
    }
    img.save(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })
}
