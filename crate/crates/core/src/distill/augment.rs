//! Copy-paste compositing and standard geometric / photometric augmentation.

use ndarray::Array3;
use rand::Rng;

use crate::data::{LabelMask, IGNORE};
use crate::error::{Error, Result};
use crate::imgops::{crop_pair, resize_bilinear, resize_nearest};

use super::TrainConfig;

/// Composites donor foregrounds onto a base sample.
///
/// Draws `n` uniform in `[1, n_max]`; `n == 1` is the identity. Otherwise
/// `n - 1` donors are drawn uniformly (with replacement) from the pool and
/// their foreground pixels pasted hard, in draw order, later donors
/// overwriting earlier ones. Pasted pixels carry the donor's RGB and label.
///
/// All images and masks must share the base's dimensions.
pub fn copy_paste(
    base: (Array3<f32>, LabelMask),
    donor_pool: &[(Array3<f32>, LabelMask)],
    rng: &mut impl Rng,
    n_max: usize,
) -> Result<(Array3<f32>, LabelMask)> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    let n = rng.gen_range(1..=n_max);
    if n == 1 || donor_pool.is_empty() {
        return Ok(base);
    }
    let (mut image, mask) = base;
    let (h, w, _) = image.dim();
    let mut labels = mask.labels().clone();
    let mut num_classes = mask.num_classes();
    for _ in 0..n - 1 {
        let (donor_img, donor_mask) = &donor_pool[rng.gen_range(0..donor_pool.len())];
        if donor_img.dim() != image.dim() {
            return Err(Error::Dimension(format!(
                "donor {:?} vs base {:?}",
                donor_img.dim(),
                image.dim()
            )));
        }
        num_classes = num_classes.max(donor_mask.num_classes());
        for y in 0..h {
            for x in 0..w {
                let v = donor_mask.get(y, x);
                if v >= 1 && v != IGNORE {
                    for c in 0..3 {
                        image[(y, x, c)] = donor_img[(y, x, c)];
                    }
                    labels[(y, x)] = v;
                }
            }
        }
    }
    Ok((image, LabelMask::new(labels, num_classes)?))
}

/// Identical geometric transform on image and labels (random scale then random
/// crop, nearest-neighbor for labels with IGNORE fill), followed by color
/// jitter on the image only. Zero-magnitude settings are exact identities.
pub fn augment(
    image: &Array3<f32>,
    mask: &LabelMask,
    rng: &mut impl Rng,
    config: &TrainConfig,
) -> Result<(Array3<f32>, LabelMask)> {
    let (h, w, _) = image.dim();
    if mask.height() != h || mask.width() != w {
        return Err(Error::Dimension(format!(
            "mask {}x{} vs image {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }

    // random scale
    let (lo, hi) = config.scale_range;
    let scale = rng.gen_range(lo..=hi);
    let (sh, sw) = if (scale - 1.0).abs() < f64::EPSILON {
        (h, w)
    } else {
        (
            ((h as f64 * scale).round() as usize).max(1),
            ((w as f64 * scale).round() as usize).max(1),
        )
    };
    let (scaled_img, scaled_lab) = if (sh, sw) == (h, w) {
        (image.clone(), mask.labels().clone())
    } else {
        (
            resize_bilinear(image, sh, sw),
            resize_nearest(mask.labels(), sh, sw),
        )
    };

    // random crop; undersized images get an IGNORE-labelled border
    let crop = config.crop_size;
    let top_range = ranged_offset(sh, crop);
    let left_range = ranged_offset(sw, crop);
    let top = rng.gen_range(top_range.0..=top_range.1);
    let left = rng.gen_range(left_range.0..=left_range.1);
    let (mut out_img, out_lab) = crop_pair(&scaled_img, &scaled_lab, top, left, crop, crop);

    // color jitter, image only
    if config.jitter_brightness > 0.0 {
        let m = config.jitter_brightness;
        let f = rng.gen_range(1.0 - m..=1.0 + m) as f32;
        out_img.mapv_inplace(|v| v * f);
    }
    if config.jitter_contrast > 0.0 {
        let m = config.jitter_contrast;
        let f = rng.gen_range(1.0 - m..=1.0 + m) as f32;
        let mean = out_img.mean().unwrap_or(0.5);
        out_img.mapv_inplace(|v| (v - mean) * f + mean);
    }
    if config.jitter_saturation > 0.0 {
        let m = config.jitter_saturation;
        let f = rng.gen_range(1.0 - m..=1.0 + m) as f32;
        for y in 0..crop {
            for x in 0..crop {
                let gray = (out_img[(y, x, 0)] + out_img[(y, x, 1)] + out_img[(y, x, 2)]) / 3.0;
                for c in 0..3 {
                    out_img[(y, x, c)] = gray + (out_img[(y, x, c)] - gray) * f;
                }
            }
        }
    }
    if config.jitter_brightness > 0.0 || config.jitter_contrast > 0.0 || config.jitter_saturation > 0.0
    {
        out_img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    Ok((out_img, LabelMask::new(out_lab, mask.num_classes())?))
}

/// Valid top/left offsets for cropping `crop` pixels from `dim`; negative
/// offsets pad.
fn ranged_offset(dim: usize, crop: usize) -> (i64, i64) {
    if dim >= crop {
        (0, (dim - crop) as i64)
    } else {
        (dim as i64 - crop as i64, 0)
    }
}

/// Label histogram ignoring nothing; test helper for geometry-untouched checks.
pub fn label_histogram(mask: &LabelMask) -> std::collections::BTreeMap<u8, usize> {
    let mut hist = std::collections::BTreeMap::new();
    for &v in mask.labels().iter() {
        *hist.entry(v).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;

    fn identity_config(crop: usize) -> TrainConfig {
        TrainConfig {
            scale_range: (1.0, 1.0),
            crop_size: crop,
            jitter_brightness: 0.0,
            jitter_contrast: 0.0,
            jitter_saturation: 0.0,
            ..Default::default()
        }
    }

    fn checker_image(h: usize, w: usize) -> Array3<f32> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            (((y + x + c) % 5) as f32) / 5.0
        })
    }

    fn block_mask(h: usize, w: usize, top: usize, left: usize, size: usize, label: u8) -> LabelMask {
        let mut labels = Array2::zeros((h, w));
        for y in top..top + size {
            for x in left..left + size {
                labels[(y, x)] = label;
            }
        }
        LabelMask::new(labels, label as u16 + 1).unwrap()
    }

    #[test]
    fn copy_paste_nmax_one_is_identity() {
        let base_img = checker_image(8, 8);
        let base_mask = block_mask(8, 8, 1, 1, 3, 1);
        let donors = vec![(checker_image(8, 8), block_mask(8, 8, 4, 4, 2, 2))];
        let mut rng = stream(0, 50, &[]);
        let (img, mask) = copy_paste(
            (base_img.clone(), base_mask.clone()),
            &donors,
            &mut rng,
            1,
        )
        .unwrap();
        assert_eq!(img, base_img);
        assert_eq!(mask.labels(), base_mask.labels());
    }

    #[test]
    fn donor_pixels_carry_label_and_rgb() {
        // blank base, donor with a known 2x2 block of category 2
        let base_img = Array3::from_elem((8, 8, 3), 0.1f32);
        let base_mask = LabelMask::zeros(8, 8, 3);
        let donor_img = Array3::from_elem((8, 8, 3), 0.9f32);
        let donor_mask = block_mask(8, 8, 3, 3, 2, 2);
        let donors = vec![(donor_img, donor_mask)];
        // n_max = 2 and we need the branch that pastes, so find a seed drawing n = 2
        let mut pasted = None;
        for s in 0..20 {
            let mut rng = stream(s, 51, &[]);
            let (img, mask) =
                copy_paste((base_img.clone(), base_mask.clone()), &donors, &mut rng, 2).unwrap();
            if mask.labels().iter().any(|&v| v == 2) {
                pasted = Some((img, mask));
                break;
            }
        }
        let (img, mask) = pasted.expect("some seed pastes");
        let mut count = 0;
        for y in 0..8 {
            for x in 0..8 {
                if mask.get(y, x) == 2 {
                    count += 1;
                    assert_eq!(img[(y, x, 0)], 0.9);
                } else {
                    assert_eq!(mask.get(y, x), 0);
                    assert_eq!(img[(y, x, 0)], 0.1);
                }
            }
        }
        assert_eq!(count, 4);
    }

    #[test]
    fn zero_nmax_is_fatal() {
        let base = (checker_image(4, 4), LabelMask::zeros(4, 4, 2));
        let mut rng = stream(0, 52, &[]);
        assert!(copy_paste(base, &[], &mut rng, 0).is_err());
    }

    #[test]
    fn augment_identity_settings_are_bit_exact() {
        let img = checker_image(8, 8);
        let mask = block_mask(8, 8, 2, 2, 3, 1);
        let cfg = identity_config(8);
        let mut rng = stream(3, 53, &[]);
        let (out_img, out_mask) = augment(&img, &mask, &mut rng, &cfg).unwrap();
        assert_eq!(out_img, img);
        assert_eq!(out_mask.labels(), mask.labels());
    }

    #[test]
    fn pure_jitter_leaves_label_histogram_unchanged() {
        let img = checker_image(8, 8);
        let mask = block_mask(8, 8, 2, 2, 3, 1);
        let cfg = TrainConfig {
            scale_range: (1.0, 1.0),
            crop_size: 8,
            jitter_brightness: 0.3,
            jitter_contrast: 0.3,
            jitter_saturation: 0.3,
            ..Default::default()
        };
        let mut rng = stream(3, 54, &[]);
        let (_, out_mask) = augment(&img, &mask, &mut rng, &cfg).unwrap();
        assert_eq!(label_histogram(&out_mask), label_histogram(&mask));
    }

    #[test]
    fn oversized_crop_pads_with_ignore() {
        let img = checker_image(8, 8);
        let mask = block_mask(8, 8, 2, 2, 3, 1);
        let cfg = identity_config(12);
        let mut rng = stream(3, 55, &[]);
        let (out_img, out_mask) = augment(&img, &mask, &mut rng, &cfg).unwrap();
        assert_eq!(out_img.dim(), (12, 12, 3));
        let ignored = out_mask.labels().iter().filter(|&&v| v == IGNORE).count();
        assert_eq!(ignored, 12 * 12 - 64);
    }

    #[test]
    fn double_scale_center_object_quadruples_within_crop() {
        // 16x16 image with a centered 4x4 object, scaled 2x, crop 16 centered
        // somewhere fully inside the scaled object region
        let mut img = Array3::from_elem((16, 16, 3), 0.0f32);
        let mut labels = Array2::zeros((16, 16));
        for y in 6..10 {
            for x in 6..10 {
                labels[(y, x)] = 1;
                img[(y, x, 0)] = 1.0;
            }
        }
        let mask = LabelMask::new(labels, 2).unwrap();
        let cfg = TrainConfig {
            scale_range: (2.0, 2.0),
            crop_size: 16,
            jitter_brightness: 0.0,
            jitter_contrast: 0.0,
            jitter_saturation: 0.0,
            ..Default::default()
        };
        // count over many crops: each crop containing the whole scaled object
        // sees exactly 64 foreground pixels (4x the original 16)
        let mut quadrupled = 0;
        for s in 0..30 {
            let mut rng = stream(s, 56, &[]);
            let (_, out_mask) = augment(&img, &mask, &mut rng, &cfg).unwrap();
            let fg = out_mask.labels().iter().filter(|&&v| v == 1).count();
            assert!(fg <= 64);
            if fg == 64 {
                quadrupled += 1;
            }
        }
        assert!(quadrupled > 0, "some crop contains the whole scaled object");
    }
}
