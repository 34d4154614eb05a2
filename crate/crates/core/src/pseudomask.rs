//! Stage 2: saliency pseudo-masks for archive images, with optional
//! edge-aware refinement and category labelling.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{
    Archive, ImageSample, ImageSource, LabelMask, Provenance, PseudoLabelRecord, IGNORE,
};
use crate::error::{Error, Result};

/// Category-agnostic binary foreground predictor.
///
/// Implementations must be `Sync`: this module fans prediction out across
/// worker threads with shared read-only access. Providers that cannot offer
/// that must be wrapped in their own queue before being plugged in.
pub trait SaliencyProvider: Sync {
    fn predict(&self, sample: &ImageSample) -> Result<LabelMask>;
}

/// Outcome of saliency prediction for one archive entry.
#[derive(Debug, Clone)]
pub enum SaliencyOutcome {
    Mask(LabelMask),
    /// Prediction succeeded but found no foreground; flagged and later skipped.
    Empty,
    /// Provider failed; flagged and later skipped.
    Failed(String),
}

impl SaliencyOutcome {
    pub fn mask(&self) -> Option<&LabelMask> {
        match self {
            SaliencyOutcome::Mask(m) => Some(m),
            _ => None,
        }
    }
}

/// Predicts one binary mask per archive entry, preserving archive order.
/// Provider failures and empty masks are flagged rather than fatal.
pub fn generate_saliency(
    archive: &Archive,
    images: &dyn ImageSource,
    provider: &dyn SaliencyProvider,
) -> Result<Vec<SaliencyOutcome>> {
    let outcomes: Vec<SaliencyOutcome> = archive
        .entries
        .par_iter()
        .map(|entry| {
            let sample = match images.get(&entry.image_id) {
                Ok(s) => s,
                Err(e) => return SaliencyOutcome::Failed(e.to_string()),
            };
            match provider.predict(&sample) {
                Ok(mask) => {
                    if mask.height() != sample.height() || mask.width() != sample.width() {
                        return SaliencyOutcome::Failed(format!(
                            "provider returned {}x{} mask for {}x{} image",
                            mask.height(),
                            mask.width(),
                            sample.height(),
                            sample.width()
                        ));
                    }
                    if !mask.is_binary() {
                        return SaliencyOutcome::Failed("provider mask not binary".into());
                    }
                    if mask.is_empty_foreground() {
                        SaliencyOutcome::Empty
                    } else {
                        SaliencyOutcome::Mask(mask)
                    }
                }
                Err(e) => SaliencyOutcome::Failed(e.to_string()),
            }
        })
        .collect();

    let skipped = outcomes
        .iter()
        .filter(|o| !matches!(o, SaliencyOutcome::Mask(_)))
        .count();
    if skipped > 0 {
        log::warn!(
            "archive {}: {skipped}/{} entries flagged (empty or failed)",
            archive.category_index,
            archive.len()
        );
    }
    Ok(outcomes)
}

const SPATIAL_SIGMA: f32 = 1.0;
const COLOR_SIGMA: f32 = 0.12;
const MAX_RADIUS: usize = 4;

/// Edge-aware smoothing of a binary mask guided by image color, followed by
/// 0.5-thresholding. `strength` sets the window radius; 0 is the identity.
///
/// Each output value is a weighted average of mask values in the window, the
/// weights being a spatial Gaussian times a color-affinity Gaussian against
/// the center pixel. Isolated speckles in color-flat regions are voted out;
/// mask values do not bleed across strong color edges.
pub fn refine_edges(image: &ImageSample, mask: &LabelMask, strength: f32) -> Result<LabelMask> {
    if !mask.is_binary() {
        return Err(Error::InvalidArgument("refine_edges needs a binary mask".into()));
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::Dimension(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    if strength <= 0.0 {
        return Ok(mask.clone());
    }
    let radius = (strength.ceil() as usize).clamp(1, MAX_RADIUS) as i64;
    let (h, w) = (image.height(), image.width());
    let px = &image.pixels;
    let labels = mask.labels();

    let spatial: Vec<f32> = (0..=(2 * radius * radius) as usize)
        .map(|d2| (-(d2 as f32) / (2.0 * SPATIAL_SIGMA * SPATIAL_SIGMA)).exp())
        .collect();

    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (cr, cg, cb) = (px[(y, x, 0)], px[(y, x, 1)], px[(y, x, 2)]);
            let mut num = 0.0f32;
            let mut den = 0.0f32;
            for dy in -radius..=radius {
                let ny = y as i64 + dy;
                if ny < 0 || ny >= h as i64 {
                    continue;
                }
                for dx in -radius..=radius {
                    let nx = x as i64 + dx;
                    if nx < 0 || nx >= w as i64 {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    let dr = px[(ny, nx, 0)] - cr;
                    let dg = px[(ny, nx, 1)] - cg;
                    let db = px[(ny, nx, 2)] - cb;
                    let color_d2 = dr * dr + dg * dg + db * db;
                    let wgt = spatial[(dy * dy + dx * dx) as usize]
                        * (-color_d2 / (2.0 * COLOR_SIGMA * COLOR_SIGMA)).exp();
                    num += wgt * f32::from(labels[(ny, nx)].min(1));
                    den += wgt;
                }
            }
            out[(y, x)] = u8::from(num >= 0.5 * den);
        }
    }
    LabelMask::new(out, 2)
}

/// Attaches the archive's category to each non-flagged saliency mask.
pub fn label_archive(
    archive: &Archive,
    outcomes: &[SaliencyOutcome],
) -> Result<Vec<PseudoLabelRecord>> {
    if outcomes.len() != archive.len() {
        return Err(Error::Dimension(format!(
            "{} outcomes for {} archive entries",
            outcomes.len(),
            archive.len()
        )));
    }
    let records: Vec<PseudoLabelRecord> = archive
        .entries
        .iter()
        .zip(outcomes)
        .filter_map(|(entry, outcome)| {
            outcome.mask().map(|mask| {
                PseudoLabelRecord::new(
                    entry.image_id.clone(),
                    mask.clone(),
                    archive.category_index,
                    Provenance::Saliency,
                )
            })
        })
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::UnusableArchive {
            category_index: archive.category_index,
        });
    }
    Ok(records)
}

/// Counts 4-connected foreground components; test oracle for refinement.
pub fn count_foreground_components(mask: &LabelMask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut count = 0;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[(y, x)] || mask.get(y, x) == 0 || mask.get(y, x) == IGNORE {
                continue;
            }
            count += 1;
            stack.push((y, x));
            seen[(y, x)] = true;
            while let Some((cy, cx)) = stack.pop() {
                let neighbors = [
                    (cy.wrapping_sub(1), cx),
                    (cy + 1, cx),
                    (cy, cx.wrapping_sub(1)),
                    (cy, cx + 1),
                ];
                for (ny, nx) in neighbors {
                    if ny < h && nx < w && !seen[(ny, nx)] {
                        let v = mask.get(ny, nx);
                        if v != 0 && v != IGNORE {
                            seen[(ny, nx)] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArchiveEntry, MemoryImageSource};
    use ndarray::Array3;

    fn flat_image(id: &str, level: f32, h: usize, w: usize) -> ImageSample {
        ImageSample::new(id, Array3::from_elem((h, w, 3), level), None).unwrap()
    }

    /// Foreground wherever the red channel exceeds 0.5.
    struct RedProvider;

    impl SaliencyProvider for RedProvider {
        fn predict(&self, sample: &ImageSample) -> Result<LabelMask> {
            let (h, w, _) = sample.pixels.dim();
            let labels =
                Array2::from_shape_fn((h, w), |(y, x)| u8::from(sample.pixels[(y, x, 0)] > 0.5));
            LabelMask::new(labels, 2)
        }
    }

    struct FailingProvider;

    impl SaliencyProvider for FailingProvider {
        fn predict(&self, sample: &ImageSample) -> Result<LabelMask> {
            Err(Error::Provider {
                image_id: sample.id.clone(),
                msg: "boom".into(),
            })
        }
    }

    fn archive_of(ids: &[&str], category: u16) -> Archive {
        Archive::new(
            category,
            ids.iter()
                .enumerate()
                .map(|(i, id)| ArchiveEntry {
                    image_id: (*id).into(),
                    similarity: 1.0 - i as f32 * 0.01,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_mask_per_entry_in_order() {
        let mut red = flat_image("a", 0.2, 4, 4);
        red.pixels[(1, 1, 0)] = 0.9;
        let images = MemoryImageSource::new(vec![red, flat_image("b", 0.2, 4, 4)]);
        let archive = archive_of(&["a", "b"], 3);
        let outcomes = generate_saliency(&archive, &images, &RedProvider).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert!(matches!(outcomes[0], SaliencyOutcome::Mask(_)));
        assert!(matches!(outcomes[1], SaliencyOutcome::Empty));
    }

    #[test]
    fn provider_failure_is_flagged_not_fatal() {
        let images = MemoryImageSource::new(vec![flat_image("a", 0.2, 4, 4)]);
        let archive = archive_of(&["a"], 1);
        let outcomes = generate_saliency(&archive, &images, &FailingProvider).unwrap();
        assert!(matches!(outcomes[0], SaliencyOutcome::Failed(_)));
    }

    #[test]
    fn label_archive_carries_category_and_skips_flagged() {
        let archive = archive_of(&["a", "b", "c", "d", "e"], 3);
        let mask = LabelMask::new(Array2::from_elem((2, 2), 1), 2).unwrap();
        let outcomes = vec![
            SaliencyOutcome::Mask(mask.clone()),
            SaliencyOutcome::Empty,
            SaliencyOutcome::Mask(mask.clone()),
            SaliencyOutcome::Mask(mask.clone()),
            SaliencyOutcome::Mask(mask),
        ];
        let records = label_archive(&archive, &outcomes).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records.iter().all(|r| r.category_index == 3));
        assert!(records.iter().all(|r| r.provenance == Provenance::Saliency));
        assert_eq!(records[0].image_id, "a");
        assert_eq!(records[1].image_id, "c");
    }

    #[test]
    fn all_flagged_archive_is_fatal() {
        let archive = archive_of(&["a", "b"], 2);
        let outcomes = vec![SaliencyOutcome::Empty, SaliencyOutcome::Failed("x".into())];
        let err = label_archive(&archive, &outcomes).unwrap_err();
        assert!(matches!(err, Error::UnusableArchive { category_index: 2 }));
    }

    #[test]
    fn refine_strength_zero_is_identity() {
        let image = flat_image("a", 0.5, 6, 6);
        let mut labels = Array2::zeros((6, 6));
        labels[(2, 2)] = 1;
        let mask = LabelMask::new(labels, 2).unwrap();
        let out = refine_edges(&image, &mask, 0.0).unwrap();
        assert_eq!(out.labels(), mask.labels());
    }

    #[test]
    fn constant_image_half_plane_mask_unchanged() {
        // uniform guidance: spatially symmetric averaging keeps a straight
        // edge in place for any strength
        let image = flat_image("a", 0.4, 10, 12);
        let labels = Array2::from_shape_fn((10, 12), |(_, x)| u8::from(x < 6));
        let mask = LabelMask::new(labels, 2).unwrap();
        for strength in [1.0, 2.0, 4.0] {
            let out = refine_edges(&image, &mask, strength).unwrap();
            assert_eq!(out.labels(), mask.labels(), "strength {strength}");
        }
    }

    #[test]
    fn speckles_removed_reducing_component_count() {
        // solid block plus isolated speckles on a flat background
        let image = flat_image("a", 0.5, 16, 16);
        let mut labels = Array2::zeros((16, 16));
        for y in 4..10 {
            for x in 4..10 {
                labels[(y, x)] = 1;
            }
        }
        labels[(0, 0)] = 1;
        labels[(1, 14)] = 1;
        labels[(14, 2)] = 1;
        labels[(13, 13)] = 1;
        let mask = LabelMask::new(labels, 2).unwrap();
        let before = count_foreground_components(&mask);
        let out = refine_edges(&image, &mask, 2.0).unwrap();
        let after = count_foreground_components(&out);
        assert_eq!(before, 5);
        assert!(after < before, "components {before} -> {after}");
        assert_eq!(after, 1);
    }

    #[test]
    fn refinement_respects_color_edges() {
        // mask edge aligned with a color edge survives refinement
        let mut image = flat_image("a", 0.2, 8, 8);
        for y in 0..8 {
            for x in 0..4 {
                image.pixels[(y, x, 0)] = 0.9;
            }
        }
        let labels = Array2::from_shape_fn((8, 8), |(_, x)| u8::from(x < 4));
        let mask = LabelMask::new(labels, 2).unwrap();
        let out = refine_edges(&image, &mask, 3.0).unwrap();
        assert_eq!(out.labels(), mask.labels());
    }
}
