//! Stage 3: per-group binary foreground experts that refine saliency
//! pseudo-masks.

use crate::data::{
    Archive, CategoryCatalog, ImageSource, Provenance, PseudoLabelRecord,
};
use crate::distill::{predict, train_segmenter, ResizePolicy, TrainConfig, TrainLogEntry};
use crate::error::{Error, Result};
use crate::retrieval::ExpertGroup;
use crate::segnet::TrainedSegmenter;

/// Minimum mean foreground fraction across training records; below this the
/// supervision is considered degenerate.
pub const DEGENERATE_FG_EPSILON: f64 = 0.005;

/// Trains one binary (background vs foreground) expert on the union of the
/// group's pseudo-label records, using the distillation optimization schedule.
///
/// The expert never predicts category names; those always come from the
/// archive a mask belongs to.
pub fn train_expert(
    group: &ExpertGroup,
    records: &[PseudoLabelRecord],
    source: &dyn ImageSource,
    config: &TrainConfig,
) -> Result<(TrainedSegmenter, Vec<TrainLogEntry>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "no records supplied for expert training".into(),
        ));
    }
    for rec in records {
        if !group
            .member_category_indices
            .contains(&rec.category_index)
        {
            return Err(Error::InvalidArgument(format!(
                "record {:?} (category {}) is not in group {}",
                rec.image_id, rec.category_index, group.group_id
            )));
        }
    }
    let mean_fg: f64 = records
        .iter()
        .map(|r| r.mask.foreground_fraction())
        .sum::<f64>()
        / records.len() as f64;
    if mean_fg < DEGENERATE_FG_EPSILON {
        return Err(Error::DegenerateSupervision {
            got: mean_fg,
            min: DEGENERATE_FG_EPSILON,
        });
    }

    // one-vs-all: every record becomes foreground class 1
    let binary_catalog = CategoryCatalog::from_names(["foreground"])?;
    let binary_records: Vec<PseudoLabelRecord> = records
        .iter()
        .map(|r| {
            PseudoLabelRecord::new(r.image_id.clone(), r.mask.clone(), 1, r.provenance)
        })
        .collect::<Result<_>>()?;
    train_segmenter(&binary_records, &binary_catalog, source, config)
}

/// Regenerates the archive's pseudo-masks from an expert's predictions.
/// Empty predictions are flagged and skipped, as in saliency labelling.
pub fn refine_masks(
    expert: &TrainedSegmenter,
    archive: &Archive,
    images: &dyn ImageSource,
) -> Result<Vec<PseudoLabelRecord>> {
    let mut records = Vec::with_capacity(archive.len());
    let mut skipped = 0usize;
    for entry in &archive.entries {
        let sample = images.get(&entry.image_id)?;
        let (mask, _) = predict(expert, &sample.pixels, ResizePolicy::None)?;
        if mask.is_empty_foreground() {
            skipped += 1;
            continue;
        }
        records.push(PseudoLabelRecord::new(
            entry.image_id.clone(),
            mask,
            archive.category_index,
            Provenance::Expert,
        )?);
    }
    if skipped > 0 {
        log::warn!(
            "expert refinement for category {}: {skipped}/{} empty predictions skipped",
            archive.category_index,
            archive.len()
        );
    }
    if records.is_empty() {
        return Err(Error::UnusableArchive {
            category_index: archive.category_index,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArchiveEntry, LabelMask, MemoryImageSource, IGNORE};
    use crate::pseudomask::SaliencyProvider;
    use crate::synth::oracle::OracleSaliencyProvider;
    use crate::synth::{generate_corpus, SynthSpec};

    fn group(id: usize, members: Vec<u16>) -> ExpertGroup {
        ExpertGroup {
            group_id: id,
            member_category_indices: members,
        }
    }

    fn quick_config(iters: usize) -> TrainConfig {
        TrainConfig {
            max_iterations: iters,
            batch_size: 4,
            crop_size: 24,
            base_channels: 8,
            lr0: 0.004,
            scale_range: (1.0, 1.0),
            jitter_brightness: 0.0,
            jitter_contrast: 0.0,
            jitter_saturation: 0.0,
            copy_paste_enabled: false,
            seed: 2,
            ..Default::default()
        }
    }

    fn saliency_records(
        corpus: &crate::synth::SynthCorpus,
        provider: &dyn SaliencyProvider,
    ) -> Vec<PseudoLabelRecord> {
        corpus
            .train
            .iter()
            .map(|(s, c)| {
                PseudoLabelRecord::new(
                    s.id.clone(),
                    provider.predict(s).unwrap(),
                    *c,
                    Provenance::Saliency,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn record_outside_group_rejected() {
        let spec = SynthSpec {
            num_categories: 2,
            images_per_category: 2,
            image_size: (24, 24),
            multi_object: false,
            val_per_category: 1,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let records = saliency_records(&corpus, &OracleSaliencyProvider::clean());
        let source = MemoryImageSource::new(corpus.train.iter().map(|(s, _)| s.clone()).collect());
        let g = group(0, vec![1]); // excludes category 2
        let err = train_expert(&g, &records, &source, &quick_config(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn all_empty_masks_are_degenerate() {
        let spec = SynthSpec {
            num_categories: 1,
            images_per_category: 3,
            image_size: (24, 24),
            multi_object: false,
            val_per_category: 1,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let source = MemoryImageSource::new(corpus.train.iter().map(|(s, _)| s.clone()).collect());
        let records: Vec<PseudoLabelRecord> = corpus
            .train
            .iter()
            .map(|(s, c)| {
                PseudoLabelRecord::new(
                    s.id.clone(),
                    LabelMask::zeros(24, 24, 2),
                    *c,
                    Provenance::Saliency,
                )
                .unwrap()
            })
            .collect();
        let g = group(0, vec![1]);
        let err = train_expert(&g, &records, &source, &quick_config(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSupervision { .. }));
    }

    #[test]
    fn expert_learns_clean_category_to_high_iou() {
        let spec = SynthSpec {
            num_categories: 1,
            images_per_category: 20,
            image_size: (24, 24),
            multi_object: false,
            val_per_category: 1,
            seed: 8,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let records = saliency_records(&corpus, &OracleSaliencyProvider::clean());
        let source = MemoryImageSource::new(corpus.train.iter().map(|(s, _)| s.clone()).collect());
        let g = group(0, vec![1]);
        let (expert, _) = train_expert(&g, &records, &source, &quick_config(300)).unwrap();

        // IoU of expert predictions vs synth gt on the training images
        let mut total = 0.0;
        for (sample, _) in &corpus.train {
            let (pred, _) = predict(&expert, &sample.pixels, ResizePolicy::None).unwrap();
            let gt = sample.gt_mask.as_ref().unwrap();
            let mut inter = 0usize;
            let mut union = 0usize;
            for ((y, x), &g) in gt.labels().indexed_iter() {
                if g == IGNORE {
                    continue;
                }
                let p = pred.get(y, x) >= 1;
                let t = g >= 1;
                if p && t {
                    inter += 1;
                }
                if p || t {
                    union += 1;
                }
            }
            total += inter as f64 / union as f64;
        }
        let mean_iou = total / corpus.train.len() as f64;
        assert!(mean_iou >= 0.9, "expert train IoU {mean_iou:.3}");
    }

    #[test]
    fn refine_masks_labels_with_archive_category() {
        let spec = SynthSpec {
            num_categories: 2,
            images_per_category: 8,
            image_size: (24, 24),
            multi_object: false,
            val_per_category: 1,
            seed: 4,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let records = saliency_records(&corpus, &OracleSaliencyProvider::clean());
        let source = MemoryImageSource::new(corpus.train.iter().map(|(s, _)| s.clone()).collect());
        let g = group(0, vec![1, 2]);
        let (expert, _) = train_expert(&g, &records, &source, &quick_config(200)).unwrap();

        let archive = Archive::new(
            2,
            corpus
                .train
                .iter()
                .filter(|(_, c)| *c == 2)
                .enumerate()
                .map(|(i, (s, _))| ArchiveEntry {
                    image_id: s.id.clone(),
                    similarity: 1.0 - i as f32 * 1e-3,
                })
                .collect(),
        )
        .unwrap();
        let refined = refine_masks(&expert, &archive, &source).unwrap();
        assert!(!refined.is_empty());
        assert!(refined.len() <= archive.len());
        assert!(refined.iter().all(|r| r.category_index == 2));
        assert!(refined.iter().all(|r| r.provenance == Provenance::Expert));
        assert!(refined.iter().all(|r| r.mask.is_binary()));
    }
}
