//! The training loop shared by category experts and the distilled segmenter.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryCatalog, ImageSource, LabelMask, PseudoLabelRecord};
use crate::error::{Error, Result};
use crate::imgops::{resize_bilinear, resize_nearest};
use crate::rng::{self, tags};
use crate::segnet::tensor::Tensor;
use crate::segnet::{softmax_ce_loss, AdamW, ModelMeta, NetConfig, SegNet, TrainedSegmenter};

use super::augment::{augment, copy_paste};
use super::{poly_lr, TrainConfig};

/// One append-only training log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Serializes log entries one JSON object per line.
pub fn log_to_jsonl(entries: &[TrainLogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
        out.push('\n');
    }
    out
}

/// Trains a (C+1)-way segmenter on pseudo-label records with pixel-wise
/// cross-entropy, AdamW, the poly schedule, and per-item copy-paste when
/// enabled. Deterministic given (corpus order, config, seed).
pub fn train_segmenter(
    corpus: &[PseudoLabelRecord],
    catalog: &CategoryCatalog,
    source: &dyn ImageSource,
    config: &TrainConfig,
) -> Result<(TrainedSegmenter, Vec<TrainLogEntry>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let num_classes = catalog.num_classes();
    for rec in corpus {
        if rec.category_index >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "record {:?} has category {} not in the {}-class catalog",
                rec.image_id, rec.category_index, num_classes
            )));
        }
    }

    // resolve records once: resize to the training crop and attach labels
    let crop = config.crop_size;
    let items: Vec<(Array3<f32>, LabelMask)> = corpus
        .par_iter()
        .map(|rec| {
            let sample = source.get(&rec.image_id)?;
            let labelled = rec.mask.binary_to_category(rec.category_index, num_classes)?;
            let image = resize_bilinear(&sample.pixels, crop, crop);
            let labels = resize_nearest(labelled.labels(), crop, crop);
            Ok((image, LabelMask::new(labels, num_classes)?))
        })
        .collect::<Result<_>>()?;

    let mut net = SegNet::init(
        NetConfig::new(config.base_channels, num_classes as usize),
        config.seed,
    );
    let mut opt = AdamW::new(net.num_params());
    let mut log = Vec::with_capacity(config.max_iterations);

    for iteration in 0..config.max_iterations {
        let lr = poly_lr(iteration, config)?;

        let mut sampler = rng::stream(config.seed, tags::BATCH_SAMPLING, &[iteration as u64]);
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rand::Rng::gen_range(&mut sampler, 0..items.len()))
            .collect();

        // per-item forward/backward in parallel; reduction is in index order,
        // so results do not depend on worker count
        let results: Vec<Result<(f64, usize, Vec<f32>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(item_idx, &rec_idx)| {
                let (image, mask) = items[rec_idx].clone();
                let (image, mask) = if config.copy_paste_enabled {
                    let mut cp_rng = rng::stream(
                        config.seed,
                        tags::COPY_PASTE,
                        &[iteration as u64, item_idx as u64],
                    );
                    copy_paste((image, mask), &items, &mut cp_rng, config.n_max)?
                } else {
                    (image, mask)
                };
                let mut aug_rng = rng::stream(
                    config.seed,
                    tags::AUGMENT,
                    &[iteration as u64, item_idx as u64],
                );
                let (image, mask) = augment(&image, &mask, &mut aug_rng, config)?;

                let (logits, cache) = net.forward(Tensor::from_image(&image));
                let (loss, counted, dlogits) = softmax_ce_loss(&logits, mask.labels());
                if counted == 0 {
                    return Ok((0.0, 0, vec![0.0; net.num_params()]));
                }
                let grads = net.backward(&cache, dlogits);
                Ok((loss, counted, grads))
            })
            .collect();

        let mut total_loss = 0.0f64;
        let mut total_counted = 0usize;
        let mut grad_sum = vec![0.0f32; net.num_params()];
        for r in results {
            let (loss, counted, grads) = r?;
            total_loss += loss;
            total_counted += counted;
            for (g, v) in grad_sum.iter_mut().zip(&grads) {
                *g += v;
            }
        }
        if total_counted == 0 {
            return Err(Error::DegenerateSupervision {
                got: 0.0,
                min: f64::EPSILON,
            });
        }
        let scale = 1.0 / total_counted as f32;
        for g in grad_sum.iter_mut() {
            *g *= scale;
        }
        opt.step(net.params_mut(), &grad_sum, lr as f32, config.weight_decay as f32);

        log.push(TrainLogEntry {
            iteration,
            lr,
            loss: total_loss / total_counted as f64,
        });
    }

    let model = TrainedSegmenter {
        net,
        meta: ModelMeta {
            config_hash: config.config_hash(),
            seed: config.seed,
            iterations: config.max_iterations,
            num_classes,
        },
    };
    Ok((model, log))
}

/// Mean cross-entropy of the model on fixed (image, labels) pairs; used by
/// tests to compare losses without touching optimizer state.
pub fn evaluate_loss(
    model: &TrainedSegmenter,
    pairs: &[(Array3<f32>, Array2<u8>)],
) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for (image, labels) in pairs {
        let (logits, _) = model.net.forward(Tensor::from_image(image));
        let (loss, n, _) = softmax_ce_loss(&logits, labels);
        total += loss;
        counted += n;
    }
    if counted == 0 {
        return Err(Error::InvalidArgument("no counted pixels".into()));
    }
    Ok(total / counted as f64)
}
