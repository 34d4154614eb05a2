//! Inference: resize policies, soft predictions, and hard masks.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::LabelMask;
use crate::error::{Error, Result};
use crate::imgops::{pad_replicate, resize_bilinear};
use crate::segnet::tensor::Tensor;
use crate::segnet::TrainedSegmenter;

const SUM_TOLERANCE: f32 = 1e-5;

/// Per-pixel class scores summing to 1.
#[derive(Debug, Clone)]
pub struct SoftPrediction {
    scores: Array3<f32>,
}

impl SoftPrediction {
    /// Validates the per-pixel sum-to-one invariant (within 1e-5).
    pub fn new(scores: Array3<f32>) -> Result<Self> {
        let (h, w, k) = scores.dim();
        if k == 0 {
            return Err(Error::InvalidArgument("no classes in soft prediction".into()));
        }
        for y in 0..h {
            for x in 0..w {
                let sum: f32 = (0..k).map(|c| scores[(y, x, c)]).sum();
                if (sum - 1.0).abs() > SUM_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "scores at ({y}, {x}) sum to {sum}"
                    )));
                }
            }
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &Array3<f32> {
        &self.scores
    }

    pub fn height(&self) -> usize {
        self.scores.dim().0
    }

    pub fn width(&self) -> usize {
        self.scores.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.scores.dim().2
    }

    /// Per-pixel argmax, ties broken by the lowest class index.
    pub fn argmax(&self) -> Array2<u8> {
        let (h, w, k) = self.scores.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut best = 0usize;
            let mut best_v = self.scores[(y, x, 0)];
            for c in 1..k {
                let v = self.scores[(y, x, c)];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best as u8
        })
    }
}

/// How an image is resized before the network runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResizePolicy {
    /// Run at the original resolution.
    None,
    /// Scale so the larger dimension equals `pixels`, preserving aspect ratio.
    LongSide { pixels: usize },
    /// Scale the short side to `target`, capping the long side at `max_long`.
    ShortSide { target: usize, max_long: usize },
}

impl ResizePolicy {
    fn target_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let scale = match self {
            ResizePolicy::None => 1.0,
            ResizePolicy::LongSide { pixels } => *pixels as f64 / h.max(w) as f64,
            ResizePolicy::ShortSide { target, max_long } => {
                let s = *target as f64 / h.min(w) as f64;
                if h.max(w) as f64 * s > *max_long as f64 {
                    *max_long as f64 / h.max(w) as f64
                } else {
                    s
                }
            }
        };
        (
            ((h as f64 * scale).round() as usize).max(1),
            ((w as f64 * scale).round() as usize).max(1),
        )
    }
}

fn round_up4(v: usize) -> usize {
    (v + 3) / 4 * 4
}

/// Runs the segmenter on an image: resize per policy, pad to the network
/// stride, forward, softmax, bilinear resize back to the original resolution,
/// and per-pixel argmax. The hard mask equals the argmax of the returned soft
/// prediction at every pixel.
pub fn predict(
    model: &TrainedSegmenter,
    pixels: &Array3<f32>,
    policy: ResizePolicy,
) -> Result<(LabelMask, SoftPrediction)> {
    let (h0, w0, _) = pixels.dim();
    let (th, tw) = policy.target_dims(h0, w0);
    let resized = if (th, tw) == (h0, w0) {
        pixels.clone()
    } else {
        resize_bilinear(pixels, th, tw)
    };
    let (ph, pw) = (round_up4(th), round_up4(tw));
    let padded = pad_replicate(&resized, ph, pw);

    let (logits, _) = model.net.forward(Tensor::from_image(&padded));
    let k = logits.c;

    // softmax over the un-padded region
    let mut scores = Array3::zeros((th, tw, k));
    let hw = ph * pw;
    for y in 0..th {
        for x in 0..tw {
            let pix = y * pw + x;
            let mut max = f32::NEG_INFINITY;
            for c in 0..k {
                max = max.max(logits.data[c * hw + pix]);
            }
            let mut sum = 0.0f32;
            for c in 0..k {
                let e = (logits.data[c * hw + pix] - max).exp();
                scores[(y, x, c)] = e;
                sum += e;
            }
            for c in 0..k {
                scores[(y, x, c)] /= sum;
            }
        }
    }

    // resize scores back to the original resolution and renormalize
    let mut scores = if (th, tw) == (h0, w0) {
        scores
    } else {
        resize_bilinear(&scores, h0, w0)
    };
    for y in 0..h0 {
        for x in 0..w0 {
            let sum: f32 = (0..k).map(|c| scores[(y, x, c)]).sum();
            for c in 0..k {
                scores[(y, x, c)] /= sum;
            }
        }
    }
    if scores.dim().0 != h0 || scores.dim().1 != w0 {
        return Err(Error::Dimension(format!(
            "prediction {}x{} does not match input {h0}x{w0}",
            scores.dim().0,
            scores.dim().1
        )));
    }

    let soft = SoftPrediction::new(scores)?;
    let labels = soft.argmax();
    let mask = LabelMask::new(labels, k as u16)?;
    Ok((mask, soft))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::{init_for_test, ModelMeta};

    fn test_model(k: usize) -> TrainedSegmenter {
        TrainedSegmenter {
            net: init_for_test(4, k, 1),
            meta: ModelMeta {
                config_hash: "t".into(),
                seed: 1,
                iterations: 0,
                num_classes: k as u16,
            },
        }
    }

    #[test]
    fn output_dims_equal_input_dims_for_odd_sizes() {
        let model = test_model(3);
        for (h, w) in [(9, 13), (16, 16), (7, 21)] {
            let px = Array3::from_elem((h, w, 3), 0.4f32);
            let (mask, soft) = predict(&model, &px, ResizePolicy::None).unwrap();
            assert_eq!((mask.height(), mask.width()), (h, w));
            assert_eq!((soft.height(), soft.width()), (h, w));
        }
    }

    #[test]
    fn hard_mask_is_argmax_of_soft() {
        let model = test_model(4);
        let px = Array3::from_shape_fn((10, 14, 3), |(y, x, c)| {
            ((y * 7 + x * 3 + c) % 11) as f32 / 11.0
        });
        let (mask, soft) = predict(&model, &px, ResizePolicy::None).unwrap();
        let am = soft.argmax();
        assert_eq!(mask.labels(), &am);
    }

    #[test]
    fn long_side_policy_runs_and_resizes_back() {
        let model = test_model(2);
        let px = Array3::from_elem((20, 40, 3), 0.3f32);
        let (mask, _) = predict(&model, &px, ResizePolicy::LongSide { pixels: 16 }).unwrap();
        assert_eq!((mask.height(), mask.width()), (20, 40));
    }

    #[test]
    fn short_side_policy_caps_long_side() {
        let p = ResizePolicy::ShortSide {
            target: 384,
            max_long: 512,
        };
        // 100x300 -> short side 384 would make long side 1152; capped to 512
        assert_eq!(p.target_dims(100, 300), (171, 512));
    }

    #[test]
    fn soft_scores_sum_to_one() {
        let model = test_model(5);
        let px = Array3::from_elem((12, 12, 3), 0.6f32);
        let (_, soft) = predict(&model, &px, ResizePolicy::None).unwrap();
        // constructor validated; double-check one pixel anyway
        let s: f32 = (0..5).map(|c| soft.scores()[(3, 4, c)]).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
