//! Oracle providers for the synthetic corpus.
//!
//! The embedding oracle is a chroma-weighted hue histogram, so images of one
//! synthetic category embed exactly in the direction of that category's
//! canonical hue vector. The saliency oracle recovers foreground as chromatic
//! pixels, which by construction equals the generator's ground truth.

use ndarray::Array2;
use rand::Rng;

use crate::data::{EmbeddingVector, ImageSample, LabelMask};
use crate::error::Result;
use crate::imgops::{chroma, hue_degrees};
use crate::pseudomask::SaliencyProvider;
use crate::retrieval::provider::EmbeddingProvider;
use crate::rng::{self, hash_str, tags};
use crate::synth::palette::extract_hue;
use crate::synth::SaliencyNoiseSpec;

pub const EMBED_DIM: usize = 24;
const BIN_DEGREES: f32 = 360.0 / EMBED_DIM as f32;
const CHROMA_THRESHOLD: f32 = 0.1;

/// Soft two-bin assignment of a hue angle.
fn hue_weights(deg: f32) -> [(usize, f32); 2] {
    let pos = deg.rem_euclid(360.0) / BIN_DEGREES;
    let i0 = pos.floor() as usize % EMBED_DIM;
    let frac = pos - pos.floor();
    [(i0, 1.0 - frac), ((i0 + 1) % EMBED_DIM, frac)]
}

fn canonical_hue_vector(deg: f32) -> EmbeddingVector {
    let mut values = vec![0.0f32; EMBED_DIM];
    for (bin, w) in hue_weights(deg) {
        values[bin] += w;
    }
    EmbeddingVector::normalized(values).expect("hue weights are non-zero")
}

fn uniform_vector() -> EmbeddingVector {
    EmbeddingVector::normalized(vec![1.0; EMBED_DIM]).expect("non-zero")
}

/// Histogram-based stand-in for a pretrained image/text encoder pair.
#[derive(Debug, Clone, Default)]
pub struct OracleEmbeddingProvider;

impl EmbeddingProvider for OracleEmbeddingProvider {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn image_embed(&self, sample: &ImageSample) -> Result<EmbeddingVector> {
        let (h, w, _) = sample.pixels.dim();
        let mut hist = vec![0.0f64; EMBED_DIM];
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = (
                    sample.pixels[(y, x, 0)],
                    sample.pixels[(y, x, 1)],
                    sample.pixels[(y, x, 2)],
                );
                let c = chroma(r, g, b);
                if c <= 0.05 {
                    continue;
                }
                for (bin, wgt) in hue_weights(hue_degrees(r, g, b)) {
                    hist[bin] += f64::from(c * wgt);
                }
            }
        }
        let total: f64 = hist.iter().sum();
        if total <= 0.0 {
            return Ok(uniform_vector());
        }
        EmbeddingVector::normalized(hist.iter().map(|v| *v as f32).collect())
    }

    fn text_embed(&self, text: &str) -> Result<EmbeddingVector> {
        match extract_hue(text) {
            Some(deg) => Ok(canonical_hue_vector(deg)),
            // unknown concepts map to a stable pseudo-hue so lookups stay total
            None => Ok(canonical_hue_vector((hash_str(text) % 360) as f32)),
        }
    }
}

/// Chroma-threshold stand-in for an unsupervised salient object detector.
/// Without noise its output equals the generator's foreground exactly.
#[derive(Debug, Clone, Default)]
pub struct OracleSaliencyProvider {
    pub noise: Option<SaliencyNoiseSpec>,
}

impl OracleSaliencyProvider {
    pub fn clean() -> Self {
        Self { noise: None }
    }

    pub fn with_noise(noise: SaliencyNoiseSpec) -> Self {
        Self { noise: Some(noise) }
    }
}

fn morphology(mask: &Array2<u8>, radius: usize, dilate: bool) -> Array2<u8> {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let r = radius as i64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = if dilate { 0u8 } else { 1u8 };
        for dy in -r..=r {
            for dx in -r..=r {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let v = mask[(ny as usize, nx as usize)];
                if dilate {
                    acc = acc.max(v);
                } else {
                    acc = acc.min(v);
                }
            }
        }
        acc
    })
}

impl SaliencyProvider for OracleSaliencyProvider {
    fn predict(&self, sample: &ImageSample) -> Result<LabelMask> {
        let (h, w, _) = sample.pixels.dim();
        let mut labels = Array2::from_shape_fn((h, w), |(y, x)| {
            u8::from(
                chroma(
                    sample.pixels[(y, x, 0)],
                    sample.pixels[(y, x, 1)],
                    sample.pixels[(y, x, 2)],
                ) > CHROMA_THRESHOLD,
            )
        });

        if let Some(noise) = &self.noise {
            let mut rng = rng::stream(noise.seed, tags::SALIENCY_NOISE, &[hash_str(&sample.id)]);
            if noise.radius > 0 {
                let dilate = rng.gen_bool(0.5);
                labels = morphology(&labels, noise.radius, dilate);
            }
            if noise.speckle_prob > 0.0 {
                for v in labels.iter_mut() {
                    if rng.gen_bool(noise.speckle_prob) {
                        *v = 1 - *v;
                    }
                }
            }
        }
        LabelMask::new(labels, 2)
    }
}
