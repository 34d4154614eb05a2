//! Deterministic synthetic shapes corpus and oracle providers.
//!
//! Categories are (hue, shape) pairs with hues evenly spaced on the color
//! wheel, so a color-histogram embedding separates categories perfectly and a
//! chroma test recovers exact foreground masks. Backgrounds are achromatic.

pub mod oracle;
pub mod palette;
pub mod shapes;

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_image, write_mask, CategoryCatalog, ImageSample, LabelMask, ManifestRecord, IGNORE,
};
use crate::error::{Error, Result};
use crate::imgops::hue_to_rgb;
use crate::rng::{self, tags};
use palette::hue_display_name;
use shapes::{rasterize, Shape, SHAPES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundTexture {
    Flat,
    Noise,
}

/// Parameters of the synthetic corpus. Generation is a pure function of this
/// struct, seed included.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_categories: usize,
    pub images_per_category: usize,
    /// (height, width) of single-object images.
    pub image_size: (usize, usize),
    /// Emit a multi-object validation split.
    pub multi_object: bool,
    /// Inclusive range of objects per multi-object image.
    pub objects_per_image: (usize, usize),
    pub background_texture: BackgroundTexture,
    /// IGNORE band half-width around label boundaries, in pixels.
    pub boundary_ignore_width: usize,
    /// Target foreground-area fraction range for single-object images.
    pub fg_fraction: (f64, f64),
    /// Held-out single-object validation images per category.
    pub val_per_category: usize,
    /// Total multi-object validation images.
    pub multi_val_images: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_categories: 4,
            images_per_category: 20,
            image_size: (48, 48),
            multi_object: true,
            objects_per_image: (2, 3),
            background_texture: BackgroundTexture::Flat,
            boundary_ignore_width: 1,
            fg_fraction: (0.10, 0.30),
            val_per_category: 10,
            multi_val_images: 24,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories == 0 || self.images_per_category == 0 {
            return Err(Error::InvalidArgument(
                "num_categories and images_per_category must be >= 1".into(),
            ));
        }
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::InvalidArgument(
                "image size must be at least 16x16".into(),
            ));
        }
        let (lo, hi) = self.fg_fraction;
        if !(lo > 0.0 && hi >= lo && hi <= 0.6) {
            return Err(Error::InvalidArgument(
                "fg_fraction must satisfy 0 < lo <= hi <= 0.6".into(),
            ));
        }
        let (omin, omax) = self.objects_per_image;
        if self.multi_object && !(omin >= 1 && omax >= omin) {
            return Err(Error::InvalidArgument(
                "objects_per_image range invalid".into(),
            ));
        }
        Ok(())
    }

    /// Hue in degrees for 0-based category index.
    pub fn category_hue(&self, idx0: usize) -> f32 {
        (idx0 as f32) * 360.0 / self.num_categories as f32
    }

    pub fn category_shape(&self, idx0: usize) -> Shape {
        SHAPES[idx0 % SHAPES.len()]
    }

    pub fn category_name(&self, idx0: usize) -> String {
        format!(
            "{}-{}",
            hue_display_name(self.category_hue(idx0)),
            self.category_shape(idx0).name()
        )
    }

    pub fn catalog(&self) -> Result<CategoryCatalog> {
        CategoryCatalog::from_names((0..self.num_categories).map(|i| self.category_name(i)))
    }

    pub fn num_classes(&self) -> u16 {
        self.num_categories as u16 + 1
    }

    /// Multi-object canvas: 1.5x the single-object size, rounded up to /4.
    pub fn multi_image_size(&self) -> (usize, usize) {
        let (h, w) = self.image_size;
        (round_up4(h * 3 / 2), round_up4(w * 3 / 2))
    }
}

fn round_up4(v: usize) -> usize {
    (v + 3) / 4 * 4
}

/// Deterministic corruption applied to oracle saliency masks in tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyNoiseSpec {
    /// Dilation-or-erosion radius (Chebyshev); the direction is drawn per image.
    pub radius: usize,
    /// Per-pixel flip probability.
    pub speckle_prob: f64,
    pub seed: u64,
}

/// A generated corpus held in memory. Single-object entries carry their
/// category index (1-based).
pub struct SynthCorpus {
    pub catalog: CategoryCatalog,
    pub train: Vec<(ImageSample, u16)>,
    pub val_single: Vec<(ImageSample, u16)>,
    pub val_multi: Vec<ImageSample>,
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_VAL_SINGLE: u64 = 1;
const SPLIT_VAL_MULTI: u64 = 2;

/// Generates the corpus in memory; parallel per record, outputs independent of
/// worker count.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let catalog = spec.catalog()?;

    let train: Vec<(ImageSample, u16)> = (0..spec.num_categories * spec.images_per_category)
        .into_par_iter()
        .map(|i| {
            let cat0 = i / spec.images_per_category;
            let id = format!("train-{i:05}");
            single_object_record(spec, cat0, SPLIT_TRAIN, i as u64, id).map(|s| (s, cat0 as u16 + 1))
        })
        .collect::<Result<_>>()?;

    let val_single: Vec<(ImageSample, u16)> = (0..spec.num_categories * spec.val_per_category)
        .into_par_iter()
        .map(|i| {
            let cat0 = i / spec.val_per_category.max(1);
            let id = format!("vals-{i:05}");
            single_object_record(spec, cat0, SPLIT_VAL_SINGLE, i as u64, id)
                .map(|s| (s, cat0 as u16 + 1))
        })
        .collect::<Result<_>>()?;

    let val_multi: Vec<ImageSample> = if spec.multi_object {
        (0..spec.multi_val_images)
            .into_par_iter()
            .map(|i| multi_object_record(spec, i as u64, format!("valm-{i:05}")))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    Ok(SynthCorpus {
        catalog,
        train,
        val_single,
        val_multi,
    })
}

fn background(spec: &SynthSpec, h: usize, w: usize, rng: &mut impl Rng) -> Array3<f32> {
    match spec.background_texture {
        BackgroundTexture::Flat => Array3::from_elem((h, w, 3), 0.5),
        BackgroundTexture::Noise => {
            let mut px = Array3::zeros((h, w, 3));
            for y in 0..h {
                for x in 0..w {
                    let g: f32 = rng.gen_range(0.35..0.65);
                    for c in 0..3 {
                        px[(y, x, c)] = g;
                    }
                }
            }
            px
        }
    }
}

struct PlacedObject {
    top: usize,
    left: usize,
    side: usize,
    category0: usize,
}

fn bbox_side(spec: &SynthSpec, shape: Shape, fraction: f64, h: usize, w: usize) -> usize {
    let (sh, sw) = spec.image_size;
    // size relative to the single-object canvas so object scale matches training
    let area = fraction * (sh * sw) as f64 / shape.fill_ratio();
    let side = area.sqrt().round() as usize;
    side.clamp(6, h.min(w).saturating_sub(2))
}

fn draw_object(
    pixels: &mut Array3<f32>,
    labels: &mut Array2<u8>,
    obj: &PlacedObject,
    spec: &SynthSpec,
    rng: &mut impl Rng,
) {
    let shape = spec.category_shape(obj.category0);
    let sat: f32 = rng.gen_range(0.85..1.0);
    let val: f32 = rng.gen_range(0.80..1.0);
    let color = hue_to_rgb(spec.category_hue(obj.category0), sat, val);
    for (y, x) in rasterize(shape, obj.top, obj.left, obj.side) {
        for c in 0..3 {
            pixels[(y, x, c)] = color[c];
        }
        labels[(y, x)] = obj.category0 as u8 + 1;
    }
}

/// Marks pixels within Chebyshev distance `width` of a differing label IGNORE.
fn apply_boundary_ignore(labels: &Array2<u8>, width: usize) -> Array2<u8> {
    if width == 0 {
        return labels.clone();
    }
    let (h, w) = labels.dim();
    let mut out = labels.clone();
    let r = width as i64;
    for y in 0..h {
        for x in 0..w {
            let v = labels[(y, x)];
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    if labels[(ny as usize, nx as usize)] != v {
                        out[(y, x)] = IGNORE;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

fn single_object_record(
    spec: &SynthSpec,
    category0: usize,
    split: u64,
    index: u64,
    id: String,
) -> Result<ImageSample> {
    let mut rng = rng::stream(spec.seed, tags::SYNTH_RECORD, &[split, index]);
    let (h, w) = spec.image_size;
    let mut pixels = background(spec, h, w, &mut rng);
    let mut labels = Array2::zeros((h, w));

    let fraction = rng.gen_range(spec.fg_fraction.0..=spec.fg_fraction.1);
    let shape = spec.category_shape(category0);
    let side = bbox_side(spec, shape, fraction, h, w);
    let top = rng.gen_range(1..=h - side - 1);
    let left = rng.gen_range(1..=w - side - 1);
    let obj = PlacedObject {
        top,
        left,
        side,
        category0,
    };
    draw_object(&mut pixels, &mut labels, &obj, spec, &mut rng);

    let labels = apply_boundary_ignore(&labels, spec.boundary_ignore_width);
    let mask = LabelMask::new(labels, spec.num_classes())?;
    ImageSample::new(id, pixels, Some(mask))
}

fn overlaps(a: &PlacedObject, b: &PlacedObject, gap: usize) -> bool {
    let g = gap as i64;
    let (at, al, asz) = (a.top as i64, a.left as i64, a.side as i64);
    let (bt, bl, bsz) = (b.top as i64, b.left as i64, b.side as i64);
    !(at + asz + g <= bt || bt + bsz + g <= at || al + asz + g <= bl || bl + bsz + g <= al)
}

const PLACEMENT_RETRIES: usize = 60;

fn multi_object_record(spec: &SynthSpec, index: u64, id: String) -> Result<ImageSample> {
    let mut rng = rng::stream(spec.seed, tags::SYNTH_RECORD, &[SPLIT_VAL_MULTI, index]);
    let (h, w) = spec.multi_image_size();
    let (omin, omax) = spec.objects_per_image;
    let count = rng.gen_range(omin..=omax).min(spec.num_categories);

    // distinct categories per image
    let mut cats: Vec<usize> = (0..spec.num_categories).collect();
    for i in 0..count {
        let j = rng.gen_range(i..cats.len());
        cats.swap(i, j);
    }
    cats.truncate(count);

    let mut pixels = background(spec, h, w, &mut rng);
    let mut labels = Array2::zeros((h, w));
    let mut placed: Vec<PlacedObject> = Vec::new();
    for &cat0 in &cats {
        let shape = spec.category_shape(cat0);
        let fraction = rng.gen_range(spec.fg_fraction.0..=spec.fg_fraction.1) / count as f64;
        let side = bbox_side(spec, shape, fraction, h, w);
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let top = rng.gen_range(1..=h - side - 1);
            let left = rng.gen_range(1..=w - side - 1);
            let candidate = PlacedObject {
                top,
                left,
                side,
                category0: cat0,
            };
            if placed.iter().all(|p| !overlaps(p, &candidate, 2)) {
                draw_object(&mut pixels, &mut labels, &candidate, spec, &mut rng);
                placed.push(candidate);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Placement {
                retries: PLACEMENT_RETRIES,
            });
        }
    }

    let labels = apply_boundary_ignore(&labels, spec.boundary_ignore_width);
    let mask = LabelMask::new(labels, spec.num_classes())?;
    ImageSample::new(id, pixels, Some(mask))
}

/// Paths emitted by [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthDatasetPaths {
    pub root: PathBuf,
    pub catalog: PathBuf,
    pub train_manifest: PathBuf,
    pub val_single_manifest: PathBuf,
    pub val_multi_manifest: PathBuf,
}

/// Generates the corpus and writes images, masks, manifests, and the catalog
/// under `out_dir`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthDatasetPaths> {
    let corpus = generate_corpus(spec)?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    let write_split = |records: &[(ImageSample, Option<u16>)]| -> Result<Vec<ManifestRecord>> {
        records
            .par_iter()
            .map(|(sample, cat)| {
                let img_rel = PathBuf::from(format!("images/{}.png", sample.id));
                let mask_rel = PathBuf::from(format!("masks/{}.png", sample.id));
                write_image(&sample.pixels, &out_dir.join(&img_rel))?;
                write_mask(sample.gt_mask.as_ref().unwrap(), &out_dir.join(&mask_rel))?;
                Ok(ManifestRecord {
                    id: sample.id.clone(),
                    image_path: img_rel,
                    mask_path: Some(mask_rel),
                    category: cat.map(|c| corpus.catalog.entry(c).unwrap().name.clone()),
                    provenance: None,
                })
            })
            .collect()
    };

    let train: Vec<_> = corpus
        .train
        .iter()
        .map(|(s, c)| (s.clone(), Some(*c)))
        .collect();
    let val_single: Vec<_> = corpus
        .val_single
        .iter()
        .map(|(s, c)| (s.clone(), Some(*c)))
        .collect();
    let val_multi: Vec<_> = corpus.val_multi.iter().map(|s| (s.clone(), None)).collect();

    let train_records = write_split(&train)?;
    let val_single_records = write_split(&val_single)?;
    let val_multi_records = write_split(&val_multi)?;

    let paths = SynthDatasetPaths {
        root: out_dir.to_path_buf(),
        catalog: out_dir.join("catalog.txt"),
        train_manifest: out_dir.join("train.jsonl"),
        val_single_manifest: out_dir.join("val_single.jsonl"),
        val_multi_manifest: out_dir.join("val_multi.jsonl"),
    };
    corpus.catalog.write_to(&paths.catalog)?;
    crate::data::write_manifest(&train_records, &paths.train_manifest)?;
    crate::data::write_manifest(&val_single_records, &paths.val_single_manifest)?;
    crate::data::write_manifest(&val_multi_records, &paths.val_multi_manifest)?;
    Ok(paths)
}
