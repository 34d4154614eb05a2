//! Background thresholding of soft predictions and the threshold sweep.

use ndarray::Array2;

use crate::data::LabelMask;
use crate::distill::SoftPrediction;
use crate::error::{Error, Result};
use crate::eval::ConfusionAccumulator;

/// Assigns background (class 0) wherever the maximum foreground score falls
/// below `t`; otherwise the argmax foreground class, offset by 1. Ties break
/// to the lowest class index.
///
/// The soft prediction covers the C foreground classes only.
pub fn threshold_background(soft: &SoftPrediction, t: f64) -> Result<LabelMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    let (h, w, k) = soft.scores().dim();
    let t = t as f32;
    let labels = Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0usize;
        let mut best_v = soft.scores()[(y, x, 0)];
        for c in 1..k {
            let v = soft.scores()[(y, x, c)];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best_v >= t {
            best as u8 + 1
        } else {
            0
        }
    });
    LabelMask::new(labels, k as u16 + 1)
}

/// The 20-point default grid: 0.00, 0.05, ..., 0.95.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

/// Evaluates mIoU over the grid and returns the best threshold (ties broken
/// by the smallest t) together with the full (t, mIoU) curve.
pub fn sweep_threshold(
    softs: &[SoftPrediction],
    gts: &[LabelMask],
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "threshold grid must be strictly ascending".into(),
        ));
    }
    if softs.len() != gts.len() || softs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} soft predictions vs {} ground truths",
            softs.len(),
            gts.len()
        )));
    }
    let num_classes = softs[0].num_classes() as u16 + 1;
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &t in grid {
        let mut acc = ConfusionAccumulator::new(num_classes);
        for (soft, gt) in softs.iter().zip(gts) {
            let pred = threshold_background(soft, t)?;
            acc.accumulate(&pred, gt)?;
        }
        let miou = acc.iou_report(true)?.miou;
        curve.push((t, miou));
        if miou > best.1 {
            best = (t, miou);
        }
    }
    Ok((best.0, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn soft_from(scores: Vec<Vec<Vec<f32>>>) -> SoftPrediction {
        let h = scores.len();
        let w = scores[0].len();
        let k = scores[0][0].len();
        let arr = Array3::from_shape_fn((h, w, k), |(y, x, c)| scores[y][x][c]);
        SoftPrediction::new(arr).unwrap()
    }

    #[test]
    fn zero_threshold_never_assigns_background() {
        let soft = soft_from(vec![vec![vec![0.5, 0.5], vec![0.99, 0.01]]]);
        let mask = threshold_background(&soft, 0.0).unwrap();
        assert!(mask.labels().iter().all(|&v| v != 0));
    }

    #[test]
    fn low_confidence_pixel_becomes_background() {
        let soft = soft_from(vec![vec![vec![0.3, 0.7]]]);
        let mask = threshold_background(&soft, 0.9).unwrap();
        assert_eq!(mask.get(0, 0), 0);
        let mask_low = threshold_background(&soft, 0.5).unwrap();
        assert_eq!(mask_low.get(0, 0), 2); // class index 1 -> label 2
    }

    #[test]
    fn argmax_ties_break_to_lowest_class() {
        let soft = soft_from(vec![vec![vec![0.5, 0.5]]]);
        let mask = threshold_background(&soft, 0.0).unwrap();
        assert_eq!(mask.get(0, 0), 1);
    }

    #[test]
    fn out_of_range_threshold_is_fatal() {
        let soft = soft_from(vec![vec![vec![1.0, 0.0]]]);
        assert!(threshold_background(&soft, 1.5).is_err());
        assert!(threshold_background(&soft, -0.1).is_err());
    }

    #[test]
    fn default_grid_has_20_points() {
        let grid = default_threshold_grid();
        assert_eq!(grid.len(), 20);
        assert_eq!(grid[0], 0.0);
        assert!((grid[19] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let soft = soft_from(vec![vec![vec![0.8, 0.2]]]);
        let gt = LabelMask::new(ndarray::Array2::from_elem((1, 1), 1u8), 3).unwrap();
        let (best, curve) = sweep_threshold(&[soft], &[gt], &[0.4]).unwrap();
        assert_eq!(best, 0.4);
        assert_eq!(curve.len(), 1);
    }

    proptest! {
        #[test]
        fn raising_t_never_turns_background_to_foreground(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (h, w, k) = (4, 4, 3);
            let arr = Array3::from_shape_fn((h, w, k), |_| rng.gen_range(0.0f32..1.0));
            // normalize per pixel
            let mut arr = arr;
            for y in 0..h {
                for x in 0..w {
                    let s: f32 = (0..k).map(|c| arr[(y, x, c)]).sum();
                    for c in 0..k {
                        arr[(y, x, c)] /= s;
                    }
                }
            }
            let soft = SoftPrediction::new(arr).unwrap();
            let t_lo = rng.gen_range(0.0..0.5);
            let t_hi = rng.gen_range(t_lo..1.0);
            let lo = threshold_background(&soft, t_lo).unwrap();
            let hi = threshold_background(&soft, t_hi).unwrap();
            for (a, b) in lo.labels().iter().zip(hi.labels().iter()) {
                if *a == 0 {
                    prop_assert_eq!(*b, 0u8);
                }
            }
        }
    }
}
