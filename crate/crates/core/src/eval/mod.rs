//! Metrics: confusion bookkeeping, per-class IoU and mIoU, size-stratified
//! mIoU, and background thresholding of soft predictions.

pub mod report;
pub mod threshold;

use ndarray::Array2;

use crate::data::{LabelMask, IGNORE};
use crate::error::{Error, Result};

pub use report::{EvalConfigEcho, EvalReport, StrataReport};
pub use threshold::{default_threshold_grid, sweep_threshold, threshold_background};

/// (C+1) x (C+1) confusion counts indexed \[gt\]\[pred\]. IGNORE ground-truth
/// pixels are never counted; merging accumulators is entrywise addition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionAccumulator {
    matrix: Array2<u64>,
    num_classes: u16,
    total: u64,
}

/// Per-class IoU (None where the union is empty) and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: u16) -> Self {
        let n = num_classes as usize;
        Self {
            matrix: Array2::zeros((n, n)),
            num_classes,
            total: 0,
        }
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn total_pixels(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn matrix(&self) -> &Array2<u64> {
        &self.matrix
    }

    /// Adds one (pred, gt) pair: every non-IGNORE gt pixel increments entry
    /// (gt, pred).
    pub fn accumulate(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::Dimension(format!(
                "pred {}x{} vs gt {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        for ((y, x), &g) in gt.labels().indexed_iter() {
            if g == IGNORE {
                continue;
            }
            let p = pred.get(y, x);
            if p == IGNORE || u16::from(p) >= self.num_classes || u16::from(g) >= self.num_classes
            {
                return Err(Error::InvalidArgument(format!(
                    "label out of range at ({y}, {x}): pred {p}, gt {g}"
                )));
            }
            self.matrix[(g as usize, p as usize)] += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Entrywise sum; shards evaluated in parallel merge in any order.
    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Dimension(format!(
                "cannot merge {}-class into {}-class accumulator",
                other.num_classes, self.num_classes
            )));
        }
        self.matrix += &other.matrix;
        self.total += other.total;
        Ok(())
    }

    /// IoU(c) = TP / (TP + FP + FN). Classes with an empty union are
    /// undefined and excluded from the mean. `include_background` keeps
    /// class 0 in the class set (the default convention).
    pub fn iou_report(&self, include_background: bool) -> Result<IouReport> {
        if self.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot compute IoU from an empty accumulator".into(),
            ));
        }
        let n = self.num_classes as usize;
        let mut per_class = Vec::with_capacity(n);
        for c in 0..n {
            let tp = self.matrix[(c, c)];
            let row: u64 = self.matrix.row(c).sum();
            let col: u64 = self.matrix.column(c).sum();
            let union = row + col - tp;
            per_class.push(if union == 0 {
                None
            } else {
                Some(tp as f64 / union as f64)
            });
        }
        let start = usize::from(!include_background);
        let defined: Vec<f64> = per_class[start..].iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::InvalidArgument(
                "no class has a defined IoU".into(),
            ));
        }
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(IouReport {
            per_class_iou: per_class,
            miou,
        })
    }
}

/// Per-class IoU and mIoU with background included (the default class set).
pub fn compute_iou(acc: &ConfusionAccumulator) -> Result<IouReport> {
    acc.iou_report(true)
}

/// Foreground-area ratio of a ground-truth mask: foreground pixels over
/// non-IGNORE pixels.
pub fn foreground_ratio(gt: &LabelMask) -> f64 {
    let mut fg = 0usize;
    let mut counted = 0usize;
    for &v in gt.labels().iter() {
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

/// Stratum index for a ratio under ascending cut points: S, MS, ML, L.
pub fn stratum_of(ratio: f64, cuts: (f64, f64, f64)) -> usize {
    if ratio < cuts.0 {
        0
    } else if ratio < cuts.1 {
        1
    } else if ratio < cuts.2 {
        2
    } else {
        3
    }
}

/// mIoU within object-size strata. Images are binned by ground-truth
/// foreground-area ratio; empty strata report as None.
pub fn size_stratified_miou(
    pairs: &[(&LabelMask, &LabelMask)],
    cuts: (f64, f64, f64),
    num_classes: u16,
) -> Result<StrataReport> {
    if !(cuts.0 > 0.0 && cuts.0 < cuts.1 && cuts.1 < cuts.2 && cuts.2 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "strata cuts must be ascending in (0, 1), got {cuts:?}"
        )));
    }
    let mut accs = [
        ConfusionAccumulator::new(num_classes),
        ConfusionAccumulator::new(num_classes),
        ConfusionAccumulator::new(num_classes),
        ConfusionAccumulator::new(num_classes),
    ];
    let mut counts = [0usize; 4];
    for (pred, gt) in pairs {
        let stratum = stratum_of(foreground_ratio(gt), cuts);
        accs[stratum].accumulate(pred, gt)?;
        counts[stratum] += 1;
    }
    let miou_of = |acc: &ConfusionAccumulator| -> Result<Option<f64>> {
        if acc.is_empty() {
            Ok(None)
        } else {
            Ok(Some(acc.iou_report(true)?.miou))
        }
    };
    Ok(StrataReport {
        s: miou_of(&accs[0])?,
        ms: miou_of(&accs[1])?,
        ml: miou_of(&accs[2])?,
        l: miou_of(&accs[3])?,
        image_counts: counts,
        cuts,
    })
}
