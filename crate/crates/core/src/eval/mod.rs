//! Detection metrics: IoU matching, precision/recall, AP and the FPS benchmark.

pub mod ap;
pub mod bench;

use std::fmt::Write as _;

pub use ap::{ap50_95, average_precision, pr_curve, ApMode, ApResult, CocoAp, ImageEval};
pub use bench::{fps_benchmark, BenchComparison, BenchReport, PhaseStats};

use crate::analysis::labels::LabelBox;
use crate::bbox::BBox;
use crate::detect::Detection;
use crate::error::{Error, Result};

/// The ten thresholds 0.50, 0.55, .., 0.95, each computed as `k / 100` so
/// that 0.7 is the same double as the literal.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// A ground-truth box in original-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub class_id: u32,
    pub bbox: BBox,
}

impl GroundTruth {
    pub fn new(class_id: u32, bbox: BBox) -> Self {
        GroundTruth { class_id, bbox }
    }

    /// Scales a normalized label to an image of `width x height` pixels.
    pub fn from_label(l: &LabelBox, width: usize, height: usize) -> Self {
        let (w, h) = (width as f32, height as f32);
        GroundTruth {
            class_id: l.class_id,
            bbox: BBox::from_cxcywh(l.cx * w, l.cy * h, l.w * w, l.h * h),
        }
    }
}

/// Intersection over union computed in double precision.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let side = |lo1: f32, hi1: f32, lo2: f32, hi2: f32| ((hi1 as f64).min(hi2 as f64) - (lo1 as f64).max(lo2 as f64)).max(0.0);
    let area = |x: &BBox| ((x.x2 - x.x1) as f64).max(0.0) * ((x.y2 - x.y1) as f64).max(0.0);
    let inter = side(a.x1, a.x2, b.x1, b.x2) * side(a.y1, a.y2, b.y1, b.y2);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: ConfusionCounts,
    /// Per prediction, in input order: true when it matched a ground truth.
    pub pred_tp: Vec<bool>,
    /// Per ground truth: index of the prediction that claimed it.
    pub gt_match: Vec<Option<usize>>,
}

/// Greedy matching. Predictions are visited by descending confidence (ties
/// keep input order); each takes the unmatched same-class ground truth with
/// the highest IoU, provided that IoU is at least `iou_t`.
pub fn match_detections(preds: &[Detection], gts: &[GroundTruth], iou_t: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut gt_match = vec![None; gts.len()];
    let mut pred_tp = vec![false; preds.len()];
    for i in order {
        let pb = preds[i].bbox();
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_match[j].is_some() || g.class_id != preds[i].class_id {
                continue;
            }
            let v = iou(&pb, &g.bbox);
            if v >= iou_t && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            gt_match[j] = Some(i);
            pred_tp[i] = true;
        }
    }
    let tp = pred_tp.iter().filter(|&&t| t).count();
    MatchResult {
        counts: ConfusionCounts {
            tp,
            fp: preds.len() - tp,
            fn_: gts.len() - tp,
        },
        pred_tp,
        gt_match,
    }
}

/// A ratio with a flag set when its denominator was zero (value 0 then).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> Ratio {
    if den == 0 {
        Ratio {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Ratio {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

/// `TP / (TP + FP)`
pub fn precision(c: &ConfusionCounts) -> Ratio {
    ratio(c.tp, c.tp + c.fp)
}

/// `TP / (TP + FN)`
pub fn recall(c: &ConfusionCounts) -> Ratio {
    ratio(c.tp, c.tp + c.fn_)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub conf_thresh: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.5],
            conf_thresh: crate::detect::DEFAULT_CONF_THRESH,
        }
    }
}

impl EvalConfig {
    pub fn coco() -> Self {
        EvalConfig {
            iou_thresholds: coco_thresholds(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::Precondition("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Precondition("IoU thresholds must lie in (0, 1)".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("IoU thresholds must be strictly increasing".into()));
        }
        if !(0.0..=1.0).contains(&self.conf_thresh) {
            return Err(Error::Precondition("conf threshold outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Dataset-level detection metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub counts: ConfusionCounts,
    pub precision: Ratio,
    pub recall: Ratio,
    pub ap50: ApResult,
    pub ap50_95: CocoAp,
    pub fps: Option<f64>,
}

/// Precision and recall at IoU 0.5 plus AP50 and AP50:95 over `images`.
pub fn evaluate(images: &[ImageEval], mode: ApMode) -> EvalMetrics {
    let mut counts = ConfusionCounts::default();
    for img in images {
        counts += match_detections(&img.preds, &img.gts, 0.5).counts;
    }
    EvalMetrics {
        counts,
        precision: precision(&counts),
        recall: recall(&counts),
        ap50: average_precision(images, 0.5, mode),
        ap50_95: ap50_95(images, mode),
        fps: None,
    }
}

impl EvalMetrics {
    /// Rows of `(metric, value)`: Precision, Recall, AP50, AP50:95 and FPS.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("Precision", self.precision.value),
            ("Recall", self.recall.value),
            ("AP50", self.ap50.ap),
            ("AP50:95", self.ap50_95.mean),
        ];
        if let Some(fps) = self.fps {
            rows.push(("FPS", fps));
        }
        rows
    }

    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.precision.degenerate {
            f.push("precision has no predictions (reported as 0)");
        }
        if self.recall.degenerate {
            f.push("recall has no ground truths (reported as 0)");
        }
        if self.ap50.degenerate {
            f.push("AP has no ground truths (reported as 0)");
        }
        f
    }

    /// CSV with columns `metric,value,config_hash,threshold_assumptions`.
    pub fn to_csv(&self, config_hash: &str, assumptions: &str) -> String {
        let mut out = String::from("metric,value,config_hash,threshold_assumptions\n");
        for (name, v) in self.rows() {
            let _ = writeln!(out, "{name},{v:.6},{config_hash},\"{assumptions}\"");
        }
        out
    }

    pub fn to_text(&self, config_hash: &str, assumptions: &str) -> String {
        let mut out = format!("# config {config_hash}\n# assumed thresholds: {assumptions}\n");
        for (name, v) in self.rows() {
            let _ = writeln!(out, "{name:<10} {v:.6}");
        }
        let c = self.counts;
        let _ = writeln!(out, "TP {} FP {} FN {}", c.tp, c.fp, c.fn_);
        for f in self.flags() {
            let _ = writeln!(out, "warning: {f}");
        }
        out
    }
}
