use crate::detect::Detection;
use crate::eval::{coco_thresholds, match_detections, GroundTruth};

/// Predictions and ground truths of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub preds: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ApMode {
    /// Envelope sampled at recall 0, 0.01, .., 1.
    #[default]
    Interp101,
    /// Exact area under the precision envelope.
    AllPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Set when there are no ground truths; `ap` is 0 then.
    pub degenerate: bool,
}

/// Cumulative `(recall, precision)` after each prediction, sweeping
/// confidence downward across all images, plus the ground-truth count.
pub fn pr_curve(images: &[ImageEval], iou_t: f64) -> (Vec<(f64, f64)>, usize) {
    let mut scored: Vec<(f32, bool)> = Vec::new();
    let mut n_gt = 0;
    for img in images {
        let m = match_detections(&img.preds, &img.gts, iou_t);
        n_gt += img.gts.len();
        scored.extend(img.preds.iter().zip(&m.pred_tp).map(|(p, &tp)| (p.confidence, tp)));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let curve = scored
        .iter()
        .enumerate()
        .map(|(i, &(_, hit))| {
            tp += usize::from(hit);
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect();
    (curve, n_gt)
}

pub fn average_precision(images: &[ImageEval], iou_t: f64, mode: ApMode) -> ApResult {
    let (curve, n_gt) = pr_curve(images, iou_t);
    if n_gt == 0 {
        return ApResult {
            ap: 0.0,
            degenerate: true,
        };
    }
    // envelope: best precision at this recall or any higher one
    let mut env: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let ap = match mode {
        ApMode::Interp101 => {
            let mut j = 0;
            let mut sum = 0.0;
            for k in 0..=100 {
                let r = k as f64 / 100.0;
                while j < curve.len() && curve[j].0 < r {
                    j += 1;
                }
                sum += if j < curve.len() { env[j] } else { 0.0 };
            }
            sum / 101.0
        }
        ApMode::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (i, &(r, _)) in curve.iter().enumerate() {
                area += (r - prev) * env[i];
                prev = r;
            }
            area
        }
    };
    ApResult { ap, degenerate: false }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoAp {
    /// `(threshold, AP)` for 0.50, 0.55, .., 0.95.
    pub per_threshold: Vec<(f64, f64)>,
    pub mean: f64,
}

/// Mean AP over the ten IoU thresholds 0.50:0.05:0.95.
pub fn ap50_95(images: &[ImageEval], mode: ApMode) -> CocoAp {
    let per_threshold: Vec<(f64, f64)> = coco_thresholds()
        .into_iter()
        .map(|t| (t, average_precision(images, t, mode).ap))
        .collect();
    let mean = per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64;
    CocoAp { per_threshold, mean }
}
