use std::cmp::Ordering;

use crate::detect::Detection;

pub const DEFAULT_IOU_THRESH: f32 = 0.45;

/// Order used to rank candidates: confidence descending, then area
/// descending, then input position ascending.
fn rank(dets: &[Detection], a: usize, b: usize) -> Ordering {
    let (da, db) = (&dets[a], &dets[b]);
    db.confidence
        .total_cmp(&da.confidence)
        .then(db.area().total_cmp(&da.area()))
        .then(a.cmp(&b))
}

/// Greedy class-aware non-maximum suppression. A candidate is dropped when
/// its IoU with an already kept box of the same class is at least
/// `iou_thresh`. Survivors come back in rank order.
pub fn nms(dets: &[Detection], iou_thresh: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank(dets, a, b));
    let boxes: Vec<_> = dets.iter().map(Detection::bbox).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].class_id == dets[i].class_id && boxes[k].iou(&boxes[i]) >= iou_thresh);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
