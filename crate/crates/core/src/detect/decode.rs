use crate::analysis::anchors::Anchor;
use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Largest reported confidence (the f32 just below 1), so a threshold of
/// 1.0 always yields nothing even when logits saturate the sigmoid.
pub const MAX_CONFIDENCE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Decodes one raw head map (batch of one) into letterboxed-pixel
/// detections.
///
/// Channel `a * (5 + nc) + f` holds field `f` of anchor `a`, with fields
/// `tx ty tw th t_obj t_cls0 ..`. The best class is reported and a
/// detection is emitted when `σ(t_obj)·σ(t_cls) >= conf_thresh`.
pub fn decode_head(out: &Tensor, anchors: &[Anchor], stride: usize, conf_thresh: f32) -> Result<Vec<Detection>> {
    let s = out.shape();
    if s.n != 1 {
        return Err(Error::Shape(format!("decode expects a single image, got batch {}", s.n)));
    }
    if anchors.is_empty() || s.c % anchors.len() != 0 || s.c / anchors.len() < 6 {
        return Err(Error::Shape(format!(
            "head has {} channels, which is not {} anchors x (5 + classes)",
            s.c,
            anchors.len()
        )));
    }
    let fields = s.c / anchors.len();
    let stride = stride as f32;
    let mut dets = Vec::new();
    for (a, anchor) in anchors.iter().enumerate() {
        let plane = |f: usize| out.channel(0, a * fields + f);
        let (tx, ty, tw, th, tobj) = (plane(0), plane(1), plane(2), plane(3), plane(4));
        let classes: Vec<&[f32]> = (5..fields).map(plane).collect();
        for i in 0..s.h {
            for j in 0..s.w {
                let p = i * s.w + j;
                let obj = sigmoid(tobj[p]);
                let (class_id, cls) = classes
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (k, c)| if c[p] > best.1 { (k, c[p]) } else { best });
                let confidence = (obj * sigmoid(cls)).min(MAX_CONFIDENCE);
                if confidence < conf_thresh {
                    continue;
                }
                let gw = 2.0 * sigmoid(tw[p]);
                let gh = 2.0 * sigmoid(th[p]);
                dets.push(Detection {
                    cx: (2.0 * sigmoid(tx[p]) - 0.5 + j as f32) * stride,
                    cy: (2.0 * sigmoid(ty[p]) - 0.5 + i as f32) * stride,
                    w: gw * gw * anchor.w,
                    h: gh * gh * anchor.h,
                    confidence,
                    class_id: class_id as u32,
                });
            }
        }
    }
    Ok(dets)
}
