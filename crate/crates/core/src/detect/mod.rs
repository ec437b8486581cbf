//! Image preprocessing, head decoding, NMS and the timed detection pipeline.

pub mod decode;
pub mod image;
pub mod letterbox;
pub mod nms;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

pub use decode::{decode_head, MAX_CONFIDENCE};
pub use image::{decode_pnm, read_pnm, write_ppm, Image};
pub use letterbox::{letterbox, unletterbox, TransformMeta, PAD_VALUE};
pub use nms::{nms, DEFAULT_IOU_THRESH};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_CONF_THRESH: f32 = 0.25;

/// A scored box in `(cx, cy, w, h)` pixel form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub confidence: f32,
    pub class_id: u32,
}

impl Detection {
    pub fn bbox(&self) -> BBox {
        BBox::from_cxcywh(self.cx, self.cy, self.w, self.h)
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }

    /// `class_id cx cy w h confidence` with six decimals.
    pub fn to_line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.class_id, self.cx, self.cy, self.w, self.h, self.confidence
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Input(format!("bad detection line `{line}`"));
        if parts.len() != 6 {
            return Err(bad());
        }
        let f = |i: usize| parts[i].parse::<f32>().map_err(|_| bad());
        Ok(Detection {
            class_id: parts[0].parse().map_err(|_| bad())?,
            cx: f(1)?,
            cy: f(2)?,
            w: f(3)?,
            h: f(4)?,
            confidence: f(5)?,
        })
    }
}

/// True when `a` and `b` hold the same detections up to order: a
/// one-to-one pairing exists with equal classes and every box coordinate
/// within `tol` pixels.
pub fn same_detection_set(a: &[Detection], b: &[Detection], tol: f32) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        let hit = b.iter().enumerate().position(|(j, y)| {
            !used[j]
                && x.class_id == y.class_id
                && (x.cx - y.cx).abs() <= tol
                && (x.cy - y.cy).abs() <= tol
                && (x.w - y.w).abs() <= tol
                && (x.h - y.h).abs() <= tol
        });
        hit.map(|j| used[j] = true).is_some()
    })
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let _ = writeln!(out, "{}", d.to_line());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub conf: f32,
    pub iou: f32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            conf: DEFAULT_CONF_THRESH,
            iou: DEFAULT_IOU_THRESH,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(Error::Precondition(format!("conf threshold {} outside [0, 1]", self.conf)));
        }
        if !(self.iou > 0.0 && self.iou < 1.0) {
            return Err(Error::Precondition(format!("iou threshold {} outside (0, 1)", self.iou)));
        }
        Ok(())
    }
}

/// Wall-clock time of the three pipeline phases.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub preprocess: Duration,
    pub forward: Duration,
    pub postprocess: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.preprocess + self.forward + self.postprocess
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutput {
    /// Final detections in original-image pixels.
    pub detections: Vec<Detection>,
    pub times: PhaseTimes,
}

/// Candidate detections of both heads in letterboxed coordinates, before NMS.
pub fn candidates(m: &Model, input: &crate::tensor::Tensor, conf: f32) -> Result<Vec<Detection>> {
    let (p4, p5) = m.forward(input)?;
    postprocess_candidates(m, &p4.tensor, &p5.tensor, conf)
}

fn postprocess_candidates(
    m: &Model,
    p4: &crate::tensor::Tensor,
    p5: &crate::tensor::Tensor,
    conf: f32,
) -> Result<Vec<Detection>> {
    let cfg = m.config();
    let mut dets = decode_head(p4, cfg.anchors.for_head(0), cfg.head_strides[0], conf)?;
    dets.extend(decode_head(p5, cfg.anchors.for_head(1), cfg.head_strides[1], conf)?);
    Ok(dets)
}

/// Letterbox, forward, decode both heads, NMS, then map back to the
/// original image. The letterbox canvas is the model's square input.
pub fn detect(m: &Model, img: &Image, thresholds: Thresholds) -> Result<DetectOutput> {
    thresholds.validate()?;
    let size = m.config().input_size;

    let t0 = Instant::now();
    let (input, meta) = letterbox(img, size, size)?;
    let t1 = Instant::now();
    let (p4, p5) = m.forward(&input)?;
    let t2 = Instant::now();
    let dets = postprocess_candidates(m, &p4.tensor, &p5.tensor, thresholds.conf)?;
    let detections = unletterbox(&nms(&dets, thresholds.iou), &meta);
    let t3 = Instant::now();

    Ok(DetectOutput {
        detections,
        times: PhaseTimes {
            preprocess: t1 - t0,
            forward: t2 - t1,
            postprocess: t3 - t2,
        },
    })
}
