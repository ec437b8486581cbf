use crate::detect::image::Image;
use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Grey value used for padding.
pub const PAD_VALUE: u8 = 114;

/// Maps letterboxed coordinates back to the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMeta {
    pub scale: f32,
    pub pad_left: usize,
    pub pad_top: usize,
    pub orig_w: usize,
    pub orig_h: usize,
}

/// Aspect-preserving nearest-neighbour resize so the long side becomes
/// `target`, then symmetric grey padding of the short side up to the next
/// multiple of `stride`. Pixel values are scaled to `[0, 1]`.
pub fn letterbox(img: &Image, target: usize, stride: usize) -> Result<(Tensor, TransformMeta)> {
    img.validate()?;
    if target == 0 || stride == 0 || target % stride != 0 {
        return Err(Error::Precondition(format!(
            "letterbox target {target} must be a positive multiple of stride {stride}"
        )));
    }
    let scale = target as f64 / img.width.max(img.height) as f64;
    let new_w = ((img.width as f64 * scale).round() as usize).clamp(1, target);
    let new_h = ((img.height as f64 * scale).round() as usize).clamp(1, target);
    let canvas_w = new_w.div_ceil(stride) * stride;
    let canvas_h = new_h.div_ceil(stride) * stride;
    let pad_left = (canvas_w - new_w) / 2;
    let pad_top = (canvas_h - new_h) / 2;

    let plane = canvas_w * canvas_h;
    let mut data = vec![PAD_VALUE as f32 / 255.0; 3 * plane];
    let src_x: Vec<usize> = (0..new_w)
        .map(|x| (((x as f64 + 0.5) * img.width as f64 / new_w as f64) as usize).min(img.width - 1))
        .collect();
    for y in 0..new_h {
        let sy = (((y as f64 + 0.5) * img.height as f64 / new_h as f64) as usize).min(img.height - 1);
        for (x, &sx) in src_x.iter().enumerate() {
            let rgb = img.rgb(sx, sy);
            let at = (y + pad_top) * canvas_w + x + pad_left;
            for (c, v) in rgb.iter().enumerate() {
                data[c * plane + at] = *v as f32 / 255.0;
            }
        }
    }
    let tensor = Tensor::from_vec(Shape::new(1, 3, canvas_h, canvas_w), data)?;
    Ok((
        tensor,
        TransformMeta {
            scale: scale as f32,
            pad_left,
            pad_top,
            orig_w: img.width,
            orig_h: img.height,
        },
    ))
}

/// Maps detections from letterboxed pixels to original-image pixels and
/// clips them to the image. Boxes that clip to nothing are dropped.
pub fn unletterbox(dets: &[Detection], meta: &TransformMeta) -> Vec<Detection> {
    let (w, h) = (meta.orig_w as f32, meta.orig_h as f32);
    dets.iter()
        .filter_map(|d| {
            let cx = (d.cx - meta.pad_left as f32) / meta.scale;
            let cy = (d.cy - meta.pad_top as f32) / meta.scale;
            let (bw, bh) = (d.w / meta.scale, d.h / meta.scale);
            let x1 = (cx - bw / 2.0).clamp(0.0, w);
            let y1 = (cy - bh / 2.0).clamp(0.0, h);
            let x2 = (cx + bw / 2.0).clamp(0.0, w);
            let y2 = (cy + bh / 2.0).clamp(0.0, h);
            (x2 > x1 && y2 > y1).then(|| Detection {
                cx: (x1 + x2) / 2.0,
                cy: (y1 + y2) / 2.0,
                w: x2 - x1,
                h: y2 - y1,
                ..*d
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(cx: f32, cy: f32, w: f32, h: f32) -> Detection {
        Detection {
            cx,
            cy,
            w,
            h,
            confidence: 0.5,
            class_id: 0,
        }
    }

    #[test]
    fn square_input_is_untouched() {
        let img = Image::filled(640, 640, [255, 0, 51]).unwrap();
        let (t, meta) = letterbox(&img, 640, 32).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 640, 640));
        assert_eq!((meta.scale, meta.pad_left, meta.pad_top), (1.0, 0, 0));
        assert_eq!(t.at(0, 0, 10, 10), 1.0);
        assert_eq!(t.at(0, 2, 10, 10), 0.2);
    }

    #[test]
    fn wide_input_keeps_aligned_short_side() {
        let img = Image::filled(640, 320, [0, 0, 0]).unwrap();
        let (t, meta) = letterbox(&img, 640, 32).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 320, 640));
        assert_eq!((meta.scale, meta.pad_left, meta.pad_top), (1.0, 0, 0));
    }

    #[test]
    fn upscaled_input_round_trips_boxes() {
        let img = Image::filled(600, 300, [10, 20, 30]).unwrap();
        let (t, meta) = letterbox(&img, 640, 32).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 320, 640));
        assert_eq!((meta.pad_left, meta.pad_top), (0, 0));
        assert!((meta.scale - 640.0 / 600.0).abs() < 1e-7);
        let orig = det(300.0, 150.0, 100.0, 60.0);
        let boxed = det(
            orig.cx * meta.scale + meta.pad_left as f32,
            orig.cy * meta.scale + meta.pad_top as f32,
            orig.w * meta.scale,
            orig.h * meta.scale,
        );
        let back = unletterbox(&[boxed], &meta)[0];
        assert!((back.cx - orig.cx).abs() < 1.0 && (back.cy - orig.cy).abs() < 1.0);
        assert!((back.w - orig.w).abs() < 1.0 && (back.h - orig.h).abs() < 1.0);
    }

    #[test]
    fn square_canvas_pads_symmetrically() {
        let img = Image::filled(200, 100, [0, 0, 0]).unwrap();
        let (t, meta) = letterbox(&img, 640, 640).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 640, 640));
        assert_eq!((meta.scale, meta.pad_left, meta.pad_top), (3.2, 0, 160));
        assert_eq!(t.at(0, 1, 0, 0), PAD_VALUE as f32 / 255.0);
        assert_eq!(t.at(0, 1, 160, 0), 0.0);
        assert_eq!(t.at(0, 1, 639, 639), PAD_VALUE as f32 / 255.0);
    }

    #[test]
    fn nearest_resize_picks_source_pixels() {
        let mut pixels = Vec::new();
        for y in 0..2u8 {
            for x in 0..2u8 {
                pixels.extend_from_slice(&[x * 100, y * 100, 0]);
            }
        }
        let img = Image::new(2, 2, pixels).unwrap();
        let (t, _) = letterbox(&img, 4, 4).unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 0.0);
        assert_eq!(t.at(0, 0, 0, 2), 100.0 / 255.0);
        assert_eq!(t.at(0, 1, 3, 0), 100.0 / 255.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let img = Image::filled(4, 4, [0, 0, 0]).unwrap();
        assert!(letterbox(&img, 640, 30).is_err());
        let bad = Image {
            width: 0,
            height: 4,
            pixels: vec![],
        };
        assert!(matches!(letterbox(&bad, 640, 32), Err(Error::Input(_))));
    }

    #[test]
    fn unletterbox_cases() {
        let id = TransformMeta {
            scale: 1.0,
            pad_left: 0,
            pad_top: 0,
            orig_w: 100,
            orig_h: 100,
        };
        let d = det(50.0, 40.0, 10.0, 20.0);
        assert_eq!(unletterbox(&[d], &id), vec![d]);

        let meta = TransformMeta {
            scale: 2.0,
            pad_left: 10,
            pad_top: 0,
            orig_w: 100,
            orig_h: 100,
        };
        let back = unletterbox(&[det(30.0, 40.0, 8.0, 8.0)], &meta)[0];
        assert_eq!(back.cx, 10.0);
        assert_eq!(back.cy, 20.0);

        let clipped = unletterbox(&[det(0.0, 50.0, 40.0, 10.0)], &id)[0];
        assert_eq!((clipped.cx, clipped.w), (10.0, 20.0));
        assert!(unletterbox(&[det(-50.0, 50.0, 10.0, 10.0)], &id).is_empty());
    }

    #[test]
    fn random_round_trips_within_a_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (w, h) = (rng.gen_range(16..900), rng.gen_range(16..900));
            let img = Image::filled(w, h, [0, 0, 0]).unwrap();
            let (_, meta) = letterbox(&img, 640, 32).unwrap();
            let (bw, bh) = (rng.gen_range(2.0..w as f32 / 2.0), rng.gen_range(2.0..h as f32 / 2.0));
            let orig = det(
                rng.gen_range(bw / 2.0..w as f32 - bw / 2.0),
                rng.gen_range(bh / 2.0..h as f32 - bh / 2.0),
                bw,
                bh,
            );
            let boxed = det(
                orig.cx * meta.scale + meta.pad_left as f32,
                orig.cy * meta.scale + meta.pad_top as f32,
                orig.w * meta.scale,
                orig.h * meta.scale,
            );
            let back = unletterbox(&[boxed], &meta)[0];
            for (a, b) in [(back.cx, orig.cx), (back.cy, orig.cy), (back.w, orig.w), (back.h, orig.h)] {
                assert!((a - b).abs() < 1.0, "{a} vs {b}");
            }
        }
    }
}
