//! Anchor layout, box delta codec and anchor-to-groundtruth assignment.

use crate::annotations::{BBox, LabeledBox};
use crate::evaluation::iou_unchecked;

use super::config::DetectorConfig;

/// Decoded log-scale deltas are clamped here so `exp` cannot overflow.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Square anchors in `cell * scales + scale` order; cell `(x, y)` is
/// centered at `((x + 0.5) / S, (y + 0.5) / S)`.
pub fn generate_anchors(config: &DetectorConfig) -> Vec<BBox> {
    let s = config.feature_size();
    let mut out = Vec::with_capacity(config.num_anchors());
    for y in 0..s {
        for x in 0..s {
            let cx = (x as f64 + 0.5) / s as f64;
            let cy = (y as f64 + 0.5) / s as f64;
            for &side in &config.anchor_scales {
                let h = side / 2.0;
                out.push(BBox::new(cx - h, cy - h, cx + h, cy + h));
            }
        }
    }
    out
}

fn center_size(b: &BBox) -> (f64, f64, f64, f64) {
    let (cx, cy) = b.center();
    (cx, cy, b.width(), b.height())
}

/// Regression target of `gt` relative to `anchor`.
pub fn encode_box(gt: &BBox, anchor: &BBox, scale: [f64; 4]) -> [f64; 4] {
    let (ax, ay, aw, ah) = center_size(anchor);
    let (gx, gy, gw, gh) = center_size(gt);
    [
        scale[0] * (gx - ax) / aw,
        scale[1] * (gy - ay) / ah,
        scale[2] * (gw / aw).ln(),
        scale[3] * (gh / ah).ln(),
    ]
}

/// Inverse of [`encode_box`] (log-scale terms clamped at [`MAX_LOG_SCALE`]).
pub fn decode_box(delta: [f64; 4], anchor: &BBox, scale: [f64; 4]) -> BBox {
    let (ax, ay, aw, ah) = center_size(anchor);
    let cx = ax + delta[0] / scale[0] * aw;
    let cy = ay + delta[1] / scale[1] * ah;
    let w = aw * (delta[2] / scale[2]).min(MAX_LOG_SCALE).exp();
    let h = ah * (delta[3] / scale[3]).min(MAX_LOG_SCALE).exp();
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    Negative,
    Ignore,
    /// Index into the groundtruth list.
    Positive(usize),
}

/// Matches every anchor to the groundtruth: IoU ≥ `positive_iou` is
/// positive, below `negative_iou` negative, ignored in between. With
/// `force_best_anchor`, each groundtruth's highest-IoU anchor is made
/// positive for it so that no target goes unmatched.
pub fn assign(anchors: &[BBox], targets: &[LabeledBox], config: &DetectorConfig) -> Vec<Assignment> {
    let mut best: Vec<(f64, usize)> = vec![(0.0, 0); anchors.len()];
    let mut gt_best: Vec<(f64, usize)> = vec![(0.0, usize::MAX); targets.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        for (g, t) in targets.iter().enumerate() {
            let v = iou_unchecked(anchor, &t.bbox);
            if v > best[a].0 {
                best[a] = (v, g);
            }
            if v > gt_best[g].0 {
                gt_best[g] = (v, a);
            }
        }
    }
    let mut out: Vec<Assignment> = best
        .iter()
        .map(|&(v, g)| {
            if targets.is_empty() || v < config.negative_iou {
                Assignment::Negative
            } else if v >= config.positive_iou {
                Assignment::Positive(g)
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    if config.force_best_anchor {
        for (g, &(v, a)) in gt_best.iter().enumerate() {
            if v > 0.0 {
                out[a] = Assignment::Positive(g);
            }
        }
    }
    out
}
