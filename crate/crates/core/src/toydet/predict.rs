use super::anchors::decode_box;
use super::model::{HeadOutput, ToyDetector};
use super::ops::Real;
use crate::annotations::BBox;
use crate::encoding::QueryEncoding;
use crate::error::Result;
use crate::evaluation::{iou_unchecked, ScoredBox, DEFAULT_MAX_DETS};
use crate::shapes::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_dets: usize,
    /// Keep only each anchor's best class and suppress across classes, for
    /// outputs whose labels are discarded anyway.
    pub merge_classes: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_dets: DEFAULT_MAX_DETS,
            merge_classes: false,
        }
    }
}

fn by_score_desc(a: &ScoredBox, b: &ScoredBox) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score)
}

/// Greedy per-class non-maximum suppression; returns survivors by
/// descending score (stable on ties).
pub fn nms(boxes: Vec<ScoredBox>, iou_threshold: f64) -> Vec<ScoredBox> {
    greedy_nms(boxes, iou_threshold, true)
}

/// Like [`nms`], but boxes of different labels also suppress each other.
pub fn nms_agnostic(boxes: Vec<ScoredBox>, iou_threshold: f64) -> Vec<ScoredBox> {
    greedy_nms(boxes, iou_threshold, false)
}

fn greedy_nms(mut boxes: Vec<ScoredBox>, iou_threshold: f64, per_class: bool) -> Vec<ScoredBox> {
    boxes.sort_by(by_score_desc);
    let mut kept: Vec<ScoredBox> = Vec::new();
    for b in boxes {
        let suppressed = kept.iter().any(|k| {
            (!per_class || k.label == b.label) && iou_unchecked(&k.bbox, &b.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(b);
        }
    }
    kept
}

/// Turns one image's head output into final detections.
pub fn decode_detections<F: Real>(
    out: &HeadOutput<F>,
    image: usize,
    anchors: &[BBox],
    box_scale: [f64; 4],
    opts: &PredictOptions,
) -> Vec<ScoredBox> {
    let mut candidates = Vec::new();
    for (a, anchor) in anchors.iter().enumerate() {
        let mut decoded: Option<BBox> = None;
        let classes: Vec<usize> = if opts.merge_classes {
            // first maximal logit wins ties
            let mut best = 0;
            for k in 1..out.classes {
                if out.logit(image, a, k) > out.logit(image, a, best) {
                    best = k;
                }
            }
            vec![best]
        } else {
            (0..out.classes).collect()
        };
        for k in classes {
            let score = 1.0 / (1.0 + (-out.logit(image, a, k).as_f64()).exp());
            if score <= opts.score_threshold {
                continue;
            }
            let bbox = *decoded.get_or_insert_with(|| {
                let d = [0, 1, 2, 3].map(|j| out.delta(image, a, j).as_f64());
                decode_box(d, anchor, box_scale).clip_unit()
            });
            if bbox.is_degenerate() {
                break;
            }
            candidates.push(ScoredBox {
                bbox,
                label: k,
                score,
            });
        }
    }
    let mut kept = if opts.merge_classes {
        nms_agnostic(candidates, opts.nms_iou)
    } else {
        nms(candidates, opts.nms_iou)
    };
    kept.truncate(opts.max_dets);
    kept
}

impl<F: Real> ToyDetector<F> {
    /// Detections for a batch of images (one query per image in
    /// query-modulated mode).
    pub fn predict_batch(
        &self,
        images: &[&RasterImage],
        queries: Option<&[QueryEncoding]>,
        anchors: &[BBox],
        opts: &PredictOptions,
    ) -> Result<Vec<Vec<ScoredBox>>> {
        let (out, _) = self.forward_batch(images, queries)?;
        Ok((0..images.len())
            .map(|i| decode_detections(&out, i, anchors, self.config.box_scale, opts))
            .collect())
    }

    pub fn predict(
        &self,
        image: &RasterImage,
        query: Option<&QueryEncoding>,
        opts: &PredictOptions,
    ) -> Result<Vec<ScoredBox>> {
        let anchors = super::anchors::generate_anchors(&self.config);
        let qs = query.map(|q| vec![q.clone()]);
        Ok(self
            .predict_batch(&[image], qs.as_deref(), &anchors, opts)?
            .pop()
            .unwrap_or_default())
    }
}
