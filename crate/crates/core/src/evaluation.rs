//! Class-agnostic query-modulated AP, standard detection mAP and AR@1.
//!
//! Matching follows the COCO protocol: detections are visited by descending
//! score (stable on ties) and each one claims the unmatched groundtruth of
//! highest IoU when that IoU reaches the threshold. AP is 101-point
//! interpolated everywhere.

use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, LabeledBox, LabelVocabulary};
use crate::error::{Error, Result};
use crate::grid::{constraint_region, contains, CONTAINMENT_THRESHOLD};
use crate::querysynth::Query;

/// Label assigned to detections once labels no longer matter.
pub const AGNOSTIC_LABEL: usize = 0;

pub const DEFAULT_MAX_DETS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub bbox: BBox,
    pub label: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub image_id: String,
    pub query: Query,
    pub groundtruth: Vec<LabeledBox>,
    pub detections: Vec<ScoredBox>,
}

/// Detections and full groundtruth for one image, used by detection mAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionImage {
    pub image_id: String,
    pub detections: Vec<ScoredBox>,
    pub groundtruth: Vec<LabeledBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouRegime {
    #[serde(rename = "AP50")]
    Ap50,
    #[serde(rename = "AP[.5:.95]")]
    Ap5095,
}

impl IouRegime {
    pub fn thresholds(self) -> Vec<f64> {
        match self {
            IouRegime::Ap50 => vec![0.5],
            IouRegime::Ap5095 => (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::Domain(format!("IoU of degenerate box {a:?} / {b:?}")));
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices of `dets` by descending score, stable on ties.
fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// True-positive flag per detection, in input order.
pub fn match_detections(dets: &[ScoredBox], gts: &[BBox], iou_thresh: f64) -> Vec<bool> {
    let mut flags = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou_unchecked(&dets[d].bbox, gt);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            flags[d] = true;
        }
    }
    flags
}

/// 101-point interpolated AP of a ranked list of TP flags.
fn interpolated_ap(ranked: &[(f64, bool)], total_gt: usize) -> f64 {
    if ranked.is_empty() || total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (k, &(_, is_tp)) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let idx = recall.partition_point(|&v| v < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluator {
    pub max_dets: usize,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self {
            max_dets: DEFAULT_MAX_DETS,
        }
    }
}

impl Evaluator {
    fn top_dets<'a>(&self, dets: &'a [ScoredBox]) -> Vec<&'a ScoredBox> {
        score_order(dets)
            .into_iter()
            .take(self.max_dets)
            .map(|i| &dets[i])
            .collect()
    }

    /// Pools `(score, tp)` pairs over cases and returns them ranked.
    fn ranked_matches(
        &self,
        cases: &[(Vec<ScoredBox>, Vec<LabeledBox>)],
        iou_thresh: f64,
        class_agnostic: bool,
    ) -> (Vec<(f64, bool)>, usize) {
        let mut pooled = Vec::new();
        let mut total_gt = 0;
        for (dets, gts) in cases {
            total_gt += gts.len();
            let dets: Vec<ScoredBox> = self.top_dets(dets).into_iter().copied().collect();
            if class_agnostic {
                let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
                let flags = match_detections(&dets, &gt_boxes, iou_thresh);
                pooled.extend(dets.iter().zip(flags).map(|(d, f)| (d.score, f)));
            } else {
                let mut labels: Vec<usize> = dets.iter().map(|d| d.label).collect();
                labels.sort_unstable();
                labels.dedup();
                let mut flags = vec![false; dets.len()];
                for label in labels {
                    let idx: Vec<usize> =
                        (0..dets.len()).filter(|&i| dets[i].label == label).collect();
                    let sub: Vec<ScoredBox> = idx.iter().map(|&i| dets[i]).collect();
                    let gt_boxes: Vec<BBox> = gts
                        .iter()
                        .filter(|g| g.label == label)
                        .map(|g| g.bbox)
                        .collect();
                    for (k, f) in match_detections(&sub, &gt_boxes, iou_thresh)
                        .into_iter()
                        .enumerate()
                    {
                        flags[idx[k]] = f;
                    }
                }
                pooled.extend(dets.iter().zip(flags).map(|(d, f)| (d.score, f)));
            }
        }
        // stable: ties keep case order, then per-case score order
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
        (pooled, total_gt)
    }

    pub fn average_precision(
        &self,
        cases: &[EvalCase],
        iou_thresh: f64,
        class_agnostic: bool,
    ) -> Result<f64> {
        let pairs: Vec<_> = cases
            .iter()
            .map(|c| (c.detections.clone(), c.groundtruth.clone()))
            .collect();
        self.pooled_ap(&pairs, iou_thresh, class_agnostic)
    }

    fn pooled_ap(
        &self,
        cases: &[(Vec<ScoredBox>, Vec<LabeledBox>)],
        iou_thresh: f64,
        class_agnostic: bool,
    ) -> Result<f64> {
        let (ranked, total_gt) = self.ranked_matches(cases, iou_thresh, class_agnostic);
        if total_gt == 0 {
            return Err(Error::UndefinedMetric(
                "average precision needs at least one groundtruth box".into(),
            ));
        }
        Ok(interpolated_ap(&ranked, total_gt))
    }

    pub fn query_ap(&self, cases: &[EvalCase], regime: IouRegime) -> Result<f64> {
        let pairs: Vec<_> = cases
            .iter()
            .map(|c| (c.detections.clone(), c.groundtruth.clone()))
            .collect();
        let thresholds = regime.thresholds();
        let mut sum = 0.0;
        for &t in &thresholds {
            sum += self.pooled_ap(&pairs, t, true)?;
        }
        Ok(sum / thresholds.len() as f64)
    }

    pub fn detection_map(
        &self,
        images: &[DetectionImage],
        num_classes: usize,
        regime: IouRegime,
    ) -> DetectionMap {
        let thresholds = regime.thresholds();
        let per_class: Vec<Option<f64>> = (0..num_classes)
            .map(|c| {
                let pairs: Vec<(Vec<ScoredBox>, Vec<LabeledBox>)> = images
                    .iter()
                    .map(|img| {
                        (
                            img.detections.iter().filter(|d| d.label == c).copied().collect(),
                            img.groundtruth.iter().filter(|g| g.label == c).copied().collect(),
                        )
                    })
                    .collect();
                if pairs.iter().all(|(_, g)| g.is_empty()) {
                    return None;
                }
                let sum: f64 = thresholds
                    .iter()
                    .map(|&t| self.pooled_ap(&pairs, t, true).unwrap_or(0.0))
                    .sum();
                Some(sum / thresholds.len() as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let map = if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        };
        DetectionMap { map, per_class }
    }

    pub fn ar_at_1(&self, cases: &[EvalCase], regime: IouRegime) -> f64 {
        let total_gt: usize = cases.iter().map(|c| c.groundtruth.len()).sum();
        if total_gt == 0 {
            return 0.0;
        }
        let thresholds = regime.thresholds();
        let mut sum = 0.0;
        for &t in &thresholds {
            let mut matched = 0usize;
            for case in cases {
                let Some(top) = self.top_dets(&case.detections).into_iter().next() else {
                    continue;
                };
                let gts: Vec<BBox> = case.groundtruth.iter().map(|g| g.bbox).collect();
                if match_detections(std::slice::from_ref(top), &gts, t)[0] {
                    matched += 1;
                }
            }
            sum += matched as f64 / total_gt as f64;
        }
        sum / thresholds.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMap {
    pub map: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

pub fn average_precision(cases: &[EvalCase], iou_thresh: f64, class_agnostic: bool) -> Result<f64> {
    Evaluator::default().average_precision(cases, iou_thresh, class_agnostic)
}

pub fn query_ap(cases: &[EvalCase], regime: IouRegime) -> Result<f64> {
    Evaluator::default().query_ap(cases, regime)
}

pub fn detection_map(images: &[DetectionImage], num_classes: usize, regime: IouRegime) -> DetectionMap {
    Evaluator::default().detection_map(images, num_classes, regime)
}

pub fn ar_at_1(cases: &[EvalCase], regime: IouRegime) -> f64 {
    Evaluator::default().ar_at_1(cases, regime)
}

/// Standard-detector baseline for queries: keep detections of the queried
/// labels (inside the query region, when there is one) and drop the labels.
pub fn post_process_baseline(dets: &[ScoredBox], query: &Query) -> Vec<ScoredBox> {
    let region = query.location.map(|l| constraint_region(l.y, l.x));
    dets.iter()
        .filter(|d| query.labels.contains(&d.label))
        .filter(|d| {
            region.is_none_or(|r| contains(&d.bbox, &r, CONTAINMENT_THRESHOLD).unwrap_or(false))
        })
        .map(|d| ScoredBox {
            label: AGNOSTIC_LABEL,
            ..*d
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub name: String,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub regime: IouRegime,
    pub sld_cases: usize,
    pub kld_cases: usize,
    pub lld_cases: usize,
    pub det_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sld_ap: Option<f64>,
    pub kld_ap: Option<f64>,
    pub lld_ap: Option<f64>,
    pub det_map: Option<f64>,
    /// AR@1 over the SLD cases.
    pub ar_at_1: Option<f64>,
    pub per_class: Vec<ClassAp>,
    pub metadata: ReportMeta,
}

/// Inputs to a full report, grouped by query family.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub sld: Vec<EvalCase>,
    pub kld: Vec<EvalCase>,
    pub lld: Vec<EvalCase>,
    pub det: Vec<DetectionImage>,
}

impl EvalReport {
    pub fn build(inputs: &ReportInputs, vocab: &LabelVocabulary, regime: IouRegime) -> Self {
        let eval = Evaluator::default();
        let ap = |cases: &[EvalCase]| eval.query_ap(cases, regime).ok();
        let det = eval.detection_map(&inputs.det, vocab.len(), regime);
        let per_class = vocab
            .names()
            .iter()
            .zip(&det.per_class)
            .map(|(name, ap)| ClassAp {
                name: name.clone(),
                ap: *ap,
            })
            .collect();
        EvalReport {
            sld_ap: ap(&inputs.sld),
            kld_ap: ap(&inputs.kld),
            lld_ap: ap(&inputs.lld),
            det_map: det.map,
            ar_at_1: (!inputs.sld.is_empty()).then(|| eval.ar_at_1(&inputs.sld, regime)),
            per_class,
            metadata: ReportMeta {
                regime,
                sld_cases: inputs.sld.len(),
                kld_cases: inputs.kld.len(),
                lld_cases: inputs.lld.len(),
                det_images: inputs.det.len(),
            },
        }
    }

    pub const COLUMNS: [&'static str; 5] = ["SLD AP", "KLD AP", "LLD AP", "DET mAP", "SLD AR@1"];

    fn values(&self) -> [Option<f64>; 5] {
        [self.sld_ap, self.kld_ap, self.lld_ap, self.det_map, self.ar_at_1]
    }

    pub fn to_csv(&self, row_name: &str) -> String {
        let mut out = format!("Model,{}\n", Self::COLUMNS.join(","));
        out.push_str(&csv_row(row_name, &self.values()));
        out
    }

    pub fn to_text(&self, row_name: &str) -> String {
        let mut out = format!("{:<12}", "Model");
        for c in Self::COLUMNS {
            out.push_str(&format!("{c:>10}"));
        }
        out.push('\n');
        out.push_str(&format!("{row_name:<12}"));
        for v in self.values() {
            out.push_str(&format!("{:>10}", fmt_pct(v)));
        }
        out.push('\n');
        out.push_str("\nper-class DET AP\n");
        for c in &self.per_class {
            out.push_str(&format!("  {:<12}{:>8}\n", c.name, fmt_pct(c.ap)));
        }
        out
    }
}

/// Metric as a percentage with one decimal, `-` when absent.
pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

pub fn csv_row(name: &str, values: &[Option<f64>]) -> String {
    let cells: Vec<String> = values
        .iter()
        .map(|v| v.map_or_else(String::new, |x| format!("{x:.6}")))
        .collect();
    format!("{name},{}\n", cells.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{XSlice, YSlice};

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, label: usize, score: f64) -> ScoredBox {
        ScoredBox {
            bbox: BBox::new(x0, y0, x1, y1),
            label,
            score,
        }
    }

    fn case(gts: Vec<BBox>, dets: Vec<ScoredBox>) -> EvalCase {
        EvalCase {
            image_id: "i".into(),
            query: Query::single(0),
            groundtruth: gts
                .into_iter()
                .map(|bbox| LabeledBox { label: 0, bbox })
                .collect(),
            detections: dets,
        }
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.1, 0.1, 0.5, 0.5);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(0.6, 0.6, 0.9, 0.9)).unwrap(), 0.0);
        assert_eq!(
            iou(&BBox::new(0.0, 0.0, 0.5, 1.0), &BBox::new(0.5, 0.0, 1.0, 1.0)).unwrap(),
            0.0
        );
        assert!(iou(&BBox::new(0.1, 0.1, 0.1, 0.5), &a).is_err());
    }

    #[test]
    fn matching_rules() {
        let gt = BBox::new(0.0, 0.0, 0.5, 1.0);
        // IoU 0.75
        let d = det(0.0, 0.0, 0.5, 0.75, 0, 0.9);
        assert_eq!(match_detections(&[d], &[gt], 0.5), vec![true]);
        let dup = det(0.0, 0.0, 0.5, 1.0, 0, 0.8);
        assert_eq!(match_detections(&[dup, d], &[gt], 0.5), vec![false, true]);
    }

    #[test]
    fn ap_hand_cases() {
        let gt = BBox::new(0.1, 0.1, 0.4, 0.4);
        let perfect = case(vec![gt], vec![det(0.1, 0.1, 0.4, 0.4, 0, 0.9)]);
        assert_eq!(average_precision(&[perfect], 0.5, true).unwrap(), 1.0);

        let fp_above_tp = case(
            vec![gt],
            vec![det(0.6, 0.6, 0.9, 0.9, 0, 0.9), det(0.1, 0.1, 0.4, 0.4, 0, 0.5)],
        );
        assert_eq!(average_precision(&[fp_above_tp], 0.5, true).unwrap(), 0.5);

        let empty = case(vec![gt], vec![]);
        assert_eq!(average_precision(std::slice::from_ref(&empty), 0.5, true).unwrap(), 0.0);
        assert_eq!(query_ap(&[empty], IouRegime::Ap5095).unwrap(), 0.0);

        let none = case(vec![], vec![det(0.1, 0.1, 0.4, 0.4, 0, 0.9)]);
        assert!(matches!(
            average_precision(&[none], 0.5, true),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn iou_threshold_inclusion() {
        // IoU = 0.375 / 0.625 = 0.6 exactly
        let gt = BBox::new(0.0, 0.0, 0.5, 1.0);
        let d = det(0.125, 0.0, 0.625, 1.0, 0, 0.7);
        assert_eq!(iou(&gt, &d.bbox).unwrap(), 0.6);
        let cases = [case(vec![gt], vec![d])];
        assert_eq!(query_ap(&cases, IouRegime::Ap50).unwrap(), 1.0);
        assert!((query_ap(&cases, IouRegime::Ap5095).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn class_agnostic_ignores_labels() {
        let gt = LabeledBox::new(1, 0.1, 0.1, 0.4, 0.4);
        let wrong = det(0.1, 0.1, 0.4, 0.4, 0, 0.9);
        let c = EvalCase {
            image_id: "i".into(),
            query: Query::single(1),
            groundtruth: vec![gt],
            detections: vec![wrong],
        };
        assert_eq!(average_precision(std::slice::from_ref(&c), 0.5, true).unwrap(), 1.0);
        assert_eq!(average_precision(&[c], 0.5, false).unwrap(), 0.0);
        let img = DetectionImage {
            image_id: "i".into(),
            detections: vec![wrong],
            groundtruth: vec![gt],
        };
        assert_eq!(detection_map(&[img], 2, IouRegime::Ap50).map, Some(0.0));
    }

    #[test]
    fn map_averages_present_classes() {
        let a = LabeledBox::new(0, 0.1, 0.1, 0.4, 0.4);
        let b = LabeledBox::new(1, 0.5, 0.5, 0.9, 0.9);
        let img = DetectionImage {
            image_id: "i".into(),
            detections: vec![det(0.1, 0.1, 0.4, 0.4, 0, 0.9)],
            groundtruth: vec![a, b],
        };
        let m = detection_map(&[img], 3, IouRegime::Ap50);
        assert_eq!(m.per_class, vec![Some(1.0), Some(0.0), None]);
        assert_eq!(m.map, Some(0.5));
    }

    #[test]
    fn ar_at_1_uses_top_box_only() {
        let g = [
            BBox::new(0.0, 0.0, 0.2, 0.2),
            BBox::new(0.4, 0.4, 0.6, 0.6),
            BBox::new(0.8, 0.8, 1.0, 1.0),
        ];
        let one = case(g.to_vec(), vec![det(0.0, 0.0, 0.2, 0.2, 0, 0.9)]);
        assert!((ar_at_1(std::slice::from_ref(&one), IouRegime::Ap50) - 1.0 / 3.0).abs() < 1e-12);
        let three = case(
            g.to_vec(),
            vec![
                det(0.0, 0.0, 0.2, 0.2, 0, 0.9),
                det(0.4, 0.4, 0.6, 0.6, 0, 0.8),
                det(0.8, 0.8, 1.0, 1.0, 0, 0.7),
            ],
        );
        assert_eq!(
            ar_at_1(&[one], IouRegime::Ap50),
            ar_at_1(std::slice::from_ref(&three), IouRegime::Ap50)
        );
        let single = case(vec![g[0]], vec![det(0.0, 0.0, 0.2, 0.2, 0, 0.9)]);
        assert_eq!(ar_at_1(&[single], IouRegime::Ap50), 1.0);
    }

    #[test]
    fn baseline_post_processing() {
        let car = det(0.05, 0.1, 0.2, 0.3, 0, 0.9);
        let dog = det(0.6, 0.1, 0.9, 0.3, 1, 0.8);
        let kept = post_process_baseline(&[car, dog], &Query::single(0));
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, car.bbox);

        let right = Query::new([0], Some((YSlice::All, XSlice::Right)));
        assert!(post_process_baseline(&[car], &right).is_empty());
        let kept = post_process_baseline(&[dog], &Query::new([1], Some((YSlice::All, XSlice::Right))));
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].label, AGNOSTIC_LABEL);
    }

    #[test]
    fn max_dets_truncates() {
        let gt = BBox::new(0.1, 0.1, 0.4, 0.4);
        let mut dets: Vec<ScoredBox> = (0..5).map(|i| det(0.6, 0.6, 0.9, 0.9, 0, 0.9 - 0.01 * i as f64)).collect();
        dets.push(det(0.1, 0.1, 0.4, 0.4, 0, 0.1));
        let c = case(vec![gt], dets);
        let eval = Evaluator { max_dets: 5 };
        assert_eq!(eval.average_precision(std::slice::from_ref(&c), 0.5, true).unwrap(), 0.0);
        assert!(average_precision(&[c], 0.5, true).unwrap() > 0.0);
    }

    #[test]
    fn report_csv_header() {
        let vocab = LabelVocabulary::new(vec!["a".into()]).unwrap();
        let r = EvalReport::build(&ReportInputs::default(), &vocab, IouRegime::Ap50);
        assert!(r.to_csv("QMD").starts_with("Model,SLD AP,KLD AP,LLD AP,DET mAP,SLD AR@1\n"));
    }
}
