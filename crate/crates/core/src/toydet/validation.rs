//! Fixed evaluation cases and model scoring shared by training and the
//! benchmark.

use serde::{Deserialize, Serialize};

use super::anchors::generate_anchors;
use super::config::DetectorMode;
use super::model::ToyDetector;
use super::ops::Real;
use super::predict::PredictOptions;
use crate::annotations::Dataset;
use crate::encoding::{detection_query, encode_query, QueryEncoding};
use crate::error::Result;
use crate::evaluation::{
    post_process_baseline, DetectionImage, EvalCase, EvalReport, IouRegime, ReportInputs, ScoredBox,
    AGNOSTIC_LABEL,
};
use crate::querysynth::{synth_kld, synth_lld, Query, QueryType, TaskSchedule};
use crate::rng;
use crate::shapes::RasterImage;

/// Key under which evaluation queries are drawn; independent of the
/// training seed so every model sees the same cases.
pub const EVAL_STREAM: &str = "evaluation-queries";
pub const EVAL_SEED: u64 = 0x5EED_E7A1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCase {
    pub image_index: usize,
    pub query: Query,
    pub targets: Vec<crate::annotations::LabeledBox>,
}

/// Evaluation cases of one family. SLD enumerates every label present in
/// each image; KLD and LLD draw one query per image from a fixed stream.
pub fn build_cases(dataset: &Dataset, kind: QueryType) -> Vec<QueryCase> {
    let mut out = Vec::new();
    for (i, img) in dataset.images.iter().enumerate() {
        if img.boxes.is_empty() {
            continue;
        }
        match kind {
            QueryType::Sld => {
                for label in img.distinct_labels() {
                    out.push(QueryCase {
                        image_index: i,
                        query: Query::single(label),
                        targets: img.boxes.iter().filter(|b| b.label == label).copied().collect(),
                    });
                }
            }
            QueryType::Kld | QueryType::Lld => {
                let key = format!("{EVAL_STREAM}:{}:{}", kind.name(), img.image_id);
                let mut r = rng::stream(EVAL_SEED, &key);
                let ex = match kind {
                    QueryType::Kld => synth_kld(img, &mut r, 0.5),
                    _ => synth_lld(img, &mut r),
                }
                .expect("non-empty image");
                out.push(QueryCase {
                    image_index: i,
                    query: ex.query,
                    targets: ex.target_boxes,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSuite {
    pub sld: Vec<QueryCase>,
    pub kld: Vec<QueryCase>,
    pub lld: Vec<QueryCase>,
}

impl EvalSuite {
    pub fn new(dataset: &Dataset) -> Self {
        Self {
            sld: build_cases(dataset, QueryType::Sld),
            kld: build_cases(dataset, QueryType::Kld),
            lld: build_cases(dataset, QueryType::Lld),
        }
    }

    /// SLD cases only, which is all validation needs.
    pub fn sld_only(dataset: &Dataset) -> Self {
        Self {
            sld: build_cases(dataset, QueryType::Sld),
            kld: Vec::new(),
            lld: Vec::new(),
        }
    }
}

const CHUNK: usize = 32;

fn predict_many<F: Real>(
    model: &ToyDetector<F>,
    images: &[&RasterImage],
    queries: Option<&[QueryEncoding]>,
    opts: &PredictOptions,
) -> Result<Vec<Vec<ScoredBox>>> {
    let anchors = generate_anchors(&model.config);
    let mut out = Vec::with_capacity(images.len());
    for start in (0..images.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(images.len());
        let qs = queries.map(|q| &q[start..end]);
        out.extend(model.predict_batch(&images[start..end], qs, &anchors, opts)?);
    }
    Ok(out)
}

/// Detections of every image under standard detection: the sentinel query
/// for a query-modulated model, no query for the baseline.
pub fn detect_all<F: Real>(model: &ToyDetector<F>, images: &[RasterImage]) -> Result<Vec<Vec<ScoredBox>>> {
    let refs: Vec<&RasterImage> = images.iter().collect();
    match model.mode {
        DetectorMode::Baseline => predict_many(model, &refs, None, &PredictOptions::default()),
        DetectorMode::QueryModulated => {
            let q = vec![detection_query(model.config.num_classes); refs.len()];
            predict_many(model, &refs, Some(&q), &PredictOptions::default())
        }
    }
}

fn agnostic(dets: Vec<ScoredBox>) -> Vec<ScoredBox> {
    dets.into_iter()
        .map(|d| ScoredBox {
            label: AGNOSTIC_LABEL,
            ..d
        })
        .collect()
}

/// How query cases are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryStrategy {
    /// Feed the encoded query to the model (query-modulated models).
    Conditioned,
    /// Run standard detection and prune by label and region.
    PostProcessed,
}

impl QueryStrategy {
    /// How a model trained under `schedule` answers queries: a model that
    /// never saw a query (detection ratio 1) is a plain detector and goes
    /// through post-processing like the baseline.
    pub fn for_schedule(schedule: &TaskSchedule) -> Self {
        if schedule.detection_ratio >= 1.0 {
            QueryStrategy::PostProcessed
        } else {
            QueryStrategy::Conditioned
        }
    }
}

fn answer<F: Real>(
    model: &ToyDetector<F>,
    dataset: &Dataset,
    images: &[RasterImage],
    cases: &[QueryCase],
    strategy: QueryStrategy,
    detections: &[Vec<ScoredBox>],
) -> Result<Vec<EvalCase>> {
    let dets: Vec<Vec<ScoredBox>> = match strategy {
        QueryStrategy::PostProcessed => cases
            .iter()
            .map(|c| post_process_baseline(&detections[c.image_index], &c.query))
            .collect(),
        QueryStrategy::Conditioned => {
            let refs: Vec<&RasterImage> = cases.iter().map(|c| &images[c.image_index]).collect();
            let qs = cases
                .iter()
                .map(|c| encode_query(&c.query, model.config.num_classes))
                .collect::<Result<Vec<_>>>()?;
            // labels are discarded, so each anchor contributes one box
            let opts = PredictOptions {
                merge_classes: true,
                ..PredictOptions::default()
            };
            predict_many(model, &refs, Some(&qs), &opts)?.into_iter().map(agnostic).collect()
        }
    };
    Ok(cases
        .iter()
        .zip(dets)
        .map(|(c, d)| EvalCase {
            image_id: dataset.images[c.image_index].image_id.clone(),
            query: c.query.clone(),
            groundtruth: c.targets.clone(),
            detections: d,
        })
        .collect())
}

/// Scores a model on a suite. Baselines always use post-processing.
pub fn evaluate_model<F: Real>(
    model: &ToyDetector<F>,
    dataset: &Dataset,
    images: &[RasterImage],
    suite: &EvalSuite,
    strategy: QueryStrategy,
    regime: IouRegime,
) -> Result<EvalReport> {
    let strategy = match model.mode {
        DetectorMode::Baseline => QueryStrategy::PostProcessed,
        DetectorMode::QueryModulated => strategy,
    };
    let detections = detect_all(model, images)?;
    let inputs = ReportInputs {
        sld: answer(model, dataset, images, &suite.sld, strategy, &detections)?,
        kld: answer(model, dataset, images, &suite.kld, strategy, &detections)?,
        lld: answer(model, dataset, images, &suite.lld, strategy, &detections)?,
        det: dataset
            .images
            .iter()
            .zip(detections)
            .map(|(img, d)| DetectionImage {
                image_id: img.image_id.clone(),
                detections: d,
                groundtruth: img.boxes.clone(),
            })
            .collect(),
    };
    Ok(EvalReport::build(&inputs, &dataset.vocab, regime))
}
