//! Multi-task training loop with Adam and best-on-validation selection.

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::generate_anchors;
use super::config::{DetectorConfig, DetectorMode};
use super::loss::{compute_loss, LossInput};
use super::model::{ParamSet, ToyDetector};
use super::ops::Real;
use super::validation::{evaluate_model, EvalSuite, QueryStrategy};
use crate::annotations::Dataset;
use crate::encoding::{detection_query, encode_query, QueryEncoding};
use crate::error::{Error, Result};
use crate::evaluation::IouRegime;
use crate::querysynth::{make_training_example, standard_detection_example, QueryType, Task, TaskSchedule};
use crate::rng;
use crate::shapes::RasterImage;

/// Losses above this (or non-finite) abort training.
pub const DIVERGENCE_LOSS: f64 = 1e4;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A dataset together with its rasters, aligned by index.
#[derive(Debug, Clone, Copy)]
pub struct SplitData<'a> {
    pub dataset: &'a Dataset,
    pub images: &'a [RasterImage],
}

impl<'a> SplitData<'a> {
    pub fn new(dataset: &'a Dataset, images: &'a [RasterImage]) -> Result<Self> {
        if dataset.images.len() != images.len() {
            return Err(Error::Validation(format!(
                "{} records but {} rasters",
                dataset.images.len(),
                images.len()
            )));
        }
        if let Some((r, i)) = dataset
            .images
            .iter()
            .zip(images)
            .find(|(r, i)| r.image_id != i.image_id)
        {
            return Err(Error::Validation(format!(
                "record {} is paired with raster {}",
                r.image_id, i.image_id
            )));
        }
        Ok(Self { dataset, images })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskCounts {
    pub detection: usize,
    pub sld: usize,
    pub kld: usize,
    pub lld: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub sld_ap: Option<f64>,
    pub det_map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub config: DetectorConfig,
    pub mode: DetectorMode,
    pub schedule: TaskSchedule,
    /// Mean batch loss of every completed step.
    pub loss_history: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    /// Parameters at the validation point with the highest SLD AP (the
    /// final parameters when no validation ran).
    pub best: ToyDetector<f32>,
    pub best_step: usize,
    pub last: ToyDetector<f32>,
    pub task_counts: TaskCounts,
    /// Position of the data stream after the last step.
    pub rng_word_pos: u128,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub mode: DetectorMode,
    pub schedule: TaskSchedule,
    pub regime: IouRegime,
}

struct Adam<F> {
    m: ParamSet<F>,
    v: ParamSet<F>,
    t: i32,
    lr: f64,
}

impl<F: Real> Adam<F> {
    fn new(params: &ParamSet<F>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut ParamSet<F>, grad: &ParamSet<F>) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let (b1, b2) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2));
        let (one, eps) = (F::one(), F::of(ADAM_EPS));
        let step = F::of(self.lr);
        let (c1, c2) = (F::of(c1), F::of(c2));
        let grads = grad.named_tensors();
        for (((p, m), v), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= step * mh / (vh.sqrt() + eps);
            }
        }
    }
}

fn count(counts: &mut TaskCounts, task: Task, kind: Option<QueryType>) {
    match (task, kind) {
        (Task::StandardDetection, _) | (_, None) => counts.detection += 1,
        (_, Some(QueryType::Sld)) => counts.sld += 1,
        (_, Some(QueryType::Kld)) => counts.kld += 1,
        (_, Some(QueryType::Lld)) => counts.lld += 1,
    }
}

fn query_family(q: &crate::querysynth::Query) -> QueryType {
    if q.location.is_some() {
        QueryType::Lld
    } else if q.labels.len() == 1 {
        QueryType::Sld
    } else {
        QueryType::Kld
    }
}

/// Trains a detector. Every random decision (initialization, batch
/// composition, task switching, query synthesis) flows from `config.seed`.
pub fn train(
    train_split: SplitData<'_>,
    val_split: Option<SplitData<'_>>,
    config: &DetectorConfig,
    opts: &TrainOptions,
) -> Result<TrainingRun> {
    config.validate()?;
    opts.schedule.validate()?;
    let num_classes = train_split.dataset.num_classes();
    if num_classes != config.num_classes {
        return Err(Error::Config(format!(
            "config has {} classes, dataset has {num_classes}",
            config.num_classes
        )));
    }
    if train_split.images.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let mut init_rng = rng::stream(config.seed, "init");
    let mut model = ToyDetector::<f32>::init(config.clone(), opts.mode, &mut init_rng)?;
    let mut data_rng = rng::stream(config.seed, "data");
    let anchors = generate_anchors(config);
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let suite = val_split.map(|v| EvalSuite::sld_only(v.dataset));
    let sentinel = detection_query(num_classes);

    let mut history = Vec::with_capacity(config.steps);
    let mut validation = Vec::new();
    let mut counts = TaskCounts::default();
    let mut best: Option<(f64, usize, ToyDetector<f32>)> = None;

    for step in 0..config.steps {
        let mut examples = Vec::with_capacity(config.batch_size);
        let mut queries: Vec<QueryEncoding> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = data_rng.random_range(0..train_split.images.len());
            let record = &train_split.dataset.images[idx];
            let ex = match opts.mode {
                DetectorMode::Baseline => standard_detection_example(record, num_classes),
                DetectorMode::QueryModulated => {
                    make_training_example(record, num_classes, &opts.schedule, &mut data_rng)
                }
            };
            let kind = (ex.task == Task::QueryModulated).then(|| query_family(&ex.query));
            count(&mut counts, ex.task, kind);
            if opts.mode == DetectorMode::QueryModulated {
                queries.push(match ex.task {
                    Task::StandardDetection => sentinel.clone(),
                    Task::QueryModulated => encode_query(&ex.query, num_classes)?,
                });
            }
            examples.push((idx, ex));
        }
        let batch: Vec<LossInput<'_>> = examples
            .iter()
            .enumerate()
            .map(|(i, (idx, ex))| LossInput {
                image: &train_split.images[*idx],
                query: queries.get(i),
                targets: &ex.target_boxes,
            })
            .collect();
        let (parts, grad) = compute_loss(&model, &batch, &anchors)?;
        history.push(parts.total);
        if !parts.total.is_finite() || parts.total > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                step,
                loss: parts.total,
                history,
            });
        }
        if !grad.is_finite() {
            return Err(Error::Numeric {
                step,
                message: "non-finite gradient".into(),
            });
        }
        adam.step(&mut model.params, &grad);
        debug!("step {step}: loss {:.5} ({} positives)", parts.total, parts.positives);

        let done = step + 1;
        let eval_now = config.eval_interval > 0 && (done % config.eval_interval == 0 || done == config.steps);
        if let (true, Some(v), Some(suite)) = (eval_now, val_split, suite.as_ref()) {
            let report = evaluate_model(
                &model,
                v.dataset,
                v.images,
                suite,
                QueryStrategy::for_schedule(&opts.schedule),
                opts.regime,
            )?;
            info!(
                "step {done}: loss {:.4}, val SLD AP {}, DET mAP {}",
                parts.total,
                crate::evaluation::fmt_pct(report.sld_ap),
                crate::evaluation::fmt_pct(report.det_map)
            );
            validation.push(ValidationPoint {
                step: done,
                sld_ap: report.sld_ap,
                det_map: report.det_map,
            });
            let score = report.sld_ap.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, done, model.clone()));
            }
        }
    }
    let (best_step, best_model) = match best {
        Some((_, s, m)) => (s, m),
        None => (config.steps, model.clone()),
    };
    Ok(TrainingRun {
        config: config.clone(),
        mode: opts.mode,
        schedule: opts.schedule,
        loss_history: history,
        validation,
        best: best_model,
        best_step,
        last: model,
        task_counts: counts,
        rng_word_pos: data_rng.get_word_pos(),
    })
}

/// Convenience: mean of a slice of the loss history.
pub fn mean_loss(history: &[f64], range: std::ops::Range<usize>) -> f64 {
    let s = &history[range];
    s.iter().sum::<f64>() / s.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querysynth::QueryMix;
    use crate::shapes::{generate, ShapesConfig};

    fn tiny() -> (Dataset, Vec<RasterImage>, DetectorConfig) {
        let (ds, imgs) = generate(&ShapesConfig {
            num_images: 12,
            image_size: 16,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = DetectorConfig::new(ds.num_classes());
        cfg.input_size = 16;
        cfg.backbone_channels = vec![4, 8];
        cfg.embed_width = 8;
        cfg.head_channels = 8;
        cfg.batch_size = 4;
        cfg.steps = 6;
        cfg.eval_interval = 3;
        (ds, imgs, cfg)
    }

    #[test]
    fn ratio_one_trains_detection_only() {
        let (ds, imgs, cfg) = tiny();
        let split = SplitData::new(&ds, &imgs).unwrap();
        let opts = TrainOptions {
            mode: DetectorMode::QueryModulated,
            schedule: TaskSchedule::new(1.0, QueryMix::uniform()).unwrap(),
            regime: IouRegime::Ap50,
        };
        let run = train(split, Some(split), &cfg, &opts).unwrap();
        assert_eq!(run.task_counts.detection, cfg.steps * cfg.batch_size);
        assert_eq!(run.loss_history.len(), cfg.steps);
        assert_eq!(run.validation.len(), 2);
    }

    #[test]
    fn deterministic_history() {
        let (ds, imgs, cfg) = tiny();
        let split = SplitData::new(&ds, &imgs).unwrap();
        let opts = TrainOptions {
            mode: DetectorMode::QueryModulated,
            schedule: TaskSchedule::new(0.5, QueryMix::uniform()).unwrap(),
            regime: IouRegime::Ap50,
        };
        let a = train(split, None, &cfg, &opts).unwrap();
        let b = train(split, None, &cfg, &opts).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.best, b.best);
        assert!(a.task_counts.sld + a.task_counts.kld + a.task_counts.lld > 0);
    }

    #[test]
    fn mismatched_classes_rejected() {
        let (ds, imgs, mut cfg) = tiny();
        cfg.num_classes += 1;
        let split = SplitData::new(&ds, &imgs).unwrap();
        let opts = TrainOptions {
            mode: DetectorMode::Baseline,
            schedule: TaskSchedule::default(),
            regime: IouRegime::Ap50,
        };
        assert!(matches!(train(split, None, &cfg, &opts), Err(Error::Config(_))));
    }
}
