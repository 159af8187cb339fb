//! Query synthesis from detection groundtruth and the multi-task switch.
//!
//! Three query families are synthesized from an image's labeled boxes:
//!
//! * SLD: one label drawn uniformly from the distinct labels present.
//! * KLD: every distinct label kept independently with probability `p`,
//!   redrawn until the set is non-empty.
//! * LLD: one label plus, when that label has several instances, the
//!   tightest `(y-slice, x-slice)` region around a randomly picked instance.
//!
//! Randomness is always passed in explicitly, so synthesis is a pure
//! function of `(image, rng state)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{ImageRecord, LabeledBox};
use crate::error::{Error, Result};
use crate::grid::{constraint_region, contains, XSlice, YSlice, CONTAINMENT_THRESHOLD};

/// A coarse location constraint. `(All, All)` is never stored; it is
/// represented by the absence of a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub y: YSlice,
    pub x: XSlice,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub labels: BTreeSet<usize>,
    pub location: Option<Location>,
}

impl Query {
    pub fn new(labels: impl IntoIterator<Item = usize>, location: Option<(YSlice, XSlice)>) -> Self {
        let location = location
            .filter(|&(y, x)| !(y == YSlice::All && x == XSlice::All))
            .map(|(y, x)| Location { y, x });
        Self {
            labels: labels.into_iter().collect(),
            location,
        }
    }

    pub fn single(label: usize) -> Self {
        Self::new([label], None)
    }

    /// The "all labels, no constraint" query that triggers standard detection.
    pub fn all_labels(num_classes: usize) -> Self {
        Self::new(0..num_classes, None)
    }

    pub fn is_all_labels(&self, num_classes: usize) -> bool {
        self.location.is_none()
            && self.labels.len() == num_classes
            && self.labels.iter().copied().eq(0..num_classes)
    }

    pub fn slices(&self) -> (YSlice, XSlice) {
        self.location
            .map_or((YSlice::All, XSlice::All), |l| (l.y, l.x))
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Domain("query has no labels".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Domain(format!(
                "query label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    QueryModulated,
    StandardDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Sld,
    Kld,
    Lld,
}

impl QueryType {
    pub const ALL_VALUES: [QueryType; 3] = [QueryType::Sld, QueryType::Kld, QueryType::Lld];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::Sld => "sld",
            QueryType::Kld => "kld",
            QueryType::Lld => "lld",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL_VALUES
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown query type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedExample {
    pub query: Query,
    pub target_boxes: Vec<LabeledBox>,
    pub task: Task,
}

fn not_synthesizable(image: &ImageRecord) -> Error {
    Error::NotSynthesizable {
        image_id: image.image_id.clone(),
        reason: "empty groundtruth".into(),
    }
}

fn filter_labels(image: &ImageRecord, labels: &BTreeSet<usize>) -> Vec<LabeledBox> {
    image
        .boxes
        .iter()
        .filter(|b| labels.contains(&b.label))
        .copied()
        .collect()
}

pub fn synth_sld<R: Rng + ?Sized>(image: &ImageRecord, rng: &mut R) -> Result<SynthesizedExample> {
    let labels = image.distinct_labels();
    if labels.is_empty() {
        return Err(not_synthesizable(image));
    }
    let label = labels[rng.random_range(0..labels.len())];
    let query = Query::single(label);
    Ok(SynthesizedExample {
        target_boxes: filter_labels(image, &query.labels),
        query,
        task: Task::QueryModulated,
    })
}

pub fn synth_kld<R: Rng + ?Sized>(
    image: &ImageRecord,
    rng: &mut R,
    p: f64,
) -> Result<SynthesizedExample> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!(
            "label inclusion probability must lie in (0, 1], got {p}"
        )));
    }
    let labels = image.distinct_labels();
    if labels.is_empty() {
        return Err(not_synthesizable(image));
    }
    let chosen = loop {
        let set: BTreeSet<usize> = labels
            .iter()
            .copied()
            .filter(|_| rng.random_bool(p))
            .collect();
        if !set.is_empty() {
            break set;
        }
    };
    let query = Query::new(chosen, None);
    Ok(SynthesizedExample {
        target_boxes: filter_labels(image, &query.labels),
        query,
        task: Task::QueryModulated,
    })
}

fn count_contained(boxes: &[LabeledBox], y: YSlice, x: XSlice, threshold: f64) -> usize {
    let region = constraint_region(y, x);
    boxes
        .iter()
        .filter(|b| contains(&b.bbox, &region, threshold).unwrap_or(false))
        .count()
}

/// Smallest-area region containing `target`; ties go to the region holding
/// the fewest candidates, then to enumeration order.
pub fn tightest_constraint(target: &LabeledBox, candidates: &[LabeledBox]) -> (YSlice, XSlice) {
    tightest_constraint_with(target, candidates, CONTAINMENT_THRESHOLD)
}

pub fn tightest_constraint_with(
    target: &LabeledBox,
    candidates: &[LabeledBox],
    threshold: f64,
) -> (YSlice, XSlice) {
    let mut best: Option<((YSlice, XSlice), f64, usize)> = None;
    for y in YSlice::ALL_VALUES {
        for x in XSlice::ALL_VALUES {
            let region = constraint_region(y, x);
            if !contains(&target.bbox, &region, threshold).unwrap_or(false) {
                continue;
            }
            let area = region.area();
            let count = count_contained(candidates, y, x, threshold);
            let better = match best {
                None => true,
                Some((_, a, c)) => area < a || (area == a && count < c),
            };
            if better {
                best = Some(((y, x), area, count));
            }
        }
    }
    best.map_or((YSlice::All, XSlice::All), |(slices, _, _)| slices)
}

pub fn synth_lld<R: Rng + ?Sized>(image: &ImageRecord, rng: &mut R) -> Result<SynthesizedExample> {
    synth_lld_with(image, rng, CONTAINMENT_THRESHOLD)
}

pub fn synth_lld_with<R: Rng + ?Sized>(
    image: &ImageRecord,
    rng: &mut R,
    threshold: f64,
) -> Result<SynthesizedExample> {
    let labels = image.distinct_labels();
    if labels.is_empty() {
        return Err(not_synthesizable(image));
    }
    let label = labels[rng.random_range(0..labels.len())];
    let same_label: Vec<LabeledBox> = image
        .boxes
        .iter()
        .filter(|b| b.label == label)
        .copied()
        .collect();
    if same_label.len() == 1 {
        return Ok(SynthesizedExample {
            query: Query::single(label),
            target_boxes: same_label,
            task: Task::QueryModulated,
        });
    }
    let target = same_label[rng.random_range(0..same_label.len())];
    let (y, x) = tightest_constraint_with(&target, &same_label, threshold);
    let region = constraint_region(y, x);
    let target_boxes = same_label
        .into_iter()
        .filter(|b| contains(&b.bbox, &region, threshold).unwrap_or(false))
        .collect();
    Ok(SynthesizedExample {
        query: Query::new([label], Some((y, x))),
        target_boxes,
        task: Task::QueryModulated,
    })
}

pub fn synth<R: Rng + ?Sized>(
    image: &ImageRecord,
    kind: QueryType,
    rng: &mut R,
) -> Result<SynthesizedExample> {
    match kind {
        QueryType::Sld => synth_sld(image, rng),
        QueryType::Kld => synth_kld(image, rng, 0.5),
        QueryType::Lld => synth_lld(image, rng),
    }
}

/// Relative weights of the three query families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMix {
    pub sld: f64,
    pub kld: f64,
    pub lld: f64,
}

impl QueryMix {
    pub const SLD_ONLY: QueryMix = QueryMix {
        sld: 1.0,
        kld: 0.0,
        lld: 0.0,
    };
    /// K-hot label queries (each present label kept with p = 0.5).
    pub const KLD_ONLY: QueryMix = QueryMix {
        sld: 0.0,
        kld: 1.0,
        lld: 0.0,
    };
    pub const LLD_ONLY: QueryMix = QueryMix {
        sld: 0.0,
        kld: 0.0,
        lld: 1.0,
    };

    pub fn uniform() -> Self {
        Self {
            sld: 1.0 / 3.0,
            kld: 1.0 / 3.0,
            lld: 1.0 / 3.0,
        }
    }

    fn weights(&self) -> [f64; 3] {
        [self.sld, self.kld, self.lld]
    }
}

impl Default for QueryMix {
    fn default() -> Self {
        Self::SLD_ONLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub detection_ratio: f64,
    pub query_mix: QueryMix,
}

impl Default for TaskSchedule {
    fn default() -> Self {
        Self {
            detection_ratio: 0.5,
            query_mix: QueryMix::default(),
        }
    }
}

impl TaskSchedule {
    pub fn new(detection_ratio: f64, query_mix: QueryMix) -> Result<Self> {
        let s = Self {
            detection_ratio,
            query_mix,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detection_ratio) {
            return Err(Error::Config(format!(
                "detection ratio must lie in [0, 1], got {}",
                self.detection_ratio
            )));
        }
        let w = self.query_mix.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("query mix weights must be non-negative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "query mix weights must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Detection,
    Query(QueryType),
}

pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, schedule: &TaskSchedule) -> TaskChoice {
    if rng.random::<f64>() < schedule.detection_ratio {
        return TaskChoice::Detection;
    }
    let w = schedule.query_mix.weights();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (kind, weight) in QueryType::ALL_VALUES.into_iter().zip(w) {
        if weight > 0.0 && u < weight {
            return TaskChoice::Query(kind);
        }
        u -= weight;
    }
    // rounding leftovers land on the last family with positive weight
    let last = QueryType::ALL_VALUES
        .into_iter()
        .zip(w)
        .rev()
        .find(|(_, weight)| *weight > 0.0)
        .map_or(QueryType::Sld, |(k, _)| k);
    TaskChoice::Query(last)
}

pub fn standard_detection_example(image: &ImageRecord, num_classes: usize) -> SynthesizedExample {
    SynthesizedExample {
        query: Query::all_labels(num_classes),
        target_boxes: image.boxes.clone(),
        task: Task::StandardDetection,
    }
}

pub fn make_training_example<R: Rng + ?Sized>(
    image: &ImageRecord,
    num_classes: usize,
    schedule: &TaskSchedule,
    rng: &mut R,
) -> SynthesizedExample {
    let choice = sample_task(rng, schedule);
    match choice {
        _ if image.boxes.is_empty() => standard_detection_example(image, num_classes),
        TaskChoice::Detection => standard_detection_example(image, num_classes),
        TaskChoice::Query(kind) => synth(image, kind, rng)
            .expect("images with groundtruth are always synthesizable"),
    }
}
