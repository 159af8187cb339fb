//! JSONL record types exchanged between the pipeline stages
//! (`synth` → `encode` / `predict` → `eval`).

use serde::{Deserialize, Serialize};

use crate::annotations::LabeledBox;
use crate::encoding::QueryEncoding;
use crate::evaluation::ScoredBox;
use crate::grid::{XSlice, YSlice};
use crate::querysynth::{Location, Query, QueryType, SynthesizedExample, Task};

/// One synthesized query with its pruned groundtruth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub image_id: String,
    pub query_id: String,
    pub query_type: QueryType,
    pub task: Task,
    pub labels: Vec<usize>,
    pub location: Option<Location>,
    pub targets: Vec<LabeledBox>,
}

impl SynthRecord {
    pub fn new(image_id: &str, query_id: String, query_type: QueryType, ex: SynthesizedExample) -> Self {
        Self {
            image_id: image_id.to_string(),
            query_id,
            query_type,
            task: ex.task,
            labels: ex.query.labels.iter().copied().collect(),
            location: ex.query.location,
            targets: ex.target_boxes,
        }
    }

    pub fn query(&self) -> Query {
        Query::new(
            self.labels.iter().copied(),
            self.location.map(|l| (l.y, l.x)),
        )
    }
}

/// Input of `encode`: any record with `labels` and an optional `location`
/// (synth records qualify).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(default)]
    pub query_id: Option<String>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub location: Option<Location>,
}

impl QueryRecord {
    pub fn query(&self) -> Query {
        Query::new(
            self.labels.iter().copied(),
            self.location.map(|l| (l.y, l.x)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingRecord {
    #[serde(default)]
    pub query_id: Option<String>,
    pub bits: QueryEncoding,
}

/// Output of `predict`. `query_id` is absent for standard detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(default)]
    pub query_id: Option<String>,
    pub detections: Vec<ScoredBox>,
}

/// Location bits of a bare `(y, x)` constraint; the three worked examples
/// of the encoding are stated in this form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub y: YSlice,
    pub x: XSlice,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::parse_jsonl;

    #[test]
    fn synth_record_round_trip() {
        let rec = SynthRecord {
            image_id: "img-00001".into(),
            query_id: "q000001".into(),
            query_type: QueryType::Lld,
            task: Task::QueryModulated,
            labels: vec![2],
            location: Some(Location {
                y: YSlice::Top,
                x: XSlice::FarRight,
            }),
            targets: vec![LabeledBox::new(2, 0.8, 0.1, 0.95, 0.4)],
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"far-right\""));
        assert!(line.contains("\"lld\""));
        let back: Vec<SynthRecord> = parse_jsonl(&line).unwrap();
        assert_eq!(back[0], rec);
        // a synth record is also a valid encode input
        let q: Vec<QueryRecord> = parse_jsonl(&line).unwrap();
        assert_eq!(q[0].query(), rec.query());
    }
}
