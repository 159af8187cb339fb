//! Detection groundtruth: the internal data model, the COCO reader and the
//! internal JSON dataset format.
//!
//! All boxes are stored as normalized corner coordinates in `[0, 1]` with `y`
//! increasing downward. Label indices are dense and 0-based.
//!
//! # Internal dataset format
//!
//! ```json
//! {
//!   "format": "qmd-dataset",
//!   "version": 1,
//!   "split": "train",
//!   "classes": ["circle", "ring"],
//!   "images": [
//!     {"image_id": "0", "width": 64, "height": 64,
//!      "boxes": [{"label": 1, "xmin": 0.1, "ymin": 0.2, "xmax": 0.4, "ymax": 0.5}]}
//!   ],
//!   "provenance": {"command": "...", "seed": 42, "version": "0.1.0"}
//! }
//! ```
//!
//! `split` and `provenance` are optional. Reading ignores `provenance`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;

/// Axis-aligned box in normalized corner coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const UNIT: BBox = BBox {
        xmin: 0.0,
        ymin: 0.0,
        xmax: 1.0,
        ymax: 1.0,
    };

    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.xmin < self.xmax && self.ymin < self.ymax)
    }

    pub fn is_normalized(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clip_unit(&self) -> BBox {
        BBox {
            xmin: self.xmin.clamp(0.0, 1.0),
            ymin: self.ymin.clamp(0.0, 1.0),
            xmax: self.xmax.clamp(0.0, 1.0),
            ymax: self.ymax.clamp(0.0, 1.0),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        )
    }
}

/// Ordered, duplicate-free list of class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation("vocabulary must contain at least one class".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Validation("class names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of classes, `C`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: usize,
    #[serde(flatten)]
    pub bbox: BBox,
}

impl LabeledBox {
    pub fn new(label: usize, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            label,
            bbox: BBox::new(xmin, ymin, xmax, ymax),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<LabeledBox>,
}

impl ImageRecord {
    /// Distinct labels present in the groundtruth, ascending.
    pub fn distinct_labels(&self) -> Vec<usize> {
        self.boxes
            .iter()
            .map(|b| b.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: LabelVocabulary,
    pub images: Vec<ImageRecord>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    /// Writes the internal JSON format.
    pub fn save_internal(&self, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
        let path = path.as_ref();
        let file = InternalFile {
            format: INTERNAL_FORMAT.to_string(),
            version: INTERNAL_VERSION,
            split: self.split,
            classes: self.vocab.names().to_vec(),
            images: self.images.clone(),
            provenance: provenance.cloned(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads the internal JSON format and checks every invariant.
    pub fn load_internal(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_internal_bytes(&bytes)
    }

    pub fn from_internal_bytes(bytes: &[u8]) -> Result<Self> {
        let file: InternalFile =
            serde_json::from_slice(bytes).map_err(|e| format_error(bytes, &e))?;
        if file.format != INTERNAL_FORMAT {
            return Err(Error::Validation(format!(
                "unexpected format tag {:?}",
                file.format
            )));
        }
        if file.version != INTERNAL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset version {}",
                file.version
            )));
        }
        let dataset = Dataset {
            vocab: LabelVocabulary::new(file.classes)?,
            images: file.images,
            split: file.split,
        };
        let violations = validate(&dataset);
        if !violations.is_empty() {
            return Err(Error::Validation(violations.join("; ")));
        }
        Ok(dataset)
    }
}

const INTERNAL_FORMAT: &str = "qmd-dataset";
const INTERNAL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InternalFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    classes: Vec<String>,
    images: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Converts a serde_json line/column position into a byte offset.
pub(crate) fn format_error(bytes: &[u8], err: &serde_json::Error) -> Error {
    let mut line = 1;
    let mut offset = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if line == err.line() {
            offset = i;
            break;
        }
        if b == b'\n' {
            line += 1;
            offset = i + 1;
        }
    }
    Error::Format {
        offset: (offset + err.column().saturating_sub(1)).min(bytes.len()),
        message: err.to_string(),
    }
}

/// Returns every broken invariant of `dataset`; empty iff valid.
pub fn validate(dataset: &Dataset) -> Vec<String> {
    let num_classes = dataset.vocab.len();
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    for image in &dataset.images {
        if !ids.insert(image.image_id.as_str()) {
            violations.push(format!("image {}: duplicate image_id", image.image_id));
        }
        if image.width == 0 || image.height == 0 {
            violations.push(format!("image {}: non-positive dimensions", image.image_id));
        }
        for (i, b) in image.boxes.iter().enumerate() {
            if b.label >= num_classes {
                violations.push(format!(
                    "image {} box {i}: label out of range ({} >= {num_classes})",
                    image.image_id, b.label
                ));
            }
            if b.bbox.is_degenerate() {
                violations.push(format!("image {} box {i}: degenerate box", image.image_id));
            }
            if !b.bbox.is_normalized() {
                violations.push(format!(
                    "image {} box {i}: coordinates outside [0, 1]",
                    image.image_id
                ));
            }
        }
    }
    violations
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Reads COCO detection JSON from disk.
pub fn load_coco_json(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_coco_json(&bytes)
}

/// Parses COCO detection JSON: `[x, y, w, h]` pixel boxes become normalized
/// corners and category ids are remapped to dense indices in ascending id
/// order. Crowd annotations are dropped.
pub fn parse_coco_json(bytes: &[u8]) -> Result<Dataset> {
    let coco: CocoFile = serde_json::from_slice(bytes).map_err(|e| format_error(bytes, &e))?;

    let categories: BTreeMap<u64, String> = coco
        .categories
        .into_iter()
        .map(|c| (c.id, c.name))
        .collect();
    let category_index: BTreeMap<u64, usize> = categories
        .keys()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let vocab = LabelVocabulary::new(categories.into_values().collect())?;

    let mut image_index = BTreeMap::new();
    let mut images = Vec::with_capacity(coco.images.len());
    for img in &coco.images {
        if image_index.insert(img.id, images.len()).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", img.id)));
        }
        if img.width == 0 || img.height == 0 {
            return Err(Error::Validation(format!(
                "image {} has non-positive dimensions",
                img.id
            )));
        }
        images.push(ImageRecord {
            image_id: img.id.to_string(),
            width: img.width,
            height: img.height,
            boxes: Vec::new(),
        });
    }

    let mut unknown_images = BTreeSet::new();
    let mut unknown_categories = BTreeSet::new();
    let mut bad_boxes = Vec::new();
    let mut crowd = 0usize;
    for (n, ann) in coco.annotations.iter().enumerate() {
        let img_slot = image_index.get(&ann.image_id);
        let label = category_index.get(&ann.category_id);
        if img_slot.is_none() {
            unknown_images.insert(ann.image_id);
        }
        if label.is_none() {
            unknown_categories.insert(ann.category_id);
        }
        let (Some(&slot), Some(&label)) = (img_slot, label) else {
            continue;
        };
        if ann.iscrowd != 0 {
            crowd += 1;
            continue;
        }
        let image = &mut images[slot];
        let (w, h) = (image.width as f64, image.height as f64);
        let [x, y, bw, bh] = ann.bbox;
        let bbox = BBox::new(x / w, y / h, (x + bw) / w, (y + bh) / h);
        let ann_id = ann.id.map_or_else(|| format!("#{n}"), |id| id.to_string());
        if !(bw > 0.0 && bh > 0.0) || bbox.is_degenerate() {
            bad_boxes.push(format!("annotation {ann_id}: degenerate box"));
            continue;
        }
        if !bbox.is_normalized() {
            bad_boxes.push(format!("annotation {ann_id}: box outside image"));
            continue;
        }
        image.boxes.push(LabeledBox { label, bbox });
    }

    let mut problems = Vec::new();
    if !unknown_images.is_empty() {
        problems.push(format!("unknown image ids {:?}", unknown_images));
    }
    if !unknown_categories.is_empty() {
        problems.push(format!("unknown category ids {:?}", unknown_categories));
    }
    problems.extend(bad_boxes);
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    if crowd > 0 {
        log::info!("dropped {crowd} crowd annotations");
    }
    Ok(Dataset {
        vocab,
        images,
        split: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coco(annotations: &str) -> String {
        format!(
            r#"{{"images": [{{"id": 1, "width": 100, "height": 200}}],
                "annotations": {annotations},
                "categories": [{{"id": 7, "name": "dog"}}, {{"id": 3, "name": "car"}}]}}"#
        )
    }

    #[test]
    fn bbox_normalization() {
        let ds = parse_coco_json(
            coco(r#"[{"id": 1, "image_id": 1, "category_id": 3, "bbox": [10, 20, 30, 40]}]"#)
                .as_bytes(),
        )
        .unwrap();
        let b = ds.images[0].boxes[0];
        // id 3 sorts before id 7
        assert_eq!(b.label, 0);
        assert_eq!(ds.vocab.names(), &["car".to_string(), "dog".to_string()]);
        assert!((b.bbox.xmin - 0.10).abs() < 1e-12);
        assert!((b.bbox.ymin - 0.10).abs() < 1e-12);
        assert!((b.bbox.xmax - 0.40).abs() < 1e-12);
        assert!((b.bbox.ymax - 0.30).abs() < 1e-12);
    }

    #[test]
    fn empty_annotations() {
        let ds = parse_coco_json(coco("[]").as_bytes()).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert!(ds.images[0].boxes.is_empty());
    }

    #[test]
    fn crowd_dropped() {
        let ds = parse_coco_json(
            coco(r#"[{"image_id": 1, "category_id": 3, "bbox": [10, 20, 30, 40], "iscrowd": 1}]"#)
                .as_bytes(),
        )
        .unwrap();
        assert!(ds.images[0].boxes.is_empty());
    }

    #[test]
    fn unknown_ids_listed() {
        let err = parse_coco_json(
            coco(
                r#"[{"image_id": 9, "category_id": 3, "bbox": [1, 1, 2, 2]},
                    {"image_id": 1, "category_id": 42, "bbox": [1, 1, 2, 2]}]"#,
            )
            .as_bytes(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown image ids {9}"), "{msg}");
        assert!(msg.contains("unknown category ids {42}"), "{msg}");
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = parse_coco_json(
            coco(r#"[{"id": 5, "image_id": 1, "category_id": 3, "bbox": [10, 20, 0, 40]}]"#)
                .as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("annotation 5"));
    }

    #[test]
    fn parse_failure_reports_offset() {
        let text = "{\"images\": [\n  {\"id\": 1,, }]}";
        match parse_coco_json(text.as_bytes()).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(&text[offset..offset + 1], ","),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn valid() -> Dataset {
        Dataset {
            vocab: LabelVocabulary::new(vec!["a".into(), "b".into()]).unwrap(),
            images: vec![ImageRecord {
                image_id: "x".into(),
                width: 10,
                height: 10,
                boxes: vec![LabeledBox::new(1, 0.1, 0.1, 0.5, 0.5)],
            }],
            split: None,
        }
    }

    #[test]
    fn validate_reports_violations() {
        assert!(validate(&valid()).is_empty());

        let mut ds = valid();
        ds.images[0].boxes[0].bbox.xmax = 0.1;
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("degenerate box") && v[0].contains("box 0") && v[0].contains("x"));

        let mut ds = valid();
        ds.images[0].boxes[0].label = 2;
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("label out of range"));
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(LabelVocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert!(LabelVocabulary::new(vec!["".into()]).is_err());
        assert!(LabelVocabulary::new(vec![]).is_err());
    }
}
