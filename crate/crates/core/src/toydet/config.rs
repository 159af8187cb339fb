use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Query embedding, feature fusion and the shared box head.
    QueryModulated,
    /// The same backbone and head with no query input.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Square input side in pixels; inputs have 3 channels.
    pub input_size: usize,
    /// Output channels of each stride-2 3x3 conv block; the last is `D`.
    pub backbone_channels: Vec<usize>,
    /// Width of both fully-connected query embedding layers.
    pub embed_width: usize,
    /// Width of the shared 3x3 head conv.
    pub head_channels: usize,
    /// Square anchor sides as fractions of the image side.
    pub anchor_scales: Vec<f64>,
    /// Append two normalized coordinate channels before fusion.
    pub spatial_encoding: bool,
    /// Collapse the classification head to a single class.
    pub class_agnostic: bool,
    /// Vocabulary size `C`; queries have `C + 8` bits.
    pub num_classes: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub positive_iou: f64,
    pub negative_iou: f64,
    /// Also mark each groundtruth's best anchor positive.
    pub force_best_anchor: bool,
    /// Delta scaling for (x, y, w, h).
    pub box_scale: [f64; 4],
    pub smooth_l1_beta: f64,
    /// Initial foreground probability set through the classification bias.
    pub prior_probability: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            input_size: 64,
            backbone_channels: vec![16, 32, 64],
            embed_width: 64,
            head_channels: 64,
            anchor_scales: vec![0.15, 0.30, 0.50],
            spatial_encoding: true,
            class_agnostic: false,
            num_classes,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            positive_iou: 0.5,
            negative_iou: 0.4,
            force_best_anchor: true,
            box_scale: [10.0, 10.0, 5.0, 5.0],
            smooth_l1_beta: 1.0 / 9.0,
            prior_probability: 0.01,
            learning_rate: 1e-3,
            batch_size: 16,
            steps: 8000,
            eval_interval: 1000,
            seed: 7,
        }
    }

    /// A tiny configuration (8x8 input, 2x2 map) for gradient checks.
    pub fn miniature(num_classes: usize) -> Self {
        Self {
            input_size: 8,
            backbone_channels: vec![3, 4],
            embed_width: 5,
            head_channels: 4,
            anchor_scales: vec![0.3, 0.6],
            batch_size: 2,
            ..Self::new(num_classes)
        }
    }

    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&0)
    }

    pub fn feature_size(&self) -> usize {
        self.input_size >> self.backbone_channels.len()
    }

    pub fn cells(&self) -> usize {
        self.feature_size() * self.feature_size()
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.cells() * self.anchors_per_cell()
    }

    /// Classes predicted by the head.
    pub fn head_classes(&self) -> usize {
        if self.class_agnostic {
            1
        } else {
            self.num_classes
        }
    }

    pub fn query_len(&self) -> usize {
        self.num_classes + crate::encoding::LOCATION_BITS
    }

    /// Channels of the final predictor conv: class logits then box deltas.
    pub fn predictor_channels(&self) -> usize {
        self.anchors_per_cell() * (self.head_classes() + 4)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 {
            return err("num_classes must be positive".into());
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return err("backbone needs at least one block with positive width".into());
        }
        let stride = 1usize << self.backbone_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return err(format!(
                "feature-map stride {stride} must divide input size {}",
                self.input_size
            ));
        }
        if self.embed_width == 0 || self.head_channels == 0 {
            return err("layer widths must be positive".into());
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return err("anchor scales must be positive".into());
        }
        if !(self.negative_iou <= self.positive_iou && self.positive_iou <= 1.0) {
            return err("matching thresholds must satisfy negative <= positive <= 1".into());
        }
        if !(self.prior_probability > 0.0 && self.prior_probability < 1.0) {
            return err("prior probability must lie in (0, 1)".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be positive".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return err("learning rate must be positive".into());
        }
        Ok(())
    }
}
