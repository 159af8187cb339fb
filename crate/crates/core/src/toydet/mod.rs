//! A small query-modulated detector, its query-free baseline, training and
//! prediction.

pub mod anchors;
pub mod benchmark;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod ops;
pub mod predict;
pub mod train;
pub mod validation;

pub use anchors::{decode_box, encode_box, generate_anchors, Assignment};
pub use config::{DetectorConfig, DetectorMode};
pub use loss::{compute_loss, LossInput, LossParts};
pub use model::{HeadOutput, ParamSet, ToyDetector};
pub use ops::Real;
pub use predict::{nms, PredictOptions};
pub use train::{train, SplitData, TrainOptions, TrainingRun, ValidationPoint};
pub use validation::{evaluate_model, EvalSuite, QueryStrategy};
