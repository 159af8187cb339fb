//! Focal classification loss plus smooth-L1 box regression.

use ndarray::Array2;

use super::anchors::{assign, encode_box, Assignment};
use super::config::DetectorConfig;
use super::model::{HeadOutput, ParamSet, ToyDetector};
use super::ops::Real;
use crate::annotations::{BBox, LabeledBox};
use crate::encoding::QueryEncoding;
use crate::error::{Error, Result};
use crate::shapes::RasterImage;

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of a single logit and its derivative with respect to it.
pub fn focal(logit: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let (z, sign, a) = if positive {
        (logit, 1.0, alpha)
    } else {
        (-logit, -1.0, 1.0 - alpha)
    };
    let p = sigmoid(z);
    let log_p = log_sigmoid(z);
    let q = 1.0 - p;
    let qg = q.powf(gamma);
    let loss = -a * qg * log_p;
    // dFL/dz = a (1-p)^γ [γ p log p − (1 − p)]
    let dz = a * qg * (gamma * p * log_p - q);
    (loss, sign * dz)
}

pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub positives: usize,
}

/// Loss of a batch of head outputs against per-image targets, together
/// with its gradient with respect to the raw head output. Both terms are
/// divided by the batch's positive-anchor count (at least 1).
pub fn head_loss<F: Real>(
    out: &HeadOutput<F>,
    targets: &[Vec<LabeledBox>],
    anchors: &[BBox],
    config: &DetectorConfig,
) -> (LossParts, Array2<F>) {
    let mut d_raw = Array2::<F>::zeros(out.raw.raw_dim());
    let assignments: Vec<Vec<Assignment>> = targets
        .iter()
        .map(|t| assign(anchors, t, config))
        .collect();
    let positives: usize = assignments
        .iter()
        .map(|a| a.iter().filter(|x| matches!(x, Assignment::Positive(_))).count())
        .sum();
    let norm = positives.max(1) as f64;
    let (alpha, gamma, beta) = (config.focal_alpha, config.focal_gamma, config.smooth_l1_beta);
    let mut cls = 0.0;
    let mut reg = 0.0;
    for (img, (assignment, gts)) in assignments.iter().zip(targets).enumerate() {
        for (a, &kind) in assignment.iter().enumerate() {
            let target_class = match kind {
                Assignment::Ignore => continue,
                Assignment::Negative => None,
                Assignment::Positive(g) => Some(if config.class_agnostic { 0 } else { gts[g].label }),
            };
            for k in 0..out.classes {
                let x = out.logit(img, a, k).as_f64();
                let (l, d) = focal(x, target_class == Some(k), alpha, gamma);
                cls += l;
                let (r, c) = out.grad_index(img, a, |ai| out.cls_row(ai, k));
                d_raw[[r, c]] = F::of(d / norm);
            }
            if let Assignment::Positive(g) = kind {
                let t = encode_box(&gts[g].bbox, &anchors[a], config.box_scale);
                for (j, &tj) in t.iter().enumerate() {
                    let diff = out.delta(img, a, j).as_f64() - tj;
                    let (l, d) = smooth_l1(diff, beta);
                    reg += l;
                    let (r, c) = out.grad_index(img, a, |ai| out.box_row(ai, j));
                    d_raw[[r, c]] = F::of(d / norm);
                }
            }
        }
    }
    let parts = LossParts {
        total: (cls + reg) / norm,
        classification: cls / norm,
        regression: reg / norm,
        positives,
    };
    (parts, d_raw)
}

/// One training example as seen by the loss: an image, the query fed to
/// the model (absent for the baseline) and the boxes it should find.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub image: &'a RasterImage,
    pub query: Option<&'a QueryEncoding>,
    pub targets: &'a [LabeledBox],
}

/// Forward, loss and backward over a batch.
pub fn compute_loss<F: Real>(
    model: &ToyDetector<F>,
    batch: &[LossInput<'_>],
    anchors: &[BBox],
) -> Result<(LossParts, ParamSet<F>)> {
    let images: Vec<&RasterImage> = batch.iter().map(|b| b.image).collect();
    let queries: Option<Vec<QueryEncoding>> = batch
        .iter()
        .map(|b| b.query.cloned())
        .collect::<Option<Vec<_>>>();
    if queries.is_none() && batch.iter().any(|b| b.query.is_some()) {
        return Err(Error::Shape("a batch cannot mix queried and query-free inputs".into()));
    }
    let (out, cache) = model.forward_batch(&images, queries.as_deref())?;
    let targets: Vec<Vec<LabeledBox>> = batch.iter().map(|b| b.targets.to_vec()).collect();
    let (parts, d_raw) = head_loss(&out, &targets, anchors, &model.config);
    let grad = model.backward(&cache, &d_raw);
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_derivative_matches_finite_difference() {
        for &x in &[-6.0, -1.3, 0.0, 0.7, 4.2] {
            for pos in [true, false] {
                let h = 1e-6;
                let (_, d) = focal(x, pos, 0.25, 2.0);
                let num = (focal(x + h, pos, 0.25, 2.0).0 - focal(x - h, pos, 0.25, 2.0).0) / (2.0 * h);
                assert!((d - num).abs() < 1e-7, "x={x} pos={pos}: {d} vs {num}");
            }
        }
    }

    #[test]
    fn focal_is_cross_entropy_at_gamma_zero() {
        let (l, _) = focal(0.3, true, 0.5, 0.0);
        assert!((l - 0.5 * (1.0 + (-0.3f64).exp()).ln()).abs() < 1e-12);
        // extreme logits stay finite
        assert!(focal(-200.0, true, 0.25, 2.0).0.is_finite());
        assert!(focal(200.0, false, 0.25, 2.0).0.is_finite());
    }

    #[test]
    fn smooth_l1_pieces() {
        let b = 1.0 / 9.0;
        assert_eq!(smooth_l1(0.0, b), (0.0, 0.0));
        let (l, d) = smooth_l1(1.0, b);
        assert!((l - (1.0 - b / 2.0)).abs() < 1e-12);
        assert_eq!(d, 1.0);
        // continuous at the knee
        let below = smooth_l1(b - 1e-12, b).0;
        let above = smooth_l1(b + 1e-12, b).0;
        assert!((below - above).abs() < 1e-10);
    }
}
