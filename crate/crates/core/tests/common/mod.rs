#![allow(dead_code)]

//! Helpers shared by the integration test targets.

use qmd::annotations::LabeledBox;
use qmd::encoding::{encode_query, QueryEncoding};
use qmd::querysynth::Query;
use qmd::rng::seeded;
use qmd::shapes::RasterImage;
use qmd::toydet::{compute_loss, generate_anchors, DetectorConfig, DetectorMode, LossInput, ToyDetector};
use rand::Rng;

pub const H: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

pub fn random_image(id: &str, n: usize, rng: &mut impl Rng) -> RasterImage {
    RasterImage {
        image_id: id.into(),
        height: n,
        width: n,
        pixels: (0..n * n * 3).map(|_| rng.random::<f32>()).collect(),
    }
}

/// Max relative error between analytic and numeric gradients over every
/// parameter of `model`.
pub fn max_relative_error(model: &ToyDetector<f64>, batch: &[LossInput<'_>]) -> (f64, usize) {
    let anchors = generate_anchors(&model.config);
    let (parts, grad) = compute_loss(model, batch, &anchors).unwrap();
    assert!(parts.positives > 0, "check needs positive anchors");
    let analytic: Vec<f64> = grad
        .named_tensors()
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_tensors = probe.params.tensors_mut().len();
    for t in 0..n_tensors {
        let len = probe.params.tensors_mut()[t].len();
        for i in 0..len {
            let orig = probe.params.tensors_mut()[t][i];
            probe.params.tensors_mut()[t][i] = orig + H;
            let plus = compute_loss(&probe, batch, &anchors).unwrap().0.total;
            probe.params.tensors_mut()[t][i] = orig - H;
            let minus = compute_loss(&probe, batch, &anchors).unwrap().0.total;
            probe.params.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    (worst, idx)
}

/// Worst relative gradient error of a freshly initialized miniature model.
pub fn gradient_error(mode: DetectorMode, spatial: bool, class_agnostic: bool, seed: u64) -> f64 {
    let mut cfg = DetectorConfig::miniature(2);
    cfg.spatial_encoding = spatial;
    cfg.class_agnostic = class_agnostic;
    let mut rng = seeded(seed);
    let model = ToyDetector::<f64>::init(cfg.clone(), mode, &mut rng).unwrap();
    let imgs: Vec<RasterImage> = (0..2).map(|i| random_image(&format!("g{i}"), 8, &mut rng)).collect();
    let targets = [
        vec![LabeledBox::new(1, 0.05, 0.10, 0.40, 0.45), LabeledBox::new(0, 0.45, 0.40, 1.0, 0.95)],
        vec![LabeledBox::new(0, 0.30, 0.20, 0.62, 0.70)],
    ];
    let queries: Vec<QueryEncoding> = vec![
        encode_query(&Query::new([0, 1], None), 2).unwrap(),
        encode_query(&Query::single(0), 2).unwrap(),
    ];
    let batch: Vec<LossInput<'_>> = (0..2)
        .map(|i| LossInput {
            image: &imgs[i],
            query: (mode == DetectorMode::QueryModulated).then(|| &queries[i]),
            targets: &targets[i],
        })
        .collect();
    if mode == DetectorMode::QueryModulated {
        // away from the singular point of the ℓ2 normalization
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let (_, cache) = model.forward_batch(&refs, Some(&queries)).unwrap();
        assert!(cache.embedding_norms().unwrap().iter().all(|&n| n > 1e-2));
    }
    let (err, n) = max_relative_error(&model, &batch);
    assert_eq!(n, model.num_parameters());
    err
}
