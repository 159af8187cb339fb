//! Scores hand-made detections: class-agnostic query AP, detection mAP and
//! AR@1, plus the post-processing baseline.

use qmd::annotations::{BBox, LabeledBox, LabelVocabulary};
use qmd::evaluation::{post_process_baseline, DetectionImage, EvalCase, EvalReport, IouRegime, ReportInputs, ScoredBox};
use qmd::querysynth::Query;

fn det(label: usize, score: f64, b: [f64; 4]) -> ScoredBox {
    ScoredBox {
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        label,
        score,
    }
}

fn main() -> qmd::Result<()> {
    let vocab = LabelVocabulary::new(vec!["circle".into(), "square".into()])?;
    let gt = vec![
        LabeledBox::new(0, 0.1, 0.1, 0.4, 0.4),
        LabeledBox::new(1, 0.6, 0.6, 0.9, 0.9),
    ];
    let dets = vec![
        det(0, 0.9, [0.12, 0.1, 0.4, 0.42]),
        det(1, 0.8, [0.1, 0.1, 0.4, 0.4]),
        det(1, 0.6, [0.6, 0.62, 0.9, 0.9]),
    ];

    // a detector answering "circle" by pruning its own output
    let query = Query::single(0);
    let answered = post_process_baseline(&dets, &query);
    let inputs = ReportInputs {
        sld: vec![EvalCase {
            image_id: "a".into(),
            query,
            groundtruth: vec![gt[0]],
            detections: answered,
        }],
        det: vec![DetectionImage {
            image_id: "a".into(),
            detections: dets,
            groundtruth: gt,
        }],
        ..Default::default()
    };
    for regime in [IouRegime::Ap50, IouRegime::Ap5095] {
        let report = EvalReport::build(&inputs, &vocab, regime);
        println!("{regime:?}\n{}", report.to_text("post-processed"));
    }
    Ok(())
}
