//! Trains a query-modulated detector for a few hundred steps and queries it.
//!
//! `cargo run --release --example train_detector -- [steps]`

use qmd::annotations::Split;
use qmd::encoding::{detection_query, encode_query};
use qmd::evaluation::IouRegime;
use qmd::querysynth::{Query, QueryMix, TaskSchedule};
use qmd::shapes::{generate, ShapesConfig};
use qmd::toydet::{train, DetectorConfig, DetectorMode, PredictOptions, SplitData, TrainOptions};

fn main() -> qmd::Result<()> {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let split = |n, s| {
        generate(&ShapesConfig {
            num_images: n,
            split: Some(s),
            ..Default::default()
        })
    };
    let (train_ds, train_imgs) = split(400, Split::Train)?;
    let (val_ds, val_imgs) = split(40, Split::Val)?;

    let mut config = DetectorConfig::new(train_ds.num_classes());
    config.steps = steps;
    config.eval_interval = steps / 2;
    let run = train(
        SplitData::new(&train_ds, &train_imgs)?,
        Some(SplitData::new(&val_ds, &val_imgs)?),
        &config,
        &TrainOptions {
            mode: DetectorMode::QueryModulated,
            schedule: TaskSchedule::new(0.5, QueryMix::SLD_ONLY)?,
            regime: IouRegime::Ap50,
        },
    )?;
    println!(
        "loss {:.3} -> {:.3}, best step {}",
        run.loss_history[0],
        run.loss_history.last().unwrap(),
        run.best_step
    );

    let (img, rec) = (&val_imgs[0], &val_ds.images[0]);
    let opts = PredictOptions::default();
    let all = run.best.predict(img, Some(&detection_query(config.num_classes)), &opts)?;
    println!("{}: {} groundtruth, {} detections above 0.05", rec.image_id, rec.boxes.len(), all.len());
    let label = rec.boxes[0].label;
    let q = encode_query(&Query::single(label), config.num_classes)?;
    let answered = run.best.predict(img, Some(&q), &PredictOptions { merge_classes: true, ..opts })?;
    if let Some(top) = answered.first() {
        println!("query {:?}: top box {:?} score {:.2}", val_ds.vocab.name(label), top.bbox, top.score);
    }
    Ok(())
}
