//! Synthesizes SLD, KLD and LLD queries from generated groundtruth.

use qmd::querysynth::{synth, QueryType};
use qmd::rng;
use qmd::shapes::{generate, ShapesConfig};

fn main() -> qmd::Result<()> {
    let (dataset, _) = generate(&ShapesConfig {
        num_images: 4,
        ..Default::default()
    })?;
    for img in &dataset.images {
        println!("{} ({} boxes)", img.image_id, img.boxes.len());
        for kind in [QueryType::Sld, QueryType::Kld, QueryType::Lld] {
            let mut r = rng::stream(0, &format!("example:{kind}:{}", img.image_id));
            let ex = synth(img, kind, &mut r)?;
            let names: Vec<&str> = ex
                .query
                .labels
                .iter()
                .map(|&l| dataset.vocab.name(l).unwrap_or("?"))
                .collect();
            let (y, x) = ex.query.slices();
            println!("  {kind}: {names:?} @ {y}/{x} -> {} target(s)", ex.target_boxes.len());
        }
    }
    Ok(())
}
