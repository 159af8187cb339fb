//! Writes a small train/val/test shapes directory.
//!
//! `cargo run --example generate_shapes -- /tmp/shapes`

use qmd::shapes::{generate_splits, load_dir, ShapesConfig, SplitSizes};

fn main() -> qmd::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "shapes".into());
    let sizes = SplitSizes {
        train: 200,
        val: 20,
        test: 50,
    };
    generate_splits(&ShapesConfig::default(), sizes, &dir, None)?;
    let (test, images) = load_dir(format!("{dir}/test"))?;
    let boxes: usize = test.images.iter().map(|i| i.boxes.len()).sum();
    println!(
        "{dir}: {} test images of {}x{}, {boxes} objects, classes {:?}",
        images.len(),
        images[0].width,
        images[0].height,
        test.vocab.names()
    );
    Ok(())
}
