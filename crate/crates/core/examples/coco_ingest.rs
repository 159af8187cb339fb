//! Reads COCO-style groundtruth, reports problems and shows the dense labels.

use qmd::annotations::{parse_coco_json, validate};

const COCO: &str = r#"{
  "images": [{"id": 1, "width": 640, "height": 480}, {"id": 2, "width": 320, "height": 320}],
  "categories": [{"id": 18, "name": "dog"}, {"id": 3, "name": "car"}],
  "annotations": [
    {"id": 10, "image_id": 1, "category_id": 18, "bbox": [100, 120, 200, 150], "iscrowd": 0},
    {"id": 11, "image_id": 1, "category_id": 3, "bbox": [400, 300, 160, 120], "iscrowd": 0},
    {"id": 12, "image_id": 2, "category_id": 3, "bbox": [0, 0, 320, 320], "iscrowd": 1}
  ]
}"#;

fn main() -> qmd::Result<()> {
    let dataset = parse_coco_json(COCO.as_bytes())?;
    println!("vocabulary: {:?}", dataset.vocab.names());
    for img in &dataset.images {
        println!("image {} ({}x{})", img.image_id, img.width, img.height);
        for b in &img.boxes {
            println!(
                "  {:<4} [{:.3}, {:.3}, {:.3}, {:.3}]",
                dataset.vocab.name(b.label).unwrap_or("?"),
                b.bbox.xmin,
                b.bbox.ymin,
                b.bbox.xmax,
                b.bbox.ymax
            );
        }
    }
    let problems = validate(&dataset);
    println!("{} validation problem(s)", problems.len());
    Ok(())
}
