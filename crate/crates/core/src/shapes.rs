//! Deterministic synthetic-shapes detection data.
//!
//! Six shape classes drawn as flat-colored silhouettes on a flat background
//! with additive Gaussian pixel noise. Circle/ring and square/diamond are the
//! deliberately confusable pairs. Colors come from a fixed palette and are
//! drawn independently of the class.
//!
//! # Pixel file layout
//!
//! Each image is stored as `images/<image_id>.bin`:
//!
//! ```text
//! u32 LE height | u32 LE width | u32 LE channels (= 3) | f32 LE values, row-major H x W x C
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, Dataset, ImageRecord, LabelVocabulary, LabeledBox, Split};
use crate::error::{Error, Result};
use crate::evaluation::iou_unchecked;
use crate::provenance::Provenance;
use crate::rng;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const RASTER_HEADER_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Ring,
    Square,
    Diamond,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub const ALL_VALUES: [ShapeKind; 6] = [
        ShapeKind::Circle,
        ShapeKind::Ring,
        ShapeKind::Square,
        ShapeKind::Diamond,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Ring => "ring",
            ShapeKind::Square => "square",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
        }
    }

    /// Membership test in shape-local coordinates `u, v ∈ [-1, 1]`.
    fn covers(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Circle => u * u + v * v <= 1.0,
            ShapeKind::Ring => {
                let r2 = u * u + v * v;
                let inner = 1.0 - RING_WALL;
                r2 <= 1.0 && r2 >= inner * inner
            }
            ShapeKind::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            ShapeKind::Diamond => u.abs() + v.abs() <= 1.0,
            ShapeKind::Triangle => v <= 1.0 && u.abs() <= 0.5 * (v + 1.0),
            ShapeKind::Cross => {
                let arm = 1.0 / 3.0;
                (u.abs() <= arm && v.abs() <= 1.0) || (v.abs() <= arm && u.abs() <= 1.0)
            }
        }
    }
}

/// Ring wall thickness as a fraction of the outer radius.
const RING_WALL: f64 = 0.35;

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL_VALUES
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown shape {s:?}")))
    }
}

const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.85, 0.20],
    [0.85, 0.30, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.95, 0.95],
    [0.10, 0.10, 0.10],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub image_size: u32,
    pub num_images: usize,
    pub classes: Vec<ShapeKind>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side length bounds as fractions of the image side.
    pub min_size: f64,
    pub max_size: f64,
    pub max_pairwise_iou: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub split: Option<Split>,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_images: 200,
            classes: ShapeKind::ALL_VALUES.to_vec(),
            min_objects: 1,
            max_objects: 4,
            min_size: 0.15,
            max_size: 0.45,
            max_pairwise_iou: 0.3,
            noise_std: 0.05,
            seed: 42,
            split: None,
        }
    }
}

impl ShapesConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_size < 8 {
            return err("image size must be at least 8 pixels");
        }
        if self.classes.len() < 2 {
            return err("at least two shape classes are required");
        }
        if self
            .classes
            .iter()
            .enumerate()
            .any(|(i, c)| self.classes[..i].contains(c))
        {
            return err("shape classes must be distinct");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return err("object count range must satisfy 1 <= min <= max");
        }
        if !(self.min_size > 0.0 && self.min_size < self.max_size && self.max_size <= 1.0) {
            return err("size range must satisfy 0 < min < max <= 1");
        }
        if !(self.max_pairwise_iou >= 0.0 && self.max_pairwise_iou <= 1.0) {
            return err("pairwise IoU cap must lie in [0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return err("noise stddev must be non-negative");
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> LabelVocabulary {
        LabelVocabulary::new(self.classes.iter().map(|c| c.name().to_string()).collect())
            .expect("validated shape classes are distinct")
    }

    fn image_id(&self, index: usize) -> String {
        match self.split {
            Some(Split::Train) => format!("train-{index:05}"),
            Some(Split::Val) => format!("val-{index:05}"),
            Some(Split::Test) => format!("test-{index:05}"),
            None => format!("img-{index:05}"),
        }
    }
}

/// H x W x 3 image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RASTER_HEADER_BYTES + self.pixels.len() * 4);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(Self::CHANNELS as u32).to_le_bytes());
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(image_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let fmt = |offset, message: String| Error::Format { offset, message };
        if bytes.len() < RASTER_HEADER_BYTES {
            return Err(fmt(0, "truncated raster header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (word(0), word(4), word(8));
        if channels != Self::CHANNELS {
            return Err(fmt(8, format!("expected 3 channels, found {channels}")));
        }
        let expected = RASTER_HEADER_BYTES + height * width * channels * 4;
        if bytes.len() != expected {
            return Err(fmt(
                bytes.len().min(expected),
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let pixels = bytes[RASTER_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            image_id: image_id.into(),
            height,
            width,
            pixels,
        })
    }
}

struct Placed {
    kind: ShapeKind,
    label: usize,
    /// Pixel-space center and side length.
    cx: f64,
    cy: f64,
    side: f64,
    color: [f32; 3],
}

impl Placed {
    fn bbox(&self, size: f64) -> BBox {
        let h = 0.5 * self.side;
        BBox::new(
            (self.cx - h) / size,
            (self.cy - h) / size,
            (self.cx + h) / size,
            (self.cy + h) / size,
        )
    }
}

fn generate_one(config: &ShapesConfig, index: usize) -> Result<(ImageRecord, RasterImage)> {
    let image_id = config.image_id(index);
    let mut rng = rng::stream(config.seed, &image_id);
    let size = config.image_size as f64;
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let background = rng.random_range(0..PALETTE.len());

    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    let mut attempts = 0;
    while placed.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Placement {
                image_index: index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
        let label = rng.random_range(0..config.classes.len());
        let side = rng.random_range(config.min_size..=config.max_size) * size;
        let cx = rng.random_range(0.5 * side..=size - 0.5 * side);
        let cy = rng.random_range(0.5 * side..=size - 0.5 * side);
        let mut color = rng.random_range(0..PALETTE.len() - 1);
        if color >= background {
            color += 1;
        }
        let candidate = Placed {
            kind: config.classes[label],
            label,
            cx,
            cy,
            side,
            color: PALETTE[color],
        };
        let b = candidate.bbox(size);
        if placed
            .iter()
            .all(|p| iou_unchecked(&p.bbox(size), &b) <= config.max_pairwise_iou)
        {
            placed.push(candidate);
        }
    }

    let w = config.image_size as usize;
    let mut pixels = Vec::with_capacity(w * w * 3);
    for _ in 0..w * w {
        pixels.extend_from_slice(&PALETTE[background]);
    }
    for p in &placed {
        let half = 0.5 * p.side;
        let x0 = (p.cx - half).floor().max(0.0) as usize;
        let x1 = ((p.cx + half).ceil() as usize).min(w);
        let y0 = (p.cy - half).floor().max(0.0) as usize;
        let y1 = ((p.cy + half).ceil() as usize).min(w);
        for py in y0..y1 {
            for px in x0..x1 {
                let u = (px as f64 + 0.5 - p.cx) / half;
                let v = (py as f64 + 0.5 - p.cy) / half;
                if p.kind.covers(u, v) {
                    let i = (py * w + px) * 3;
                    pixels[i..i + 3].copy_from_slice(&p.color);
                }
            }
        }
    }
    if config.noise_std > 0.0 {
        let normal = Normal::new(0.0, config.noise_std).expect("validated noise stddev");
        for v in pixels.iter_mut() {
            let noisy = *v as f64 + normal.sample(&mut rng);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }

    let record = ImageRecord {
        image_id: image_id.clone(),
        width: config.image_size,
        height: config.image_size,
        boxes: placed
            .iter()
            .map(|p| LabeledBox {
                label: p.label,
                bbox: p.bbox(size),
            })
            .collect(),
    };
    let raster = RasterImage {
        image_id,
        height: w,
        width: w,
        pixels,
    };
    Ok((record, raster))
}

/// Generates `config.num_images` images and their groundtruth.
pub fn generate(config: &ShapesConfig) -> Result<(Dataset, Vec<RasterImage>)> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.num_images);
    let mut rasters = Vec::with_capacity(config.num_images);
    for index in 0..config.num_images {
        let (r, img) = generate_one(config, index)?;
        records.push(r);
        rasters.push(img);
    }
    Ok((
        Dataset {
            vocab: config.vocabulary(),
            images: records,
            split: config.split,
        },
        rasters,
    ))
}

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";

/// Writes `annotations.json` and one pixel file per image under `dir`.
pub fn export(
    dataset: &Dataset,
    images: &[RasterImage],
    dir: impl AsRef<Path>,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let dir = dir.as_ref();
    let image_dir = dir.join(IMAGES_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    dataset.save_internal(dir.join(ANNOTATIONS_FILE), provenance)?;
    for img in images {
        let path = image_dir.join(format!("{}.bin", img.image_id));
        fs::write(&path, img.to_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>, image_id: &str) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RasterImage::from_bytes(image_id, &bytes)
}

/// Loads a directory written by [`export`], images in annotation order.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Vec<RasterImage>)> {
    let dir = dir.as_ref();
    let dataset = Dataset::load_internal(dir.join(ANNOTATIONS_FILE))?;
    let images = dataset
        .images
        .iter()
        .map(|r| {
            let img = read_raster(dir.join(IMAGES_DIR).join(format!("{}.bin", r.image_id)), &r.image_id)?;
            if img.width != r.width as usize || img.height != r.height as usize {
                return Err(Error::Validation(format!(
                    "image {} pixel size {}x{} disagrees with annotations {}x{}",
                    r.image_id, img.width, img.height, r.width, r.height
                )));
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset, images))
}

/// Split sizes for a train/val/test shapes directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn iter(&self) -> impl Iterator<Item = (Split, usize)> {
        [
            (Split::Train, self.train),
            (Split::Val, self.val),
            (Split::Test, self.test),
        ]
        .into_iter()
    }
}

pub fn split_dir_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Generates and exports `train/`, `val/` and `test/` under `dir`. Each split
/// uses its own image-id namespace, so the splits never share a stream.
pub fn generate_splits(
    base: &ShapesConfig,
    sizes: SplitSizes,
    dir: impl AsRef<Path>,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let dir = dir.as_ref();
    for (split, n) in sizes.iter() {
        let config = ShapesConfig {
            num_images: n,
            split: Some(split),
            ..base.clone()
        };
        let (dataset, images) = generate(&config)?;
        export(&dataset, &images, dir.join(split_dir_name(split)), provenance)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_bound_rendered_pixels() {
        let config = ShapesConfig {
            num_images: 40,
            max_objects: 1,
            noise_std: 0.0,
            ..Default::default()
        };
        let (ds, images) = generate(&config).unwrap();
        for (rec, img) in ds.images.iter().zip(&images) {
            let bg = img.pixel(0, 0);
            let b = rec.boxes[0].bbox;
            let size = img.width as f64;
            let mut seen = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for y in 0..img.height {
                for x in 0..img.width {
                    if img.pixel(y, x) != bg {
                        let (cx, cy) = ((x as f64 + 0.5) / size, (y as f64 + 0.5) / size);
                        assert!(cx >= b.xmin && cx <= b.xmax && cy >= b.ymin && cy <= b.ymax);
                        seen = (seen.0.min(cx), seen.1.min(cy), seen.2.max(cx), seen.3.max(cy));
                    }
                }
            }
            // tips of triangles and diamonds may miss the last pixel row
            let px = 2.0 / size;
            assert!(seen.0 - b.xmin <= px && b.xmax - seen.2 <= px, "{rec:?}");
            assert!(seen.1 - b.ymin <= px && b.ymax - seen.3 <= px, "{rec:?}");
        }
    }

    #[test]
    fn deterministic() {
        let config = ShapesConfig {
            num_images: 10,
            ..Default::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn iou_cap_and_validity() {
        let config = ShapesConfig {
            num_images: 100,
            ..Default::default()
        };
        let (ds, _) = generate(&config).unwrap();
        assert!(crate::annotations::validate(&ds).is_empty());
        for img in &ds.images {
            for (i, a) in img.boxes.iter().enumerate() {
                for b in &img.boxes[i + 1..] {
                    assert!(iou_unchecked(&a.bbox, &b.bbox) <= config.max_pairwise_iou);
                }
            }
        }
    }

    #[test]
    fn impossible_placement_errors() {
        let config = ShapesConfig {
            num_images: 1,
            min_objects: 4,
            max_objects: 4,
            min_size: 0.9,
            max_size: 1.0,
            max_pairwise_iou: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            generate(&config),
            Err(Error::Placement { image_index: 0, .. })
        ));
    }

    #[test]
    fn raster_format() {
        let config = ShapesConfig {
            num_images: 1,
            ..Default::default()
        };
        let (_, images) = generate(&config).unwrap();
        let bytes = images[0].to_bytes();
        assert_eq!(bytes.len(), RASTER_HEADER_BYTES + 64 * 64 * 3 * 4);
        assert_eq!(&bytes[..4], &64u32.to_le_bytes());
        let back = RasterImage::from_bytes(images[0].image_id.clone(), &bytes).unwrap();
        assert_eq!(back, images[0]);
        assert!(RasterImage::from_bytes("x", &bytes[..100]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = ShapesConfig {
            classes: vec![ShapeKind::Circle],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ShapesConfig {
            min_size: 0.5,
            max_size: 0.4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ShapesConfig {
            classes: vec![ShapeKind::Circle, ShapeKind::Ring, ShapeKind::Circle],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
