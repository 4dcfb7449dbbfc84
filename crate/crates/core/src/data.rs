//! Synthetic shape scenes, photometric corruptions and image-directory ingestion.
//!
//! Scenes are 96×96 RGB: a lit backdrop (bright top, dark bottom, warm left,
//! cool right) with per-pixel texture, plus one to three flat-coloured shapes.
//! Shape classes stand in for road-scene classes: square = vehicle,
//! triangle = person, circle = cycle. Circles are drawn with probability 0.15
//! so one class is under-represented.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::rng::{rng_for, stream_id};

pub const BACKGROUND: u8 = 0;

/// Shape classes; mask ids are `1..=3`, 0 is background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    Square = 1,
    Triangle = 2,
    Circle = 3,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Square, ShapeClass::Triangle, ShapeClass::Circle];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(ShapeClass::Square),
            2 => Some(ShapeClass::Triangle),
            3 => Some(ShapeClass::Circle),
            _ => None,
        }
    }

    /// Road-scene class this shape stands in for, used in report labels.
    pub fn proxy_name(self) -> &'static str {
        match self {
            ShapeClass::Square => "vehicle",
            ShapeClass::Triangle => "person",
            ShapeClass::Circle => "cycle",
        }
    }
}

/// Report label for a mask id.
pub fn class_name(id: usize) -> &'static str {
    u8::try_from(id)
        .ok()
        .and_then(ShapeClass::from_id)
        .map_or("background", ShapeClass::proxy_name)
}

/// Number of mask classes including background.
pub const NUM_MASK_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub class: ShapeClass,
    pub center_x: f32,
    pub center_y: f32,
    /// Half side (square), radius (circle) or half height (triangle).
    pub size: f32,
}

impl Shape {
    /// Whether the point `(px, py)` (pixel centres are at `+0.5`) lies inside.
    pub fn contains(&self, px: f32, py: f32) -> bool {
        let dx = px - self.center_x;
        let dy = py - self.center_y;
        let s = self.size;
        match self.class {
            ShapeClass::Square => dx.abs() <= s && dy.abs() <= s,
            ShapeClass::Circle => dx * dx + dy * dy <= s * s,
            // apex at (cx, cy - s), base at cy + s with half width s
            ShapeClass::Triangle => {
                let t = (dy + s) / (2.0 * s);
                (0.0..=1.0).contains(&t) && dx.abs() <= s * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid("mask label count does not match dimensions"));
        }
        Ok(Self { height, width, labels })
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub mask: Mask,
    /// Class with the most visible pixels.
    pub class_label: u8,
    /// Analytic shapes in drawing order (empty when loaded from disk).
    pub shapes: Vec<Shape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Day,
    Night,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Day => "day",
            Domain::Night => "night",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool {
    pub images: Vec<ImageTensor>,
    pub domain: Domain,
    /// Files that could not be decoded during ingestion.
    pub skipped: usize,
}

impl UnlabeledPool {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Total samples before the train/test split.
    pub n_samples: usize,
    pub test_fraction: f64,
    pub image_size: usize,
    pub max_shapes: usize,
    pub circle_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_samples: 600,
            test_fraction: 0.2,
            image_size: 96,
            max_shapes: 3,
            circle_fraction: 0.15,
            split_seed: 0,
        }
    }
}

fn render_sample(size: usize, max_shapes: usize, circle_fraction: f64, rng: &mut ChaCha8Rng) -> LabeledSample {
    let s = size as f32;
    let texture = Normal::new(0.0f32, 6.0).unwrap();
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(110.0..150.0));
    let light = rng.random_range(90.0..130.0f32);
    let tint = rng.random_range(60.0..90.0f32);
    let background = |c: usize, y: usize, x: usize| -> f32 {
        let vertical = light * (0.5 - (y as f32 + 0.5) / s);
        let horizontal = tint * ((x as f32 + 0.5) / s - 0.5);
        base[c] + vertical + [horizontal, 0.0, -horizontal][c]
    };

    let n_shapes = rng.random_range(1..=max_shapes.max(1));
    let mut shapes: Vec<Shape> = Vec::with_capacity(n_shapes);
    let mut colors = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let class = if rng.random_bool(circle_fraction) {
            ShapeClass::Circle
        } else if rng.random_bool(0.5) {
            ShapeClass::Square
        } else {
            ShapeClass::Triangle
        };
        let half = rng.random_range(10.0..20.0f32);
        // Prefer positions that do not overlap earlier shapes.
        let mut placed = (0.0, 0.0);
        for _ in 0..20 {
            placed = (rng.random_range(half..s - half), rng.random_range(half..s - half));
            let clear = shapes.iter().all(|o| {
                (o.center_x - placed.0).abs() > o.size + half || (o.center_y - placed.1).abs() > o.size + half
            });
            if clear {
                break;
            }
        }
        shapes.push(Shape {
            class,
            center_x: placed.0,
            center_y: placed.1,
            size: half,
        });
        let reference: [f32; 3] = std::array::from_fn(|c| background(c, placed.1 as usize, placed.0 as usize));
        let mut color = [0.0f32; 3];
        for _ in 0..20 {
            color = std::array::from_fn(|_| rng.random_range(0.0..255.0f32));
            let contrast: f32 = color.iter().zip(&reference).map(|(a, b)| (a - b).abs()).sum();
            if contrast > 150.0 {
                break;
            }
        }
        colors.push(color);
    }

    let mut image = ImageTensor::filled(size, size, 3, ValueRange::Byte, 0.0);
    let mut labels = vec![BACKGROUND; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let top = shapes.iter().rposition(|sh| sh.contains(px, py));
            if let Some(i) = top {
                labels[y * size + x] = shapes[i].class.id();
            }
            for c in 0..3 {
                let v = match top {
                    Some(i) => colors[i][c],
                    None => background(c, y, x),
                };
                let v = (v + texture.sample(rng)).round().clamp(0.0, 255.0);
                image.set(c, y, x, v);
            }
        }
    }

    let mut area = [0usize; NUM_MASK_CLASSES];
    for &l in &labels {
        area[l as usize] += 1;
    }
    let class_label = (1..NUM_MASK_CLASSES)
        .max_by_key(|&c| (area[c], std::cmp::Reverse(c)))
        .unwrap() as u8;
    LabeledSample {
        image,
        mask: Mask {
            height: size,
            width: size,
            labels,
        },
        class_label,
        shapes,
    }
}

/// Deterministic train/test scenes. Sample `i` depends only on `(seed, i)`.
pub fn gen_shapes_dataset(spec: &DatasetSpec, seed: u64) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if spec.n_samples < 2 {
        return Err(Error::invalid("need at least two samples to split"));
    }
    if spec.image_size == 0 || !spec.image_size.is_multiple_of(3) {
        return Err(Error::invalid("image_size must be a positive multiple of 3"));
    }
    if !(0.0..=1.0).contains(&spec.circle_fraction) {
        return Err(Error::invalid("circle_fraction must lie in [0, 1]"));
    }
    let stream = stream_id("shapes");
    let samples: Vec<LabeledSample> = (0..spec.n_samples)
        .map(|i| {
            let mut rng = rng_for(seed ^ stream, i as u64);
            render_sample(spec.image_size, spec.max_shapes, spec.circle_fraction, &mut rng)
        })
        .collect();

    let n_test = ((spec.n_samples as f64 * spec.test_fraction).round() as usize).clamp(1, spec.n_samples - 1);
    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng_for(spec.split_seed, stream_id("split")));
    let mut is_test = vec![false; spec.n_samples];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.into_iter().enumerate() {
        if is_test[i] {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    let mut counts = [0usize; NUM_MASK_CLASSES];
    for s in train.iter().chain(&test) {
        for sh in &s.shapes {
            counts[sh.class.id() as usize] += 1;
        }
    }
    log::info!(
        "shapes dataset: {} train / {} test; shape counts square={} triangle={} circle={}",
        train.len(),
        test.len(),
        counts[1],
        counts[2],
        counts[3]
    );
    Ok((train, test))
}

/// Unlabeled scenes from an independent seed stream (no overlap with the
/// labeled set for the same `seed`).
pub fn gen_unlabeled_images(n: usize, image_size: usize, seed: u64) -> Vec<ImageTensor> {
    let stream = stream_id("unlabeled");
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed ^ stream, i as u64);
            render_sample(image_size, 3, 0.15, &mut rng).image
        })
        .collect()
}

fn in_byte_space(image: &ImageTensor, f: impl FnOnce(&ImageTensor) -> ImageTensor) -> ImageTensor {
    let bytes = image.to_range(ValueRange::Byte);
    f(&bytes).to_range(image.range())
}

/// Night proxy: brightness × 0.25 plus Gaussian noise (σ = 3 on the 0–255
/// scale), clamped. Pixels that are exactly black carry no signal and stay 0.
pub fn apply_night(image: &ImageTensor, seed: u64) -> ImageTensor {
    let mut rng = rng_for(seed, stream_id("night"));
    let noise = Normal::new(0.0f32, 3.0).unwrap();
    in_byte_space(image, |img| {
        img.map_clamped(|v| {
            let n = noise.sample(&mut rng);
            if v == 0.0 {
                0.0
            } else {
                (0.25 * v + n).round()
            }
        })
    })
}

/// I.i.d. zero-mean Gaussian noise on the 0–255 scale, clamped and rounded.
pub fn add_gaussian_noise(image: &ImageTensor, sigma: f32, seed: u64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = rng_for(seed, stream_id("gaussian"));
    let noise = Normal::new(0.0f32, sigma).unwrap();
    Ok(in_byte_space(image, |img| {
        img.map_clamped(|v| (v + noise.sample(&mut rng)).round())
    }))
}

/// Night-shifted copy of a labeled sample (masks unchanged).
pub fn night_sample(sample: &LabeledSample, seed: u64) -> LabeledSample {
    LabeledSample {
        image: apply_night(&sample.image, seed),
        ..sample.clone()
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// Square centre crop, then resize to `target_size`² (RGB8).
pub fn center_crop_resize(img: &image::RgbImage, target_size: u32) -> image::RgbImage {
    let side = img.width().min(img.height());
    let x0 = (img.width() - side) / 2;
    let y0 = (img.height() - side) / 2;
    let cropped = image::imageops::crop_imm(img, x0, y0, side, side).to_image();
    if side == target_size {
        cropped
    } else {
        image::imageops::resize(
            &cropped,
            target_size,
            target_size,
            image::imageops::FilterType::Triangle,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub filename: String,
    pub class_label: u8,
    pub mask_filename: String,
    pub domain_tag: Domain,
}

pub const MANIFEST: &str = "manifest.csv";

/// Decodes every image in `dir` (or those listed in its manifest), sorted by
/// filename, centre-cropped and resized to `target_size`.
pub fn load_image_dir(dir: &Path, target_size: usize, domain: Domain) -> Result<UnlabeledPool> {
    if target_size == 0 || !target_size.is_multiple_of(3) {
        return Err(Error::invalid("target_size must be a positive multiple of 3"));
    }
    let manifest = dir.join(MANIFEST);
    let mut files: Vec<PathBuf> = if manifest.exists() {
        let mut reader = csv::Reader::from_path(&manifest)?;
        reader
            .deserialize::<ManifestRow>()
            .map(|row| row.map(|r| dir.join(r.filename)))
            .collect::<std::result::Result<_, _>>()?
    } else {
        fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect()
    };
    files.sort();

    let mut images = Vec::with_capacity(files.len());
    let mut skipped = 0;
    for path in &files {
        match image::open(path) {
            Ok(img) => {
                let rgb = center_crop_resize(&img.to_rgb8(), target_size as u32);
                images.push(ImageTensor::from_rgb8(&rgb));
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::invalid(format!(
            "no readable images in {} ({skipped} skipped)",
            dir.display()
        )));
    }
    Ok(UnlabeledPool {
        images,
        domain,
        skipped,
    })
}

/// Writes images, gray-level masks and a manifest to `dir`.
pub fn save_dataset(dir: &Path, samples: &[LabeledSample], domain: Domain) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join(MANIFEST))?;
    for (i, s) in samples.iter().enumerate() {
        let filename = format!("{i:05}.png");
        let mask_filename = format!("{i:05}_mask.png");
        s.image.save_png(&dir.join(&filename))?;
        let mask = image::GrayImage::from_raw(s.mask.width as u32, s.mask.height as u32, s.mask.labels.clone())
            .expect("mask dimensions");
        mask.save(dir.join(&mask_filename))?;
        writer.serialize(ManifestRow {
            filename,
            class_label: s.class_label,
            mask_filename,
            domain_tag: domain,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledSample>> {
    let mut reader = csv::Reader::from_path(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let image = ImageTensor::from_rgb8(&image::open(dir.join(&row.filename))?.to_rgb8());
        let mask_img = image::open(dir.join(&row.mask_filename))?.to_luma8();
        let mask = Mask::new(
            mask_img.height() as usize,
            mask_img.width() as usize,
            mask_img.into_raw(),
        )?;
        if mask.height != image.height() || mask.width != image.width() {
            return Err(Error::invalid(format!(
                "{}: mask size differs from image",
                row.mask_filename
            )));
        }
        out.push(LabeledSample {
            image,
            mask,
            class_label: row.class_label,
            shapes: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize) -> DatasetSpec {
        DatasetSpec {
            n_samples: n,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_shapes_dataset(&small_spec(12), 5).unwrap();
        let b = gen_shapes_dataset(&small_spec(12), 5).unwrap();
        assert_eq!(a, b);
        let c = gen_shapes_dataset(&small_spec(12), 6).unwrap();
        assert_ne!(a.0[0].image, c.0[0].image);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let (train, test) = gen_shapes_dataset(&small_spec(50), 1).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
        for t in &test {
            assert!(train.iter().all(|s| s.image != t.image));
        }
        assert!(gen_shapes_dataset(&small_spec(1), 1).is_err());
    }

    #[test]
    fn masks_follow_the_analytic_shapes() {
        let (train, _) = gen_shapes_dataset(&small_spec(30), 2).unwrap();
        for s in &train {
            assert!(!s.shapes.is_empty() && s.shapes.len() <= 3);
            assert!(s.image.height() % 3 == 0);
            for y in 0..s.mask.height {
                for x in 0..s.mask.width {
                    let label = s.mask.get(y, x);
                    let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                    let inside = s.shapes.iter().any(|sh| sh.class.id() == label && sh.contains(px, py));
                    if label == BACKGROUND {
                        assert!(!s.shapes.iter().any(|sh| sh.contains(px, py)));
                    } else {
                        assert!(inside, "pixel ({x},{y}) labeled {label} outside its shape");
                    }
                }
            }
            for sh in &s.shapes {
                assert!(sh.size >= 10.0);
            }
        }
    }

    #[test]
    fn circles_are_under_represented() {
        let spec = DatasetSpec {
            n_samples: 1000,
            ..DatasetSpec::default()
        };
        let (train, test) = gen_shapes_dataset(&spec, 3).unwrap();
        let shapes: Vec<ShapeClass> = train
            .iter()
            .chain(&test)
            .flat_map(|s| s.shapes.iter().map(|sh| sh.class))
            .collect();
        let circles = shapes.iter().filter(|&&c| c == ShapeClass::Circle).count() as f64;
        let frac = circles / shapes.len() as f64;
        assert!((frac - 0.15).abs() <= 0.03, "circle fraction {frac}");
    }

    #[test]
    fn night_examples() {
        let black = ImageTensor::filled(6, 6, 3, ValueRange::Byte, 0.0);
        assert_eq!(apply_night(&black, 1), black);

        let (train, _) = gen_shapes_dataset(&small_spec(5), 4).unwrap();
        for s in &train {
            let n = apply_night(&s.image, 9);
            assert!(n.same_dims(&s.image));
            assert!(
                (n.mean() - 0.25 * s.image.mean()).abs() < 0.5,
                "{} vs {}",
                n.mean(),
                s.image.mean()
            );
            assert!(n.values().iter().all(|&v| (0.0..=255.0).contains(&v)));
            assert_eq!(n, apply_night(&s.image, 9));
        }
    }

    #[test]
    fn gaussian_noise_examples() {
        let img = ImageTensor::filled(64, 64, 3, ValueRange::Byte, 128.0);
        assert_eq!(add_gaussian_noise(&img, 0.0, 1).unwrap(), img);
        assert!(add_gaussian_noise(&img, -1.0, 1).is_err());
        for sigma in [5.0f32, 10.0, 15.0] {
            let out = add_gaussian_noise(&img, sigma, 7).unwrap();
            assert_eq!(out, add_gaussian_noise(&img, sigma, 7).unwrap());
            let diffs: Vec<f64> = out.values().iter().map(|&v| v as f64 - 128.0).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
            let sd = var.sqrt();
            assert!(
                (sd - sigma as f64).abs() <= 0.05 * sigma as f64,
                "sigma {sigma}: sd {sd}"
            );
        }
    }

    #[test]
    fn corruptions_keep_range_mode() {
        let img = ImageTensor::filled(9, 9, 3, ValueRange::Byte, 100.0).to_range(ValueRange::Centered);
        let out = add_gaussian_noise(&img, 5.0, 3).unwrap();
        assert_eq!(out.range(), ValueRange::Centered);
        assert!(out.same_dims(&img));
    }

    fn write_png(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
        image::RgbImage::from_fn(w, h, |x, y| image::Rgb(f(x, y)))
            .save(path)
            .unwrap();
    }

    #[test]
    fn image_dir_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "e.png", "b.png", "d.png"] {
            let v = name.as_bytes()[0];
            write_png(&dir.path().join(name), 12, 12, |_, _| [v, v, v]);
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let pool = load_image_dir(dir.path(), 12, Domain::Night).unwrap();
        assert_eq!(pool.len(), 5);
        let firsts: Vec<f32> = pool.images.iter().map(|i| i.get(0, 0, 0)).collect();
        assert_eq!(firsts, vec![97.0, 98.0, 99.0, 100.0, 101.0]);
        assert_eq!(pool.domain, Domain::Night);

        fs::write(dir.path().join("f.png"), b"not a png").unwrap();
        let pool = load_image_dir(dir.path(), 12, Domain::Day).unwrap();
        assert_eq!((pool.len(), pool.skipped), (5, 1));

        let empty = tempfile::tempdir().unwrap();
        assert!(load_image_dir(empty.path(), 12, Domain::Day).is_err());
        assert!(load_image_dir(dir.path(), 10, Domain::Day).is_err());
    }

    #[test]
    fn non_square_inputs_are_center_cropped() {
        let dir = tempfile::tempdir().unwrap();
        // 100 wide x 80 high; columns 0..10 and 90..100 are red and must be cropped away
        write_png(&dir.path().join("wide.png"), 100, 80, |x, _| {
            if x < 10 || x >= 90 {
                [255, 0, 0]
            } else {
                [0, 0, 255]
            }
        });
        let pool = load_image_dir(dir.path(), 96, Domain::Day).unwrap();
        let img = &pool.images[0];
        assert_eq!((img.height(), img.width()), (96, 96));
        assert!(img.values()[..96 * 96].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = gen_shapes_dataset(&small_spec(6), 8).unwrap();
        save_dataset(dir.path(), &train, Domain::Day).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), train.len());
        for (a, b) in loaded.iter().zip(&train) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.class_label, b.class_label);
        }
        // ingestion of the same layout reads only the listed images
        let pool = load_image_dir(dir.path(), 96, Domain::Day).unwrap();
        assert_eq!(pool.len(), train.len());
        assert_eq!(pool.images[0], train[0].image);
    }
}
