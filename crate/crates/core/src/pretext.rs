//! Pretext transforms g(·) and their automatically generated labels.
//!
//! Jigsaw: the image is cut into `grid_n × grid_n` tiles; output cell `i`
//! receives input tile `perm[i]`. Each placed tile first goes through the
//! random gap: a centred crop of `(tile_h - gap) × (tile_w - gap)` is moved to a
//! uniformly random offset in `[0, gap]²` inside its cell and the remaining
//! border is set to `fill_value`. `gap` is the total slack per axis, not a
//! per-side margin, so `gap = 20` still leaves a 12-pixel crop of a 32-pixel tile.
//!
//! Rotation: class `k` rotates by `k · 360 / K` degrees counter-clockwise about
//! the image centre. Pixels rotated out of frame are dropped and uncovered
//! pixels are filled with 0. Quarter turns of square images are exact pixel
//! permutations; other angles use nearest-neighbour sampling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::permset::{Permutation, PermutationSet};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JigsawConfig {
    pub grid_n: usize,
    pub gap: usize,
    pub fill_value: f32,
}

impl Default for JigsawConfig {
    fn default() -> Self {
        Self {
            grid_n: 3,
            gap: 20,
            fill_value: 0.0,
        }
    }
}

impl JigsawConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 2 {
            return Err(Error::invalid("jigsaw grid_n must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotationConfig {
    pub k: usize,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self { k: 4 }
    }
}

impl RotationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("rotation needs K >= 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PretextTask {
    Jigsaw,
    Rotation,
}

impl PretextTask {
    pub fn name(self) -> &'static str {
        match self {
            PretextTask::Jigsaw => "jigsaw",
            PretextTask::Rotation => "rotation",
        }
    }
}

impl std::str::FromStr for PretextTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jigsaw" => Ok(PretextTask::Jigsaw),
            "rotation" => Ok(PretextTask::Rotation),
            other => Err(Error::invalid(format!("unknown pretext task `{other}`"))),
        }
    }
}

/// A transformed image with the class of the transform that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PretextSample {
    pub image: ImageTensor,
    pub label: usize,
    pub task: PretextTask,
}

/// Fully configured pretext generator.
#[derive(Clone, Debug, PartialEq)]
pub enum Pretext {
    Jigsaw {
        permutations: PermutationSet,
        config: JigsawConfig,
    },
    Rotation(RotationConfig),
}

impl Pretext {
    pub fn task(&self) -> PretextTask {
        match self {
            Pretext::Jigsaw { .. } => PretextTask::Jigsaw,
            Pretext::Rotation(_) => PretextTask::Rotation,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Pretext::Jigsaw { permutations, .. } => permutations.len(),
            Pretext::Rotation(cfg) => cfg.k,
        }
    }

    /// Draws a label uniformly and applies the matching transform.
    pub fn make_sample(&self, image: &ImageTensor, seed: u64) -> Result<PretextSample> {
        make_pretext_sample(image, self, seed)
    }
}

/// Moves a centred crop of the tile to a random offset, filling the rest.
pub fn apply_gap(tile: &ImageTensor, gap: usize, fill_value: f32, seed: u64) -> Result<ImageTensor> {
    if gap >= tile.height().min(tile.width()) {
        return Err(Error::invalid(format!(
            "gap {gap} must be smaller than tile {}x{}",
            tile.height(),
            tile.width()
        )));
    }
    if gap == 0 {
        return Ok(tile.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (oy, ox) = (rng.random_range(0..=gap), rng.random_range(0..=gap));
    let (ch, cw) = (tile.height() - gap, tile.width() - gap);
    let crop = tile.crop(gap / 2, gap / 2, ch, cw);
    let mut out = ImageTensor::filled(tile.height(), tile.width(), tile.channels(), tile.range(), fill_value);
    out.paste(&crop, oy, ox);
    Ok(out)
}

/// Rearranges tiles so that output cell `i` holds (gap-processed) input tile `perm[i]`.
pub fn jigsaw_transform(
    image: &ImageTensor,
    perm: &Permutation,
    config: &JigsawConfig,
    seed: u64,
) -> Result<ImageTensor> {
    config.validate()?;
    let n = config.grid_n;
    if !image.height().is_multiple_of(n) || !image.width().is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "image {}x{} not divisible into a {n}x{n} grid; crop first",
            image.height(),
            image.width()
        )));
    }
    if perm.n_tiles() != n * n {
        return Err(Error::invalid(format!(
            "permutation has {} tiles, grid needs {}",
            perm.n_tiles(),
            n * n
        )));
    }
    let (th, tw) = (image.height() / n, image.width() / n);
    if config.gap >= th.min(tw) {
        return Err(Error::invalid(format!(
            "gap {} must be smaller than tile {th}x{tw}",
            config.gap
        )));
    }
    let mut out = image.clone();
    for (dst, &src) in perm.mapping().iter().enumerate() {
        let tile = image.crop((src / n) * th, (src % n) * tw, th, tw);
        let tile = apply_gap(&tile, config.gap, config.fill_value, derive_seed(seed, dst as u64))?;
        out.paste(&tile, (dst / n) * th, (dst % n) * tw);
    }
    Ok(out)
}

/// Exact `(cos, sin)` for quarter turns, trigonometric otherwise.
fn rotation_terms(k: usize, classes: usize) -> (f64, f64) {
    if (4 * k).is_multiple_of(classes) {
        match (4 * k / classes) % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let theta = (k as f64) * std::f64::consts::TAU / classes as f64;
        (theta.cos(), theta.sin())
    }
}

/// Rotates counter-clockwise by `k · 360 / K` degrees about the image centre.
pub fn rotate_transform(image: &ImageTensor, k: usize, config: &RotationConfig) -> Result<ImageTensor> {
    config.validate()?;
    if k >= config.k {
        return Err(Error::invalid(format!(
            "rotation class {k} out of range 0..{}",
            config.k
        )));
    }
    if k == 0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    let (cos, sin) = rotation_terms(k, config.k);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = ImageTensor::filled(h, w, image.channels(), image.range(), 0.0);
    for y in 0..h {
        for x in 0..w {
            // Image y grows downwards; rotate in a y-up frame and map back.
            let u = x as f64 - cx;
            let v = cy - y as f64;
            let su = u * cos + v * sin;
            let sv = -u * sin + v * cos;
            let sx = (cx + su).round();
            let sy = (cy - sv).round();
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            for c in 0..image.channels() {
                out.set(c, y, x, image.get(c, sy as usize, sx as usize));
            }
        }
    }
    Ok(out)
}

/// Draws a label uniformly from the pretext's classes and transforms `image` accordingly.
pub fn make_pretext_sample(image: &ImageTensor, pretext: &Pretext, seed: u64) -> Result<PretextSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = rng.random_range(0..pretext.num_classes());
    let image = match pretext {
        Pretext::Jigsaw { permutations, config } => {
            let perm = permutations.get(label).expect("label within set");
            jigsaw_transform(image, perm, config, rng.next_u64())?
        }
        Pretext::Rotation(cfg) => rotate_transform(image, label, cfg)?,
    };
    Ok(PretextSample {
        image,
        label,
        task: pretext.task(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueRange;
    use crate::permset::generate_permutation_set;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn gray(h: usize, w: usize, values: Vec<f32>) -> ImageTensor {
        ImageTensor::new(h, w, 1, ValueRange::Byte, values).unwrap()
    }

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w * c).map(|_| rng.random_range(0..=255) as f32).collect();
        ImageTensor::new(h, w, c, ValueRange::Byte, values).unwrap()
    }

    fn no_gap(grid_n: usize) -> JigsawConfig {
        JigsawConfig {
            grid_n,
            gap: 0,
            fill_value: 0.0,
        }
    }

    #[test]
    fn identity_jigsaw_is_bit_exact() {
        let img = random_image(1, 9, 12, 3);
        let out = jigsaw_transform(&img, &Permutation::identity(9), &no_gap(3), 5).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn pairwise_tile_swap() {
        // quadrants 10, 20 / 30, 40
        let mut v = vec![0.0; 16];
        for y in 0..4 {
            for x in 0..4 {
                v[y * 4 + x] = (10 * (1 + (y / 2) * 2 + x / 2)) as f32;
            }
        }
        let img = gray(4, 4, v);
        let perm = Permutation::new(vec![1, 0, 3, 2]).unwrap();
        let out = jigsaw_transform(&img, &perm, &no_gap(2), 0).unwrap();
        let quadrant =
            |y0: usize, x0: usize| -> Vec<f32> { (0..4).map(|i| out.get(0, y0 + i / 2, x0 + i % 2)).collect() };
        assert_eq!(quadrant(0, 0), vec![20.0; 4]);
        assert_eq!(quadrant(0, 2), vec![10.0; 4]);
        assert_eq!(quadrant(2, 0), vec![40.0; 4]);
        assert_eq!(quadrant(2, 2), vec![30.0; 4]);
    }

    #[test]
    fn jigsaw_rejects_bad_inputs() {
        let img = random_image(2, 10, 9, 1);
        assert!(jigsaw_transform(&img, &Permutation::identity(9), &no_gap(3), 0).is_err());
        let img = random_image(2, 9, 9, 1);
        assert!(jigsaw_transform(&img, &Permutation::identity(4), &no_gap(3), 0).is_err());
        let cfg = JigsawConfig { gap: 3, ..no_gap(3) };
        assert!(jigsaw_transform(&img, &Permutation::identity(9), &cfg, 0).is_err());
    }

    #[test]
    fn gap_zero_is_identity() {
        let tile = random_image(3, 10, 10, 3);
        assert_eq!(apply_gap(&tile, 0, 0.0, 9).unwrap(), tile);
    }

    #[test]
    fn gap_keeps_exactly_the_crop() {
        let tile = ImageTensor::filled(10, 10, 1, ValueRange::Byte, 200.0);
        for seed in 0..20 {
            let out = apply_gap(&tile, 4, 0.0, seed).unwrap();
            let kept = out.values().iter().filter(|&&v| v == 200.0).count();
            let filled = out.values().iter().filter(|&&v| v == 0.0).count();
            assert_eq!((kept, filled), (36, 64));
        }
        assert!(apply_gap(&tile, 10, 0.0, 0).is_err());
    }

    fn gap_offset(out: &ImageTensor) -> (usize, usize) {
        let h = out.height();
        let idx = out.values().iter().position(|&v| v != 0.0).unwrap();
        (idx / h, idx % h)
    }

    #[test]
    fn gap_offsets_are_uniform() {
        let tile = ImageTensor::filled(10, 10, 1, ValueRange::Byte, 1.0);
        let a = apply_gap(&tile, 4, 0.0, 77).unwrap();
        assert_eq!(a, apply_gap(&tile, 4, 0.0, 77).unwrap());

        let draws = 1000;
        let mut counts = [0usize; 25];
        for seed in 0..draws {
            let (oy, ox) = gap_offset(&apply_gap(&tile, 4, 0.0, seed).unwrap());
            assert!(oy <= 4 && ox <= 4);
            counts[oy * 5 + ox] += 1;
        }
        let expected = draws as f64 / 25.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(24.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn rotation_examples() {
        let cfg = RotationConfig::default();
        let img = gray(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rotate_transform(&img, 0, &cfg).unwrap(), img);
        // [[a,b],[c,d]] -> [[b,d],[a,c]]
        let r = rotate_transform(&img, 1, &cfg).unwrap();
        assert_eq!(r.values(), &[2.0, 4.0, 1.0, 3.0]);
        assert!(rotate_transform(&img, 4, &cfg).is_err());
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let cfg = RotationConfig::default();
        let img = random_image(4, 7, 7, 3);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate_transform(&cur, 1, &cfg).unwrap();
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn half_turn_of_non_square_image_is_a_flip() {
        let cfg = RotationConfig::default();
        let img = random_image(5, 4, 6, 1);
        let r = rotate_transform(&img, 2, &cfg).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(r.get(0, y, x), img.get(0, 3 - y, 5 - x));
            }
        }
    }

    #[test]
    fn off_grid_rotation_fills_corners() {
        let cfg = RotationConfig { k: 8 };
        let img = ImageTensor::filled(9, 9, 1, ValueRange::Byte, 255.0);
        let r = rotate_transform(&img, 1, &cfg).unwrap();
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(0, 4, 4), 255.0);
        assert!(r.same_dims(&img));
    }

    #[test]
    fn single_permutation_set_gives_label_zero() {
        let pretext = Pretext::Jigsaw {
            permutations: generate_permutation_set(9, 1).unwrap(),
            config: JigsawConfig {
                grid_n: 3,
                gap: 2,
                fill_value: 0.0,
            },
        };
        let img = random_image(6, 12, 12, 3);
        for seed in 0..10 {
            let s = pretext.make_sample(&img, seed).unwrap();
            assert_eq!(s.label, 0);
            // identity arrangement: each cell equals the gap-only transform of itself
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let _: usize = rng.random_range(0..1);
            let gap_seed = rng.next_u64();
            let cell = apply_gap(&img.crop(4, 4, 4, 4), 2, 0.0, derive_seed(gap_seed, 4)).unwrap();
            assert_eq!(s.image.crop(4, 4, 4, 4), cell);
        }
    }

    #[test]
    fn jigsaw_labels_are_uniform() {
        let pretext = Pretext::Jigsaw {
            permutations: generate_permutation_set(9, 30).unwrap(),
            config: no_gap(3),
        };
        let img = random_image(7, 3, 3, 1);
        let draws = 10_000;
        let mut counts = [0usize; 30];
        for seed in 0..draws {
            counts[pretext.make_sample(&img, seed).unwrap().label] += 1;
        }
        let p = 1.0 / 30.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (label, &c) in counts.iter().enumerate() {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "label {label}: {c}");
        }
    }

    #[test]
    fn rotation_sample_is_reproducible() {
        let pretext = Pretext::Rotation(RotationConfig::default());
        let img = random_image(8, 9, 9, 3);
        let a = pretext.make_sample(&img, 42).unwrap();
        let b = pretext.make_sample(&img, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.image,
            rotate_transform(&img, a.label, &RotationConfig::default()).unwrap()
        );
    }

    proptest! {
        #[test]
        fn rotations_compose(seed in any::<u64>(), k1 in 0usize..4, k2 in 0usize..4, side in 1usize..9) {
            let cfg = RotationConfig::default();
            let img = random_image(seed, side, side, 2);
            let twice = rotate_transform(&rotate_transform(&img, k1, &cfg).unwrap(), k2, &cfg).unwrap();
            prop_assert_eq!(twice, rotate_transform(&img, (k1 + k2) % 4, &cfg).unwrap());
        }

        #[test]
        fn transforms_preserve_dimensions(seed in any::<u64>(), k in 0usize..8, gap in 0usize..4) {
            let img = random_image(seed, 12, 12, 3);
            let r = rotate_transform(&img, k, &RotationConfig { k: 8 }).unwrap();
            prop_assert!(r.same_dims(&img));
            let set = generate_permutation_set(9, 4).unwrap();
            let cfg = JigsawConfig { grid_n: 3, gap, fill_value: 0.0 };
            let j = jigsaw_transform(&img, &set.entries()[3], &cfg, seed).unwrap();
            prop_assert!(j.same_dims(&img));
        }
    }
}
