//! Planar (CHW) image container shared by the data, pretext and model code.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// How the stored intensities are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// Integer intensities in `[0, 255]`.
    Byte,
    /// Normalized intensities in `[0, 1]`.
    Unit,
    /// Zero-centred intensities in `[-1, 1]`, i.e. `(v - 127.5) / 127.5`.
    /// Model inputs and pretext transforms use this mode so a fill value of
    /// 0 sits at mid-gray.
    Centered,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::Byte => (0.0, 255.0),
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Centered => (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    values: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, range: ValueRange, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if values.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                values.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::invalid(format!("value {v} outside {range:?} range")));
        }
        Ok(Self {
            height,
            width,
            channels,
            range,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, range: ValueRange, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self {
            height,
            width,
            channels,
            range,
            values: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.values[i] = v;
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    /// Copies out the `h`×`w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> ImageTensor {
        assert!(y + h <= self.height && x + w <= self.width, "crop out of bounds");
        let mut out = ImageTensor::filled(h, w, self.channels, self.range, 0.0);
        for c in 0..self.channels {
            for dy in 0..h {
                let src = self.index(c, y + dy, x);
                let dst = out.index(c, dy, 0);
                out.values[dst..dst + w].copy_from_slice(&self.values[src..src + w]);
            }
        }
        out
    }

    /// Writes `patch` with its top-left corner at `(y, x)`.
    pub fn paste(&mut self, patch: &ImageTensor, y: usize, x: usize) {
        assert_eq!(patch.channels, self.channels);
        assert!(
            y + patch.height <= self.height && x + patch.width <= self.width,
            "paste out of bounds"
        );
        for c in 0..self.channels {
            for dy in 0..patch.height {
                let src = patch.index(c, dy, 0);
                let dst = self.index(c, y + dy, x);
                self.values[dst..dst + patch.width].copy_from_slice(&patch.values[src..src + patch.width]);
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Applies `f` per value and clamps into the image's range.
    pub fn map_clamped(&self, mut f: impl FnMut(f32) -> f32) -> ImageTensor {
        let (lo, hi) = self.range.bounds();
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v).clamp(lo, hi);
        }
        out
    }

    /// Converts to another value range (linear rescale, bit-exact round trip
    /// back to `Byte` via rounding).
    pub fn to_range(&self, range: ValueRange) -> ImageTensor {
        if range == self.range {
            return self.clone();
        }
        let to_byte = |v: f32| match self.range {
            ValueRange::Byte => v,
            ValueRange::Unit => v * 255.0,
            ValueRange::Centered => v * 127.5 + 127.5,
        };
        let from_byte = |v: f32| match range {
            ValueRange::Byte => v.round(),
            ValueRange::Unit => v / 255.0,
            ValueRange::Centered => (v - 127.5) / 127.5,
        };
        let (lo, hi) = range.bounds();
        let values = self
            .values
            .iter()
            .map(|&v| from_byte(to_byte(v)).clamp(lo, hi))
            .collect();
        ImageTensor { values, range, ..*self }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> ImageTensor {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageTensor::filled(h, w, 3, ValueRange::Byte, 0.0);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f32);
            }
        }
        out
    }

    /// 8-bit RGB (or gray replicated to RGB) rendering for file output.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.to_range(ValueRange::Byte);
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| bytes.get(c.min(self.channels - 1), y as usize, x as usize) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }
}

/// Stacks equally sized images into an NCHW batch (values taken as stored).
pub fn stack_batch(images: &[&ImageTensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let mut data = Vec::with_capacity(images.len() * first.values.len());
    for img in images {
        if !img.same_dims(first) {
            return Err(Error::invalid("batch images differ in size"));
        }
        data.extend_from_slice(&img.values);
    }
    Ok(Tensor::from_vec(
        images.len(),
        first.channels,
        first.height,
        first.width,
        data,
    ))
}
