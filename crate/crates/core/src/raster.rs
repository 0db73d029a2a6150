use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar multi-channel grid of reals: value `(c, x, y)` lives at
/// `data[(c·height + y)·width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::config(format!(
                "raster {width}x{height}x{channels} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("raster dimensions are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        Raster::new(w, h, c, t.data().to_vec())
    }

    /// Reflect about the vertical axis (`x → W−1−x`), negating the listed channels.
    pub fn mirrored(&self, negate: &[usize]) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            let s = if negate.contains(&c) { -1.0 } else { 1.0 };
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, self.width - 1 - x, y, s * self.get(c, x, y));
                }
            }
        }
        out
    }

    /// Point reflection about the image centre, negating the listed channels.
    pub fn rotated180(&self, negate: &[usize]) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            let s = if negate.contains(&c) { -1.0 } else { 1.0 };
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, self.width - 1 - x, self.height - 1 - y, s * self.get(c, x, y));
                }
            }
        }
        out
    }
}
