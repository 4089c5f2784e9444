use std::ops::Range;

use crate::error::{Error, Result};

/// Dense `height × width × channels` array stored row-major with the channel
/// index varying fastest, so one pixel's channel vector is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Builds a tensor by evaluating `f(row, col, channel)` at every position.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    values.push(f(r, c, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            values,
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.values[i] = value;
    }

    /// Channel vector of the pixel at flat position `p = row * width + col`.
    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Copies channels `range` into a new tensor.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        if range.start > range.end || range.end > self.channels {
            return Err(Error::Shape(format!(
                "channel range {range:?} out of 0..{}",
                self.channels
            )));
        }
        let n = range.len();
        let mut values = Vec::with_capacity(self.pixel_count() * n);
        for p in 0..self.pixel_count() {
            values.extend_from_slice(&self.pixel(p)[range.clone()]);
        }
        Ok(Tensor {
            height: self.height,
            width: self.width,
            channels: n,
            values,
        })
    }

    pub fn channel(&self, k: usize) -> Result<Tensor> {
        self.slice_channels(k..k + 1)
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.channels) {
            return Err(Error::Shape(format!(
                "channel {bad} out of 0..{}",
                self.channels
            )));
        }
        let mut values = Vec::with_capacity(self.pixel_count() * indices.len());
        for p in 0..self.pixel_count() {
            let px = self.pixel(p);
            values.extend(indices.iter().map(|&k| px[k]));
        }
        Ok(Tensor {
            height: self.height,
            width: self.width,
            channels: indices.len(),
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.ensure_same_shape(other, "add")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Stacks `a`'s channels followed by `b`'s at every pixel.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(format!(
            "concat of {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let channels = a.channels + b.channels;
    let mut values = Vec::with_capacity(a.pixel_count() * channels);
    for p in 0..a.pixel_count() {
        values.extend_from_slice(a.pixel(p));
        values.extend_from_slice(b.pixel(p));
    }
    Ok(Tensor {
        height: a.height,
        width: a.width,
        channels,
        values,
    })
}
