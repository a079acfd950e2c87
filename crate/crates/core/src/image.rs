//! Channel-last RGB images at 32-bit precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An `height × width × 3` image stored row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::LengthMismatch {
                expected: height * width * CHANNELS,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(y, x) + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let o = self.offset(y, x) + c;
        self.data[o] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; CHANNELS] {
        let o = self.offset(y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, px: [f32; CHANNELS]) {
        let o = self.offset(y, x);
        self.data[o..o + CHANNELS].copy_from_slice(&px);
    }

    pub fn ensure_dims(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(Error::ShapeMismatch {
                expected_h: height,
                expected_w: width,
                got_h: self.height,
                got_w: self.width,
            });
        }
        Ok(())
    }

    /// Rolls the image horizontally: column `c` moves to `(c + offset) mod W`.
    pub fn roll_columns(&self, offset: usize) -> Self {
        let w = self.width;
        if w == 0 {
            return self.clone();
        }
        let offset = offset % w;
        let mut out = Self::zeros(self.height, w);
        for y in 0..self.height {
            for x in 0..w {
                out.set_pixel(y, (x + offset) % w, self.pixel(y, x));
            }
        }
        out
    }

    /// Area-average downsample to `height × width`; both must divide the
    /// current size.
    pub fn area_downsample(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || self.height % height != 0 || self.width % width != 0 {
            return Err(Error::NonDividingScale {
                h: height,
                w: width,
                full_h: self.height,
                full_w: self.width,
            });
        }
        let (fy, fx) = (self.height / height, self.width / width);
        if fy == 1 && fx == 1 {
            return Ok(self.clone());
        }
        let norm = 1.0 / (fy * fx) as f32;
        let mut out = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                let mut acc = [0f32; CHANNELS];
                for sy in y * fy..(y + 1) * fy {
                    for sx in x * fx..(x + 1) * fx {
                        let p = self.pixel(sy, sx);
                        for c in 0..CHANNELS {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(y, x, acc.map(|a| a * norm));
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A boolean `height × width` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
