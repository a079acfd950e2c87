use candle_core::{Tensor, Var, D};

use super::params::{Init, ParamStore};
use crate::error::Result;

/// He-style gain for layers followed by a rectifier.
pub const RELU_GAIN: f64 = 2.0;
/// Gain for output layers.
pub const LINEAR_GAIN: f64 = 1.0;

pub struct Conv2d {
    weight: Var,
    bias: Var,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            Init::Scaled { fan_in, gain },
        )?;
        let bias = store.add(format!("{name}.bias"), &[out_channels], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// 2×2 kernel, stride 2: doubles height and width.
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            &[in_channels, out_channels, 2, 2],
            Init::Scaled {
                fan_in: in_channels,
                gain: RELU_GAIN,
            },
        )?;
        let bias = store.add(format!("{name}.bias"), &[out_channels], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 0, 0, 2, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

pub struct Dense {
    weight: Var,
    bias: Var,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, gain: f64) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            &[outputs, inputs],
            Init::Scaled { fan_in: inputs, gain },
        )?;
        let bias = store.add(format!("{name}.bias"), &[outputs], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    /// `x`: (batch, inputs) → (batch, outputs)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Adaptive average pooling of an `h × w` map onto a `g × g` grid, with cell
/// `i` covering rows `[floor(i·h/g), ceil((i+1)·h/g))` (and likewise for
/// columns). Implemented as a matrix product so it is differentiable.
pub struct AdaptiveAvgPool {
    matrix: Tensor,
    grid: usize,
}

impl AdaptiveAvgPool {
    pub fn new(h: usize, w: usize, grid: usize, store: &ParamStore) -> Result<Self> {
        let m = adaptive_pool_matrix(h, w, grid);
        let matrix = Tensor::from_vec(m, (h * w, grid * grid), store.device())?.to_dtype(store.dtype())?;
        Ok(Self { matrix, grid })
    }

    /// `x`: (batch, c, h, w) → (batch, c·g·g), channel-major.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let flat = x.reshape((b * c, h * w))?;
        let pooled = flat.matmul(&self.matrix)?;
        Ok(pooled.reshape((b, c * self.grid * self.grid))?)
    }
}

/// Cell boundaries of adaptive pooling along one axis.
pub fn adaptive_ranges(len: usize, grid: usize) -> Vec<(usize, usize)> {
    (0..grid)
        .map(|i| ((i * len) / grid, ((i + 1) * len).div_ceil(grid)))
        .collect()
}

fn adaptive_pool_matrix(h: usize, w: usize, grid: usize) -> Vec<f64> {
    let mut m = vec![0.0; h * w * grid * grid];
    let rows = adaptive_ranges(h, grid);
    let cols = adaptive_ranges(w, grid);
    for (gy, &(y0, y1)) in rows.iter().enumerate() {
        for (gx, &(x0, x1)) in cols.iter().enumerate() {
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let cell = gy * grid + gx;
            for y in y0..y1 {
                for x in x0..x1 {
                    m[(y * w + x) * grid * grid + cell] = 1.0 / n;
                }
            }
        }
    }
    m
}

/// 2×2 max-pooling with stride 2, built from a reshape and two max
/// reductions. candle's own `max_pool2d` scales its gradient by the fraction
/// of window maxima instead of dividing by it, so it is not used for training.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.contiguous()?.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

/// Mean over all but the first dimension.
pub fn per_sample_mean(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.mean(D::Minus1)?)
}
