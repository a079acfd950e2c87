//! Reporting metrics for full-scale reconstructions.

use crate::error::Result;
use crate::image::Image;

/// Mean squared error in [0,1] units, scaled by 1000.
pub fn mse_metric(recon: &Image, pano: &Image) -> Result<f64> {
    Ok(mean_squared_error(recon, pano)? * 1000.0)
}

/// Root mean squared error in [0,255] units.
pub fn rmse_metric(recon: &Image, pano: &Image) -> Result<f64> {
    Ok(rmse_from_mse(mse_metric(recon, pano)?))
}

/// Converts the ×1000 MSE into the [0,255] RMSE of the same squared error.
pub fn rmse_from_mse(mse_x1000: f64) -> f64 {
    255.0 * libm::sqrt(mse_x1000 / 1000.0)
}

pub fn mean_squared_error(a: &Image, b: &Image) -> Result<f64> {
    let (h, w) = b.dims();
    a.ensure_dims(h, w)?;
    let n = a.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}
