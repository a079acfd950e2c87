//! Scalar loss terms.
//!
//! These are the host-side definitions of every term of the training objective
//! `Σ_t L_local(t) + Σ_scales L_scale + L_attention (+ L_class)`. The tensor
//! implementation in the `lookout` crate is checked against them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{GridGeometry, GRID_COLS, PATCH_COUNT, SCALE_COUNT};
use crate::image::{Image, Mask, CHANNELS};

/// Mean absolute difference over the mask-true pixels and all channels.
/// Returns 0 for an empty mask.
pub fn local_loss(recon: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    let (h, w) = gt.dims();
    recon.ensure_dims(h, w)?;
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected_h: h,
            expected_w: w,
            got_h: mask.height(),
            got_w: mask.width(),
        });
    }
    let mut sum = 0f64;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let (r, g) = (recon.pixel(y, x), gt.pixel(y, x));
            for c in 0..CHANNELS {
                sum += (r[c] as f64 - g[c] as f64).abs();
            }
            count += CHANNELS;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn mean_abs_error(a: &Image, b: &Image) -> Result<f64> {
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
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / n as f64)
}

/// L1 loss of each reconstruction scale against the area-downsampled
/// panorama. `recons` is ordered coarsest first.
pub fn scale_losses(recons: &[Image], pano: &Image) -> Result<[f64; SCALE_COUNT]> {
    if recons.len() != SCALE_COUNT {
        return Err(Error::LengthMismatch {
            expected: SCALE_COUNT,
            got: recons.len(),
        });
    }
    let mut out = [0f64; SCALE_COUNT];
    for (slot, recon) in out.iter_mut().zip(recons) {
        let target = pano.area_downsample(recon.height(), recon.width())?;
        *slot = mean_abs_error(recon, &target)?;
    }
    Ok(out)
}

/// Supervision for the attention head: which patch holds the most
/// reconstruction error.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTarget {
    /// Argmax of `distribution`, lowest patch id on ties.
    pub label: usize,
    /// Per-patch share of the total absolute error; uniform when the total is 0.
    pub distribution: Vec<f64>,
}

impl AttentionTarget {
    pub fn from_patch_errors(errors: &[f64]) -> Result<Self> {
        if errors.len() != PATCH_COUNT {
            return Err(Error::LengthMismatch {
                expected: PATCH_COUNT,
                got: errors.len(),
            });
        }
        let total: f64 = errors.iter().sum();
        let distribution: Vec<f64> = if total > 0.0 {
            errors.iter().map(|e| e / total).collect()
        } else {
            vec![1.0 / PATCH_COUNT as f64; PATCH_COUNT]
        };
        let label = argmax(&distribution);
        Ok(Self { label, distribution })
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Summed error of each of the 128 patches. `error_map` holds per-pixel,
/// per-channel non-negative errors at panorama size.
pub fn patch_errors(geom: &GridGeometry, error_map: &Image) -> Result<Vec<f64>> {
    error_map.ensure_dims(geom.height(), geom.width())?;
    let b = geom.block_size();
    let mut errors = vec![0f64; PATCH_COUNT];
    for y in 0..geom.height() {
        let row_base = (y / b) * GRID_COLS;
        for x in 0..geom.width() {
            let p = error_map.pixel(y, x);
            errors[row_base + x / b] += p.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    Ok(errors)
}

pub fn attention_target_from_error_map(geom: &GridGeometry, error_map: &Image) -> Result<AttentionTarget> {
    AttentionTarget::from_patch_errors(&patch_errors(geom, error_map)?)
}

/// Attention target from the full-scale reconstruction and the panorama.
pub fn attention_target(geom: &GridGeometry, recon: &Image, pano: &Image) -> Result<AttentionTarget> {
    pano.ensure_dims(geom.height(), geom.width())?;
    recon.ensure_dims(geom.height(), geom.width())?;
    let err = Image::from_vec(
        pano.height(),
        pano.width(),
        recon
            .as_slice()
            .iter()
            .zip(pano.as_slice())
            .map(|(&r, &p)| (r - p).abs())
            .collect(),
    )?;
    attention_target_from_error_map(geom, &err)
}

pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + libm::log(logits.iter().map(|&v| libm::exp(v as f64 - max)).sum::<f64>());
    logits.iter().map(|&v| v as f64 - lse).collect()
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(libm::exp).collect()
}

/// Sparse softmax cross-entropy: `-log softmax(logits)[label]`.
pub fn attention_loss(logits: &[f32], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::PatchOutOfRange(label));
    }
    Ok(-log_softmax(logits)[label])
}

/// Cross-entropy against a full target distribution.
pub fn distribution_loss(logits: &[f32], target: &[f64]) -> Result<f64> {
    if target.len() != logits.len() {
        return Err(Error::LengthMismatch {
            expected: logits.len(),
            got: target.len(),
        });
    }
    Ok(-log_softmax(logits)
        .iter()
        .zip(target)
        .map(|(lp, t)| lp * t)
        .sum::<f64>())
}

/// Every term of one episode's objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    /// Local reconstruction loss of each step.
    pub local: Vec<f64>,
    /// Full reconstruction loss per scale, coarsest first.
    pub scales: [f64; SCALE_COUNT],
    pub attention: f64,
    pub classification: Option<f64>,
}

impl LossBreakdown {
    /// Unweighted sum of all present terms.
    pub fn total(&self) -> f64 {
        self.local.iter().sum::<f64>()
            + self.scales.iter().sum::<f64>()
            + self.attention
            + self.classification.unwrap_or(0.0)
    }

    pub fn local_mean(&self) -> f64 {
        if self.local.is_empty() {
            0.0
        } else {
            self.local.iter().sum::<f64>() / self.local.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.local.iter().chain(self.scales.iter()).all(|v| v.is_finite())
            && self.attention.is_finite()
            && self.classification.is_none_or(f64::is_finite)
    }
}

pub fn total_loss(breakdown: &LossBreakdown) -> f64 {
    breakdown.total()
}
