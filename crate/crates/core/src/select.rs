//! Next-glimpse selection from attention logits.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Visited, PATCH_COUNT};
use crate::loss::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectMode {
    /// Sample from the masked distribution.
    Train,
    /// Take the most probable unvisited patch.
    Eval,
}

/// Softmax over the unvisited patches; visited entries are exactly 0.
pub fn masked_probabilities(logits: &[f32], visited: &Visited) -> Result<Vec<f64>> {
    if logits.len() != PATCH_COUNT {
        return Err(Error::LengthMismatch {
            expected: PATCH_COUNT,
            got: logits.len(),
        });
    }
    if visited.is_full() {
        return Err(Error::AllVisited);
    }
    let masked: Vec<f32> = logits
        .iter()
        .enumerate()
        .map(|(p, &l)| if visited.contains(p) { f32::NEG_INFINITY } else { l })
        .collect();
    let mut probs = softmax(&masked);
    for (p, v) in probs.iter_mut().enumerate() {
        if visited.contains(p) {
            *v = 0.0;
        }
    }
    Ok(probs)
}

/// Draws an index from `weights` (non-negative, not all zero). Zero-weight
/// entries are never returned.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// First index holding the maximum among entries allowed by `allowed`.
pub fn masked_argmax(values: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn select_next<R: Rng + ?Sized>(logits: &[f32], visited: &Visited, mode: SelectMode, rng: &mut R) -> Result<usize> {
    let probs = masked_probabilities(logits, visited)?;
    let choice = match mode {
        SelectMode::Train => sample_weighted(&probs, rng),
        SelectMode::Eval => masked_argmax(&probs, |p| !visited.contains(p)).ok_or(Error::AllVisited)?,
    };
    debug_assert!(!visited.contains(choice));
    Ok(choice)
}

/// Uniform pick from `candidates`.
pub fn uniform_choice<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> Option<usize> {
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

/// The first glimpse of every episode is uniform over all patches.
pub fn first_glimpse<R: Rng + ?Sized>(rng: &mut R) -> usize {
    rng.random_range(0..PATCH_COUNT)
}
