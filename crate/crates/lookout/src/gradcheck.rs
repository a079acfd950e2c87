//! Central finite-difference checks of analytic gradients.
//!
//! The analytic gradient comes from one model (usually 32-bit); the numeric
//! derivative from a second model holding the same parameters at 64-bit, so the
//! finite-difference quotient itself is accurate to far below the tolerance.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{run_batch, AttentionTargetKind, EpisodeConfig, EpisodeInput};
use crate::error::{Error, Result};
use crate::nets::blocks::{distribution_cross_entropy, sparse_cross_entropy};
use crate::nets::{Architecture, ClassificationMode, ExplorerModel, ParamStore, UpperBoundModel};
use crate::tensor::images_to_tensor;
use lookout_core::{Image, PolicyKind, PATCH_COUNT};

#[derive(Debug, Clone, PartialEq)]
pub struct GradProbe {
    pub block: String,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub probes_per_block: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Only entries whose analytic gradient reaches this fraction of the
    /// block's largest gradient magnitude are probed.
    pub min_relative_magnitude: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            probes_per_block: 20,
            step: 1e-6,
            floor: 1e-8,
            min_relative_magnitude: 1e-3,
            seed: 0,
        }
    }
}

/// Probes `probes_per_block` random parameter entries of every block in
/// `blocks` (a block is the first dotted component of a parameter name).
/// Entries are drawn uniformly among those whose analytic gradient is not
/// negligible (see [`ProbeOptions::min_relative_magnitude`]); a block whose
/// gradient vanishes entirely is probed uniformly instead. The numeric
/// derivative uses the fourth-order central stencil.
///
/// `numeric_loss` must evaluate the same objective on `numeric_store`'s model.
pub fn check_gradients(
    analytic_store: &ParamStore,
    analytic_loss: &Tensor,
    numeric_store: &ParamStore,
    numeric_loss: &mut dyn FnMut() -> Result<f64>,
    blocks: &[&str],
    opts: &ProbeOptions,
) -> Result<Vec<GradProbe>> {
    let grads = analytic_loss.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let params = analytic_store.params();
    let numeric_params = numeric_store.params();
    if params.len() != numeric_params.len() {
        return Err(Error::Invalid("analytic and numeric models differ".into()));
    }
    let mut probes = Vec::new();
    for &block in blocks {
        // (param index, element index, analytic value)
        let mut candidates = Vec::new();
        let mut all = Vec::new();
        for (pi, p) in params.iter().enumerate() {
            if p.name.split('.').next() != Some(block) {
                continue;
            }
            let g: Vec<f64> = match grads.get(p.var.as_tensor()) {
                Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
                None => vec![0.0; p.var.elem_count()],
            };
            all.extend(g.iter().enumerate().map(|(ei, &v)| (pi, ei, v)));
        }
        let largest = all.iter().fold(0f64, |m, &(_, _, v)| m.max(v.abs()));
        if largest > 0.0 {
            let threshold = largest * opts.min_relative_magnitude;
            candidates.extend(all.iter().copied().filter(|&(_, _, v)| v.abs() >= threshold));
        }
        if all.is_empty() {
            return Err(Error::Invalid(format!("no parameters in block {block:?}")));
        }
        let pool = if candidates.is_empty() { &all } else { &candidates };
        for _ in 0..opts.probes_per_block {
            let (pi, ei, analytic) = pool[rng.random_range(0..pool.len())];
            let var = &numeric_params[pi].var;
            let original = var.as_tensor().copy()?;
            let mut values: Vec<f64> = original.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            let x0 = values[ei];
            let mut eval_at = |x: f64| -> Result<f64> {
                values[ei] = x;
                let t = Tensor::from_vec(values.clone(), original.shape(), original.device())?
                    .to_dtype(original.dtype())?;
                var.set(&t)?;
                numeric_loss()
            };
            let h = opts.step;
            let (p1, m1) = (eval_at(x0 + h)?, eval_at(x0 - h)?);
            let (p2, m2) = (eval_at(x0 + 2.0 * h)?, eval_at(x0 - 2.0 * h)?);
            var.set(&original)?;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            probes.push(GradProbe {
                block: block.to_string(),
                param: params[pi].name.clone(),
                index: ei,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, opts.floor),
            });
        }
    }
    Ok(probes)
}

/// The largest relative error of each block, in first-seen order.
pub fn worst_per_block(probes: &[GradProbe]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for p in probes {
        match out.iter_mut().find(|(b, _)| *b == p.block) {
            Some((_, worst)) => *worst = worst.max(p.rel_error),
            None => out.push((p.block.clone(), p.rel_error)),
        }
    }
    out
}

/// Jitter applied to every parameter before a check, so that no rectifier
/// input sits exactly on its kink (fresh biases are all zero).
pub const PERTURBATION: f64 = 0.05;

fn random_panoramas(arch: &Architecture, count: usize, seed: u64) -> Vec<Image> {
    let g = arch.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Image::from_fn(g.height(), g.width(), |_, _, _| rng.random::<f32>()))
        .collect()
}

/// Probes every block of an explorer model on a short two-episode batch. The
/// trajectory is drawn by the random policy so that it cannot change under
/// the finite-difference perturbation.
pub fn explorer_probes(
    arch: &Architecture,
    mode: ClassificationMode,
    target: AttentionTargetKind,
    glimpses: usize,
    opts: &ProbeOptions,
) -> Result<Vec<GradProbe>> {
    let classes = 5;
    let m32 = ExplorerModel::new(arch.clone(), mode, classes, DType::F32, opts.seed)?;
    let m64 = ExplorerModel::new(arch.clone(), mode, classes, DType::F64, opts.seed)?;
    m32.store.perturb(opts.seed ^ 0x9e37, PERTURBATION)?;
    m64.store.copy_from(&m32.store)?;
    let panoramas = random_panoramas(arch, 2, opts.seed);
    let inputs: Vec<EpisodeInput<'_>> = panoramas
        .iter()
        .enumerate()
        .map(|(i, p)| EpisodeInput {
            panorama: p,
            label: Some(i % classes),
            seed: opts.seed + i as u64,
        })
        .collect();
    let mut cfg = EpisodeConfig::train(glimpses);
    cfg.policy = PolicyKind::Random;
    cfg.target = target;
    let rollout = run_batch(&m32, &inputs, &cfg)?;
    let analytic = rollout.loss;
    // The attention target is a constant of the objective (it carries no
    // gradient), so the numeric side must not let it follow the perturbation:
    // the recomputed attention term is swapped for one against the targets of
    // the unperturbed model.
    let frozen: Vec<f64> = rollout
        .episodes
        .iter()
        .flat_map(|e| match cfg.target {
            AttentionTargetKind::Sparse => one_hot(e.target.label),
            AttentionTargetKind::Distribution => e.target.distribution.clone(),
        })
        .collect();
    let frozen = Tensor::from_vec(frozen, (inputs.len(), PATCH_COUNT), &Device::Cpu)?;
    let mut numeric = || -> Result<f64> {
        let r = run_batch(&m64, &inputs, &cfg)?;
        let n = r.episodes.len() as f64;
        let recomputed: f64 = r.episodes.iter().map(|e| e.losses.attention).sum::<f64>() / n;
        let fixed = distribution_cross_entropy(&r.final_logits, &frozen)?
            .mean_all()?
            .to_scalar::<f64>()?;
        Ok(r.loss.to_scalar::<f64>()? - recomputed + fixed)
    };
    check_gradients(
        &m32.store,
        &analytic,
        &m64.store,
        &mut numeric,
        &m32.block_names(),
        opts,
    )
}

fn one_hot(label: usize) -> Vec<f64> {
    let mut v = vec![0.0; PATCH_COUNT];
    v[label] = 1.0;
    v
}

/// Probes the full-image classifier on a two-image batch.
pub fn upper_bound_probes(arch: &Architecture, opts: &ProbeOptions) -> Result<Vec<GradProbe>> {
    let classes = 5;
    let m32 = UpperBoundModel::new(arch.clone(), classes, DType::F32, opts.seed)?;
    let m64 = UpperBoundModel::new(arch.clone(), classes, DType::F64, opts.seed)?;
    m32.store.perturb(opts.seed ^ 0x9e37, PERTURBATION)?;
    m64.store.copy_from(&m32.store)?;
    let panoramas = random_panoramas(arch, 2, opts.seed);
    let refs: Vec<&Image> = panoramas.iter().collect();
    let labels = [0u32, 3];
    let loss = |m: &UpperBoundModel| -> Result<Tensor> {
        let x = images_to_tensor(&refs, m.store.dtype(), m.store.device())?;
        Ok(sparse_cross_entropy(&m.vgg.forward(&x)?, &labels)?.mean_all()?)
    };
    let analytic = loss(&m32)?;
    let mut numeric = || -> Result<f64> { Ok(loss(&m64)?.to_scalar::<f64>()?) };
    check_gradients(
        &m32.store,
        &analytic,
        &m64.store,
        &mut numeric,
        &[crate::nets::CLASSIFIER_PREFIX],
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-8), 0.0);
        assert!((relative_error(1.0, 0.999, 1e-8) - 1e-3).abs() < 1e-12);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-15);
    }
}
