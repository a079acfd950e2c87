//! Batched episode rollout.
//!
//! Every episode of a batch takes its glimpses in lock-step. The fit-in matrix
//! and the fit-in feature vectors are rebuilt at each step by gathering from
//! the stacked per-step network outputs (see [`PastePlan`] and [`SlotPlan`]), so
//! the final losses back-propagate through the memories into every glimpse.
//!
//! Schedule: the local loss is taken at every step; the background and
//! upsampler run after the last step only (or at every step when
//! [`EpisodeConfig::record_steps`] is set, for curves and for the
//! ground-truth-error policy), and the scale, attention and classification
//! losses are computed after the last step. Attention logits of earlier steps
//! only drive the glimpse choice and never enter the loss.

use candle_core::{DType, Device, Tensor};
use lookout_core::loss::{attention_target, AttentionTarget, LossBreakdown};
use lookout_core::memory::{FitInMatrix, PastePlan, SlotPlan, SLOT_COUNT};
use lookout_core::policy::{choose, PolicyContext};
use lookout_core::retina::{extract_retina, ground_truth_crop};
use lookout_core::select::{first_glimpse, masked_probabilities};
use lookout_core::{BlockIndex, GridGeometry, Image, PolicyKind, SelectMode, Visited, PATCH_COUNT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::blocks::{distribution_cross_entropy, sparse_cross_entropy};
use crate::nets::{Classifier, ExplorerModel};
use crate::tensor::{images_to_tensor, masks_to_tensor, tensor_to_images, to_f64_vec};

/// Which form of the attention target the attention loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionTargetKind {
    /// Sparse softmax cross-entropy on the argmax patch.
    #[default]
    Sparse,
    /// Cross-entropy against the full per-patch error distribution.
    Distribution,
}

/// Where the glimpse reconstructions pasted into the fit-in matrix come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocalSource {
    #[default]
    Network,
    /// The ground-truth crop (an identity local reconstructor).
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub glimpses: usize,
    pub policy: PolicyKind,
    pub mode: SelectMode,
    pub record_steps: bool,
    pub target: AttentionTargetKind,
    pub local_source: LocalSource,
}

impl EpisodeConfig {
    pub fn train(glimpses: usize) -> Self {
        Self {
            glimpses,
            policy: PolicyKind::Learned,
            mode: SelectMode::Train,
            record_steps: false,
            target: AttentionTargetKind::Sparse,
            local_source: LocalSource::Network,
        }
    }

    pub fn eval(glimpses: usize, policy: PolicyKind) -> Self {
        Self {
            glimpses,
            policy,
            mode: SelectMode::Eval,
            record_steps: true,
            target: AttentionTargetKind::Sparse,
            local_source: LocalSource::Network,
        }
    }
}

/// One episode's environment.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub panorama: &'a Image,
    pub label: Option<usize>,
    /// Seeds the episode's random stream (first glimpse, stochastic policies).
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Patch glimpsed at this step.
    pub patch: usize,
    pub local_loss: f64,
    /// Masked attention probabilities for the next location, computed after
    /// this step's memory update.
    pub attention: Vec<f64>,
    /// Full-scale reconstruction after this step; always present for the
    /// last step.
    pub recon: Option<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trajectory: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub losses: LossBreakdown,
    pub target: AttentionTarget,
    /// Host copy of the fit-in matrix after the last step.
    pub matrix: FitInMatrix,
    pub class_logits: Option<Vec<f32>>,
}

impl EpisodeResult {
    pub fn final_recon(&self) -> &Image {
        self.steps
            .last()
            .and_then(|s| s.recon.as_ref())
            .expect("the last step always records its reconstruction")
    }
}

pub struct Rollout {
    pub episodes: Vec<EpisodeResult>,
    /// Batch mean of the per-episode objective; differentiable.
    pub loss: Tensor,
    /// Attention logits after the last step, (B, 128).
    pub final_logits: Tensor,
    /// Reconstructions of the last step at every scale, coarsest first.
    pub final_scales: Vec<Tensor>,
}

struct EpisodeState {
    rng: ChaCha8Rng,
    visited: Visited,
    trajectory: Vec<usize>,
    paste: PastePlan,
    slots: SlotPlan,
    matrix: FitInMatrix,
    steps: Vec<StepRecord>,
}

/// Rolls out one episode per input, all with the same configuration.
pub fn run_batch(model: &ExplorerModel, inputs: &[EpisodeInput<'_>], cfg: &EpisodeConfig) -> Result<Rollout> {
    let batch = inputs.len();
    if batch == 0 {
        return Err(Error::Invalid("empty episode batch".into()));
    }
    if cfg.glimpses == 0 || cfg.glimpses > PATCH_COUNT {
        return Err(Error::Config(format!(
            "glimpse count must be in 1..=128, got {}",
            cfg.glimpses
        )));
    }
    let geom = model.arch.geometry();
    let (dtype, device) = (model.dtype(), model.store.device().clone());
    let n = geom.canvas();
    let (h, w) = (geom.height(), geom.width());
    for inp in inputs {
        inp.panorama.ensure_dims(h, w)?;
    }
    let labels = class_labels(model, inputs)?;

    let mut states: Vec<EpisodeState> = inputs
        .iter()
        .map(|inp| {
            let mut rng = ChaCha8Rng::seed_from_u64(inp.seed);
            let first = first_glimpse(&mut rng);
            EpisodeState {
                rng,
                visited: Visited::new(),
                trajectory: vec![first],
                paste: PastePlan::new(geom),
                slots: SlotPlan::new(),
                matrix: FitInMatrix::new(geom),
                steps: Vec::new(),
            }
        })
        .collect();

    let scale_dims = geom.scales();
    let pano_tensor = images_to_tensor(&inputs.iter().map(|i| i.panorama).collect::<Vec<_>>(), dtype, &device)?;

    let mut recon_steps: Vec<Tensor> = Vec::new(); // (B, n², 3) per step
    let mut desc_steps: Vec<Tensor> = Vec::new(); // (B, D) per step
    let mut class_steps: Vec<Tensor> = Vec::new();
    let mut local_terms: Vec<Tensor> = Vec::new(); // (B) per step
    let mut final_logits = None;
    let mut final_scales = Vec::new();
    let mut final_vector_class = None;

    for t in 0..cfg.glimpses {
        let last = t + 1 == cfg.glimpses;
        let centers: Vec<BlockIndex> = states
            .iter()
            .map(|s| BlockIndex::from_patch(*s.trajectory.last().expect("trajectory is non-empty")))
            .collect::<std::result::Result<_, _>>()?;

        // Sensor and local reconstruction.
        let mut planes = Vec::with_capacity(batch * 5 * n * n);
        let mut crops = Vec::with_capacity(batch);
        let mut masks = Vec::with_capacity(batch);
        for ((inp, st), &c) in inputs.iter().zip(&mut states).zip(&centers) {
            st.visited.insert(c.patch());
            planes.extend(extract_retina(&geom, inp.panorama, c)?.input_planes());
            let (crop, mask) = ground_truth_crop(&geom, inp.panorama, c)?;
            crops.push(crop);
            masks.push(mask);
        }
        let x = Tensor::from_vec(planes, (batch, 5, n, n), &device)?.to_dtype(dtype)?;
        let gt = images_to_tensor(&crops.iter().collect::<Vec<_>>(), dtype, &device)?;
        let mask = masks_to_tensor(&masks.iter().collect::<Vec<_>>(), dtype, &device)?;
        let (net_recon, bottleneck) = model.local.forward(&x)?;
        let counts: Vec<f64> = masks.iter().map(|m| (3 * m.count()).max(1) as f64).collect();
        let counts = Tensor::from_vec(counts, batch, &device)?.to_dtype(dtype)?;
        let local = net_recon
            .sub(&gt)?
            .abs()?
            .broadcast_mul(&mask)?
            .flatten_from(1)?
            .sum(1)?
            .div(&counts)?;
        let local_host = to_f64_vec(&local)?;
        local_terms.push(local);
        let recon = match cfg.local_source {
            LocalSource::Network => net_recon,
            LocalSource::GroundTruth => gt.broadcast_mul(&mask)?,
        };

        // Memory writes.
        let recon_images = tensor_to_images(&recon)?;
        for (((st, &c), m), img) in states.iter_mut().zip(&centers).zip(&masks).zip(&recon_images) {
            st.paste.record(c, m);
            st.slots.record(c);
            st.matrix.write(img, c, m)?;
        }
        recon_steps.push(recon.permute((0, 2, 3, 1))?.reshape((batch, n * n, 3))?);
        desc_steps.push(model.descriptor.forward(&bottleneck)?);
        if let Some(Classifier::Vector { features, .. }) = &model.classifier {
            class_steps.push(features.forward(&bottleneck)?);
        }

        let vector = gather_vector(&desc_steps, &states, &device)?;
        let logits = model.attention.forward(&vector)?;
        let logits_host: Vec<f32> = logits.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;

        let need_recon = last || cfg.record_steps || cfg.policy == PolicyKind::GtErrorOracle;
        let mut step_recons: Option<Vec<Image>> = None;
        if need_recon {
            let matrix = gather_matrix(&recon_steps, &states, &geom, &device)?;
            let views = matrix_views(&matrix, &states, &geom, dtype, &device)?;
            let bg = model.background.forward(&vector)?;
            let scales = model.upsampler.forward(&bg, &views)?;
            step_recons = Some(tensor_to_images(scales.last().expect("four scales"))?);
            if last {
                final_scales = scales;
            }
        }

        for (b, st) in states.iter_mut().enumerate() {
            let row = &logits_host[b * PATCH_COUNT..(b + 1) * PATCH_COUNT];
            let attention = if st.visited.is_full() {
                vec![0.0; PATCH_COUNT]
            } else {
                masked_probabilities(row, &st.visited)?
            };
            let recon = step_recons.as_ref().map(|r| r[b].clone());
            let patch = *st.trajectory.last().expect("trajectory is non-empty");
            st.steps.push(StepRecord {
                patch,
                local_loss: local_host[b],
                attention,
                recon,
            });
            if last {
                continue;
            }
            let gt_target = match (cfg.policy, &step_recons) {
                (PolicyKind::GtErrorOracle, Some(r)) => Some(attention_target(&geom, &r[b], inputs[b].panorama)?),
                _ => None,
            };
            let ctx = PolicyContext {
                visited: &st.visited,
                current: Some(BlockIndex::from_patch(patch)?),
                logits: Some(row),
                ground_truth: gt_target.as_ref(),
            };
            let next = choose(cfg.policy, &ctx, cfg.mode, &mut st.rng)?;
            st.trajectory.push(next);
        }

        if last {
            final_logits = Some(logits);
            if !class_steps.is_empty() {
                final_vector_class = Some(gather_vector(&class_steps, &states, &device)?);
            }
        }
    }

    let final_logits = final_logits.expect("at least one step");

    // Scale losses against the area-downsampled panoramas.
    let mut scale_terms = Vec::with_capacity(scale_dims.len());
    for (recon, &(sh, sw)) in final_scales.iter().zip(&scale_dims) {
        let target = area_pool(&pano_tensor, h / sh, w / sw)?;
        scale_terms.push(recon.sub(&target)?.abs()?.flatten_from(1)?.mean(1)?);
    }

    // Attention target from the final full-scale reconstruction.
    let mut targets = Vec::with_capacity(batch);
    for (st, inp) in states.iter().zip(inputs) {
        let recon = st
            .steps
            .last()
            .and_then(|s| s.recon.as_ref())
            .expect("last step recorded");
        targets.push(attention_target(&geom, recon, inp.panorama)?);
    }
    let attention_term = match cfg.target {
        AttentionTargetKind::Sparse => {
            let l: Vec<u32> = targets.iter().map(|t| t.label as u32).collect();
            sparse_cross_entropy(&final_logits, &l)?
        }
        AttentionTargetKind::Distribution => {
            let d: Vec<f64> = targets.iter().flat_map(|t| t.distribution.iter().copied()).collect();
            let d = Tensor::from_vec(d, (batch, PATCH_COUNT), &device)?.to_dtype(dtype)?;
            distribution_cross_entropy(&final_logits, &d)?
        }
    };

    let class_logits = match &model.classifier {
        None => None,
        Some(Classifier::Recon(vgg)) => Some(vgg.forward(final_scales.last().expect("four scales"))?),
        Some(Classifier::Vector { head, .. }) => {
            Some(head.forward(final_vector_class.as_ref().expect("class vector built at last step"))?)
        }
    };
    let class_term = match (&class_logits, &labels) {
        (Some(l), Some(y)) => Some(sparse_cross_entropy(l, y)?),
        _ => None,
    };

    let mut total = Tensor::stack(&local_terms, 0)?.sum(0)?;
    for s in &scale_terms {
        total = (total + s)?;
    }
    total = (total + &attention_term)?;
    if let Some(c) = &class_term {
        total = (total + c)?;
    }
    let loss = total.mean_all()?;

    let scale_host: Vec<Vec<f64>> = scale_terms.iter().map(to_f64_vec).collect::<Result<_>>()?;
    let attention_host = to_f64_vec(&attention_term)?;
    let class_host = class_term.as_ref().map(to_f64_vec).transpose()?;
    let class_logits_host: Option<Vec<f32>> = class_logits
        .as_ref()
        .map(|l| l.to_dtype(DType::F32)?.flatten_all()?.to_vec1())
        .transpose()?;

    let episodes = states
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(b, (st, target))| {
            let mut scales = [0f64; 4];
            for (k, s) in scales.iter_mut().enumerate() {
                *s = scale_host[k][b];
            }
            let losses = LossBreakdown {
                local: st.steps.iter().map(|s| s.local_loss).collect(),
                scales,
                attention: attention_host[b],
                classification: class_host.as_ref().map(|c| c[b]),
            };
            let class_logits = class_logits_host
                .as_ref()
                .map(|l| l[b * model.classes..(b + 1) * model.classes].to_vec());
            EpisodeResult {
                trajectory: st.trajectory,
                steps: st.steps,
                losses,
                target,
                matrix: st.matrix,
                class_logits,
            }
        })
        .collect();

    Ok(Rollout {
        episodes,
        loss,
        final_logits,
        final_scales,
    })
}

fn class_labels(model: &ExplorerModel, inputs: &[EpisodeInput<'_>]) -> Result<Option<Vec<u32>>> {
    if model.classifier.is_none() {
        return Ok(None);
    }
    let mut labels = Vec::with_capacity(inputs.len());
    for inp in inputs {
        match inp.label {
            Some(l) if l < model.classes => labels.push(l as u32),
            Some(l) => {
                return Err(Error::Invalid(format!(
                    "label {l} out of range for {} classes",
                    model.classes
                )));
            }
            None => return Ok(None),
        }
    }
    Ok(Some(labels))
}

/// Area averaging by an integer factor; identity for factor 1.
pub fn area_pool(x: &Tensor, fy: usize, fx: usize) -> Result<Tensor> {
    if fy == 1 && fx == 1 {
        Ok(x.clone())
    } else {
        Ok(x.avg_pool2d((fy, fx))?)
    }
}

/// Fit-in matrix of every episode as a (B, 3, H, W) tensor.
fn gather_matrix(steps: &[Tensor], states: &[EpisodeState], geom: &GridGeometry, device: &Device) -> Result<Tensor> {
    let batch = states.len();
    let first = &steps[0];
    let zero = Tensor::zeros((batch, 1, 3), first.dtype(), device)?;
    let mut parts = vec![&zero];
    parts.extend(steps.iter());
    let pool = Tensor::cat(&parts, 1)?;
    let rows = pool.dim(1)?;
    let pool = pool.reshape((batch * rows, 3))?;
    let pixels = geom.height() * geom.width();
    let mut idx = Vec::with_capacity(batch * pixels);
    for (b, st) in states.iter().enumerate() {
        let base = (b * rows) as u32;
        idx.extend(st.paste.sources().iter().map(|&s| base + s));
    }
    let idx = Tensor::from_vec(idx, batch * pixels, device)?;
    Ok(pool
        .index_select(&idx, 0)?
        .reshape((batch, geom.height(), geom.width(), 3))?
        .permute((0, 3, 1, 2))?)
}

/// Fit-in vector of every episode as a (B, 32·D) tensor.
fn gather_vector(steps: &[Tensor], states: &[EpisodeState], device: &Device) -> Result<Tensor> {
    let batch = states.len();
    let d = steps[0].dim(1)?;
    let zero = Tensor::zeros((batch, 1, d), steps[0].dtype(), device)?;
    let unsqueezed: Vec<Tensor> = steps
        .iter()
        .map(|s| s.unsqueeze(1))
        .collect::<std::result::Result<_, _>>()?;
    let mut parts = vec![&zero];
    parts.extend(unsqueezed.iter());
    let pool = Tensor::cat(&parts, 1)?;
    let rows = pool.dim(1)?;
    let pool = pool.reshape((batch * rows, d))?;
    let mut idx = Vec::with_capacity(batch * SLOT_COUNT);
    for (b, st) in states.iter().enumerate() {
        let base = (b * rows) as u32;
        idx.extend(st.slots.sources().iter().map(|&s| base + s));
    }
    let idx = Tensor::from_vec(idx, batch * SLOT_COUNT, device)?;
    Ok(pool.index_select(&idx, 0)?.reshape((batch, SLOT_COUNT * d))?)
}

/// Matrix data and occupancy fraction at every scale, coarsest first.
fn matrix_views(
    matrix: &Tensor,
    states: &[EpisodeState],
    geom: &GridGeometry,
    dtype: DType,
    device: &Device,
) -> Result<Vec<Tensor>> {
    let batch = states.len();
    let (h, w) = (geom.height(), geom.width());
    let mut occ = Vec::with_capacity(batch * h * w);
    for st in states {
        occ.extend(st.paste.sources().iter().map(|&s| (s != 0) as u8 as f32));
    }
    let occ = Tensor::from_vec(occ, (batch, 1, h, w), device)?.to_dtype(dtype)?;
    geom.scales()
        .iter()
        .map(|&(sh, sw)| {
            let data = area_pool(matrix, h / sh, w / sw)?;
            let frac = area_pool(&occ, h / sh, w / sw)?;
            Ok(Tensor::cat(&[&data, &frac], 1)?)
        })
        .collect()
}

/// Channel-first planes of the panorama at every scale (used by tests and the
/// harness).
pub fn panorama_scales(geom: &GridGeometry, pano: &Image) -> Result<Vec<Image>> {
    geom.scales()
        .iter()
        .map(|&(sh, sw)| Ok(pano.area_downsample(sh, sw)?))
        .collect()
}
