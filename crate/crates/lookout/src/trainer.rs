//! End-to-end training with Adam.

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use lookout_core::loss::LossBreakdown;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment_wrap, PanoramaSample};
use crate::episode::{run_batch, AttentionTargetKind, EpisodeConfig, EpisodeInput};
use crate::error::{Error, Result};
use crate::nets::blocks::sparse_cross_entropy;
use crate::nets::{ClassificationMode, ExplorerModel, Profile, UpperBoundModel, DEFAULT_CLASSES};
use crate::seed::mix_seeds;
use crate::tensor::images_to_tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Glimpses per episode (T).
    pub glimpses: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// When set, the rate falls linearly per epoch from `learning_rate` in
    /// the first epoch to this value in epoch `epochs - 1` (and stays there).
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub profile: Profile,
    pub classification: ClassificationMode,
    pub classes: usize,
    pub attention_target: AttentionTargetKind,
    /// Random horizontal roll of every training example.
    pub augment: bool,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            glimpses: 8,
            batch_size: 16,
            epochs: 1,
            learning_rate: 1e-4,
            final_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            profile: Profile::Full,
            classification: ClassificationMode::Off,
            classes: DEFAULT_CLASSES,
            attention_target: AttentionTargetKind::Sparse,
            augment: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.glimpses == 0 || self.glimpses > lookout_core::PATCH_COUNT {
            return bad(format!("glimpses must be in 1..=128, got {}", self.glimpses));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if let Some(f) = self.final_learning_rate {
            if !(f >= 0.0 && f.is_finite()) {
                return bad(format!("final_learning_rate must be finite and non-negative, got {f}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive".into());
        }
        if self.classification != ClassificationMode::Off && self.classes < 2 {
            return bad("classification needs at least 2 classes".into());
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (counted from 0).
    pub fn learning_rate_at(&self, epoch: u64) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(last) => {
                let span = self.epochs.saturating_sub(1).max(1) as f64;
                let t = (epoch as f64 / span).min(1.0);
                self.learning_rate + (last - self.learning_rate) * t
            }
        }
    }

    fn adam(&self) -> ParamsAdamW {
        ParamsAdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
            weight_decay: 0.0,
        }
    }
}

pub const METRICS_HEADER: &str =
    "iteration,epoch,L_local_mean,L_16x32,L_32x64,L_64x128,L_128x256,L_attention,L_class,total";

/// Batch means of one iteration's loss terms. Terms that a model does not
/// have are `None` and written as empty CSV fields.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub epoch: u64,
    pub local_mean: Option<f64>,
    pub scales: Option<[f64; 4]>,
    pub attention: Option<f64>,
    pub classification: Option<f64>,
    pub total: f64,
}

impl IterationMetrics {
    fn from_breakdowns(iteration: u64, epoch: u64, b: &[LossBreakdown]) -> Self {
        let n = b.len() as f64;
        let mean = |f: &dyn Fn(&LossBreakdown) -> f64| b.iter().map(f).sum::<f64>() / n;
        let mut scales = [0f64; 4];
        for (k, s) in scales.iter_mut().enumerate() {
            *s = mean(&|x| x.scales[k]);
        }
        let classification = if b.iter().all(|x| x.classification.is_some()) {
            Some(mean(&|x| x.classification.unwrap_or(0.0)))
        } else {
            None
        };
        Self {
            iteration,
            epoch,
            local_mean: Some(mean(&|x| x.local_mean())),
            scales: Some(scales),
            attention: Some(mean(&|x| x.attention)),
            classification,
            total: mean(&|x| x.total()),
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let scales = match self.scales {
            Some(s) => s.map(|x| x.to_string()).join(","),
            None => ",,,".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            opt(self.local_mean),
            scales,
            opt(self.attention),
            opt(self.classification),
            self.total
        )
    }
}

pub enum TrainModel {
    Explorer(ExplorerModel),
    UpperBound(UpperBoundModel),
}

impl TrainModel {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let arch = config.profile.architecture();
        Ok(match config.classification {
            ClassificationMode::UpperBound => {
                TrainModel::UpperBound(UpperBoundModel::new(arch, config.classes, DType::F32, config.seed)?)
            }
            mode => TrainModel::Explorer(ExplorerModel::new(arch, mode, config.classes, DType::F32, config.seed)?),
        })
    }

    pub fn store(&self) -> &crate::nets::ParamStore {
        match self {
            TrainModel::Explorer(m) => &m.store,
            TrainModel::UpperBound(m) => &m.store,
        }
    }
}

pub type IterationHook<'a> = dyn FnMut(&Trainer, &IterationMetrics) -> Result<()> + 'a;

pub struct Trainer {
    pub config: TrainConfig,
    pub model: TrainModel,
    optimizer: AdamW,
    /// Completed optimizer steps.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = TrainModel::new(&config)?;
        Self::with_model(config, model, 0, 0)
    }

    /// Continues from a restored model; counters carry on from the given
    /// values.
    pub fn with_model(config: TrainConfig, model: TrainModel, iteration: u64, epoch: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(model.store().vars(), config.adam())?;
        Ok(Self {
            config,
            model,
            optimizer,
            iteration,
            epoch,
        })
    }

    /// A fresh trainer whose model starts from the parameters it shares with
    /// `source` (transfer learning, e.g. a reconstruction-only explorer under
    /// a new classifier). Counters start at zero.
    pub fn transfer(config: TrainConfig, source: &crate::nets::ParamStore) -> Result<Self> {
        let trainer = Self::new(config)?;
        trainer.model.store().copy_shared_from(source)?;
        Ok(trainer)
    }

    pub fn explorer(&self) -> Option<&ExplorerModel> {
        match &self.model {
            TrainModel::Explorer(m) => Some(m),
            TrainModel::UpperBound(_) => None,
        }
    }

    /// One pass over `data` in a seeded random order.
    pub fn train_epoch(&mut self, data: &[PanoramaSample], hook: &mut IterationHook<'_>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Invalid("empty training split".into()));
        }
        self.optimizer
            .set_learning_rate(self.config.learning_rate_at(self.epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(self.config.seed, &[0x5EED, self.epoch]));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<PanoramaSample> = chunk
                .iter()
                .map(|&i| {
                    let s = &data[i];
                    if self.config.augment {
                        augment_wrap(s, rng.random_range(0..s.pixels.width()))
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let metrics = self.step(&batch)?;
            hook(self, &metrics)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// One optimizer step on one batch.
    pub fn step(&mut self, batch: &[PanoramaSample]) -> Result<IterationMetrics> {
        let iteration = self.iteration + 1;
        let (loss, metrics) = match &self.model {
            TrainModel::Explorer(model) => {
                let inputs: Vec<EpisodeInput<'_>> = batch
                    .iter()
                    .enumerate()
                    .map(|(b, s)| EpisodeInput {
                        panorama: &s.pixels,
                        label: s.label,
                        seed: mix_seeds(self.config.seed, &[iteration, b as u64]),
                    })
                    .collect();
                let mut cfg = EpisodeConfig::train(self.config.glimpses);
                cfg.target = self.config.attention_target;
                let rollout = run_batch(model, &inputs, &cfg)?;
                let breakdowns: Vec<LossBreakdown> = rollout.episodes.into_iter().map(|e| e.losses).collect();
                (
                    rollout.loss,
                    IterationMetrics::from_breakdowns(iteration, self.epoch, &breakdowns),
                )
            }
            TrainModel::UpperBound(model) => {
                let labels = labels_of(batch, model.classes)?;
                let x = images_to_tensor(
                    &batch.iter().map(|s| &s.pixels).collect::<Vec<_>>(),
                    model.store.dtype(),
                    model.store.device(),
                )?;
                let per_sample = sparse_cross_entropy(&model.vgg.forward(&x)?, &labels)?;
                let loss = per_sample.mean_all()?;
                let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                let m = IterationMetrics {
                    iteration,
                    epoch: self.epoch,
                    local_mean: None,
                    scales: None,
                    attention: None,
                    classification: Some(value),
                    total: value,
                };
                (loss, m)
            }
        };
        if !metrics.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iteration as usize,
                detail: format!("non-finite loss: {}", metrics.csv_row()),
            });
        }
        self.optimizer.backward_step(&loss)?;
        self.iteration = iteration;
        Ok(metrics)
    }
}

pub fn labels_of(batch: &[PanoramaSample], classes: usize) -> Result<Vec<u32>> {
    batch
        .iter()
        .map(|s| match s.label {
            Some(l) if l < classes => Ok(l as u32),
            Some(l) => Err(Error::Invalid(format!("label {l} out of range for {classes} classes"))),
            None => Err(Error::Invalid(format!("sample {} has no label", s.id))),
        })
        .collect()
}
