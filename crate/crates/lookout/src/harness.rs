//! Policy evaluation: reconstruction error curves, accuracy and the comparison
//! table.

use std::fmt::Write as _;

use lookout_core::metrics::{mse_metric, rmse_from_mse};
use lookout_core::PolicyKind;
use serde::{Deserialize, Serialize};

use crate::dataset::PanoramaSample;
use crate::episode::{run_batch, EpisodeConfig, EpisodeInput, LocalSource};
use crate::error::{Error, Result};
use crate::nets::{ExplorerModel, UpperBoundModel};
use crate::seed::mix_seeds;
use crate::tensor::images_to_tensor;

/// A published comparison row: method, MSE (×1000) and RMSE on the 0–255
/// scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub method: &'static str,
    pub mse: f64,
    pub rmse: f64,
}

pub const REFERENCE_ROWS: [ReferenceRow; 7] = [
    ReferenceRow {
        method: "Side-kick Policy Learning",
        mse: 23.36,
        rmse: 39.0,
    },
    ReferenceRow {
        method: "Learning to Look Around",
        mse: 23.16,
        rmse: 38.8,
    },
    ReferenceRow {
        method: "Where to Look Next",
        mse: 12.49,
        rmse: 28.5,
    },
    ReferenceRow {
        method: "with Random Selection",
        mse: 18.73,
        rmse: 34.9,
    },
    ReferenceRow {
        method: "with Middle Rows Random Selection",
        mse: 22.67,
        rmse: 46.7,
    },
    ReferenceRow {
        method: "with Neighbourhood Selection",
        mse: 16.64,
        rmse: 32.9,
    },
    ReferenceRow {
        method: "with GT Error Attendance (upper bound)",
        mse: 10.39,
        rmse: 26.0,
    },
];

impl ReferenceRow {
    /// Whether the RMSE column is the square-root transform of the MSE
    /// column, `255·sqrt(MSE/1000)`, within `tolerance`.
    pub fn is_consistent(&self, tolerance: f64) -> bool {
        (rmse_from_mse(self.mse) - self.rmse).abs() <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub glimpses: usize,
    /// Every sample is explored once per seed.
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub local_source: LocalSource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            glimpses: 8,
            seeds: vec![0],
            batch_size: 16,
            local_source: LocalSource::Network,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    /// Mean MSE (×1000) over all episodes after each step.
    pub mse: Vec<f64>,
    /// RMSE of the mean MSE after each step.
    pub rmse: Vec<f64>,
    /// Final-step RMSE of each seed, in seed order.
    pub seed_rmse: Vec<f64>,
    /// Fraction of correctly classified episodes, when the model classifies.
    pub accuracy: Option<f64>,
    pub episodes: usize,
}

impl PolicyReport {
    pub fn final_mse(&self) -> f64 {
        *self.mse.last().expect("at least one step")
    }

    pub fn final_rmse(&self) -> f64 {
        *self.rmse.last().expect("at least one step")
    }
}

/// Explores every sample once per seed with `policy` and averages the error
/// of the full-scale reconstruction after every step.
pub fn evaluate(
    model: &ExplorerModel,
    samples: &[PanoramaSample],
    policy: PolicyKind,
    opts: &EvalOptions,
) -> Result<PolicyReport> {
    if samples.is_empty() || opts.seeds.is_empty() {
        return Err(Error::Invalid(
            "evaluation needs at least one sample and one seed".into(),
        ));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut cfg = EpisodeConfig::eval(opts.glimpses, policy);
    cfg.local_source = opts.local_source;
    let steps = opts.glimpses;
    let mut mse_sum = vec![0f64; steps];
    let mut seed_rmse = Vec::with_capacity(opts.seeds.len());
    let (mut correct, mut classified) = (0usize, 0usize);
    for &seed in &opts.seeds {
        let mut seed_final = 0f64;
        for (chunk_idx, chunk) in samples.chunks(opts.batch_size).enumerate() {
            let inputs: Vec<EpisodeInput<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(j, s)| EpisodeInput {
                    panorama: &s.pixels,
                    label: s.label,
                    seed: mix_seeds(seed, &[(chunk_idx * opts.batch_size + j) as u64]),
                })
                .collect();
            let rollout = run_batch(model, &inputs, &cfg)?;
            for (ep, s) in rollout.episodes.iter().zip(chunk) {
                for (t, step) in ep.steps.iter().enumerate() {
                    let recon = step
                        .recon
                        .as_ref()
                        .ok_or_else(|| Error::Invalid("step not recorded".into()))?;
                    let m = mse_metric(recon, &s.pixels)?;
                    mse_sum[t] += m;
                    if t + 1 == steps {
                        seed_final += m;
                    }
                }
                if let (Some(logits), Some(label)) = (&ep.class_logits, s.label) {
                    classified += 1;
                    correct += (argmax_f32(logits) == label) as usize;
                }
            }
        }
        seed_rmse.push(rmse_from_mse(seed_final / samples.len() as f64));
    }
    let episodes = samples.len() * opts.seeds.len();
    let mse: Vec<f64> = mse_sum.iter().map(|s| s / episodes as f64).collect();
    Ok(PolicyReport {
        policy: policy.name().to_string(),
        rmse: mse.iter().map(|&m| rmse_from_mse(m)).collect(),
        mse,
        seed_rmse,
        accuracy: (classified > 0).then(|| correct as f64 / classified as f64),
        episodes,
    })
}

/// Accuracy of the classifier on the full panoramas.
pub fn upper_bound_accuracy(model: &UpperBoundModel, samples: &[PanoramaSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::Invalid(
            "accuracy needs samples and a positive batch size".into(),
        ));
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size) {
        let x = images_to_tensor(
            &chunk.iter().map(|s| &s.pixels).collect::<Vec<_>>(),
            model.store.dtype(),
            model.store.device(),
        )?;
        let logits: Vec<Vec<f32>> = model.vgg.forward(&x)?.to_dtype(candle_core::DType::F32)?.to_vec2()?;
        for (row, s) in logits.iter().zip(chunk) {
            let label = s
                .label
                .ok_or_else(|| Error::Invalid(format!("sample {} has no label", s.id)))?;
            correct += (argmax_f32(row) == label) as usize;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Index of the first maximum.
pub fn argmax_f32(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub const CURVES_HEADER: &str = "policy,step,mse,rmse";

/// One row per policy and step (steps count from 1).
pub fn curves_csv(reports: &[PolicyReport]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in reports {
        for (t, (m, e)) in r.mse.iter().zip(&r.rmse).enumerate() {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.policy, t + 1, m, e);
        }
    }
    out
}

/// Plain-text comparison: the measured policies, then the reference rows.
pub fn comparison_table(reports: &[PolicyReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<44} {:>10} {:>10} {:>9}", "Method", "MSE", "RMSE", "Accuracy");
    for r in reports {
        let name = r
            .policy
            .parse::<PolicyKind>()
            .map(|p| p.description())
            .unwrap_or(&r.policy);
        let acc = r.accuracy.map(|a| format!("{:.3}", a)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<44} {:>10.2} {:>10.1} {:>9}",
            name,
            r.final_mse(),
            r.final_rmse(),
            acc
        );
    }
    let _ = writeln!(out, "-- reference --");
    for row in REFERENCE_ROWS {
        let _ = writeln!(
            out,
            "{:<44} {:>10.2} {:>10.1} {:>9}",
            row.method, row.mse, row.rmse, "-"
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_layout() {
        let r = PolicyReport {
            policy: "random".into(),
            mse: vec![20.0, 10.0],
            rmse: vec![rmse_from_mse(20.0), rmse_from_mse(10.0)],
            seed_rmse: vec![],
            accuracy: None,
            episodes: 1,
        };
        let csv = curves_csv(&[r.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CURVES_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("random,2,10.000000,"));
        assert!(comparison_table(&[r]).contains("with Random Selection"));
    }

    #[test]
    fn argmax_first_maximum() {
        assert_eq!(argmax_f32(&[0.0, 2.0, 2.0, 1.0]), 1);
    }
}
