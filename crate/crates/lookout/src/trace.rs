//! Step-by-step exploration dumps: reconstructions, attention heatmaps,
//! glimpse overlays and a JSON trace.

use std::fs;
use std::path::Path;

use lookout_core::{BlockIndex, GridGeometry, Image, PolicyKind, GRID_COLS, GRID_ROWS, PATCH_COUNT};
use serde::{Deserialize, Serialize};

use crate::dataset::save_png;
use crate::episode::{run_batch, EpisodeConfig, EpisodeInput};
use crate::error::{Error, Result};
use crate::nets::ExplorerModel;

pub const TRACE_FILE: &str = "trace.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub patch: usize,
    /// Attention distribution over the 128 patches for the next glimpse.
    pub attention: Vec<f64>,
    pub local_loss: f64,
    pub mse: f64,
    pub reconstruction: String,
    pub heatmap: String,
    pub overlay: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub image: String,
    pub seed: u64,
    pub policy: String,
    pub steps: Vec<TraceStep>,
}

/// Per-patch probabilities as a 16×8 brightness grid, scaled linearly over
/// [0, max] and blown up to `height × width`.
pub fn render_heatmap(probabilities: &[f64], height: usize, width: usize) -> Result<Image> {
    if probabilities.len() != PATCH_COUNT {
        return Err(Error::Invalid(format!(
            "expected {PATCH_COUNT} probabilities, got {}",
            probabilities.len()
        )));
    }
    if height % GRID_ROWS != 0 || width % GRID_COLS != 0 {
        return Err(Error::Invalid(format!(
            "{height}×{width} is not a multiple of the patch grid"
        )));
    }
    let max = probabilities.iter().cloned().fold(0f64, f64::max);
    let (bh, bw) = (height / GRID_ROWS, width / GRID_COLS);
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let p = probabilities[(y / bh) * GRID_COLS + x / bw];
            let v = if max > 0.0 { (p / max) as f32 } else { 0.0 };
            data.extend([v, v, v]);
        }
    }
    Ok(Image::from_vec(height, width, data)?)
}

/// The panorama dimmed everywhere except the glimpse footprints seen so far,
/// with the latest footprint's blocks outlined in red.
pub fn render_overlay(geom: &GridGeometry, panorama: &Image, visited: &[usize]) -> Result<Image> {
    let (w, bs) = (geom.width(), geom.block_size());
    let footprint_blocks = |patch: usize| -> Result<Vec<BlockIndex>> {
        Ok(BlockIndex::from_patch(patch)?
            .footprint()
            .iter()
            .filter_map(|c| c.block())
            .collect())
    };
    let mut seen = vec![false; geom.height() * w];
    for &p in visited {
        for b in footprint_blocks(p)? {
            for y in b.row() * bs..(b.row() + 1) * bs {
                for x in b.col() * bs..(b.col() + 1) * bs {
                    seen[y * w + x] = true;
                }
            }
        }
    }
    let mut out = panorama.clone();
    for (i, &s) in seen.iter().enumerate() {
        if !s {
            for c in 0..3 {
                let (y, x) = (i / w, i % w);
                out.set(y, x, c, out.get(y, x, c) * 0.3);
            }
        }
    }
    if let Some(&last) = visited.last() {
        for b in footprint_blocks(last)? {
            for k in 0..bs {
                let (y0, x0) = (b.row() * bs, b.col() * bs);
                for (y, x) in [(y0, x0 + k), (y0 + bs - 1, x0 + k), (y0 + k, x0), (y0 + k, x0 + bs - 1)] {
                    out.set_pixel(y, x, [1.0, 0.0, 0.0]);
                }
            }
        }
    }
    Ok(out)
}

/// Explores one panorama and writes `step_XX_recon.png`,
/// `step_XX_heatmap.png`, `step_XX_overlay.png` and `trace.json` into `dir`.
pub fn explore(
    model: &ExplorerModel,
    panorama: &Image,
    image_name: &str,
    glimpses: usize,
    policy: PolicyKind,
    seed: u64,
    dir: &Path,
) -> Result<ExplorationTrace> {
    let geom = model.arch.geometry();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let input = EpisodeInput {
        panorama,
        label: None,
        seed,
    };
    let rollout = run_batch(model, &[input], &EpisodeConfig::eval(glimpses, policy))?;
    let ep = &rollout.episodes[0];
    let mut steps = Vec::with_capacity(ep.steps.len());
    for (t, s) in ep.steps.iter().enumerate() {
        let recon = s
            .recon
            .as_ref()
            .ok_or_else(|| Error::Invalid("step not recorded".into()))?;
        let names = [
            format!("step_{:02}_recon.png", t + 1),
            format!("step_{:02}_heatmap.png", t + 1),
            format!("step_{:02}_overlay.png", t + 1),
        ];
        save_png(recon, &dir.join(&names[0]))?;
        save_png(
            &render_heatmap(&s.attention, geom.height(), geom.width())?,
            &dir.join(&names[1]),
        )?;
        save_png(
            &render_overlay(&geom, panorama, &ep.trajectory[..=t])?,
            &dir.join(&names[2]),
        )?;
        let [reconstruction, heatmap, overlay] = names;
        steps.push(TraceStep {
            step: t + 1,
            patch: s.patch,
            attention: s.attention.clone(),
            local_loss: s.local_loss,
            mse: lookout_core::metrics::mse_metric(recon, panorama)?,
            reconstruction,
            heatmap,
            overlay,
        });
    }
    let trace = ExplorationTrace {
        image: image_name.to_string(),
        seed,
        policy: policy.name().to_string(),
        steps,
    };
    let path = dir.join(TRACE_FILE);
    let json = serde_json::to_string_pretty(&trace).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_heatmap_is_constant() {
        let img = render_heatmap(&[1.0 / 128.0; 128], 32, 64).unwrap();
        assert!(img.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn heatmap_blocks() {
        let mut p = vec![0.0; 128];
        p[17] = 0.5; // row 1, col 1
        p[0] = 0.25;
        let img = render_heatmap(&p, 16, 32).unwrap();
        assert_eq!(img.get(2, 2, 0), 1.0);
        assert_eq!(img.get(3, 3, 1), 1.0);
        assert_eq!(img.get(0, 0, 2), 0.5);
        assert_eq!(img.get(0, 2, 0), 0.0);
    }
}
