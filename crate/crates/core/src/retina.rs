//! Retina-like glimpse sensor.
//!
//! A glimpse covers the 3×3 blocks around its center. The center block is read
//! at full resolution; each of the eight ring blocks is 2×2 mean-pooled and
//! re-expanded by nearest neighbour so the canvas keeps a uniform
//! `3b × 3b` layout. Reads wrap around the horizontal seam. Ring rows that fall
//! above or below the panorama are zero and marked [`Resolution::Invalid`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::geometry::{BlockIndex, GridGeometry};
use crate::image::{Image, Mask, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resolution {
    Full,
    Downsampled,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetinaGlimpse {
    pub center: BlockIndex,
    pub canvas: Image,
    pub resolution: Vec<Resolution>,
}

impl RetinaGlimpse {
    pub fn canvas_size(&self) -> usize {
        self.canvas.height()
    }

    /// Number of distinct sensor samples per channel actually read from the
    /// panorama (768 for an interior glimpse at the canonical geometry).
    pub fn sample_count(&self) -> usize {
        let full = self.resolution.iter().filter(|&&r| r == Resolution::Full).count();
        let down = self
            .resolution
            .iter()
            .filter(|&&r| r == Resolution::Downsampled)
            .count();
        full + down / 4
    }

    pub fn validity(&self) -> Mask {
        let n = self.canvas_size();
        let data = self.resolution.iter().map(|&r| r != Resolution::Invalid).collect();
        Mask::from_vec(n, n, data).expect("canvas and resolution map agree")
    }

    /// Network input planes in channel-first order: R, G, B, is-full-res,
    /// is-valid.
    pub fn input_planes(&self) -> Vec<f32> {
        let n = self.canvas_size();
        let mut out = vec![0f32; 5 * n * n];
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                let px = self.canvas.pixel(y, x);
                for c in 0..CHANNELS {
                    out[c * n * n + i] = px[c];
                }
                let r = self.resolution[i];
                out[3 * n * n + i] = (r == Resolution::Full) as u8 as f32;
                out[4 * n * n + i] = (r != Resolution::Invalid) as u8 as f32;
            }
        }
        out
    }
}

/// Panorama coordinates read by canvas cell `(cy, cx)` of a glimpse centered
/// on `center`, or `None` when the cell lies above or below the panorama.
#[inline]
pub fn canvas_source(geom: &GridGeometry, center: BlockIndex, cy: usize, cx: usize) -> Option<(usize, usize)> {
    let b = geom.block_size() as isize;
    let py = center.row() as isize * b + cy as isize - b;
    if py < 0 || py >= geom.height() as isize {
        return None;
    }
    let px = (center.col() as isize * b + cx as isize - b).rem_euclid(geom.width() as isize);
    Some((py as usize, px as usize))
}

pub fn extract_retina(geom: &GridGeometry, pano: &Image, center: BlockIndex) -> Result<RetinaGlimpse> {
    pano.ensure_dims(geom.height(), geom.width())?;
    let b = geom.block_size();
    let n = geom.canvas();
    let mut canvas = Image::zeros(n, n);
    let mut resolution = vec![Resolution::Invalid; n * n];

    for cell in center.footprint() {
        if !cell.valid {
            continue;
        }
        let (oy, ox) = (cell.offset_row * b, cell.offset_col * b);
        if cell.is_center() {
            for y in 0..b {
                for x in 0..b {
                    let (py, px) = canvas_source(geom, center, oy + y, ox + x).expect("center block is in range");
                    canvas.set_pixel(oy + y, ox + x, pano.pixel(py, px));
                    resolution[(oy + y) * n + ox + x] = Resolution::Full;
                }
            }
            continue;
        }
        for ty in (0..b).step_by(2) {
            for tx in (0..b).step_by(2) {
                let mut acc = [0f32; CHANNELS];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (py, px) =
                        canvas_source(geom, center, oy + ty + dy, ox + tx + dx).expect("valid ring block is in range");
                    let p = pano.pixel(py, px);
                    for c in 0..CHANNELS {
                        acc[c] += p[c];
                    }
                }
                let mean = acc.map(|a| a * 0.25);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    canvas.set_pixel(oy + ty + dy, ox + tx + dx, mean);
                    resolution[(oy + ty + dy) * n + ox + tx + dx] = Resolution::Downsampled;
                }
            }
        }
    }

    Ok(RetinaGlimpse {
        center,
        canvas,
        resolution,
    })
}

/// Full-resolution crop of the glimpse footprint, the target of the local
/// reconstruction loss. The mask is false where the footprint leaves the
/// panorama vertically.
pub fn ground_truth_crop(geom: &GridGeometry, pano: &Image, center: BlockIndex) -> Result<(Image, Mask)> {
    pano.ensure_dims(geom.height(), geom.width())?;
    let n = geom.canvas();
    let mut crop = Image::zeros(n, n);
    let mut mask = Mask::new(n, n, false);
    for cy in 0..n {
        for cx in 0..n {
            if let Some((py, px)) = canvas_source(geom, center, cy, cx) {
                crop.set_pixel(cy, cx, pano.pixel(py, px));
                mask.set(cy, cx, true);
            }
        }
    }
    Ok((crop, mask))
}
