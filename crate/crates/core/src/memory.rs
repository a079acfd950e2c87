//! Spatial memory maps.
//!
//! Two memories keep every glimpse at the place it was taken:
//!
//! - [`FitInMatrix`]: a panorama-sized canvas into which reconstructed
//!   glimpses are pasted, with an occupancy mask.
//! - [`FitInFeatureVector`]: 32 spatial slots (an 8×4 grid, each slot covering
//!   2×2 blocks) holding one glimpse descriptor each.
//!
//! Both use newest-write-wins on overlap. [`PastePlan`] and [`SlotPlan`] record
//! the same write sequence as source indices only, so that a tensor library can
//! rebuild the memories by gathering from the stacked per-step outputs and keep
//! gradients flowing into them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{BlockIndex, GridGeometry};
use crate::image::{Image, Mask};
use crate::retina::canvas_source;

pub const SLOT_COLS: usize = 8;
pub const SLOT_ROWS: usize = 4;
pub const SLOT_COUNT: usize = SLOT_COLS * SLOT_ROWS;

/// Memory slot holding the descriptor of a glimpse centered on `block`.
pub fn slot_of(block: BlockIndex) -> usize {
    (block.row() / 2) * SLOT_COLS + block.col() / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitInMatrix {
    geom: GridGeometry,
    data: Image,
    occupancy: Mask,
}

impl FitInMatrix {
    pub fn new(geom: GridGeometry) -> Self {
        Self {
            geom,
            data: Image::zeros(geom.height(), geom.width()),
            occupancy: Mask::new(geom.height(), geom.width(), false),
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn data(&self) -> &Image {
        &self.data
    }

    pub fn occupancy(&self) -> &Mask {
        &self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.count()
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.geom);
    }

    /// Pastes a `canvas × canvas` reconstruction at the footprint of `center`.
    /// Only cells that are true in `mask` and inside the panorama are written.
    pub fn write(&mut self, recon: &Image, center: BlockIndex, mask: &Mask) -> Result<()> {
        let n = self.geom.canvas();
        recon.ensure_dims(n, n)?;
        if (mask.height(), mask.width()) != (n, n) {
            return Err(Error::ShapeMismatch {
                expected_h: n,
                expected_w: n,
                got_h: mask.height(),
                got_w: mask.width(),
            });
        }
        for cy in 0..n {
            for cx in 0..n {
                if !mask.get(cy, cx) {
                    continue;
                }
                if let Some((py, px)) = canvas_source(&self.geom, center, cy, cx) {
                    self.data.set_pixel(py, px, recon.pixel(cy, cx));
                    self.occupancy.set(py, px, true);
                }
            }
        }
        Ok(())
    }

    /// Area-averaged copies of the matrix at each requested scale, together
    /// with the fraction of occupied pixels under every output cell.
    pub fn views(&self, scales: &[(usize, usize)]) -> Result<Vec<MatrixView>> {
        let (h, w) = self.data.dims();
        scales
            .iter()
            .map(|&(sh, sw)| {
                let data = self.data.area_downsample(sh, sw)?;
                let (fy, fx) = (h / sh, w / sw);
                let norm = 1.0 / (fy * fx) as f32;
                let mut occupancy = vec![0f32; sh * sw];
                for y in 0..sh {
                    for x in 0..sw {
                        let mut n = 0usize;
                        for sy in y * fy..(y + 1) * fy {
                            for sx in x * fx..(x + 1) * fx {
                                n += self.occupancy.get(sy, sx) as usize;
                            }
                        }
                        occupancy[y * sw + x] = n as f32 * norm;
                    }
                }
                Ok(MatrixView { data, occupancy })
            })
            .collect()
    }

    /// Matrix contents where occupied, `fill` elsewhere.
    pub fn composite(&self, fill: &Image) -> Result<Image> {
        fill.ensure_dims(self.geom.height(), self.geom.width())?;
        let mut out = fill.clone();
        for y in 0..self.geom.height() {
            for x in 0..self.geom.width() {
                if self.occupancy.get(y, x) {
                    out.set_pixel(y, x, self.data.pixel(y, x));
                }
            }
        }
        Ok(out)
    }
}

/// One scale of the fit-in matrix as seen by the upsampler.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixView {
    pub data: Image,
    /// Per-cell occupied fraction, row-major.
    pub occupancy: Vec<f32>,
}

/// Slotted memory of per-glimpse descriptors; flattened slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInFeatureVector {
    features_per_slot: usize,
    values: Vec<f32>,
    occupied: [bool; SLOT_COUNT],
}

/// Same layout as [`FitInFeatureVector`], fed by the classification
/// feature extractor.
pub type FitInClassVector = FitInFeatureVector;

impl FitInFeatureVector {
    pub fn new(features_per_slot: usize) -> Self {
        Self {
            features_per_slot,
            values: vec![0.0; features_per_slot * SLOT_COUNT],
            occupied: [false; SLOT_COUNT],
        }
    }

    pub fn features_per_slot(&self) -> usize {
        self.features_per_slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn slot(&self, slot: usize) -> &[f32] {
        &self.values[slot * self.features_per_slot..(slot + 1) * self.features_per_slot]
    }

    pub fn is_occupied(&self, slot: usize) -> bool {
        self.occupied[slot]
    }

    pub fn occupied_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..SLOT_COUNT).filter(|&s| self.occupied[s])
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.features_per_slot);
    }

    pub fn write(&mut self, features: &[f32], center: BlockIndex) -> Result<()> {
        if features.len() != self.features_per_slot {
            return Err(Error::LengthMismatch {
                expected: self.features_per_slot,
                got: features.len(),
            });
        }
        let s = slot_of(center);
        let f = self.features_per_slot;
        self.values[s * f..(s + 1) * f].copy_from_slice(features);
        self.occupied[s] = true;
        Ok(())
    }
}

/// Everything an episode remembers.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMemory {
    pub matrix: FitInMatrix,
    pub vector: FitInFeatureVector,
    pub class_vector: Option<FitInClassVector>,
}

impl EpisodeMemory {
    pub fn new(geom: GridGeometry, features_per_slot: usize, with_class_vector: bool) -> Self {
        Self {
            matrix: FitInMatrix::new(geom),
            vector: FitInFeatureVector::new(features_per_slot),
            class_vector: with_class_vector.then(|| FitInFeatureVector::new(features_per_slot)),
        }
    }

    pub fn reset(&mut self) {
        self.matrix.reset();
        self.vector.reset();
        if let Some(v) = self.class_vector.as_mut() {
            v.reset();
        }
    }
}

/// Per-pixel provenance of the fit-in matrix.
///
/// Entry 0 means unobserved; otherwise the pixel holds canvas cell
/// `(cy, cx)` of the reconstruction of step `t` (0-based), encoded as
/// `1 + t * canvas² + cy * canvas + cx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PastePlan {
    geom: GridGeometry,
    sources: Vec<u32>,
    steps: usize,
}

impl PastePlan {
    pub fn new(geom: GridGeometry) -> Self {
        Self {
            geom,
            sources: vec![0; geom.height() * geom.width()],
            steps: 0,
        }
    }

    /// Records the write of step `steps()`.
    pub fn record(&mut self, center: BlockIndex, mask: &Mask) {
        let n = self.geom.canvas();
        let base = 1 + (self.steps * n * n) as u32;
        let w = self.geom.width();
        for cy in 0..n {
            for cx in 0..n {
                if !mask.get(cy, cx) {
                    continue;
                }
                if let Some((py, px)) = canvas_source(&self.geom, center, cy, cx) {
                    self.sources[py * w + px] = base + (cy * n + cx) as u32;
                }
            }
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn occupancy(&self) -> Mask {
        let data = self.sources.iter().map(|&s| s != 0).collect();
        Mask::from_vec(self.geom.height(), self.geom.width(), data).expect("plan has panorama size")
    }
}

/// Per-slot provenance of a fit-in vector: 0 for empty, `1 + t` for the
/// descriptor of step `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPlan {
    sources: [u32; SLOT_COUNT],
    steps: usize,
}

impl SlotPlan {
    pub fn new() -> Self {
        Self {
            sources: [0; SLOT_COUNT],
            steps: 0,
        }
    }

    pub fn record(&mut self, center: BlockIndex) {
        self.sources[slot_of(center)] = 1 + self.steps as u32;
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sources(&self) -> &[u32; SLOT_COUNT] {
        &self.sources
    }
}

impl Default for SlotPlan {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retina::ground_truth_crop;

    fn block(c: usize, r: usize) -> BlockIndex {
        BlockIndex::new(c, r).unwrap()
    }

    fn full_mask(n: usize) -> Mask {
        Mask::new(n, n, true)
    }

    #[test]
    fn fresh_memories_are_zero() {
        let m = EpisodeMemory::new(GridGeometry::FULL, 128, true);
        assert!(m.matrix.data().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(m.matrix.occupied_count(), 0);
        assert_eq!(m.vector.len(), 4096);
        assert!(m.vector.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(m.vector.occupied_slots().count(), 0);
        let cv = m.class_vector.as_ref().unwrap();
        assert!(cv.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reset_clears_everything() {
        let g = GridGeometry::FULL;
        let mut m = EpisodeMemory::new(g, 128, true);
        m.matrix
            .write(&Image::filled(48, 48, 0.7), block(2, 2), &full_mask(48))
            .unwrap();
        m.vector.write(&[1.0; 128], block(2, 2)).unwrap();
        m.class_vector
            .as_mut()
            .unwrap()
            .write(&[1.0; 128], block(2, 2))
            .unwrap();
        m.reset();
        assert_eq!(m, EpisodeMemory::new(g, 128, true));
    }

    #[test]
    fn interior_write_occupies_footprint() {
        let mut m = FitInMatrix::new(GridGeometry::FULL);
        m.write(&Image::filled(48, 48, 0.5), block(8, 4), &full_mask(48))
            .unwrap();
        assert_eq!(m.occupied_count(), 2304);
        let before = m.clone();
        m.write(&Image::filled(48, 48, 0.5), block(8, 4), &full_mask(48))
            .unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn adjacent_writes_overlap() {
        let mut m = FitInMatrix::new(GridGeometry::FULL);
        m.write(&Image::filled(48, 48, 0.2), block(8, 4), &full_mask(48))
            .unwrap();
        m.write(&Image::filled(48, 48, 0.9), block(9, 4), &full_mask(48))
            .unwrap();
        assert_eq!(m.occupied_count(), 3072);
        // overlap holds the newest write
        assert_eq!(m.data().pixel(64, 130), [0.9; 3]);
        assert_eq!(m.data().pixel(64, 120), [0.2; 3]);
    }

    #[test]
    fn writes_wrap_across_seam() {
        let mut m = FitInMatrix::new(GridGeometry::FULL);
        m.write(&Image::filled(48, 48, 1.0), block(0, 4), &full_mask(48))
            .unwrap();
        assert!(m.occupancy().get(64, 255));
        assert!(m.occupancy().get(64, 240));
        assert!(!m.occupancy().get(64, 239));
    }

    #[test]
    fn masked_cells_are_not_written() {
        let g = GridGeometry::FULL;
        let pano = Image::filled(128, 256, 1.0);
        let (crop, mask) = ground_truth_crop(&g, &pano, block(3, 0)).unwrap();
        let mut m = FitInMatrix::new(g);
        m.write(&crop, block(3, 0), &mask).unwrap();
        assert_eq!(m.occupied_count(), 32 * 48);
    }

    #[test]
    fn identity_view_and_constant_view() {
        let g = GridGeometry::FULL;
        let mut m = FitInMatrix::new(g);
        m.write(&Image::filled(48, 48, 0.4), block(5, 3), &full_mask(48))
            .unwrap();
        let v = &m.views(&[(128, 256)]).unwrap()[0];
        assert_eq!(&v.data, m.data());
        assert!(v.occupancy.iter().all(|&o| o == 0.0 || o == 1.0));

        let mut full = FitInMatrix::new(g);
        for p in 0..128 {
            full.write(
                &Image::filled(48, 48, 0.25),
                BlockIndex::from_patch(p).unwrap(),
                &full_mask(48),
            )
            .unwrap();
        }
        for v in full.views(&g.scales()).unwrap() {
            assert!(v.data.as_slice().iter().all(|&x| x == 0.25));
            assert!(v.occupancy.iter().all(|&o| o == 1.0));
        }
        assert!(m.views(&[(10, 10)]).is_err());
    }

    #[test]
    fn vector_slots() {
        let mut v = FitInFeatureVector::new(128);
        v.write(&[1.0; 128], block(0, 0)).unwrap();
        assert_eq!(v.occupied_slots().collect::<std::vec::Vec<_>>(), [0]);
        assert!(v.as_slice()[128..].iter().all(|&x| x == 0.0));
        v.write(&[2.0; 128], block(1, 1)).unwrap();
        assert_eq!(v.slot(0), &[2.0; 128]);
        assert!(v.write(&[0.0; 3], block(0, 0)).is_err());
    }

    #[test]
    fn plans_follow_writes() {
        let g = GridGeometry::MICRO;
        let mut plan = PastePlan::new(g);
        let m = Mask::new(12, 12, true);
        plan.record(block(0, 0), &m);
        plan.record(block(1, 0), &m);
        assert_eq!(plan.steps(), 2);
        // pixel (4, 4) is the center of block (1,1): written by step 0 at
        // canvas (8, 8), then by step 1 at canvas (8, 4)
        assert_eq!(plan.sources()[4 * 64 + 4], 1 + 144 + 8 * 12 + 4);
        assert_eq!(plan.occupancy().count(), 8 * 16);

        let mut slots = SlotPlan::new();
        slots.record(block(0, 0));
        slots.record(block(1, 1));
        slots.record(block(2, 0));
        assert_eq!(&slots.sources()[..3], &[2, 3, 0]);
    }
}
