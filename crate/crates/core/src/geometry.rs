//! Block grid geometry.
//!
//! A panorama is divided into a 16×8 grid of square blocks. Every block is a
//! legal glimpse center and every block is one attention patch, so patch ids
//! and block indices are the same thing under `p = row * 16 + col`.
//!
//! The block edge is a parameter: 16 px gives the canonical 128×256 panorama,
//! 4 px gives the 32×64 micro profile. Counts that the rest of the system
//! relies on (128 patches, 3×3-block footprints, 32 memory slots) do not depend
//! on it.

use crate::error::{Error, Result};

pub const GRID_COLS: usize = 16;
pub const GRID_ROWS: usize = 8;
pub const PATCH_COUNT: usize = GRID_COLS * GRID_ROWS;
/// Edge length of a glimpse footprint, in blocks.
pub const FOOTPRINT_BLOCKS: usize = 3;
/// Number of reconstruction scales emitted by the full reconstruction module.
pub const SCALE_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridGeometry {
    block: usize,
}

impl GridGeometry {
    /// 16 px blocks, 128×256 panoramas.
    pub const FULL: Self = Self { block: 16 };
    /// 4 px blocks, 32×64 panoramas.
    pub const MICRO: Self = Self { block: 4 };

    pub fn new(block: usize) -> Result<Self> {
        if block < 2 || block % 2 != 0 {
            return Err(Error::InvalidBlockSize(block));
        }
        Ok(Self { block })
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn height(&self) -> usize {
        GRID_ROWS * self.block
    }

    pub fn width(&self) -> usize {
        GRID_COLS * self.block
    }

    /// Edge of the square glimpse canvas (three blocks).
    pub fn canvas(&self) -> usize {
        FOOTPRINT_BLOCKS * self.block
    }

    pub fn patch_count(&self) -> usize {
        PATCH_COUNT
    }

    /// Sensor samples per channel for one glimpse: the full-resolution center
    /// block plus eight ring blocks at half resolution.
    pub fn samples_per_glimpse(&self) -> usize {
        let half = self.block / 2;
        self.block * self.block + 8 * half * half
    }

    /// Fraction of panorama pixels (per channel) paid for by `glimpses`
    /// glimpses.
    pub fn coverage_fraction(&self, glimpses: usize) -> f64 {
        (glimpses * self.samples_per_glimpse()) as f64 / (self.height() * self.width()) as f64
    }

    /// Reconstruction scales, coarsest first. For the full profile these are
    /// (16,32), (32,64), (64,128), (128,256).
    pub fn scales(&self) -> [(usize, usize); SCALE_COUNT] {
        let (h, w) = (self.height(), self.width());
        [(h / 8, w / 8), (h / 4, w / 4), (h / 2, w / 2), (h, w)]
    }
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self::FULL
    }
}

/// Pixel budget of `glimpses` glimpses on the canonical 128×256 panorama.
pub fn coverage_fraction(glimpses: usize) -> f64 {
    GridGeometry::FULL.coverage_fraction(glimpses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockIndex {
    col: usize,
    row: usize,
}

impl BlockIndex {
    pub fn new(col: usize, row: usize) -> Result<Self> {
        if col >= GRID_COLS || row >= GRID_ROWS {
            return Err(Error::BlockOutOfRange { col, row });
        }
        Ok(Self { col, row })
    }

    pub fn from_patch(patch: usize) -> Result<Self> {
        if patch >= PATCH_COUNT {
            return Err(Error::PatchOutOfRange(patch));
        }
        Ok(Self {
            col: patch % GRID_COLS,
            row: patch / GRID_COLS,
        })
    }

    pub fn col(&self) -> usize {
        self.col
    }

    pub fn row(&self) -> usize {
        self.row
    }

    pub fn patch(&self) -> usize {
        self.row * GRID_COLS + self.col
    }

    /// The 3×3 block neighbourhood around this block in row-major order.
    /// Columns wrap around the panorama seam; rows outside the grid are
    /// reported as invalid.
    pub fn footprint(&self) -> [FootprintCell; 9] {
        let mut cells = [FootprintCell::default(); 9];
        for (i, cell) in cells.iter_mut().enumerate() {
            let dr = (i / 3) as isize - 1;
            let dc = (i % 3) as isize - 1;
            let row = self.row as isize + dr;
            let col = (self.col as isize + dc).rem_euclid(GRID_COLS as isize) as usize;
            *cell = FootprintCell {
                col,
                row,
                offset_col: (dc + 1) as usize,
                offset_row: (dr + 1) as usize,
                valid: (0..GRID_ROWS as isize).contains(&row),
            };
        }
        cells
    }

    /// The valid blocks among the eight neighbours.
    pub fn neighbours(&self) -> impl Iterator<Item = BlockIndex> {
        self.footprint()
            .into_iter()
            .filter(|c| c.valid && !(c.offset_col == 1 && c.offset_row == 1))
            .filter_map(|c| c.block())
    }
}

pub fn patch_index(block: BlockIndex) -> usize {
    block.patch()
}

pub fn block_of(patch: usize) -> Result<BlockIndex> {
    BlockIndex::from_patch(patch)
}

/// One block of a glimpse footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FootprintCell {
    /// Panorama block column, already wrapped into `[0, 16)`.
    pub col: usize,
    /// Panorama block row; may be -1 or 8 for footprints at the vertical edge.
    pub row: isize,
    /// Position of the block inside the 3×3 footprint.
    pub offset_col: usize,
    pub offset_row: usize,
    pub valid: bool,
}

impl FootprintCell {
    pub fn block(&self) -> Option<BlockIndex> {
        if self.valid {
            BlockIndex::new(self.col, self.row as usize).ok()
        } else {
            None
        }
    }

    pub fn is_center(&self) -> bool {
        self.offset_col == 1 && self.offset_row == 1
    }
}

/// Set of visited patch ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Visited(u128);

impl Visited {
    pub fn new() -> Self {
        Self(0)
    }

    /// Inserts `patch`; returns `false` if it was already present.
    pub fn insert(&mut self, patch: usize) -> bool {
        assert!(patch < PATCH_COUNT, "patch id {patch} out of range");
        let bit = 1u128 << patch;
        let fresh = self.0 & bit == 0;
        self.0 |= bit;
        fresh
    }

    pub fn contains(&self, patch: usize) -> bool {
        patch < PATCH_COUNT && self.0 & (1u128 << patch) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn is_full(&self) -> bool {
        self.0 == u128::MAX
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PATCH_COUNT).filter(|&p| self.contains(p))
    }

    pub fn unvisited(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PATCH_COUNT).filter(|&p| !self.contains(p))
    }
}
