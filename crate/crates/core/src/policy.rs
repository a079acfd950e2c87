//! Glimpse policies: the learned attention policy and the baselines it is
//! compared against.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{BlockIndex, Visited, GRID_COLS};
use crate::loss::AttentionTarget;
use crate::select::{masked_argmax, select_next, uniform_choice, SelectMode};

/// Block rows used by the middle-row baseline: the two central rows of eight.
pub const MIDDLE_ROWS: [usize; 2] = [3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Learned,
    Random,
    MiddleRowRandom,
    Neighborhood,
    GtErrorOracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Learned,
        PolicyKind::Random,
        PolicyKind::MiddleRowRandom,
        PolicyKind::Neighborhood,
        PolicyKind::GtErrorOracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Learned => "learned",
            PolicyKind::Random => "random",
            PolicyKind::MiddleRowRandom => "middle-random",
            PolicyKind::Neighborhood => "neighborhood",
            PolicyKind::GtErrorOracle => "gt-oracle",
        }
    }

    /// Row label used in the comparison table.
    pub fn description(&self) -> &'static str {
        match self {
            PolicyKind::Learned => "Learned attention",
            PolicyKind::Random => "with Random Selection",
            PolicyKind::MiddleRowRandom => "with Middle Rows Random Selection",
            PolicyKind::Neighborhood => "with Neighbourhood Selection",
            PolicyKind::GtErrorOracle => "with GT Error Attendance (upper bound)",
        }
    }

    pub fn needs_logits(&self) -> bool {
        matches!(self, PolicyKind::Learned)
    }

    pub fn needs_ground_truth_error(&self) -> bool {
        matches!(self, PolicyKind::GtErrorOracle)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownPolicy;

impl fmt::Display for UnknownPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown policy (expected learned, random, middle-random, neighborhood or gt-oracle)")
    }
}

impl core::error::Error for UnknownPolicy {}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        PolicyKind::ALL.into_iter().find(|k| k.name() == s).ok_or(UnknownPolicy)
    }
}

/// What a policy may look at when choosing the next glimpse.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub visited: &'a Visited,
    /// Center of the glimpse just taken.
    pub current: Option<BlockIndex>,
    /// Attention logits computed from the current fit-in feature vector.
    pub logits: Option<&'a [f32]>,
    /// Attention target of the current reconstruction against the true
    /// panorama.
    pub ground_truth: Option<&'a AttentionTarget>,
}

fn uniform_unvisited<R: Rng + ?Sized>(visited: &Visited, rng: &mut R) -> Result<usize> {
    let candidates: Vec<usize> = visited.unvisited().collect();
    uniform_choice(&candidates, rng).ok_or(Error::AllVisited)
}

/// Chooses the next patch. The result is never a visited patch. Baselines fall
/// back to a uniform pick over all unvisited patches when their own candidate
/// set is exhausted.
pub fn choose<R: Rng + ?Sized>(
    kind: PolicyKind,
    ctx: &PolicyContext<'_>,
    mode: SelectMode,
    rng: &mut R,
) -> Result<usize> {
    let visited = ctx.visited;
    if visited.is_full() {
        return Err(Error::AllVisited);
    }
    match kind {
        PolicyKind::Learned => {
            let logits = ctx.logits.ok_or(Error::MissingContext("learned", "attention logits"))?;
            select_next(logits, visited, mode, rng)
        }
        PolicyKind::Random => uniform_unvisited(visited, rng),
        PolicyKind::MiddleRowRandom => {
            let candidates: Vec<usize> = MIDDLE_ROWS
                .iter()
                .flat_map(|&r| (0..GRID_COLS).map(move |c| r * GRID_COLS + c))
                .filter(|&p| !visited.contains(p))
                .collect();
            match uniform_choice(&candidates, rng) {
                Some(p) => Ok(p),
                None => uniform_unvisited(visited, rng),
            }
        }
        PolicyKind::Neighborhood => {
            let candidates: Vec<usize> = ctx
                .current
                .map(|c| {
                    c.neighbours()
                        .map(|b| b.patch())
                        .filter(|&p| !visited.contains(p))
                        .collect()
                })
                .unwrap_or_default();
            match uniform_choice(&candidates, rng) {
                Some(p) => Ok(p),
                None => uniform_unvisited(visited, rng),
            }
        }
        PolicyKind::GtErrorOracle => {
            let target = ctx
                .ground_truth
                .ok_or(Error::MissingContext("gt-oracle", "the ground-truth error target"))?;
            masked_argmax(&target.distribution, |p| !visited.contains(p)).ok_or(Error::AllVisited)
        }
    }
}
