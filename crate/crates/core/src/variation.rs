//! Parent selection and the iso-line (Iso+LineDD) operator.
//!
//! Both operations take an [`RngState`] family and draw slot `j` from
//! stream `j`, so results do not depend on how slots are spread over
//! workers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::Archive;
use crate::parallel::Executor;
use crate::rng::RngState;

#[derive(Debug, Error, PartialEq)]
pub enum VariationError {
    #[error("cannot select parents from an empty archive; initialize it with random solutions first")]
    EmptyArchive,
    #[error("parent lists have different lengths ({0} vs {1})")]
    ParentCount(usize, usize),
    #[error("slot {slot}: parent genotypes have lengths {first} and {second}")]
    GenotypeLength { slot: usize, first: usize, second: usize },
    #[error("slot {slot}: genotype length {got} does not match clamp bounds of length {expected}")]
    BoundsLength { slot: usize, expected: usize, got: usize },
    #[error("invalid iso-line parameters: {0}")]
    InvalidParams(String),
}

/// Componentwise box for genotypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GenotypeBounds {
    pub fn uniform(len: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; len],
            upper: vec![upper; len],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn clamp(&self, genotype: &mut [f64]) {
        for ((x, &lo), &hi) in genotype.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(lo, hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoLineParams {
    /// Isotropic noise scale.
    pub sigma1: f64,
    /// Scale of the noise along the parent-to-parent line.
    pub sigma2: f64,
    /// Offspring are clamped into these bounds; `None` disables clamping.
    pub clamp: Option<GenotypeBounds>,
}

impl IsoLineParams {
    pub const DEFAULT_SIGMA1: f64 = 0.01;
    pub const DEFAULT_SIGMA2: f64 = 0.2;

    pub fn new(sigma1: f64, sigma2: f64, clamp: Option<GenotypeBounds>) -> Result<Self, VariationError> {
        let p = Self { sigma1, sigma2, clamp };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), VariationError> {
        if !(self.sigma1 >= 0.0 && self.sigma1.is_finite()) {
            return Err(VariationError::InvalidParams(format!("sigma1 = {}", self.sigma1)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(VariationError::InvalidParams(format!("sigma2 = {}", self.sigma2)));
        }
        if let Some(b) = &self.clamp {
            if b.lower.len() != b.upper.len() {
                return Err(VariationError::InvalidParams("bound lengths differ".into()));
            }
            if let Some(i) = (0..b.len()).find(|&i| !(b.lower[i] <= b.upper[i])) {
                return Err(VariationError::InvalidParams(format!(
                    "lower[{i}] = {} > upper[{i}] = {}",
                    b.lower[i], b.upper[i]
                )));
            }
        }
        Ok(())
    }
}

/// Draws `batch_size` parent pairs uniformly with replacement from the
/// filled cells. Returned genotypes are copies.
pub fn select_parents(
    archive: &Archive,
    batch_size: usize,
    rng: RngState,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), VariationError> {
    if batch_size == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let filled = archive.filled_indices();
    if filled.is_empty() {
        return Err(VariationError::EmptyArchive);
    }
    let n = filled.len() as u64;
    let mut first = Vec::with_capacity(batch_size);
    let mut second = Vec::with_capacity(batch_size);
    for slot in 0..batch_size {
        let mut s = rng.stream(slot as u64);
        let a = filled[s.below(n) as usize];
        let b = filled[s.below(n) as usize];
        first.push(archive.genotype_row(a).to_vec());
        second.push(archive.genotype_row(b).to_vec());
    }
    Ok((first, second))
}

/// One iso-line offspring from explicit noise: `p1 + sigma1*eps1 + sigma2*eps2*(p2 - p1)`,
/// clamped if the parameters carry bounds.
pub fn iso_line_with_noise(
    parent1: &[f64],
    parent2: &[f64],
    params: &IsoLineParams,
    eps1: &[f64],
    eps2: f64,
) -> Vec<f64> {
    debug_assert_eq!(parent1.len(), parent2.len());
    debug_assert_eq!(parent1.len(), eps1.len());
    let mut child: Vec<f64> = parent1
        .iter()
        .zip(parent2)
        .zip(eps1)
        .map(|((&a, &b), &e)| a + params.sigma1 * e + params.sigma2 * eps2 * (b - a))
        .collect();
    if let Some(bounds) = &params.clamp {
        bounds.clamp(&mut child);
    }
    child
}

/// Applies the iso-line operator slot by slot. Slot `j` draws its line
/// scalar first, then one isotropic normal per coordinate, from stream `j`.
pub fn iso_line(
    parents1: &[Vec<f64>],
    parents2: &[Vec<f64>],
    params: &IsoLineParams,
    rng: RngState,
    executor: &Executor,
) -> Result<Vec<Vec<f64>>, VariationError> {
    params.validate()?;
    if parents1.len() != parents2.len() {
        return Err(VariationError::ParentCount(parents1.len(), parents2.len()));
    }
    for (slot, (a, b)) in parents1.iter().zip(parents2).enumerate() {
        if a.len() != b.len() {
            return Err(VariationError::GenotypeLength {
                slot,
                first: a.len(),
                second: b.len(),
            });
        }
        if let Some(bounds) = &params.clamp {
            if bounds.len() != a.len() {
                return Err(VariationError::BoundsLength {
                    slot,
                    expected: bounds.len(),
                    got: a.len(),
                });
            }
        }
    }
    Ok(executor.map(parents1, |slot, p1| {
        let p2 = &parents2[slot];
        let mut s = rng.stream(slot as u64);
        let eps2 = s.standard_normal();
        let eps1: Vec<f64> = (0..p1.len()).map(|_| s.standard_normal()).collect();
        iso_line_with_noise(p1, p2, params, &eps1, eps2)
    }))
}
