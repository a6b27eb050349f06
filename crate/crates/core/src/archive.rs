//! Fixed-capacity grid archive.
//!
//! All storage is allocated at construction: one fitness slot, one
//! descriptor row and one genotype row per cell. An empty cell holds the
//! NaN sentinel in its fitness slot and zeros everywhere else.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fitness value stored in cells that hold no solution.
pub const EMPTY: f64 = f64::NAN;

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("invalid tessellation: {0}")]
    InvalidTessellation(String),
    #[error("descriptor has {got} entries, expected {expected}")]
    DescriptorDims { expected: usize, got: usize },
    #[error("invalid evaluation: descriptor entry {index} is not finite ({value})")]
    NonFiniteDescriptor { index: usize, value: f64 },
    #[error("invalid evaluation: candidate {position} has non-finite fitness {value}")]
    NonFiniteFitness { position: usize, value: f64 },
    #[error("candidate {position} genotype has length {got}, archive expects {expected}")]
    GenotypeLength {
        position: usize,
        expected: usize,
        got: usize,
    },
    #[error("candidate {position}: {source}")]
    Candidate {
        position: usize,
        #[source]
        source: Box<ArchiveError>,
    },
}

/// Axis-aligned grid over descriptor space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTessellation {
    lower: Vec<f64>,
    upper: Vec<f64>,
    shape: Vec<usize>,
}

impl GridTessellation {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<Self, ArchiveError> {
        let bad = |m: String| Err(ArchiveError::InvalidTessellation(m));
        if shape.is_empty() {
            return bad("at least one descriptor dimension is required".into());
        }
        if lower.len() != shape.len() || upper.len() != shape.len() {
            return bad(format!(
                "bounds have lengths {}/{} but shape has {} dimensions",
                lower.len(),
                upper.len(),
                shape.len()
            ));
        }
        for i in 0..shape.len() {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
                return bad(format!("dimension {i}: need finite lower < upper, got [{}, {}]", lower[i], upper[i]));
            }
            if shape[i] == 0 {
                return bad(format!("dimension {i}: cell count must be positive"));
            }
        }
        let mut total: usize = 1;
        for &s in &shape {
            total = match total.checked_mul(s) {
                Some(t) => t,
                None => return bad("total cell count overflows usize".into()),
            };
        }
        Ok(Self { lower, upper, shape })
    }

    /// Same bounds on every dimension.
    pub fn uniform(lower: f64, upper: f64, shape: Vec<usize>) -> Result<Self, ArchiveError> {
        let d = shape.len();
        Self::new(vec![lower; d], vec![upper; d], shape)
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_cells(&self) -> usize {
        self.shape.iter().product()
    }

    /// Per-dimension grid coordinates; out-of-range values clamp to edge cells.
    pub fn grid_coords(&self, descriptor: &[f64]) -> Result<Vec<usize>, ArchiveError> {
        if descriptor.len() != self.dims() {
            return Err(ArchiveError::DescriptorDims {
                expected: self.dims(),
                got: descriptor.len(),
            });
        }
        descriptor
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if !d.is_finite() {
                    return Err(ArchiveError::NonFiniteDescriptor { index: i, value: d });
                }
                let frac = (d - self.lower[i]) / (self.upper[i] - self.lower[i]);
                let raw = (frac * self.shape[i] as f64).floor();
                let top = (self.shape[i] - 1) as f64;
                Ok(raw.clamp(0.0, top) as usize)
            })
            .collect()
    }

    /// Row-major flat cell index of a descriptor.
    pub fn cell_index(&self, descriptor: &[f64]) -> Result<usize, ArchiveError> {
        let coords = self.grid_coords(descriptor)?;
        Ok(self.flatten(&coords))
    }

    pub fn flatten(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&c, &s)| acc * s + c)
    }

    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dims()];
        for (c, &s) in coords.iter_mut().zip(&self.shape).rev() {
            *c = index % s;
            index /= s;
        }
        coords
    }
}

/// An evaluated solution offered to the archive.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub genotype: Vec<f64>,
    pub fitness: f64,
    pub descriptor: Vec<f64>,
    pub dead: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AddOutcome {
    Inserted,
    Replaced,
    RejectedWorse,
    RejectedDead,
}

impl AddOutcome {
    pub fn accepted(self) -> bool {
        matches!(self, AddOutcome::Inserted | AddOutcome::Replaced)
    }
}

#[derive(Clone, Debug)]
pub struct Archive {
    tessellation: GridTessellation,
    genotype_len: usize,
    fitness: Vec<f64>,
    descriptors: Vec<f64>,
    genotypes: Vec<f64>,
    filled_count: usize,
}

impl Archive {
    pub fn new(tessellation: GridTessellation, genotype_len: usize) -> Self {
        let cells = tessellation.num_cells();
        let dims = tessellation.dims();
        Self {
            fitness: vec![EMPTY; cells],
            descriptors: vec![0.0; cells * dims],
            genotypes: vec![0.0; cells * genotype_len],
            filled_count: 0,
            tessellation,
            genotype_len,
        }
    }

    pub fn tessellation(&self) -> &GridTessellation {
        &self.tessellation
    }

    pub fn genotype_len(&self) -> usize {
        self.genotype_len
    }

    pub fn num_cells(&self) -> usize {
        self.fitness.len()
    }

    pub fn filled_count(&self) -> usize {
        self.filled_count
    }

    pub fn is_empty(&self) -> bool {
        self.filled_count == 0
    }

    /// Raw fitness column, including EMPTY sentinels.
    pub fn fitness_slice(&self) -> &[f64] {
        &self.fitness
    }

    pub fn is_filled(&self, cell: usize) -> bool {
        !self.fitness[cell].is_nan()
    }

    pub fn fitness(&self, cell: usize) -> Option<f64> {
        let f = self.fitness[cell];
        (!f.is_nan()).then_some(f)
    }

    pub fn descriptor(&self, cell: usize) -> Option<&[f64]> {
        let d = self.tessellation.dims();
        self.is_filled(cell).then(|| &self.descriptors[cell * d..(cell + 1) * d])
    }

    pub fn genotype(&self, cell: usize) -> Option<&[f64]> {
        self.is_filled(cell).then(|| self.genotype_row(cell))
    }

    /// Genotype row regardless of occupancy; zeros for empty cells.
    pub(crate) fn genotype_row(&self, cell: usize) -> &[f64] {
        let g = self.genotype_len;
        &self.genotypes[cell * g..(cell + 1) * g]
    }

    /// Ascending flat indices of all non-empty cells.
    pub fn filled_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.filled_count);
        out.extend(
            self.fitness
                .iter()
                .enumerate()
                .filter(|(_, f)| !f.is_nan())
                .map(|(i, _)| i),
        );
        out
    }

    /// Adds a batch of candidates with the masked procedure:
    /// dead candidates are dropped, each cell keeps only its best live
    /// candidate (earliest batch position on ties), and that candidate
    /// enters if the cell is empty or it strictly beats the incumbent.
    ///
    /// The batch is validated up front; on error the archive is untouched.
    pub fn batched_add(&mut self, candidates: &[Candidate]) -> Result<Vec<AddOutcome>, ArchiveError> {
        let mut cells = Vec::with_capacity(candidates.len());
        for (position, c) in candidates.iter().enumerate() {
            if c.genotype.len() != self.genotype_len {
                return Err(ArchiveError::GenotypeLength {
                    position,
                    expected: self.genotype_len,
                    got: c.genotype.len(),
                });
            }
            if c.dead {
                cells.push(None);
                continue;
            }
            if !c.fitness.is_finite() {
                return Err(ArchiveError::NonFiniteFitness {
                    position,
                    value: c.fitness,
                });
            }
            let cell = self
                .tessellation
                .cell_index(&c.descriptor)
                .map_err(|e| ArchiveError::Candidate {
                    position,
                    source: Box::new(e),
                })?;
            cells.push(Some(cell));
        }

        let mut outcomes = vec![AddOutcome::RejectedWorse; candidates.len()];
        let mut best: HashMap<usize, usize> = HashMap::new();
        for (position, cell) in cells.iter().enumerate() {
            let Some(cell) = *cell else {
                outcomes[position] = AddOutcome::RejectedDead;
                continue;
            };
            best.entry(cell)
                .and_modify(|b| {
                    if candidates[position].fitness > candidates[*b].fitness {
                        *b = position;
                    }
                })
                .or_insert(position);
        }

        let dims = self.tessellation.dims();
        let g = self.genotype_len;
        for (cell, position) in best {
            let c = &candidates[position];
            let incumbent = self.fitness[cell];
            let outcome = if incumbent.is_nan() {
                self.filled_count += 1;
                AddOutcome::Inserted
            } else if c.fitness > incumbent {
                AddOutcome::Replaced
            } else {
                continue;
            };
            self.fitness[cell] = c.fitness;
            self.descriptors[cell * dims..(cell + 1) * dims].copy_from_slice(&c.descriptor);
            self.genotypes[cell * g..(cell + 1) * g].copy_from_slice(&c.genotype);
            outcomes[position] = outcome;
        }
        Ok(outcomes)
    }
}

/// Metadata written next to an archive CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSidecar {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
    pub genotype_len: usize,
    pub num_cells: usize,
    pub filled_count: usize,
    pub indexing: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenotypeFormat {
    Csv,
    /// Little-endian records: `u64` cell index followed by `genotype_len` `f64`s.
    Bin,
}

impl std::str::FromStr for GenotypeFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "bin" => Ok(Self::Bin),
            other => Err(format!("unknown genotype format {other:?} (expected csv or bin)")),
        }
    }
}

/// One row of an archive snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub cell: usize,
    pub descriptor: Vec<f64>,
    pub fitness: f64,
}

impl Archive {
    pub fn sidecar(&self) -> ArchiveSidecar {
        ArchiveSidecar {
            lower: self.tessellation.lower.clone(),
            upper: self.tessellation.upper.clone(),
            shape: self.tessellation.shape.clone(),
            genotype_len: self.genotype_len,
            num_cells: self.num_cells(),
            filled_count: self.filled_count,
            indexing: "row-major".into(),
        }
    }

    /// `cell_index,descriptor_0..descriptor_{d-1},fitness`, filled cells only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_index");
        for i in 0..self.tessellation.dims() {
            out.push_str(&format!(",descriptor_{i}"));
        }
        out.push_str(",fitness\n");
        for cell in self.filled_indices() {
            out.push_str(&cell.to_string());
            for d in self.descriptor(cell).unwrap() {
                out.push_str(&format!(",{d}"));
            }
            out.push_str(&format!(",{}\n", self.fitness[cell]));
        }
        out
    }

    pub fn genotypes_bytes(&self, format: GenotypeFormat) -> Vec<u8> {
        match format {
            GenotypeFormat::Csv => {
                let mut out = String::from("cell_index");
                for i in 0..self.genotype_len {
                    out.push_str(&format!(",gene_{i}"));
                }
                out.push('\n');
                for cell in self.filled_indices() {
                    out.push_str(&cell.to_string());
                    for v in self.genotype_row(cell) {
                        out.push_str(&format!(",{v}"));
                    }
                    out.push('\n');
                }
                out.into_bytes()
            }
            GenotypeFormat::Bin => {
                let mut out = Vec::with_capacity(self.filled_count * (8 + 8 * self.genotype_len));
                for cell in self.filled_indices() {
                    out.extend_from_slice(&(cell as u64).to_le_bytes());
                    for v in self.genotype_row(cell) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                out
            }
        }
    }
}

/// Parses an archive CSV written by [`Archive::to_csv`].
pub fn parse_snapshot_csv(text: &str) -> Result<(usize, Vec<SnapshotRow>), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty archive csv")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "cell_index" || cols[cols.len() - 1] != "fitness" {
        return Err(format!("unexpected archive csv header {header:?}"));
    }
    let dims = cols.len() - 2;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(format!("row {}: expected {} fields, got {}", n + 1, cols.len(), fields.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", n + 1));
        let cell = fields[0].parse::<usize>().map_err(|e| format!("row {}: {e}", n + 1))?;
        let descriptor = fields[1..=dims].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
        let fitness = num(fields[dims + 1])?;
        rows.push(SnapshotRow {
            cell,
            descriptor,
            fitness,
        });
    }
    Ok((dims, rows))
}
