//! Grayscale heatmaps of archive snapshots.
//!
//! Output is a binary PGM (P5). Row `i`, column `j` of the cell grid is the
//! block for descriptor indices `(i, j)`, so flat cell 0 is the top-left
//! block. Archives with 3 or 4 descriptor dimensions are max-pooled over
//! the trailing dimensions. Empty cells are level 0; filled cells map
//! linearly from `[min, max]` fitness onto levels 1..=255.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qd_core::archive::{parse_snapshot_csv, ArchiveSidecar, GridTessellation};
use serde::{Deserialize, Serialize};

use crate::output::FileSet;

pub const BACKGROUND: u8 = 0;
pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapLegend {
    pub format: String,
    pub width: usize,
    pub height: usize,
    /// Pixels per cell side.
    pub scale: usize,
    pub rows: usize,
    pub cols: usize,
    pub background: u8,
    pub min_level: u8,
    pub max_level: u8,
    /// `None` when the archive is empty.
    pub fitness_min: Option<f64>,
    pub fitness_max: Option<f64>,
    pub projection: String,
    pub orientation: String,
}

impl HeatmapLegend {
    pub fn level(&self, fitness: f64) -> u8 {
        match (self.fitness_min, self.fitness_max) {
            (Some(lo), Some(hi)) if hi > lo => {
                let t = ((fitness - lo) / (hi - lo)).clamp(0.0, 1.0);
                MIN_LEVEL + (t * (MAX_LEVEL - MIN_LEVEL) as f64).round() as u8
            }
            _ => MAX_LEVEL,
        }
    }

    /// Fitness interval mapped onto `level`.
    pub fn bucket(&self, level: u8) -> Option<(f64, f64)> {
        let (lo, hi) = (self.fitness_min?, self.fitness_max?);
        if level < MIN_LEVEL {
            return None;
        }
        if hi <= lo {
            return Some((lo, hi));
        }
        let step = (hi - lo) / (MAX_LEVEL - MIN_LEVEL) as f64;
        let centre = lo + (level - MIN_LEVEL) as f64 * step;
        Some(((centre - step / 2.0).max(lo), (centre + step / 2.0).min(hi)))
    }
}

/// A rendered grid of cell levels before scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub levels: Vec<u8>,
    pub legend: HeatmapLegend,
}

impl Heatmap {
    pub fn level_at(&self, row: usize, col: usize) -> u8 {
        self.levels[row * self.cols + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let s = self.legend.scale;
        let (w, h) = (self.cols * s, self.rows * s);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h);
        for r in 0..self.rows {
            let row: Vec<u8> = (0..self.cols)
                .flat_map(|c| std::iter::repeat_n(self.level_at(r, c), s))
                .collect();
            for _ in 0..s {
                out.extend_from_slice(&row);
            }
        }
        out
    }
}

/// Builds the heatmap of a parsed snapshot.
pub fn render(sidecar: &ArchiveSidecar, cells: &[(usize, f64)], scale: usize) -> Result<Heatmap> {
    let dims = sidecar.shape.len();
    if dims > 4 {
        bail!("heatmaps support at most 4 descriptor dimensions, archive has {dims}");
    }
    if scale == 0 {
        bail!("scale must be positive");
    }
    let tess = GridTessellation::new(sidecar.lower.clone(), sidecar.upper.clone(), sidecar.shape.clone())?;
    let (rows, cols) = match dims {
        1 => (1, sidecar.shape[0]),
        _ => (sidecar.shape[0], sidecar.shape[1]),
    };
    let mut pooled: Vec<Option<f64>> = vec![None; rows * cols];
    for &(cell, fitness) in cells {
        if cell >= tess.num_cells() {
            bail!("cell index {cell} outside archive of {} cells", tess.num_cells());
        }
        let coords = tess.unflatten(cell);
        let slot = match dims {
            1 => coords[0],
            _ => coords[0] * cols + coords[1],
        };
        pooled[slot] = Some(pooled[slot].map_or(fitness, |f: f64| f.max(fitness)));
    }
    let values: Vec<f64> = pooled.iter().flatten().copied().collect();
    let legend = HeatmapLegend {
        format: "pgm-p5".into(),
        width: cols * scale,
        height: rows * scale,
        scale,
        rows,
        cols,
        background: BACKGROUND,
        min_level: MIN_LEVEL,
        max_level: MAX_LEVEL,
        fitness_min: values.iter().copied().reduce(f64::min),
        fitness_max: values.iter().copied().reduce(f64::max),
        projection: if dims > 2 {
            "max over descriptor dimensions 2..".into()
        } else {
            "none".into()
        },
        orientation: "row = descriptor_0 index, column = descriptor_1 index, origin top-left".into(),
    };
    let levels = pooled
        .iter()
        .map(|v| v.map_or(BACKGROUND, |f| legend.level(f)))
        .collect();
    Ok(Heatmap {
        rows,
        cols,
        levels,
        legend,
    })
}

/// Sidecar path for an archive CSV: same stem, `.json` extension.
pub fn sidecar_path(archive_csv: &Path) -> PathBuf {
    archive_csv.with_extension("json")
}

/// Reads `archive.csv` and its sidecar, writes `out` (PGM) and `out` with a
/// `.json` extension (legend).
pub fn export_heatmap(archive_csv: &Path, out: &Path, scale: usize) -> Result<Heatmap> {
    let text = std::fs::read_to_string(archive_csv).with_context(|| format!("reading {}", archive_csv.display()))?;
    let side_path = sidecar_path(archive_csv);
    let sidecar: ArchiveSidecar = serde_json::from_str(
        &std::fs::read_to_string(&side_path).with_context(|| format!("reading {}", side_path.display()))?,
    )
    .with_context(|| format!("parsing {}", side_path.display()))?;
    let (dims, rows) = parse_snapshot_csv(&text).map_err(anyhow::Error::msg)?;
    if dims != sidecar.shape.len() {
        bail!("archive csv has {dims} descriptor columns but sidecar shape has {}", sidecar.shape.len());
    }
    let cells: Vec<(usize, f64)> = rows.iter().map(|r| (r.cell, r.fitness)).collect();
    let map = render(&sidecar, &cells, scale)?;
    let mut files = FileSet::new();
    files.write(out.to_path_buf(), &map.to_pgm())?;
    files.write_json(out.with_extension("json"), &map.legend)?;
    files.commit();
    Ok(map)
}

/// Parses a binary PGM into `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        bail!("expected an 8-bit P5 image");
    }
    let w: usize = fields[1].parse()?;
    let h: usize = fields[2].parse()?;
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        bail!("PGM body has {} bytes, expected {}", data.len(), w * h);
    }
    Ok((w, h, data.to_vec()))
}
