//! Output files: CSV series, raw grid dumps, summaries.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::flow::FlowReport;
use crate::geometry::Grid;
use crate::operator::FieldState;
use crate::verify::EnergyTrace;

pub const DUMP_MAGIC: &[u8; 8] = b"MCFGRID1";
pub const SERIES_HEADER: [&str; 8] = ["t", "sup_u", "sup_grad", "sup_ut", "J", "diss", "src", "resid"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed dump ({reason})")]
    Malformed { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Header row plus one row per entry; values use the shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let line = |w: &mut BufWriter<fs::File>, s: String| writeln!(w, "{s}").map_err(io_err(path));
    line(&mut w, header.join(","))?;
    for r in rows {
        line(&mut w, r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
    }
    w.flush().map_err(io_err(path))
}

/// Rows `t, sup_u, sup_grad, sup_ut, J, diss, src, resid`.
pub fn series_rows(report: &FlowReport, trace: &EnergyTrace) -> Vec<Vec<f64>> {
    let s = &report.series;
    (0..s.len())
        .map(|k| {
            vec![
                s.t[k],
                s.sup_u[k],
                s.sup_grad[k],
                s.sup_ut[k],
                s.energy[k],
                s.dissipation[k],
                s.source[k],
                trace.residual.get(k).copied().unwrap_or(0.0),
            ]
        })
        .collect()
}

pub fn write_series(path: &Path, report: &FlowReport, trace: &EnergyTrace) -> Result<(), IoError> {
    write_csv(path, &SERIES_HEADER, &series_rows(report, trace))
}

/// A node-centered field on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub counts: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub values: Vec<f64>,
}

impl Dump {
    pub fn from_state(grid: &Grid, state: &FieldState) -> Self {
        let dim = grid.dim();
        Self {
            counts: grid.counts()[..dim].to_vec(),
            lo: grid.lower_corner()[..dim].to_vec(),
            hi: grid.upper_corner()[..dim].to_vec(),
            values: state.values.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Exact file size: magic, dimension, counts, corners, values.
    pub fn byte_len(&self) -> usize {
        8 + 8 + 8 * self.dim() + 16 * self.dim() + 8 * self.values.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for &c in &self.counts {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for v in self.lo.iter().chain(&self.hi).chain(&self.values) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, IoError> {
        let bad = |reason: &str| IoError::Malformed { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.len() < 16 || &bytes[..8] != DUMP_MAGIC {
            return Err(bad("missing magic"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8-byte slice") };
        let dim = u64::from_le_bytes(word(8)) as usize;
        if !(1..=3).contains(&dim) || bytes.len() < 16 + 24 * dim {
            return Err(bad("bad dimension"));
        }
        let counts: Vec<usize> = (0..dim).map(|a| u64::from_le_bytes(word(16 + 8 * a)) as usize).collect();
        let total: usize = counts.iter().product();
        let base = 16 + 8 * dim;
        if bytes.len() != base + 16 * dim + 8 * total {
            return Err(bad("length does not match header"));
        }
        let floats: Vec<f64> = (0..2 * dim + total).map(|i| f64::from_le_bytes(word(base + 8 * i))).collect();
        Ok(Self {
            counts,
            lo: floats[..dim].to_vec(),
            hi: floats[dim..2 * dim].to_vec(),
            values: floats[2 * dim..].to_vec(),
        })
    }
}

pub fn write_dump(path: &Path, dump: &Dump) -> Result<(), IoError> {
    fs::write(path, dump.to_bytes()).map_err(io_err(path))
}

pub fn read_dump(path: &Path) -> Result<Dump, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Dump::from_bytes(&bytes, path)
}

pub fn snapshot_name(step: u64) -> String {
    format!("snapshot_{step:08}.bin")
}

/// Writes one dump per snapshot, named by step index.
pub fn write_snapshots(dir: &Path, grid: &Grid, report: &FlowReport) -> Result<Vec<PathBuf>, IoError> {
    let mut files = Vec::new();
    for (step, state) in report.snapshot_steps.iter().zip(&report.snapshots) {
        let path = dir.join(snapshot_name(*step));
        write_dump(&path, &Dump::from_state(grid, state))?;
        files.push(path);
    }
    Ok(files)
}

/// `key: value` lines.
pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}
