//! Binary state snapshots and their JSON index.
//!
//! Each snapshot file holds a fixed header followed by `u` then `v` as
//! little-endian `f64` in node order (axis 0 fastest):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `BHSNAP01` |
//! | 4     | dimension (`u32`) |
//! | 4 × 2 | node counts per axis (`u32`, second is 1 in 1D) |
//! | 8     | time (`f64`) |

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::State;
use crate::grid::Grid;

const MAGIC: &[u8; 8] = b"BHSNAP01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub step: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotIndex {
    pub dimension: usize,
    pub n_nodes: Vec<usize>,
    pub extents: Vec<f64>,
    pub snapshots: Vec<SnapshotEntry>,
}

pub fn write_snapshot(path: &Path, grid: &Grid, state: &State) -> Result<()> {
    if state.u.len() != grid.len() || state.v.len() != grid.len() {
        return Err(Error::ShapeMismatch { expected: grid.len(), got: state.u.len().min(state.v.len()) });
    }
    let mut buf = Vec::with_capacity(28 + 16 * grid.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.dimension() as u32).to_le_bytes());
    for a in 0..2 {
        let n = grid.n_nodes().get(a).copied().unwrap_or(1);
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&state.t.to_le_bytes());
    for x in state.u.iter().chain(&state.v) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot; returns the node counts alongside the state.
pub fn read_snapshot(path: &Path) -> Result<(Vec<usize>, State)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 28 || &buf[..8] != MAGIC {
        return Err(Error::Snapshot(format!("{} is not a snapshot file", path.display())));
    }
    let word = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
    let dim = word(8);
    let counts: Vec<usize> = [word(12), word(16)].into_iter().take(dim).collect();
    let t = f64::from_le_bytes(buf[20..28].try_into().unwrap());
    let n: usize = counts.iter().product();
    if buf.len() != 28 + 16 * n {
        return Err(Error::Snapshot(format!(
            "{}: expected {} values, file holds {} bytes",
            path.display(),
            2 * n,
            buf.len()
        )));
    }
    let values: Vec<f64> = buf[28..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let (u, v) = values.split_at(n);
    Ok((counts, State { u: u.to_vec(), v: v.to_vec(), t }))
}

/// Writes `snap_00000.bin`, ... and `index.json` into `dir`.
pub fn write_snapshots(dir: &Path, grid: &Grid, states: &[State], stride: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(states.len());
    for (k, s) in states.iter().enumerate() {
        let file = format!("snap_{k:05}.bin");
        write_snapshot(&dir.join(&file), grid, s)?;
        entries.push(SnapshotEntry { file, step: k * stride, time: s.t });
    }
    let index = SnapshotIndex {
        dimension: grid.dimension(),
        n_nodes: grid.n_nodes().to_vec(),
        extents: grid.extents().to_vec(),
        snapshots: entries,
    };
    let path = dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Snapshot(e.to_string()))?;
    fs::write(&path, json)?;
    Ok(path)
}
