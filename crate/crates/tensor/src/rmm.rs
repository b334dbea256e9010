//! `RMM1` flat grid format: the 4-byte magic `RMM1`, little-endian `u32`
//! rows and cols, then `rows * cols` little-endian `f32` values in row-major
//! order. Nothing else; no padding, no trailer.

use std::fs;
use std::path::Path;

use crate::{Result, TensorError};

pub const MAGIC: &[u8; 4] = b"RMM1";

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "grid data length");
        Grid { rows, cols, data }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}

pub fn encode(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * grid.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.rows as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols as u32).to_le_bytes());
    for v in &grid.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Grid> {
    let bad = |reason: String| TensorError::Format { path: path.to_path_buf(), reason };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing RMM1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(bad(format!("{rows}x{cols} grid needs {} payload bytes, found {}", rows * cols * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Grid { rows, cols, data })
}

pub fn write(path: &Path, grid: &Grid) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| TensorError::io(path, e))
}

pub fn read(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| TensorError::io(path, e))?;
    decode(&bytes, path)
}
