//! Static urban layouts: buildings, drivable roads and open ground.
//!
//! Cell `(row, col)` covers `x in [col, col+1)`, `y in [row, row+1)` in
//! meters (at the default 1 m resolution), with `y` pointing down the raster.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::GrayImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Center point `(x, y)` in cell units.
    pub fn center(self) -> (f64, f64) {
        (self.col as f64 + 0.5, self.row as f64 + 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Building,
    Road,
    Ground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentGrid {
    pub size: usize,
    pub resolution: f64,
    pub env_id: usize,
    building: Vec<bool>,
    road: Vec<bool>,
}

impl EnvironmentGrid {
    /// Builds a grid from per-cell kinds in row-major order.
    pub fn from_kinds(size: usize, kinds: &[CellKind]) -> Result<Self> {
        if size == 0 || kinds.len() != size * size {
            return Err(Error::InvalidInput(format!("{} cells for a {size}x{size} grid", kinds.len())));
        }
        Ok(EnvironmentGrid {
            size,
            resolution: 1.0,
            env_id: 0,
            building: kinds.iter().map(|k| *k == CellKind::Building).collect(),
            road: kinds.iter().map(|k| *k == CellKind::Road).collect(),
        })
    }

    pub fn filled(size: usize, kind: CellKind) -> Self {
        Self::from_kinds(size, &vec![kind; size * size]).expect("consistent size")
    }

    pub fn idx(&self, c: Cell) -> usize {
        c.row * self.size + c.col
    }

    pub fn kind(&self, c: Cell) -> CellKind {
        let i = self.idx(c);
        if self.building[i] {
            CellKind::Building
        } else if self.road[i] {
            CellKind::Road
        } else {
            CellKind::Ground
        }
    }

    pub fn set_kind(&mut self, c: Cell, kind: CellKind) {
        let i = self.idx(c);
        self.building[i] = kind == CellKind::Building;
        self.road[i] = kind == CellKind::Road;
    }

    pub fn is_building(&self, c: Cell) -> bool {
        self.building[self.idx(c)]
    }

    pub fn is_road(&self, c: Cell) -> bool {
        self.road[self.idx(c)]
    }

    pub fn building_mask(&self) -> &[bool] {
        &self.building
    }

    pub fn road_mask(&self) -> &[bool] {
        &self.road
    }

    /// Cell containing a point, or `None` off-grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (col, row) = (x.floor() as usize, y.floor() as usize);
        (col < self.size && row < self.size).then_some(Cell { row, col })
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size).flat_map(move |row| (0..self.size).map(move |col| Cell { row, col }))
    }

    /// True when some 4-connected road loop encloses non-road cells.
    ///
    /// Floods the non-road complement (8-connected, as the dual of a
    /// 4-connected road) from beyond the border; any non-road cell the
    /// flood cannot reach is enclosed by road.
    pub fn has_road_circuit(&self) -> bool {
        let n = self.size;
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            for c in [Cell::new(0, i), Cell::new(n - 1, i), Cell::new(i, 0), Cell::new(i, n - 1)] {
                let k = self.idx(c);
                if !self.road[k] && !seen[k] {
                    seen[k] = true;
                    queue.push_back(c);
                }
            }
        }
        while let Some(c) = queue.pop_front() {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, q) = (c.row as i64 + dr, c.col as i64 + dc);
                    if r < 0 || q < 0 || r >= n as i64 || q >= n as i64 {
                        continue;
                    }
                    let nc = Cell::new(r as usize, q as usize);
                    let k = self.idx(nc);
                    if !self.road[k] && !seen[k] {
                        seen[k] = true;
                        queue.push_back(nc);
                    }
                }
            }
        }
        (0..n * n).any(|k| !self.road[k] && !seen[k])
    }
}

/// Every road cell, in row-major order.
pub fn drivable_cells(env: &EnvironmentGrid) -> Vec<Cell> {
    env.cells().filter(|c| env.is_road(*c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub size: usize,
    /// Inclusive range of city-block side lengths, in cells.
    pub block_size_range: (usize, usize),
    /// Inclusive range of street widths, in cells.
    pub street_width_range: (usize, usize),
    /// Chance that a block is left as open ground.
    pub park_probability: f64,
    /// Chance that a block holds two buildings separated by a gap.
    pub split_probability: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            size: 64,
            block_size_range: (12, 20),
            street_width_range: (6, 8),
            park_probability: 0.1,
            split_probability: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    start: usize,
    len: usize,
    street: bool,
}

fn axis_layout(rng: &mut ChaCha8Rng, p: &EnvParams) -> Result<Vec<Segment>> {
    let (bmin, bmax) = p.block_size_range;
    let (smin, smax) = p.street_width_range;
    let size = p.size;
    let first = rng.gen_range(smin..=smax);
    let mut segs = vec![Segment { start: 0, len: first, street: true }];
    let mut pos = first;
    loop {
        let rest = size - pos;
        if rest == 0 {
            break;
        }
        if rest < bmin + smin {
            // too small for another block: widen the trailing street
            segs.last_mut().expect("non-empty").len += rest;
            break;
        }
        let block = rng.gen_range(bmin..=bmax).min(rest - smin);
        let after = rest - block;
        let street = rng.gen_range(smin..=smax);
        if after < street + bmin + smin {
            let (block, street) = if after <= smax { (block, after) } else { (block + after - smax, smax) };
            segs.push(Segment { start: pos, len: block, street: false });
            segs.push(Segment { start: pos + block, len: street, street: true });
            break;
        }
        segs.push(Segment { start: pos, len: block, street: false });
        segs.push(Segment { start: pos + block, len: street, street: true });
        pos += block + street;
    }
    if !segs.iter().any(|s| !s.street) {
        return Err(Error::Generation(format!(
            "size {size} leaves no room for a block of {bmin}..={bmax} between streets of {smin}..={smax}"
        )));
    }
    Ok(segs)
}

/// Procedural blocks-and-streets city. Streets run edge to edge on both
/// axes and always include the perimeter, so the road network contains a
/// loop around every block. Blocks carry a one-cell ground sidewalk.
pub fn generate_environment(seed: u64, params: &EnvParams) -> Result<EnvironmentGrid> {
    let p = params;
    let (bmin, bmax) = p.block_size_range;
    let (smin, smax) = p.street_width_range;
    if p.size == 0 || bmin == 0 || smin == 0 || bmin > bmax || smin > smax {
        return Err(Error::Generation(format!("invalid ranges in {p:?}")));
    }
    if bmax >= p.size || smax >= p.size || 2 * smin + bmin > p.size {
        return Err(Error::Generation(format!(
            "size {} admits no street circuit with blocks {bmin}..={bmax} and streets {smin}..={smax}",
            p.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = axis_layout(&mut rng, p)?;
    let cols = axis_layout(&mut rng, p)?;
    let n = p.size;
    let mut kinds = vec![CellKind::Ground; n * n];
    for rs in &rows {
        for cs in &cols {
            if rs.street || cs.street {
                for r in rs.start..rs.start + rs.len {
                    for c in cs.start..cs.start + cs.len {
                        kinds[r * n + c] = CellKind::Road;
                    }
                }
                continue;
            }
            if rng.gen_bool(p.park_probability.clamp(0.0, 1.0)) {
                continue;
            }
            let inset = usize::from(rs.len >= 3 && cs.len >= 3);
            let (r0, r1) = (rs.start + inset, rs.start + rs.len - inset);
            let (c0, c1) = (cs.start + inset, cs.start + cs.len - inset);
            let split = rng.gen_bool(p.split_probability.clamp(0.0, 1.0));
            for r in r0..r1 {
                for c in c0..c1 {
                    let gap = split
                        && if r1 - r0 >= c1 - c0 {
                            let mid = (r0 + r1) / 2;
                            r1 - r0 >= 7 && (mid - 1..=mid).contains(&r)
                        } else {
                            let mid = (c0 + c1) / 2;
                            c1 - c0 >= 7 && (mid - 1..=mid).contains(&c)
                        };
                    if !gap {
                        kinds[r * n + c] = CellKind::Building;
                    }
                }
            }
        }
    }
    let env = EnvironmentGrid::from_kinds(n, &kinds)?;
    if !env.has_road_circuit() {
        return Err(Error::Generation("generated layout has no road circuit".into()));
    }
    Ok(env)
}

/// Pixel values used for environment rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCoding {
    pub building_value: u8,
    pub road_value: u8,
    pub ground_value: u8,
    /// Reject pixels matching none of the three values.
    pub strict: bool,
}

impl Default for CellCoding {
    fn default() -> Self {
        CellCoding { building_value: 0, road_value: 128, ground_value: 255, strict: false }
    }
}

pub fn load_environment(image: &GrayImage, coding: &CellCoding) -> Result<EnvironmentGrid> {
    if image.width != image.height || image.width == 0 {
        return Err(Error::Raster(format!("expected a square image, got {}x{}", image.width, image.height)));
    }
    let mut kinds = Vec::with_capacity(image.pixels.len());
    for (i, &v) in image.pixels.iter().enumerate() {
        kinds.push(if v == coding.building_value {
            CellKind::Building
        } else if v == coding.road_value {
            CellKind::Road
        } else if v == coding.ground_value || !coding.strict {
            CellKind::Ground
        } else {
            return Err(Error::Raster(format!(
                "unknown pixel value {v} at ({}, {})",
                i / image.width,
                i % image.width
            )));
        });
    }
    EnvironmentGrid::from_kinds(image.width, &kinds)
}

pub fn export_environment(env: &EnvironmentGrid, coding: &CellCoding) -> GrayImage {
    let pixels = env
        .cells()
        .map(|c| match env.kind(c) {
            CellKind::Building => coding.building_value,
            CellKind::Road => coding.road_value,
            CellKind::Ground => coding.ground_value,
        })
        .collect();
    GrayImage::new(env.size, env.size, pixels)
}
