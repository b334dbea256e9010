//! Grid dominant-path propagation.
//!
//! A receiver in line of sight of the transmitter gets the free-space value
//! for the straight distance. Otherwise the signal follows the shortest
//! obstacle-avoiding polyline, which bends only at convex obstacle corners
//! (lattice points touching exactly one blocked cell). Each bend costs a
//! fixed diffraction loss: `tx_power - FSPL(length) - bends * diffraction_loss`.
//! Among equally short polylines the one with fewest bends is used.
//!
//! Geometry is exact: points are cell centers or lattice corners, kept as
//! integer coordinates in half-cell units, and segment clearance is decided
//! with integer arithmetic. A segment is blocked when it passes through the
//! interior of a blocked cell, squeezes between two diagonally touching
//! blocked cells, or runs along an edge shared by two blocked cells.

use std::cell::OnceCell;

use serde::{Deserialize, Serialize};

use crate::env::{Cell, EnvironmentGrid};
use crate::trajectory::VehicleState;
use crate::{Error, Result};

/// Speed of light, m/s.
pub const LIGHT_SPEED: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub frequency_hz: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    /// Loss added per bend of the dominant path.
    pub diffraction_loss_db: f64,
    /// Value given to blocked and unreachable cells; also the lower clamp.
    pub floor_dbm: f64,
    /// Distances below this are clamped before evaluating free-space loss.
    pub min_distance_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 23.0,
            frequency_hz: 3.5e9,
            tx_height_m: 1.5,
            rx_height_m: 1.5,
            diffraction_loss_db: 12.0,
            floor_dbm: -135.0,
            min_distance_m: 0.5,
        }
    }
}

pub const DEFAULT_MIN_DISTANCE_M: f64 = 0.5;

/// Path lengths closer than this (meters) count as the same geodesic.
pub const TIE_TOLERANCE_M: f64 = 1e-9;

/// Free-space pathloss in dB, `20 log10(4 pi d f / c)`.
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / LIGHT_SPEED).log10()
}

/// Received power after free-space loss, distance clamped to 0.5 m.
pub fn free_space_gain(distance_m: f64, frequency_hz: f64, tx_power_dbm: f64) -> f64 {
    tx_power_dbm - fspl_db(distance_m.max(DEFAULT_MIN_DISTANCE_M), frequency_hz)
}

/// Cells whose centers lie inside any vehicle footprint, sorted and
/// deduplicated.
pub fn rasterize_vehicles(frame: &[VehicleState], env: &EnvironmentGrid) -> Vec<Cell> {
    let mut cells: Vec<Cell> = frame.iter().flat_map(|v| v.cells_within(env.size)).collect();
    cells.sort();
    cells.dedup();
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneRef {
    pub env_id: usize,
    pub traj_id: usize,
    pub tx_id: usize,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    pub size: usize,
    /// Received power in dBm, row-major.
    pub values_db: Vec<f64>,
    pub scene_ref: SceneRef,
}

impl RadioMap {
    pub fn at(&self, c: Cell) -> f64 {
        self.values_db[c.row * self.size + c.col]
    }
}

#[derive(Debug, Clone)]
pub struct SceneSnapshot<'a> {
    pub env: &'a EnvironmentGrid,
    pub vehicle_cells: Vec<Cell>,
    pub tx: Cell,
    pub radio: RadioParams,
}

impl<'a> SceneSnapshot<'a> {
    pub fn new(env: &'a EnvironmentGrid, vehicle_cells: Vec<Cell>, tx: Cell) -> Self {
        SceneSnapshot { env, vehicle_cells, tx, radio: RadioParams::default() }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.env, &self.vehicle_cells)
    }
}

/// A point in half-cell units: cell centers are odd, lattice corners even.
pub type HalfPoint = (i64, i64);

pub fn cell_point(c: Cell) -> HalfPoint {
    (2 * c.col as i64 + 1, 2 * c.row as i64 + 1)
}

/// Blocked raster plus lazily computed visibility from each corner vertex.
/// Independent of the transmitter, so one geometry serves every tx of a
/// frame.
pub struct Geometry {
    size: usize,
    resolution: f64,
    blocked: Vec<bool>,
    vertices: Vec<HalfPoint>,
    vertex_cells: Vec<OnceCell<Vec<(u32, f64)>>>,
    vertex_links: Vec<OnceCell<Vec<(u32, f64)>>>,
}

impl Geometry {
    pub fn new(env: &EnvironmentGrid, vehicle_cells: &[Cell]) -> Result<Self> {
        let n = env.size;
        let mut blocked = env.building_mask().to_vec();
        for c in vehicle_cells {
            if c.row >= n || c.col >= n {
                return Err(Error::OutOfBounds { row: c.row as i64, col: c.col as i64, size: n });
            }
            if env.is_building(*c) {
                return Err(Error::Scene(format!("vehicle cell ({}, {}) overlaps a building", c.row, c.col)));
            }
            blocked[c.row * n + c.col] = true;
        }
        Ok(Self::from_blocked(n, env.resolution, blocked))
    }

    pub fn from_blocked(size: usize, resolution: f64, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), size * size);
        let mut g = Geometry { size, resolution, blocked, vertices: Vec::new(), vertex_cells: Vec::new(), vertex_links: Vec::new() };
        for y in 0..=size as i64 {
            for x in 0..=size as i64 {
                let around = [g.blocked_at(y - 1, x - 1), g.blocked_at(y - 1, x), g.blocked_at(y, x - 1), g.blocked_at(y, x)];
                if around.iter().filter(|&&b| b).count() == 1 {
                    g.vertices.push((2 * x, 2 * y));
                }
            }
        }
        g.vertex_cells = (0..g.vertices.len()).map(|_| OnceCell::new()).collect();
        g.vertex_links = (0..g.vertices.len()).map(|_| OnceCell::new()).collect();
        g
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Convex corner vertices in half-cell units.
    pub fn vertices(&self) -> &[HalfPoint] {
        &self.vertices
    }

    /// Off-grid cells count as free.
    pub fn blocked_at(&self, row: i64, col: i64) -> bool {
        let n = self.size as i64;
        row >= 0 && col >= 0 && row < n && col < n && self.blocked[(row * n + col) as usize]
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[c.row * self.size + c.col]
    }

    /// Euclidean distance in meters between two half-cell points.
    pub fn distance(&self, a: HalfPoint, b: HalfPoint) -> f64 {
        let (dx, dy) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
        (dx * dx + dy * dy).sqrt() * 0.5 * self.resolution
    }

    /// Exact segment clearance between two half-cell points.
    pub fn segment_clear(&self, a: HalfPoint, b: HalfPoint) -> bool {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        if dx == 0 && dy == 0 {
            return !(a.0 % 2 != 0 && a.1 % 2 != 0 && self.blocked_at(a.1.div_euclid(2), a.0.div_euclid(2)));
        }
        if dx == 0 && a.0 % 2 == 0 {
            return self.clear_along_line(a.0 / 2, a.1, b.1, true);
        }
        if dy == 0 && a.1 % 2 == 0 {
            return self.clear_along_line(a.1 / 2, a.0, b.0, false);
        }
        let start = |p: i64, d: i64| if p % 2 == 0 && d < 0 { p / 2 - 1 } else { p.div_euclid(2) };
        let (mut cx, mut cy) = (start(a.0, dx), start(a.1, dy));
        let (sx, sy) = (dx.signum(), dy.signum());
        let (den_x, den_y) = (dx.abs(), dy.abs());
        // numerators of the next crossing parameters, t = num / den
        let mut num_x = if dx > 0 { 2 * (cx + 1) - a.0 } else { a.0 - 2 * cx };
        let mut num_y = if dy > 0 { 2 * (cy + 1) - a.1 } else { a.1 - 2 * cy };
        loop {
            if self.blocked_at(cy, cx) {
                return false;
            }
            let x_done = den_x == 0 || num_x >= den_x;
            let y_done = den_y == 0 || num_y >= den_y;
            if x_done && y_done {
                return true;
            }
            let ord = if x_done {
                std::cmp::Ordering::Greater
            } else if y_done {
                std::cmp::Ordering::Less
            } else {
                (num_x * den_y).cmp(&(num_y * den_x))
            };
            match ord {
                std::cmp::Ordering::Less => {
                    cx += sx;
                    num_x += 2;
                }
                std::cmp::Ordering::Greater => {
                    cy += sy;
                    num_y += 2;
                }
                std::cmp::Ordering::Equal => {
                    if self.blocked_at(cy, cx + sx) && self.blocked_at(cy + sy, cx) {
                        return false;
                    }
                    cx += sx;
                    cy += sy;
                    num_x += 2;
                    num_y += 2;
                }
            }
        }
    }

    /// Segment lying on grid line `line` (a column boundary when
    /// `vertical`, else a row boundary) between half-unit coordinates.
    fn clear_along_line(&self, line: i64, from: i64, to: i64, vertical: bool) -> bool {
        let (lo, hi) = (from.min(to), from.max(to));
        let cell = |along: i64, across: i64| if vertical { self.blocked_at(along, across) } else { self.blocked_at(across, along) };
        // unit spans [k, k+1] overlapping (lo/2, hi/2) with positive length
        let mut k = lo.div_euclid(2);
        while 2 * k < hi {
            if 2 * (k + 1) > lo && cell(k, line - 1) && cell(k, line) {
                return false;
            }
            k += 1;
        }
        // interior lattice points
        let mut p = lo.div_euclid(2) + 1;
        while 2 * p < hi {
            if 2 * p > lo
                && ((cell(p - 1, line - 1) && cell(p, line)) || (cell(p - 1, line) && cell(p, line - 1)))
            {
                return false;
            }
            p += 1;
        }
        true
    }

    fn cells_seen_from(&self, v: usize) -> &[(u32, f64)] {
        self.vertex_cells[v].get_or_init(|| {
            let p = self.vertices[v];
            let mut out = Vec::new();
            for idx in 0..self.size * self.size {
                if self.blocked[idx] {
                    continue;
                }
                let q = cell_point(Cell::new(idx / self.size, idx % self.size));
                if self.segment_clear(p, q) {
                    out.push((idx as u32, self.distance(p, q)));
                }
            }
            out
        })
    }

    fn vertices_seen_from(&self, v: usize) -> &[(u32, f64)] {
        self.vertex_links[v].get_or_init(|| {
            let p = self.vertices[v];
            (0..self.vertices.len())
                .filter(|&w| w != v)
                .filter_map(|w| {
                    let q = self.vertices[w];
                    self.segment_clear(p, q).then(|| (w as u32, self.distance(p, q)))
                })
                .collect()
        })
    }

    fn check_tx(&self, tx: Cell) -> Result<()> {
        if tx.row >= self.size || tx.col >= self.size {
            return Err(Error::OutOfBounds { row: tx.row as i64, col: tx.col as i64, size: self.size });
        }
        if self.is_blocked(tx) {
            return Err(Error::Scene(format!("transmitter ({}, {}) is inside an obstacle", tx.row, tx.col)));
        }
        Ok(())
    }

    /// Shortest path lengths to each vertex, layer `k` allowing `k` bends
    /// before the vertex, iterated until the layers stop changing.
    fn vertex_layers(&self, tx: Cell) -> Vec<Vec<f64>> {
        let src = cell_point(tx);
        let first: Vec<f64> = self
            .vertices
            .iter()
            .map(|&v| if self.segment_clear(src, v) { self.distance(src, v) } else { f64::INFINITY })
            .collect();
        let mut layers = vec![first];
        while layers.len() <= self.vertices.len() {
            let prev = layers.last().expect("non-empty");
            let mut next = prev.clone();
            for (v, &dv) in prev.iter().enumerate() {
                if dv.is_finite() {
                    for &(w, d) in self.vertices_seen_from(v) {
                        let cand = dv + d;
                        if cand < next[w as usize] {
                            next[w as usize] = cand;
                        }
                    }
                }
            }
            if next == *prev {
                break;
            }
            layers.push(next);
        }
        layers
    }

    /// Value for a geodesic of `length_m` meters with `bends` corners.
    fn gain(&self, radio: &RadioParams, length_m: f64, bends: usize) -> f64 {
        let d = length_m.hypot(radio.tx_height_m - radio.rx_height_m).max(radio.min_distance_m);
        let v = radio.tx_power_dbm - fspl_db(d, radio.frequency_hz) - bends as f64 * radio.diffraction_loss_db;
        v.max(radio.floor_dbm)
    }

    /// Shortest free path from `tx` to `rx` and its corner count, or `None`
    /// when `rx` is blocked or unreachable.
    pub fn geodesic(&self, tx: Cell, rx: Cell) -> Result<Option<Geodesic>> {
        self.check_tx(tx)?;
        if rx.row >= self.size || rx.col >= self.size {
            return Err(Error::OutOfBounds { row: rx.row as i64, col: rx.col as i64, size: self.size });
        }
        if self.is_blocked(rx) {
            return Ok(None);
        }
        let (src, dst) = (cell_point(tx), cell_point(rx));
        let mut lengths = vec![if self.segment_clear(src, dst) { self.distance(src, dst) } else { f64::INFINITY }];
        let seen: Vec<Option<f64>> = self
            .vertices
            .iter()
            .map(|&p| self.segment_clear(p, dst).then(|| self.distance(p, dst)))
            .collect();
        for layer in self.vertex_layers(tx) {
            let mut len = f64::INFINITY;
            for (dv, d) in layer.iter().zip(&seen) {
                if let (true, Some(d)) = (dv.is_finite(), d) {
                    len = len.min(dv + d);
                }
            }
            lengths.push(len);
        }
        Ok(resolve(lengths.iter().copied()))
    }

    /// Dominant-path value at one receiver cell.
    pub fn gain_at(&self, tx: Cell, rx: Cell, radio: &RadioParams) -> Result<f64> {
        Ok(match self.geodesic(tx, rx)? {
            Some(g) => self.gain(radio, g.length_m, g.bends),
            None => radio.floor_dbm,
        })
    }

    /// Dominant-path values for every cell, sharing the vertex layers.
    pub fn radio_map(&self, tx: Cell, radio: &RadioParams) -> Result<Vec<f64>> {
        self.check_tx(tx)?;
        let n = self.size;
        let src = cell_point(tx);
        let layers = self.vertex_layers(tx);
        // lengths[k * n*n + idx]: shortest length to cell idx with k bends
        let mut lengths = vec![f64::INFINITY; (layers.len() + 1) * n * n];
        for idx in 0..n * n {
            if !self.blocked[idx] {
                let q = cell_point(Cell::new(idx / n, idx % n));
                if self.segment_clear(src, q) {
                    lengths[idx] = self.distance(src, q);
                }
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            let row = &mut lengths[(k + 1) * n * n..(k + 2) * n * n];
            for (v, &dv) in layer.iter().enumerate() {
                if dv.is_finite() {
                    for &(idx, d) in self.cells_seen_from(v) {
                        let cand = dv + d;
                        if cand < row[idx as usize] {
                            row[idx as usize] = cand;
                        }
                    }
                }
            }
        }
        Ok((0..n * n)
            .map(|idx| {
                match resolve(lengths[idx..].iter().step_by(n * n).copied()) {
                    Some(g) if !self.blocked[idx] => self.gain(radio, g.length_m, g.bends),
                    _ => radio.floor_dbm,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodesic {
    pub length_m: f64,
    pub bends: usize,
}

/// Picks the geodesic from shortest lengths indexed by bend budget: the
/// shortest length overall, with the fewest bends among budgets reaching it.
fn resolve(by_bends: impl Iterator<Item = f64> + Clone) -> Option<Geodesic> {
    let shortest = by_bends.clone().fold(f64::INFINITY, f64::min);
    if !shortest.is_finite() {
        return None;
    }
    let bends = by_bends.clone().position(|l| l <= shortest + TIE_TOLERANCE_M)?;
    Some(Geodesic { length_m: shortest, bends })
}

pub fn dominant_path_gain(scene: &SceneSnapshot<'_>, rx: Cell) -> Result<f64> {
    if rx.row >= scene.env.size || rx.col >= scene.env.size {
        return Err(Error::OutOfBounds { row: rx.row as i64, col: rx.col as i64, size: scene.env.size });
    }
    scene.geometry()?.gain_at(scene.tx, rx, &scene.radio)
}

pub fn compute_radio_map(scene: &SceneSnapshot<'_>) -> Result<RadioMap> {
    let values_db = scene.geometry()?.radio_map(scene.tx, &scene.radio)?;
    Ok(RadioMap {
        size: scene.env.size,
        values_db,
        scene_ref: SceneRef { env_id: scene.env.env_id, ..SceneRef::default() },
    })
}
