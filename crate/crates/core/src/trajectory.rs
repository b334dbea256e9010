//! Rule-based vehicle motion on a road raster.
//!
//! Each frame, every vehicle probes a few directions ahead of it, picks the
//! road target best aligned with its heading, turns part of the way toward
//! it and advances one step if its footprint stays on free road. Vehicles
//! update in ascending index order, so later vehicles see the already
//! updated footprints of earlier ones.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{drivable_cells, Cell, EnvironmentGrid};

/// Fraction of the wrapped heading error corrected per frame.
pub const SMOOTHING: f64 = 0.4;
/// Look-ahead distance in vehicle lengths.
pub const LOOK_AHEAD: f64 = 1.5;
/// Minimum seeding distance between vehicle centers, in vehicle lengths.
pub const SPACING: f64 = 4.0;
/// Frames without movement after which ±90° probes are added.
pub const STUCK_FRAMES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Meters per frame.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { speed: 1.0, length: 4.0, width: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`; 0 points along +x, π/2 along +y (down the raster).
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub stuck_counter: u32,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, heading: f64, params: &VehicleParams) -> Self {
        VehicleState {
            x,
            y,
            heading: normalize_angle(heading),
            speed: params.speed,
            length: params.length,
            width: params.width,
            stuck_counter: 0,
        }
    }

    /// Footprint corners, counter-clockwise from rear-right.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)].map(|(u, v)| (self.x + u * c - v * s, self.y + u * s + v * c))
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.length / 2.0 + 1e-9 && v.abs() <= self.width / 2.0 + 1e-9
    }

    /// Cells whose centers lie inside the footprint, or `None` when part of
    /// the rectangle leaves the `size x size` grid.
    pub fn footprint(&self, size: usize) -> Option<Vec<Cell>> {
        let corners = self.corners();
        let n = size as f64;
        if corners.iter().any(|&(x, y)| x < -1e-9 || y < -1e-9 || x > n + 1e-9 || y > n + 1e-9) {
            return None;
        }
        Some(self.cells_within(size))
    }

    /// Footprint cells clipped to the grid.
    pub fn cells_within(&self, size: usize) -> Vec<Cell> {
        let corners = self.corners();
        let lo = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let clamp = |v: f64| v.max(0.0).min(size as f64);
        let (c0, c1) = (clamp(lo(|p| p.0) - 0.5).floor() as usize, clamp(hi(|p| p.0) + 0.5).ceil() as usize);
        let (r0, r1) = (clamp(lo(|p| p.1) - 0.5).floor() as usize, clamp(hi(|p| p.1) + 0.5).ceil() as usize);
        let mut cells = Vec::new();
        for row in r0..r1.min(size) {
            for col in c0..c1.min(size) {
                let cell = Cell::new(row, col);
                let (cx, cy) = cell.center();
                if self.contains(cx, cy) {
                    cells.push(cell);
                }
            }
        }
        cells
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Difference `to - from` wrapped into `(-π, π]`.
pub fn wrapped_delta(from: f64, to: f64) -> f64 {
    let mut d = (to - from).rem_euclid(TAU);
    if d > PI {
        d -= TAU;
    }
    d
}

/// Heading after one smoothing step toward `target`.
pub fn smooth_heading(current: f64, target: f64) -> f64 {
    normalize_angle(current + SMOOTHING * wrapped_delta(current, target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Probe offset relative to the current heading.
    pub offset: f64,
    /// Direction from the vehicle center to the target cell center.
    pub heading: f64,
    pub target: Cell,
}

/// Probe offsets in tie-break priority order.
pub fn probe_offsets(wide: bool) -> &'static [f64] {
    const NARROW: [f64; 3] = [0.0, FRAC_PI_4, -FRAC_PI_4];
    const WIDE: [f64; 5] = [0.0, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_2, -FRAC_PI_2];
    if wide {
        &WIDE
    } else {
        &NARROW
    }
}

/// Road targets at the look-ahead distance for each probe direction.
///
/// Along each probe ray the cells within half a cell of the ideal
/// look-ahead point are examined; the road cell whose center is nearest to
/// that point becomes the target. Directions without one are omitted.
pub fn probe_directions(env: &EnvironmentGrid, v: &VehicleState, wide: bool) -> Vec<Candidate> {
    let look = LOOK_AHEAD * v.length;
    let mut out = Vec::new();
    for &offset in probe_offsets(wide) {
        let dir = v.heading + offset;
        let (s, c) = dir.sin_cos();
        let (ix, iy) = (v.x + look * c, v.y + look * s);
        let mut best: Option<(f64, Cell)> = None;
        for k in -2..=2 {
            let d = look + 0.25 * k as f64;
            let Some(cell) = env.cell_at(v.x + d * c, v.y + d * s) else { continue };
            if !env.is_road(cell) {
                continue;
            }
            let (cx, cy) = cell.center();
            let dist = (cx - ix).hypot(cy - iy);
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, cell));
            }
        }
        if let Some((_, target)) = best {
            let (cx, cy) = target.center();
            let heading = if (cx - v.x).abs() < 1e-12 && (cy - v.y).abs() < 1e-12 {
                normalize_angle(dir)
            } else {
                normalize_angle((cy - v.y).atan2(cx - v.x))
            };
            out.push(Candidate { offset, heading, target });
        }
    }
    out
}

/// The candidate with maximal cosine similarity to `heading`; earlier
/// probes win ties.
pub fn select_candidate(candidates: &[Candidate], heading: f64) -> Option<Candidate> {
    let mut best: Option<(f64, Candidate)> = None;
    for cand in candidates {
        let score = (cand.heading - heading).cos();
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, *cand));
        }
    }
    best.map(|(_, c)| c)
}

/// Per-cell count of vehicle footprints.
#[derive(Debug, Clone)]
pub struct Occupancy {
    size: usize,
    counts: Vec<u16>,
}

impl Occupancy {
    pub fn new(size: usize) -> Self {
        Occupancy { size, counts: vec![0; size * size] }
    }

    pub fn from_vehicles(size: usize, vehicles: &[VehicleState]) -> Self {
        let mut occ = Occupancy::new(size);
        for v in vehicles {
            occ.add(&v.cells_within(size));
        }
        occ
    }

    pub fn add(&mut self, cells: &[Cell]) {
        for c in cells {
            self.counts[c.row * self.size + c.col] += 1;
        }
    }

    pub fn remove(&mut self, cells: &[Cell]) {
        for c in cells {
            let k = c.row * self.size + c.col;
            self.counts[k] = self.counts[k].saturating_sub(1);
        }
    }

    pub fn occupied(&self, c: Cell) -> bool {
        self.counts[c.row * self.size + c.col] > 0
    }
}

/// Footprint entirely on road, inside the grid and clear of `others`.
pub fn pose_is_free(env: &EnvironmentGrid, v: &VehicleState, others: &Occupancy) -> bool {
    match v.footprint(env.size) {
        Some(cells) => !cells.is_empty() && cells.iter().all(|c| env.is_road(*c) && !others.occupied(*c)),
        None => false,
    }
}

/// One frame of the navigation and smoothing rules. `others` must hold the
/// footprints of every other vehicle (not this one).
pub fn step_vehicle_with(env: &EnvironmentGrid, v: &VehicleState, others: &Occupancy) -> VehicleState {
    let wide = v.stuck_counter > STUCK_FRAMES;
    let candidates = probe_directions(env, v, wide);
    let target = select_candidate(&candidates, v.heading).map_or(v.heading, |c| c.heading);
    let heading = smooth_heading(v.heading, target);
    let (s, c) = heading.sin_cos();
    let moved = VehicleState { x: v.x + v.speed * c, y: v.y + v.speed * s, heading, stuck_counter: 0, ..*v };
    if v.speed > 0.0 && pose_is_free(env, &moved, others) {
        return moved;
    }
    let turned = VehicleState { heading, stuck_counter: v.stuck_counter + 1, ..*v };
    if pose_is_free(env, &turned, others) {
        turned
    } else {
        VehicleState { stuck_counter: v.stuck_counter + 1, ..*v }
    }
}

pub fn step_vehicle(env: &EnvironmentGrid, v: &VehicleState, others: &[VehicleState]) -> VehicleState {
    step_vehicle_with(env, v, &Occupancy::from_vehicles(env.size, others))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub vehicles: Vec<VehicleState>,
    /// Set when fewer vehicles than requested fit.
    pub warning: Option<String>,
}

/// Contiguous road run through `cell` along one axis.
fn road_run(env: &EnvironmentGrid, cell: Cell, horizontal: bool) -> usize {
    let n = env.size as i64;
    let mut len = 1;
    for step in [-1i64, 1] {
        let mut k = 1;
        loop {
            let (r, c) = if horizontal {
                (cell.row as i64, cell.col as i64 + step * k)
            } else {
                (cell.row as i64 + step * k, cell.col as i64)
            };
            if r < 0 || c < 0 || r >= n || c >= n || !env.is_road(Cell::new(r as usize, c as usize)) {
                break;
            }
            len += 1;
            k += 1;
        }
    }
    len
}

/// Axis-aligned heading along the local road that agrees with clockwise
/// circulation about the map center (on screen, with `y` down).
pub fn clockwise_heading(env: &EnvironmentGrid, cell: Cell) -> f64 {
    let (x, y) = cell.center();
    let mid = env.size as f64 / 2.0;
    let tangent = (-(y - mid), x - mid);
    let horizontal = road_run(env, cell, true) >= road_run(env, cell, false);
    let options = if horizontal { [0.0, PI] } else { [FRAC_PI_2, 3.0 * FRAC_PI_2] };
    let score = |h: f64| h.cos() * tangent.0 + h.sin() * tangent.1;
    if score(options[1]) > score(options[0]) + 1e-12 {
        options[1]
    } else {
        options[0]
    }
}

/// Places up to `count` vehicles at road cell centers, at least four
/// vehicle lengths apart, heading clockwise along their street.
pub fn seed_vehicles(env: &EnvironmentGrid, count: usize, rng_seed: u64, params: &VehicleParams) -> SeedResult {
    let mut cells = drivable_cells(env);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    cells.shuffle(&mut rng);
    let min_dist = SPACING * params.length;
    let mut vehicles: Vec<VehicleState> = Vec::new();
    let mut occ = Occupancy::new(env.size);
    for cell in cells {
        if vehicles.len() >= count {
            break;
        }
        let (x, y) = cell.center();
        let v = VehicleState::new(x, y, clockwise_heading(env, cell), params);
        if vehicles.iter().any(|o| (o.x - x).hypot(o.y - y) < min_dist) {
            continue;
        }
        if !pose_is_free(env, &v, &occ) {
            continue;
        }
        occ.add(&v.cells_within(env.size));
        vehicles.push(v);
    }
    let warning = (vehicles.len() < count)
        .then(|| format!("only {} of {count} vehicles fit with {min_dist} m spacing", vehicles.len()));
    SeedResult { vehicles, warning }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Vec<VehicleState>>,
    /// Seconds per frame.
    pub frame_interval: f64,
    pub traj_id: usize,
}

pub const FRAME_INTERVAL: f64 = 0.1;

pub fn simulate_trajectory(env: &EnvironmentGrid, initial: &[VehicleState], num_frames: usize) -> Trajectory {
    let mut frames = vec![initial.to_vec()];
    let mut occ = Occupancy::from_vehicles(env.size, initial);
    for _ in 1..num_frames.max(1) {
        let mut cur = frames.last().expect("non-empty").clone();
        for i in 0..cur.len() {
            let own = cur[i].cells_within(env.size);
            occ.remove(&own);
            let next = step_vehicle_with(env, &cur[i], &occ);
            occ.add(&next.cells_within(env.size));
            cur[i] = next;
        }
        frames.push(cur);
    }
    Trajectory { frames, frame_interval: FRAME_INTERVAL, traj_id: 0 }
}

/// `frame_index,vehicle_index,x,y,heading`, one row per vehicle per frame.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("frame_index,vehicle_index,x,y,heading\n");
    for (f, frame) in traj.frames.iter().enumerate() {
        for (i, v) in frame.iter().enumerate() {
            let _ = writeln!(out, "{f},{i},{},{},{}", v.x, v.y, v.heading);
        }
    }
    out
}
