//! Brute-force reference for the dominant-path solver.

use std::cell::RefCell;
use std::collections::HashMap;

use radiomotion::solver::{fspl_db, RadioParams};

pub type P = (i64, i64);

/// Reference scene checked by brute force: exact open-set geometry and a
/// depth-first enumeration of simple corner paths.
pub struct Oracle {
    pub n: i64,
    pub blocked: Vec<bool>,
    pub vertices: Vec<P>,
    pub radio: RadioParams,
    seen: RefCell<HashMap<(P, P), bool>>,
}

/// Fraction num/den with den > 0.
#[derive(Clone, Copy)]
struct Frac(i64, i64);

impl Frac {
    fn lt(self, o: Frac) -> bool {
        self.0 * o.1 < o.0 * self.1
    }
}

impl Oracle {
    pub fn new(n: usize, blocked: Vec<bool>) -> Self {
        let mut o = Oracle { n: n as i64, blocked, vertices: vec![], radio: RadioParams::default(), seen: RefCell::default() };
        for y in 0..=o.n {
            for x in 0..=o.n {
                let count = [(y - 1, x - 1), (y - 1, x), (y, x - 1), (y, x)].iter().filter(|&&(r, c)| o.b(r, c)).count();
                if count == 1 {
                    o.vertices.push((2 * x, 2 * y));
                }
            }
        }
        o
    }

    pub fn b(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && r < self.n && c < self.n && self.blocked[(r * self.n + c) as usize]
    }

    /// Open interval of t in (0,1) where lo < a + t d < hi, or None if empty.
    fn slab(a: i64, d: i64, lo: i64, hi: i64) -> Option<(Frac, Frac)> {
        if d == 0 {
            return (lo < a && a < hi).then_some((Frac(0, 1), Frac(1, 1)));
        }
        let (t1, t2) = if d > 0 { (Frac(lo - a, d), Frac(hi - a, d)) } else { (Frac(a - hi, -d), Frac(a - lo, -d)) };
        Some((t1, t2))
    }

    fn enters_cell(&self, a: P, q: P, r: i64, c: i64) -> bool {
        let (dx, dy) = (q.0 - a.0, q.1 - a.1);
        let Some((x0, x1)) = Self::slab(a.0, dx, 2 * c, 2 * c + 2) else { return false };
        let Some((y0, y1)) = Self::slab(a.1, dy, 2 * r, 2 * r + 2) else { return false };
        let lo = [Frac(0, 1), x0, y0].into_iter().fold(Frac(0, 1), |m, f| if m.lt(f) { f } else { m });
        let hi = [Frac(1, 1), x1, y1].into_iter().fold(Frac(1, 1), |m, f| if f.lt(m) { f } else { m });
        lo.lt(hi)
    }

    pub fn visible(&self, a: P, q: P) -> bool {
        if let Some(&v) = self.seen.borrow().get(&(a, q)) {
            return v;
        }
        let v = self.visible_uncached(a, q);
        self.seen.borrow_mut().insert((a, q), v);
        v
    }

    fn visible_uncached(&self, a: P, q: P) -> bool {
        for r in 0..self.n {
            for c in 0..self.n {
                if self.b(r, c) && self.enters_cell(a, q, r, c) {
                    return false;
                }
            }
        }
        let (dx, dy) = (q.0 - a.0, q.1 - a.1);
        // strict interior lattice points that are diagonal pinches
        for y in 0..=self.n {
            for x in 0..=self.n {
                let p = (2 * x, 2 * y);
                let (px, py) = (p.0 - a.0, p.1 - a.1);
                let on_line = px * dy - py * dx == 0;
                let dot = px * dx + py * dy;
                if on_line && dot > 0 && dot < dx * dx + dy * dy {
                    let pinch = (self.b(y - 1, x - 1) && self.b(y, x)) || (self.b(y - 1, x) && self.b(y, x - 1));
                    if pinch {
                        return false;
                    }
                }
            }
        }
        // edges shared by two blocked cells
        for r in 0..self.n {
            for c in 0..self.n {
                if self.b(r, c) && self.b(r, c + 1) && dx == 0 && a.0 == 2 * c + 2 {
                    let (lo, hi) = (a.1.min(q.1), a.1.max(q.1));
                    if lo < 2 * r + 2 && hi > 2 * r {
                        return false;
                    }
                }
                if self.b(r, c) && self.b(r + 1, c) && dy == 0 && a.1 == 2 * r + 2 {
                    let (lo, hi) = (a.0.min(q.0), a.0.max(q.0));
                    if lo < 2 * c + 2 && hi > 2 * c {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn dist(a: P, b: P) -> f64 {
        let (dx, dy) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
        (dx * dx + dy * dy).sqrt() * 0.5
    }

    pub fn value(&self, len: f64, bends: usize) -> f64 {
        let v = self.radio.tx_power_dbm - fspl_db(len.max(0.5), self.radio.frequency_hz) - 12.0 * bends as f64;
        v.max(-135.0)
    }

    /// Shortest free polyline through corner vertices, then the fewest bends
    /// among polylines within 1e-9 m of that length.
    pub fn gain(&self, tx: P, rx: P) -> f64 {
        if self.b(rx.1 / 2, rx.0 / 2) {
            return -135.0;
        }
        let to_rx = self.distances_to(rx);
        let mut found = Vec::new();
        let mut used = vec![false; self.vertices.len()];
        let direct = if self.visible(tx, rx) { Self::dist(tx, rx) } else { f64::INFINITY };
        let limit = self
            .vertices
            .iter()
            .zip(&to_rx)
            .filter(|(&v, _)| self.visible(tx, v))
            .map(|(&v, d)| Self::dist(tx, v) + d)
            .fold(direct, f64::min);
        if limit.is_finite() {
            self.dfs(tx, rx, 0.0, 0, limit + 1e-6, &to_rx, &mut used, &mut found);
        }
        let Some(shortest) = found.iter().map(|f: &(f64, usize)| f.0).reduce(f64::min) else { return -135.0 };
        let bends = found.iter().filter(|f| f.0 <= shortest + 1e-9).map(|f| f.1).min().unwrap();
        self.value(shortest, bends)
    }

    /// Dijkstra from `rx` over the corner visibility graph: shortest
    /// remaining distance from each vertex.
    pub fn distances_to(&self, rx: P) -> Vec<f64> {
        let m = self.vertices.len();
        let mut dist: Vec<f64> =
            self.vertices.iter().map(|&v| if self.visible(v, rx) { Self::dist(v, rx) } else { f64::INFINITY }).collect();
        let mut done = vec![false; m];
        loop {
            let next = (0..m).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            let Some(u) = next else { break };
            done[u] = true;
            for w in 0..m {
                if !done[w] && self.visible(self.vertices[w], self.vertices[u]) {
                    dist[w] = dist[w].min(dist[u] + Self::dist(self.vertices[w], self.vertices[u]));
                }
            }
        }
        dist
    }

    /// Enumerates simple corner paths no longer than `limit`.
    #[allow(clippy::too_many_arguments)]
    fn dfs(&self, at: P, rx: P, len: f64, bends: usize, limit: f64, to_rx: &[f64], used: &mut [bool], found: &mut Vec<(f64, usize)>) {
        if self.visible(at, rx) {
            found.push((len + Self::dist(at, rx), bends));
        }
        for i in 0..self.vertices.len() {
            let v = self.vertices[i];
            if used[i] {
                continue;
            }
            let reach = len + Self::dist(at, v);
            if reach + to_rx[i] > limit || !self.visible(at, v) {
                continue;
            }
            used[i] = true;
            self.dfs(v, rx, reach, bends + 1, limit, to_rx, used, found);
            used[i] = false;
        }
    }
}
