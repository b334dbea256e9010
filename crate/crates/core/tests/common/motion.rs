//! Trajectory invariants checked against brute-force geometry.

use std::collections::HashSet;

use radiomotion::env::{generate_environment, Cell, EnvParams, EnvironmentGrid};
use radiomotion::trajectory::*;

/// Cells whose centers lie in the oriented rectangle, by brute force.
pub fn footprint_oracle(v: &VehicleState, size: usize) -> HashSet<Cell> {
    let (s, c) = v.heading.sin_cos();
    let mut out = HashSet::new();
    for row in 0..size {
        for col in 0..size {
            let (dx, dy) = (col as f64 + 0.5 - v.x, row as f64 + 0.5 - v.y);
            let along = dx * c + dy * s;
            let across = -dx * s + dy * c;
            if along.abs() <= v.length / 2.0 + 1e-9 && across.abs() <= v.width / 2.0 + 1e-9 {
                out.insert(Cell::new(row, col));
            }
        }
    }
    out
}

pub fn city(seed: u64) -> EnvironmentGrid {
    let params = EnvParams { size: 48, ..EnvParams::default() };
    (0..32).find_map(|k| generate_environment(seed * 101 + k, &params).ok()).expect("some layout succeeds")
}

/// Seeds vehicles for `seed`, runs 15 frames and checks every invariant.
/// Returns the number of moving vehicle-steps.
pub fn check_run(seed: u64, count: usize) -> Result<usize, String> {
    let params = VehicleParams::default();
    let env = city(seed);
    let initial = seed_vehicles(&env, count, seed, &params).vehicles;
    if initial.is_empty() {
        return Err(format!("seed {seed}: no vehicle placed"));
    }
    for (i, a) in initial.iter().enumerate() {
        for b in &initial[i + 1..] {
            let d = (a.x - b.x).hypot(a.y - b.y);
            if d < 4.0 * params.length - 1e-9 {
                return Err(format!("seed {seed}: seeding spacing {d}"));
            }
        }
    }
    let traj = simulate_trajectory(&env, &initial, 15);
    if traj.frames.len() != 15 || traj != simulate_trajectory(&env, &initial, 15) {
        return Err(format!("seed {seed}: frame count or determinism"));
    }
    for (f, frame) in traj.frames.iter().enumerate() {
        if frame.len() != initial.len() {
            return Err(format!("seed {seed} frame {f}: vehicle count changed"));
        }
        let mut taken: HashSet<Cell> = HashSet::new();
        for v in frame {
            let cells = footprint_oracle(v, env.size);
            if cells.is_empty() || cells != v.cells_within(env.size).into_iter().collect::<HashSet<_>>() {
                return Err(format!("seed {seed} frame {f}: footprint rasterization"));
            }
            for c in &cells {
                if env.is_building(*c) || !env.is_road(*c) {
                    return Err(format!("seed {seed} frame {f}: footprint off road at {c:?}"));
                }
                if !taken.insert(*c) {
                    return Err(format!("seed {seed} frame {f}: footprints collide at {c:?}"));
                }
            }
        }
    }
    let mut moved = 0;
    for w in traj.frames.windows(2) {
        for (i, (prev, next)) in w[0].iter().zip(&w[1]).enumerate() {
            // replay the target choice against the earlier-updated neighbours
            let others: Vec<VehicleState> = w[1][..i].iter().chain(&w[0][i + 1..]).copied().collect();
            let wide = prev.stuck_counter > STUCK_FRAMES;
            let target = select_candidate(&probe_directions(&env, prev, wide), prev.heading).map_or(prev.heading, |c| c.heading);
            let turn = wrapped_delta(prev.heading, next.heading).abs();
            if turn > 0.4 * wrapped_delta(prev.heading, target).abs() + 1e-9 {
                return Err(format!("seed {seed}: turn {turn} exceeds smoothing bound"));
            }
            let step = (next.x - prev.x).hypot(next.y - prev.y);
            if step < 1e-9 {
                if next.stuck_counter != prev.stuck_counter + 1 {
                    return Err(format!("seed {seed}: stuck counter not incremented"));
                }
            } else if (step - params.speed).abs() > 1e-9 || next.stuck_counter != 0 {
                return Err(format!("seed {seed}: step {step} or counter {}", next.stuck_counter));
            } else {
                moved += 1;
            }
            if *next != step_vehicle(&env, prev, &others) {
                return Err(format!("seed {seed}: sequential update mismatch"));
            }
        }
    }
    Ok(moved)
}
