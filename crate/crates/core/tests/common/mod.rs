#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rhno::allocation::{mbno_solve, AllocationMatrix};
use rhno::cilqr::{ClosedLoopModel, PredictionState};
use rhno::controller::{reference_at, ControllerState, TrajectorySpec};
use rhno::dynamics::{exp_so3, VehicleState};
use rhno::harness::ExperimentConfig;
use rhno::Thrusts;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn default_config() -> ExperimentConfig {
    ExperimentConfig::load(config_path("paper_s5_6s.cfg")).expect("bundled config loads")
}

/// The default config cut down to `duration` seconds with the trajectory unchanged.
pub fn short_config(duration: f64) -> ExperimentConfig {
    let mut cfg = default_config();
    cfg.duration = duration;
    cfg
}

/// Largest violation of `lo ≤ u_0 + n_A X ≤ hi`.
pub fn violation(u_0: &Thrusts, alloc: &AllocationMatrix, lo: &Thrusts, hi: &Thrusts, x: &Vector2<f64>) -> f64 {
    let u = u_0 + alloc.nullspace * x;
    (0..u.len())
        .map(|i| (lo[i] - u[i]).max(u[i] - hi[i]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Brute-force minimum of `f` over the points of a square where `feasible` holds: a
/// dense grid, then a shrinking grid pattern around the incumbent.
///
/// Returns `None` when no grid point is feasible.
pub fn grid_minimum(
    center: Vector2<f64>,
    half_width: f64,
    f: impl Fn(&Vector2<f64>) -> f64,
    feasible: impl Fn(&Vector2<f64>) -> bool,
) -> Option<(f64, Vector2<f64>)> {
    let mut best: Option<(f64, Vector2<f64>)> = None;
    let scan = |c: Vector2<f64>, hw: f64, n: usize, best: &mut Option<(f64, Vector2<f64>)>| {
        for i in 0..=n {
            for j in 0..=n {
                let x = c + Vector2::new(
                    hw * (2.0 * i as f64 / n as f64 - 1.0),
                    hw * (2.0 * j as f64 / n as f64 - 1.0),
                );
                if feasible(&x) {
                    let v = f(&x);
                    if best.is_none_or(|(b, _)| v < b) {
                        *best = Some((v, x));
                    }
                }
            }
        }
    };
    let n = 400;
    scan(center, half_width, n, &mut best);
    // Re-centre at each scale until the incumbent stops moving, then halve the window.
    let mut hw = 8.0 * half_width / n as f64;
    while hw > 1e-10 {
        loop {
            let (v, c) = best?;
            scan(c, hw, 40, &mut best);
            if best.is_some_and(|(b, _)| b >= v) {
                break;
            }
        }
        hw *= 0.5;
    }
    best
}

/// Corners of the feasible polygon `{X : lo ≤ u_0 + n_A X ≤ hi}`, sorted by angle about
/// their centroid. Plain enumeration of every pair of bound lines.
pub fn polygon_vertices(u_0: &Thrusts, alloc: &AllocationMatrix, lo: &Thrusts, hi: &Thrusts) -> Vec<Vector2<f64>> {
    let n = &alloc.nullspace;
    let mut lines = Vec::new();
    for i in 0..u_0.len() {
        let a = Vector2::new(n[(i, 0)], n[(i, 1)]);
        lines.push((a, lo[i] - u_0[i]));
        lines.push((a, hi[i] - u_0[i]));
    }
    let mut verts: Vec<Vector2<f64>> = Vec::new();
    for (p, (a, b)) in lines.iter().enumerate() {
        for (c, d) in &lines[p + 1..] {
            let det = a.x * c.y - a.y * c.x;
            if det.abs() < 1e-12 {
                continue;
            }
            let x = Vector2::new((b * c.y - a.y * d) / det, (a.x * d - b * c.x) / det);
            if violation(u_0, alloc, lo, hi, &x) <= 1e-9 && verts.iter().all(|v| (v - x).norm() > 1e-9) {
                verts.push(x);
            }
        }
    }
    if verts.is_empty() {
        return verts;
    }
    let c = verts.iter().sum::<Vector2<f64>>() / verts.len() as f64;
    verts.sort_by(|p, q| {
        let ap = (p.y - c.y).atan2(p.x - c.x);
        let aq = (q.y - c.y).atan2(q.x - c.x);
        ap.total_cmp(&aq)
    });
    verts
}

/// Brute-force minimum of `f` over the feasible polygon: every corner, then a grid
/// search over each triangle of a fan from the centroid.
pub fn polygon_minimum(
    u_0: &Thrusts,
    alloc: &AllocationMatrix,
    lo: &Thrusts,
    hi: &Thrusts,
    f: impl Fn(&Vector2<f64>) -> f64,
) -> Option<(f64, Vector2<f64>)> {
    let verts = polygon_vertices(u_0, alloc, lo, hi);
    let mut best: Option<(f64, Vector2<f64>)> = None;
    let mut offer = |v: f64, x: Vector2<f64>| {
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, x));
        }
    };
    for v in &verts {
        offer(f(v), *v);
    }
    if verts.len() >= 3 {
        let c = verts.iter().sum::<Vector2<f64>>() / verts.len() as f64;
        for i in 0..verts.len() {
            let (p, q) = (verts[i] - c, verts[(i + 1) % verts.len()] - c);
            let map = |ab: &Vector2<f64>| c + p * ab.x + q * ab.y;
            let inside = |ab: &Vector2<f64>| ab.x >= 0.0 && ab.y >= 0.0 && ab.x + ab.y <= 1.0 + 1e-12;
            if let Some((v, ab)) = grid_minimum(Vector2::new(0.5, 0.5), 0.5, |ab| f(&map(ab)), inside) {
                offer(v, map(&ab));
            }
        }
    }
    best
}

fn uniform3(rng: &mut impl Rng, a: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-a..a))
}

/// A closed-loop state near the reference at step `k0`, with the motors close to the
/// MBNO command for it.
pub fn random_state(
    rng: &mut impl Rng,
    model: &ClosedLoopModel,
    trajectory: &TrajectorySpec,
    k0: usize,
    u_max: &Thrusts,
) -> PredictionState {
    let reference = reference_at(trajectory, k0 as f64 * model.dt());
    let zero = Thrusts::zeros();
    loop {
        let mut s = PredictionState {
            vehicle: VehicleState {
                position: reference.position + uniform3(rng, 0.03),
                velocity: reference.velocity + uniform3(rng, 0.05),
                orientation: reference.orientation * exp_so3(&uniform3(rng, 0.03)),
                angular_velocity: reference.angular_velocity + uniform3(rng, 0.05),
            },
            u_act: zero,
            ctrl: ControllerState::default(),
        };
        let u_0 = model.command(&s, &reference).u_0;
        if let Ok(x) = mbno_solve(&u_0, &model.alloc, &zero, u_max) {
            let u = u_0 + model.alloc.nullspace * x;
            s.u_act = u.zip_zip_map(&zero, u_max, |v, lo, hi| (v + rng.random_range(-0.3..0.3)).clamp(lo, hi));
            return s;
        }
    }
}
