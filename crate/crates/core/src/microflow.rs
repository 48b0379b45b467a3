//! Cell-scale transport by `R_e = w (e + ∇φ_e)^⊥`, with `w = 1` for stiff
//! inclusions and `w = b⁻¹` for the lake corrector.
//!
//! Trajectories use the Hamiltonian form of the field: the potential `φ_e` is
//! interpolated bicubically and the velocity is the rotated gradient of the
//! interpolated stream function `e·x + φ̃_e`, so the continuous field being
//! integrated is exactly divergence-free (stiff variant) and tangent to its
//! level sets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cellsolve::{CorrectorSolution, Variant};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::interp::PeriodicBicubic;
use crate::microgeom::Microstructure;

/// `J(a, b) = (−b, a)`.
#[inline]
pub fn perp(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellVelocityField {
    pub variant: Variant,
    pub e: [f64; 2],
    /// Node values from centered differences.
    pub nodes: VectorField,
    pub potential: ScalarField,
    /// `b⁻¹` at the nodes for the lake variant.
    pub weight: Option<ScalarField>,
    /// `1 − λ` (1 for the lake variant).
    pub free_volume: f64,
    pub microstructure: Option<Microstructure>,
    potential_interp: PeriodicBicubic,
    weight_interp: Option<PeriodicBicubic>,
}

pub fn cell_velocity(sol: &CorrectorSolution, e: [f64; 2]) -> Result<CellVelocityField> {
    let norm = e[0].hypot(e[1]);
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Unsupported(format!(
            "direction must be a unit vector, |e| = {norm}"
        )));
    }
    let grid = sol.grid;
    let potential = sol.potential_along(e);
    let (g1, g2) = (sol.gradient(0), sol.gradient(1));
    let weight = match sol.variant {
        Variant::Lake => Some(sol.coefficient.clone()),
        Variant::Stiff => None,
    };
    let mut nodes = VectorField::zeros(grid);
    for k in 0..grid.len() {
        let w = weight.as_ref().map_or(1.0, |w| w.data[k]);
        let gx = e[0] + e[0] * g1.x[k] + e[1] * g2.x[k];
        let gy = e[1] + e[0] * g1.y[k] + e[1] * g2.y[k];
        nodes.x[k] = -w * gy;
        nodes.y[k] = w * gx;
    }
    let free_volume = match &sol.microstructure {
        Some(ms) => 1.0 - crate::microgeom::area_fraction(ms, grid, 4).mean(),
        None => 1.0,
    };
    Ok(CellVelocityField {
        variant: sol.variant,
        e,
        nodes,
        potential_interp: PeriodicBicubic::new(&potential),
        potential,
        weight_interp: weight.as_ref().map(PeriodicBicubic::new),
        weight,
        free_volume,
        microstructure: sol.microstructure.clone(),
    })
}

impl CellVelocityField {
    pub fn grid(&self) -> Grid {
        self.nodes.grid
    }

    /// Velocity of the interpolated Hamiltonian field at any point.
    #[inline]
    pub fn velocity(&self, p: [f64; 2]) -> [f64; 2] {
        let (_, g) = self.potential_interp.eval_grad(p);
        let w = self.weight_interp.as_ref().map_or(1.0, |w| w.eval(p));
        [-w * (self.e[1] + g[1]), w * (self.e[0] + g[0])]
    }

    /// Interpolated stream function `e·x + φ̃_e` (unwrapped).
    pub fn stream(&self, p: [f64; 2]) -> f64 {
        self.e[0] * p[0] + self.e[1] * p[1] + self.potential_interp.eval(p)
    }

    pub fn mean(&self) -> [f64; 2] {
        self.nodes.mean()
    }

    pub fn max_speed(&self) -> f64 {
        self.nodes.max_norm()
    }

    /// `e^⊥ / (1 − λ)`.
    pub fn reference_rotation(&self) -> [f64; 2] {
        let p = perp(self.e);
        [p[0] / self.free_volume, p[1] / self.free_volume]
    }

    pub fn in_inclusion(&self, p: [f64; 2]) -> bool {
        self.microstructure
            .as_ref()
            .is_some_and(|ms| ms.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: [f64; 2],
    pub dt: f64,
    /// Number of steps between stored positions.
    pub stride: usize,
    /// Unwrapped positions, first is the start, last is the final position.
    pub positions: Vec<[f64; 2]>,
    pub end: [f64; 2],
    pub time: f64,
    pub steps: usize,
    pub trapped: bool,
    /// Max relative mismatch between the step-averaged speed and `|R|` at
    /// the step midpoint.
    pub speed_mismatch: f64,
}

impl Trajectory {
    pub fn rotation(&self) -> [f64; 2] {
        [
            (self.end[0] - self.start[0]) / self.time,
            (self.end[1] - self.start[1]) / self.time,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvectOptions {
    /// Store every `stride`-th position.
    pub stride: usize,
    /// Window (in steps) of the trapping detector.
    pub trap_window: usize,
    /// Direction of time.
    pub backward: bool,
}

impl Default for AdvectOptions {
    fn default() -> Self {
        Self {
            stride: 1000,
            trap_window: 1000,
            backward: false,
        }
    }
}

/// Mean speed over a window below this fraction of `|e|` flags trapping.
pub const TRAP_THRESHOLD: f64 = 1e-3;
pub const CFL_CELLS: f64 = 0.5;

#[inline]
fn rk4(field: &CellVelocityField, x: [f64; 2], dt: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = field.velocity(x);
    let k2 = field.velocity(add(x, k1, 0.5 * dt));
    let k3 = field.velocity(add(x, k2, 0.5 * dt));
    let k4 = field.velocity(add(x, k3, dt));
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Largest step admitted by the `dt·max|R| <= h/2` rule.
pub fn max_dt(field: &CellVelocityField) -> f64 {
    CFL_CELLS * field.grid().h() / field.max_speed().max(f64::MIN_POSITIVE)
}

/// Classical RK4 with a fixed step; `T` is rounded to a whole number of steps.
pub fn advect_trajectory(
    field: &CellVelocityField,
    x0: [f64; 2],
    t_final: f64,
    dt: f64,
    opts: AdvectOptions,
) -> Result<Trajectory> {
    advect_with(field, x0, t_final, dt, opts, |_, _| {})
}

fn advect_with(
    field: &CellVelocityField,
    x0: [f64; 2],
    t_final: f64,
    dt: f64,
    opts: AdvectOptions,
    mut visit: impl FnMut(usize, [f64; 2]),
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Unsupported(
            "time step must be positive and horizon non-negative".into(),
        ));
    }
    let cfl = dt * field.max_speed() / field.grid().h();
    if cfl > CFL_CELLS {
        return Err(Error::Cfl {
            cfl,
            limit: CFL_CELLS,
        });
    }
    if field.in_inclusion(x0) {
        return Err(Error::Unsupported(format!(
            "start point {x0:?} lies inside an inclusion"
        )));
    }
    let steps = (t_final / dt).round() as usize;
    let h = if opts.backward { -dt } else { dt };
    let stride = opts.stride.max(1);
    let e_norm = field.e[0].hypot(field.e[1]);
    let vmax = field.max_speed().max(f64::MIN_POSITIVE);
    let mut x = x0;
    let mut positions = vec![x0];
    let mut window_path = 0.0;
    let mut trapped = false;
    let mut mismatch = 0.0f64;
    let mut done = 0;
    visit(0, x);
    for s in 1..=steps {
        let next = rk4(field, x, h);
        let d = (next[0] - x[0]).hypot(next[1] - x[1]);
        let mid = field.velocity([0.5 * (x[0] + next[0]), 0.5 * (x[1] + next[1])]);
        mismatch = mismatch.max((d / dt - mid[0].hypot(mid[1])).abs() / vmax);
        window_path += d;
        x = next;
        done = s;
        visit(s, x);
        if s % stride == 0 {
            positions.push(x);
        }
        if opts.trap_window > 0 && s % opts.trap_window == 0 {
            let mean_speed = window_path / (opts.trap_window as f64 * dt);
            if mean_speed < TRAP_THRESHOLD * e_norm {
                trapped = true;
                break;
            }
            window_path = 0.0;
        }
    }
    if positions.last() != Some(&x) {
        positions.push(x);
    }
    Ok(Trajectory {
        start: x0,
        dt,
        stride,
        positions,
        end: x,
        time: done as f64 * dt,
        steps: done,
        trapped,
        speed_mismatch: mismatch,
    })
}

/// Bounded trigonometric observable `offset + amplitude·cos(2π k·x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observable {
    pub k: [i32; 2],
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Observable {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.offset
            + self.amplitude
                * (2.0 * PI * (self.k[0] as f64 * p[0] + self.k[1] as f64 * p[1]) + self.phase)
                    .cos()
    }

    /// Three smooth observables with O(1) means.
    pub fn standard_set() -> [Observable; 3] {
        [
            Observable {
                k: [1, 0],
                offset: 2.0,
                amplitude: 1.0,
                phase: 0.0,
            },
            Observable {
                k: [0, 1],
                offset: 2.0,
                amplitude: 1.0,
                phase: -0.5 * PI,
            },
            Observable {
                k: [1, 1],
                offset: 2.0,
                amplitude: 1.0,
                phase: 0.3,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub start: [f64; 2],
    pub rotation: [f64; 2],
    pub birkhoff: Vec<f64>,
    pub trapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicReport {
    pub direction: [f64; 2],
    pub trajectories: Vec<TrajectoryStats>,
    pub mean_rotation: [f64; 2],
    pub reference_rotation: [f64; 2],
    /// Relative distance of the mean rotation to the reference.
    pub rotation_error: f64,
    /// Free-volume averages of each observable.
    pub reference_birkhoff: Vec<f64>,
    /// Mean across trajectories.
    pub mean_birkhoff: Vec<f64>,
    /// Standard deviation across trajectories.
    pub dispersion: Vec<f64>,
    pub trapped: usize,
}

/// Average of an observable over the free region `Q∖𝓘`, normalized by its
/// area, from an `m x m` midpoint rule.
pub fn free_volume_mean(ms: Option<&Microstructure>, obs: &Observable, m: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..m {
        for i in 0..m {
            let p = [
                -0.5 + (i as f64 + 0.5) / m as f64,
                -0.5 + (j as f64 + 0.5) / m as f64,
            ];
            if ms.is_some_and(|ms| ms.contains(p)) {
                continue;
            }
            sum += obs.eval(p);
            count += 1;
        }
    }
    sum / count as f64
}

/// Deterministic start points in the free region, at least `margin` away
/// from the inclusions.
pub fn free_start_points(
    ms: Option<&Microstructure>,
    count: usize,
    margin: f64,
    seed: u64,
) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        if ms.is_none_or(|ms| ms.signed_depth(p) < -margin) {
            out.push(p);
        }
    }
    out
}

pub fn rotation_and_birkhoff(
    field: &CellVelocityField,
    starts: &[[f64; 2]],
    t_final: f64,
    dt: f64,
    observables: &[Observable],
) -> Result<ErgodicReport> {
    let opts = AdvectOptions {
        stride: usize::MAX,
        ..AdvectOptions::default()
    };
    let mut trajectories = Vec::with_capacity(starts.len());
    for &x0 in starts {
        let mut sums = vec![0.0; observables.len()];
        let mut prev: Option<Vec<f64>> = None;
        let tr = advect_with(field, x0, t_final, dt, opts, |_, x| {
            let vals: Vec<f64> = observables.iter().map(|o| o.eval(x)).collect();
            if let Some(p) = &prev {
                for (s, (a, b)) in sums.iter_mut().zip(p.iter().zip(&vals)) {
                    *s += 0.5 * (a + b);
                }
            }
            prev = Some(vals);
        })?;
        let steps = tr.steps.max(1) as f64;
        trajectories.push(TrajectoryStats {
            start: x0,
            rotation: tr.rotation(),
            birkhoff: sums.iter().map(|s| s / steps).collect(),
            trapped: tr.trapped,
        });
    }
    let m = trajectories.len().max(1) as f64;
    let mean_rotation = [
        trajectories.iter().map(|t| t.rotation[0]).sum::<f64>() / m,
        trajectories.iter().map(|t| t.rotation[1]).sum::<f64>() / m,
    ];
    let reference_rotation = field.reference_rotation();
    let rotation_error = (mean_rotation[0] - reference_rotation[0])
        .hypot(mean_rotation[1] - reference_rotation[1])
        / reference_rotation[0].hypot(reference_rotation[1]);
    let mut mean_birkhoff = Vec::new();
    let mut dispersion = Vec::new();
    for o in 0..observables.len() {
        let vals: Vec<f64> = trajectories.iter().map(|t| t.birkhoff[o]).collect();
        let mu = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
        mean_birkhoff.push(mu);
        dispersion.push(var.sqrt());
    }
    let reference_birkhoff = observables
        .iter()
        .map(|o| free_volume_mean(field.microstructure.as_ref(), o, 1024))
        .collect();
    Ok(ErgodicReport {
        direction: field.e,
        trapped: trajectories.iter().filter(|t| t.trapped).count(),
        trajectories,
        mean_rotation,
        reference_rotation,
        rotation_error,
        reference_birkhoff,
        mean_birkhoff,
        dispersion,
    })
}

/// Dual-cell indicator of `Q∖𝓘`: sample `k` refers to the cell whose lower
/// left corner is node `k`; a cell belongs to the inclusions when all four
/// corners do.
pub fn free_volume_density(ms: &Microstructure, grid: Grid) -> ScalarField {
    let inside: Vec<bool> = grid.nodes().map(|(_, _, p)| ms.contains(p)).collect();
    let n = grid.n as isize;
    let mut out = ScalarField::zeros(grid);
    for j in 0..n {
        for i in 0..n {
            let all = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .all(|&(a, b)| inside[grid.wrap(i + a, j + b)]);
            out.data[grid.wrap(i, j)] = if all { 0.0 } else { 1.0 };
        }
    }
    out
}

/// Dictionary of low-frequency test functions `cos/sin(2π k·x)`, `|kᵢ| <= 2`.
fn test_modes() -> Vec<([i32; 2], bool)> {
    let mut out = Vec::new();
    for k1 in -2..=2 {
        for k2 in 0..=2 {
            if k2 == 0 && k1 <= 0 {
                continue;
            }
            out.push(([k1, k2], true));
            out.push(([k1, k2], false));
        }
    }
    out
}

/// Weak residual `max_θ |∫ μ R_e·∇θ|` over a low-frequency dictionary.
///
/// `μ` is read on dual cells (sample `k` is the cell with lower-left node
/// `k`). Fluxes of `w J∇H` through dual-cell edges are the exact differences
/// of `H = e·x + φ_e` between the edge endpoints, so the residual vanishes to
/// round-off for constant `μ`.
pub fn invariant_residual(mu: &ScalarField, field: &CellVelocityField) -> Result<f64> {
    let g = field.grid();
    if mu.grid != g {
        return Err(Error::Unsupported(
            "density and field live on different grids".into(),
        ));
    }
    let n = g.n;
    let h = g.h();
    let phi = &field.potential.data;
    let w = field.weight.as_ref().map(|w| &w.data);
    let e = field.e;
    let mut best = 0.0f64;
    for (k, is_cos) in test_modes() {
        let theta = ScalarField::from_fn(g, |p| {
            // cell centers sit half a cell up and right of the node
            let arg = 2.0 * PI * (k[0] as f64 * (p[0] + 0.5 * h) + k[1] as f64 * (p[1] + 0.5 * h));
            if is_cos {
                arg.cos()
            } else {
                arg.sin()
            }
        });
        let mut total = 0.0;
        for j in 0..n {
            let jm = (j + n - 1) % n;
            let jp = (j + 1) % n;
            for i in 0..n {
                let im = (i + n - 1) % n;
                let ip = (i + 1) % n;
                let a = j * n + i;
                // vertical edge from node (i, j) to (i, j+1): separates cells (i-1, j) and (i, j)
                let b = jp * n + i;
                let wv = w.map_or(1.0, |w| 0.5 * (w[a] + w[b]));
                let flux = wv * (e[1] * h + phi[b] - phi[a]);
                let (left, right) = (j * n + im, j * n + i);
                let mu_e = 0.5 * (mu.data[left] + mu.data[right]);
                // J∇H crosses the edge towards −x₁ with flux H(b) − H(a)
                total += mu_e * flux * (theta.data[left] - theta.data[right]);
                // horizontal edge from (i, j) to (i+1, j): separates cells (i, j-1) and (i, j)
                let c = j * n + ip;
                let wh = w.map_or(1.0, |w| 0.5 * (w[a] + w[c]));
                let flux = wh * (e[0] * h + phi[c] - phi[a]);
                let (below, above) = (jm * n + i, j * n + i);
                let mu_e = 0.5 * (mu.data[below] + mu.data[above]);
                total += mu_e * flux * (theta.data[above] - theta.data[below]);
            }
        }
        best = best.max(total.abs());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolve::{solve_lake_corrector, solve_stiff_corrector};

    fn empty_field(n: usize, e: [f64; 2]) -> CellVelocityField {
        let sol =
            solve_stiff_corrector(&Microstructure::empty(0.1), n, &[1e2, 1e3], 1e-10).unwrap();
        cell_velocity(&sol, e).unwrap()
    }

    #[test]
    fn empty_field_is_rotated_direction() {
        let e = [0.6, 0.8];
        let f = empty_field(32, e);
        let m = f.mean();
        assert!((m[0] + 0.8).abs() < 1e-13 && (m[1] - 0.6).abs() < 1e-13);
        assert_eq!(f.free_volume, 1.0);
        let tr = advect_trajectory(&f, [0.1, 0.2], 1.0, 1e-3, AdvectOptions::default()).unwrap();
        assert!((tr.end[0] - (0.1 - 0.8)).abs() < 1e-12 && (tr.end[1] - (0.2 + 0.6)).abs() < 1e-12);
        assert!(!tr.trapped);
    }

    #[test]
    fn cfl_is_enforced() {
        let f = empty_field(32, [1.0, 0.0]);
        assert!(matches!(
            advect_trajectory(&f, [0.0, 0.0], 1.0, 0.1, AdvectOptions::default()),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn constant_density_has_zero_residual() {
        let f = empty_field(32, [0.6, 0.8]);
        let mu = ScalarField::constant(f.grid(), 1.0);
        assert!(invariant_residual(&mu, &f).unwrap() <= 1e-10);
    }

    #[test]
    fn lake_depth_density_is_invariant() {
        let g = Grid::unit(64).unwrap();
        let b = ScalarField::from_fn(g, |[x, y]| {
            1.5 + 0.5 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
        });
        let sol = solve_lake_corrector(&b, 1e-12).unwrap();
        let f = cell_velocity(&sol, [1.0, 0.0]).unwrap();
        let ones = ScalarField::constant(g, 1.0);
        let r1 = invariant_residual(&ones, &f).unwrap();
        assert!(r1 > 1e-4);
        let m = f.mean();
        assert!(m.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn observables_have_unit_means_without_inclusions() {
        for o in Observable::standard_set() {
            assert!((free_volume_mean(None, &o, 64) - 2.0).abs() < 1e-12);
        }
    }
}
