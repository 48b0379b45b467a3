//! Resolved lake equations at finite `ε` on the unit torus and their
//! convergence to the homogenized limit.
//!
//! With `u_ε = b_ε⁻¹ J∇s_ε` the constraint `div(b_ε u_ε) = 0` holds exactly,
//! `curl u_ε = w_ε` becomes `div(b_ε⁻¹∇s_ε) = w_ε`, and `w_ε` is advected in
//! divergence form. The potential vorticity `w_ε / b_ε` obeys the maximum
//! principle; `w_ε` itself only up to the depth contrast.

use std::time::Instant;

use crate::cellsolve::{solve_lake_corrector, CorrectorSolution};
use crate::efftensor::homogenized_tensor_lake;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::interp::PeriodicBicubic;
use crate::macroflow::{self, ForcingSpec, HomogenizedModel, RunHooks, CFL_LIMIT};
use crate::microgeom::{build_depth_field, DepthSpec};
use crate::pcg;
use crate::spectral::Spectral;
use nalgebra::Matrix2;
use rustfft::num_complex::Complex64;

/// Minimum fine-grid nodes per `ε`-cell.
pub const MIN_NODES_PER_CELL: usize = 16;
pub const DEFAULT_ELLIPTIC_TOL: f64 = 1e-8;
pub const DEFAULT_ELLIPTIC_MAX_ITER: usize = 2000;
/// Largest macroscopic wavenumber kept by the low-pass filter.
pub const LOW_PASS_RADIUS: f64 = 4.0;

/// `1/ε` as an integer, or an error if it is not one.
pub fn inverse_eps(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Unsupported(format!(
            "ε must lie in (0, 1], got {eps}"
        )));
    }
    let inv = 1.0 / eps;
    let r = inv.round();
    if (inv - r).abs() > 1e-9 * inv {
        return Err(Error::Unsupported(format!(
            "1/ε must be an integer, got 1/ε = {inv}"
        )));
    }
    Ok(r as usize)
}

/// Fine-grid operators for one depth profile and one `ε`.
#[derive(Debug, Clone)]
pub struct EpsSolver {
    pub eps: f64,
    pub spectral: Spectral,
    /// `b(x/ε)` on the nodes.
    pub depth: ScalarField,
    inv_depth: Vec<f64>,
    precond_symbol: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

fn check_resolution(eps: f64, m: usize) -> Result<usize> {
    let inv = inverse_eps(eps)?;
    if m < MIN_NODES_PER_CELL * inv {
        return Err(Error::Unsupported(format!(
            "grid of {m} nodes does not resolve ε = 1/{inv}: need at least {}",
            MIN_NODES_PER_CELL * inv
        )));
    }
    if m % inv != 0 {
        return Err(Error::Unsupported(format!(
            "grid size {m} is not a multiple of 1/ε = {inv}"
        )));
    }
    Ok(inv)
}

impl EpsSolver {
    pub fn new(spec: &DepthSpec, eps: f64, m: usize, tol: f64) -> Result<Self> {
        if !spec.is_smooth() {
            return Err(Error::Unsupported(
                "the resolved ε-solver needs a smooth depth profile".into(),
            ));
        }
        spec.validate()?;
        let inv = check_resolution(eps, m)?;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::Unsupported(format!(
                "elliptic tolerance must lie in (0, 1), got {tol}"
            )));
        }
        let grid = Grid::unit(m)?;
        let scale = inv as f64;
        let depth = ScalarField::from_fn(grid, |p| spec.eval([p[0] * scale, p[1] * scale]));
        let inv_depth: Vec<f64> = depth.data.iter().map(|v| 1.0 / v).collect();
        let beta = inv_depth.iter().sum::<f64>() / inv_depth.len() as f64;
        let spectral = Spectral::new(grid);
        let precond_symbol = (0..grid.len())
            .map(|idx| {
                let s = beta * (spectral.kx(idx).powi(2) + spectral.ky(idx).powi(2));
                if s == 0.0 {
                    0.0
                } else {
                    1.0 / s
                }
            })
            .collect();
        Ok(Self {
            eps,
            spectral,
            depth,
            inv_depth,
            precond_symbol,
            tol,
            max_iter: DEFAULT_ELLIPTIC_MAX_ITER,
        })
    }

    pub fn grid(&self) -> Grid {
        self.spectral.grid
    }

    /// `−div(b⁻¹∇s)`.
    fn apply(&self, s: &[f64], out: &mut [f64]) {
        let sp = &self.spectral;
        let (gx, gy) = sp.gradient(&sp.fft.forward(s));
        let fx: Vec<f64> = gx.iter().zip(&self.inv_depth).map(|(a, b)| a * b).collect();
        let fy: Vec<f64> = gy.iter().zip(&self.inv_depth).map(|(a, b)| a * b).collect();
        let div = sp.fft.inverse_real(&sp.divergence_hat(&fx, &fy));
        out.iter_mut().zip(&div).for_each(|(o, d)| *o = -d);
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let sp = &self.spectral;
        let spec: Vec<Complex64> = sp
            .fft
            .forward(r)
            .iter()
            .zip(&self.precond_symbol)
            .map(|(c, s)| c * s)
            .collect();
        z.copy_from_slice(&sp.fft.inverse_real(&spec));
    }

    /// Solves `div(b⁻¹∇s) = w` starting from `s`.
    pub fn solve_stream(&self, w: &[f64], s: &mut [f64]) -> Result<pcg::SolveStats> {
        let rhs: Vec<f64> = w.iter().map(|v| -v).collect();
        let stats = pcg::solve(
            |x, y| self.apply(x, y),
            |r, z| self.precondition(r, z),
            &rhs,
            s,
            self.tol,
            self.max_iter,
        )?;
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter_mut().for_each(|v| *v -= mean);
        Ok(stats)
    }

    /// `u_ε = b⁻¹ J∇s` and `b u_ε = J∇s`.
    pub fn velocity(&self, s: &[f64]) -> (VectorField, VectorField) {
        let g = self.grid();
        let (gx, gy) = self.spectral.gradient(&self.spectral.fft.forward(s));
        let momentum = VectorField {
            grid: g,
            x: gy.iter().map(|v| -v).collect(),
            y: gx,
        };
        let u = VectorField {
            grid: g,
            x: momentum
                .x
                .iter()
                .zip(&self.inv_depth)
                .map(|(a, b)| a * b)
                .collect(),
            y: momentum
                .y
                .iter()
                .zip(&self.inv_depth)
                .map(|(a, b)| a * b)
                .collect(),
        };
        (u, momentum)
    }

    /// Relative residual of `div(b⁻¹∇s) = w`.
    pub fn elliptic_residual(&self, w: &[f64], s: &[f64]) -> f64 {
        let mut out = vec![0.0; s.len()];
        self.apply(s, &mut out);
        let num: f64 = out.iter().zip(w).map(|(a, b)| (a + b).powi(2)).sum();
        let den: f64 = w.iter().map(|v| v * v).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Weak residual `max_k |⟨b u_ε, ∇e_k⟩| / ‖b u_ε‖` over Fourier test modes.
    pub fn divergence_residual(&self, s: &[f64]) -> f64 {
        let (_, mom) = self.velocity(s);
        let div = self.spectral.divergence_hat(&mom.x, &mom.y);
        let scale = self
            .spectral
            .fft
            .forward(&mom.x)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            + self
                .spectral
                .fft
                .forward(&mom.y)
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
        let worst = div.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    fn dealias(&self, w: &[f64]) -> Vec<f64> {
        let mut spec = self.spectral.fft.forward(w);
        self.spectral.dealias(&mut spec);
        self.spectral.fft.inverse_real(&spec)
    }

    /// `−P div(w u_ε)`, updating the stream guess; returns `max|u_ε|`.
    fn tendency(
        &self,
        w: &[f64],
        s: &mut Vec<f64>,
        stats: &mut EllipticStats,
    ) -> Result<(Vec<f64>, f64)> {
        let st = self.solve_stream(w, s)?;
        stats.record(&st);
        let (u, _) = self.velocity(s);
        let umax = u.max_norm();
        let fx: Vec<f64> = w.iter().zip(&u.x).map(|(a, b)| a * b).collect();
        let fy: Vec<f64> = w.iter().zip(&u.y).map(|(a, b)| a * b).collect();
        let mut div = self.spectral.divergence_hat(&fx, &fy);
        self.spectral.dealias(&mut div);
        div.iter_mut().for_each(|v| *v = -*v);
        Ok((self.spectral.fft.inverse_real(&div), umax))
    }

    pub fn initial_state(&self, w0: &ScalarField) -> Result<EpsState> {
        if w0.grid != self.grid() {
            return Err(Error::MacroState(format!(
                "initial vorticity lives on a {}-node grid, solver on {}",
                w0.grid.n,
                self.grid().n
            )));
        }
        if !w0.all_finite() {
            return Err(Error::NonFinite { t: 0.0 });
        }
        let w = self.dealias(&w0.data);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if mean.abs() > 1e-12 * scale.max(1e-300) && mean != 0.0 {
            return Err(Error::MacroState(format!(
                "vorticity must have zero mean on the torus (mean = {mean:.3e})"
            )));
        }
        let mut s = vec![0.0; w.len()];
        let mut stats = EllipticStats::default();
        stats.record(&self.solve_stream(&w, &mut s)?);
        let pv0 = potential_vorticity_max(&w, &self.inv_depth);
        Ok(EpsState {
            eps: self.eps,
            w: ScalarField {
                grid: self.grid(),
                data: w,
            },
            t: 0.0,
            steps: 0,
            stream: ScalarField {
                grid: self.grid(),
                data: s,
            },
            initial_pv_max: pv0,
            elliptic: stats,
        })
    }

    /// One SSP-RK3 step.
    pub fn step(&self, state: &mut EpsState, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::MacroState(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let dx = self.grid().h();
        let mut s = state.stream.data.clone();
        let mut stats = EllipticStats::default();
        let w0 = &state.w.data;
        let (l0, umax) = self.tendency(w0, &mut s, &mut stats)?;
        let cfl = dt * umax / dx;
        if cfl > CFL_LIMIT {
            return Err(Error::Cfl {
                cfl,
                limit: CFL_LIMIT,
            });
        }
        let w1: Vec<f64> = w0.iter().zip(&l0).map(|(a, b)| a + dt * b).collect();
        let (l1, _) = self.tendency(&w1, &mut s, &mut stats)?;
        let w2: Vec<f64> = (0..w0.len())
            .map(|k| 0.75 * w0[k] + 0.25 * (w1[k] + dt * l1[k]))
            .collect();
        let (l2, _) = self.tendency(&w2, &mut s, &mut stats)?;
        let w3: Vec<f64> = (0..w0.len())
            .map(|k| w0[k] / 3.0 + 2.0 / 3.0 * (w2[k] + dt * l2[k]))
            .collect();
        if w3.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: state.t + dt });
        }
        stats.record(&self.solve_stream(&w3, &mut s)?);
        state.w.data = w3;
        state.stream.data = s;
        state.t += dt;
        state.steps += 1;
        state.elliptic.merge(&stats);
        Ok(())
    }

    pub fn diagnostics(&self, state: &EpsState) -> EpsDiagnostics {
        let w = &state.w.data;
        let pv = potential_vorticity_max(w, &self.inv_depth);
        EpsDiagnostics {
            t: state.t,
            circulation: w.iter().sum::<f64>() * self.grid().area_element(),
            max_abs: state.w.max_abs(),
            pv_max: pv,
            pv_growth: if state.initial_pv_max > 0.0 {
                pv / state.initial_pv_max
            } else {
                1.0
            },
            elliptic_residual: self.elliptic_residual(w, &state.stream.data),
            divergence_residual: self.divergence_residual(&state.stream.data),
            elliptic_iterations: state.elliptic.max_iterations,
        }
    }
}

fn potential_vorticity_max(w: &[f64], inv_depth: &[f64]) -> f64 {
    w.iter()
        .zip(inv_depth)
        .map(|(a, b)| (a * b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EllipticStats {
    pub solves: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl EllipticStats {
    fn record(&mut self, s: &pcg::SolveStats) {
        self.solves += 1;
        self.max_iterations = self.max_iterations.max(s.iterations);
        self.max_residual = self.max_residual.max(s.residual);
    }

    fn merge(&mut self, o: &EllipticStats) {
        self.solves += o.solves;
        self.max_iterations = self.max_iterations.max(o.max_iterations);
        self.max_residual = self.max_residual.max(o.max_residual);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsState {
    pub eps: f64,
    pub w: ScalarField,
    pub t: f64,
    pub steps: usize,
    /// Stream function of the current `w`.
    pub stream: ScalarField,
    pub initial_pv_max: f64,
    pub elliptic: EllipticStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsDiagnostics {
    pub t: f64,
    pub circulation: f64,
    pub max_abs: f64,
    /// `max|w/b|`.
    pub pv_max: f64,
    /// `max|w/b|(t) / max|w/b|(0)`; at most `1` up to dealiasing error.
    pub pv_growth: f64,
    pub elliptic_residual: f64,
    pub divergence_residual: f64,
    pub elliptic_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsRun {
    pub state: EpsState,
    pub diagnostics: Vec<EpsDiagnostics>,
}

/// Advances the resolved problem to `t_end`; the last step is shortened to
/// land on it.
pub fn run_eps(
    solver: &EpsSolver,
    mut state: EpsState,
    t_end: f64,
    dt: f64,
    every: usize,
) -> Result<EpsRun> {
    if !(dt > 0.0) || !(t_end >= state.t) {
        return Err(Error::MacroState(format!(
            "invalid horizon: T = {t_end}, dt = {dt}"
        )));
    }
    let mut diagnostics = vec![solver.diagnostics(&state)];
    let eps = 1e-12 * dt;
    while state.t < t_end - eps {
        let remaining = t_end - state.t;
        let h = if remaining < dt * (1.0 + 1e-9) {
            remaining
        } else {
            dt
        };
        solver.step(&mut state, h)?;
        if every > 0 && state.steps % every == 0 {
            diagnostics.push(solver.diagnostics(&state));
        }
    }
    if diagnostics.last().map(|d| d.t) != Some(state.t) {
        diagnostics.push(solver.diagnostics(&state));
    }
    Ok(EpsRun { state, diagnostics })
}

pub fn solve_lake_eps(
    spec: &DepthSpec,
    eps: f64,
    w0: &ScalarField,
    t_end: f64,
    dt: f64,
    tol: f64,
) -> Result<EpsRun> {
    let solver = EpsSolver::new(spec, eps, w0.grid.n, tol)?;
    let state = solver.initial_state(w0)?;
    run_eps(&solver, state, t_end, dt, 0)
}

/// `L²` norm of the Fourier modes with `|k| <= radius` (macroscopic
/// wavenumbers) of `f`.
pub fn low_pass_norm(f: &ScalarField, radius: f64) -> f64 {
    let sp = Spectral::new(f.grid);
    let spec = sp.fft.forward(&f.data);
    let n2 = (f.grid.len() as f64).powi(2);
    let n = f.grid.n;
    let sum: f64 = spec
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            let (a, b) = (sp.modes[idx % n] as f64, sp.modes[idx / n] as f64);
            a.hypot(b) <= radius
        })
        .map(|(_, c)| c.norm_sqr())
        .sum();
    (sum / n2).sqrt() * f.grid.length
}

/// `L²` norm of the piecewise-constant `ε`-cell averages of `a − b`.
pub fn cell_average_gap(a: &VectorField, b: &VectorField, inv_eps: usize) -> Result<f64> {
    let g = a.grid;
    if b.grid != g || g.n % inv_eps != 0 {
        return Err(Error::Unsupported(
            "cell averaging needs matching grids aligned with ε".into(),
        ));
    }
    let per = g.n / inv_eps;
    let mut total = 0.0;
    for cj in 0..inv_eps {
        for ci in 0..inv_eps {
            let mut d = [0.0; 2];
            for j in cj * per..(cj + 1) * per {
                for i in ci * per..(ci + 1) * per {
                    let k = g.idx(i, j);
                    d[0] += a.x[k] - b.x[k];
                    d[1] += a.y[k] - b.y[k];
                }
            }
            let m = (per * per) as f64;
            total += (d[0] / m).powi(2) + (d[1] / m).powi(2);
        }
    }
    let cell = g.length / inv_eps as f64;
    Ok((total * cell * cell).sqrt())
}

/// Central macroscopic window `[−L/4, L/4)²`.
fn in_window(g: Grid, i: usize, j: usize) -> bool {
    let q = g.n / 4;
    (q..g.n - q).contains(&i) && (q..g.n - q).contains(&j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    /// `‖u_ε − rec‖` over the window.
    pub defect: f64,
    /// `‖u_ε‖` over the same window.
    pub velocity_norm: f64,
}

/// Defect of the two-scale reconstruction
/// `rec(x) = −Σᵢ (J b̄u)ᵢ(x) · b⁻¹(y) J(eᵢ + ∇ψᵢ(y))`, `y = x/ε`,
/// against the resolved velocity, over the central window.
pub fn corrector_reconstruction_error(
    state: &EpsState,
    solver: &EpsSolver,
    spec: &DepthSpec,
    sol: &CorrectorSolution,
    b_bar: &Matrix2<f64>,
    macro_u: &VectorField,
    macro_t: f64,
) -> Result<ReconstructionReport> {
    let g = state.w.grid;
    if macro_u.grid != g {
        return Err(Error::Unsupported(
            "macro velocity and ε-state live on different grids".into(),
        ));
    }
    if (macro_t - state.t).abs() > 1e-12 * state.t.abs().max(1.0) {
        return Err(Error::Unsupported(format!(
            "macro velocity at t = {macro_t} does not match ε-state at t = {}",
            state.t
        )));
    }
    let inv = inverse_eps(state.eps)? as f64;
    let (u, _) = solver.velocity(&state.stream.data);
    let psi = [
        PeriodicBicubic::new(sol.potential(0)),
        PeriodicBicubic::new(sol.potential(1)),
    ];
    let mut defect = 0.0;
    let mut norm = 0.0;
    for (i, j, p) in g.nodes() {
        if !in_window(g, i, j) {
            continue;
        }
        let k = g.idx(i, j);
        let y = [p[0] * inv, p[1] * inv];
        let binv = 1.0 / spec.eval(y);
        let v = [
            b_bar[(0, 0)] * macro_u.x[k] + b_bar[(0, 1)] * macro_u.y[k],
            b_bar[(1, 0)] * macro_u.x[k] + b_bar[(1, 1)] * macro_u.y[k],
        ];
        let jv = [-v[1], v[0]];
        let mut rec = [0.0; 2];
        for (idx, it) in psi.iter().enumerate() {
            let (_, gr) = it.eval_grad(y);
            let mut q = gr;
            q[idx] += 1.0;
            // −(Jv)ᵢ b⁻¹ J q
            rec[0] += jv[idx] * binv * q[1];
            rec[1] -= jv[idx] * binv * q[0];
        }
        defect += (u.x[k] - rec[0]).powi(2) + (u.y[k] - rec[1]).powi(2);
        norm += u.x[k].powi(2) + u.y[k].powi(2);
    }
    let da = g.area_element();
    Ok(ReconstructionReport {
        defect: (defect * da).sqrt(),
        velocity_norm: (norm * da).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    /// Fine grid shared by all `ε` and by the homogenized reference.
    pub m: usize,
    /// Cell-problem resolution for `ā` and the correctors.
    pub cell_n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub tol: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            m: 256,
            cell_n: 128,
            t_end: 0.5,
            dt: 2e-3,
            tol: DEFAULT_ELLIPTIC_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub eps: f64,
    pub m: usize,
    /// `‖Π_low(w_ε − w)‖₂`.
    pub vorticity: f64,
    /// `‖avg_cell(b_ε u_ε) − b̄u‖₂`.
    pub momentum: f64,
    pub reconstruction: f64,
    pub velocity_norm: f64,
    pub pv_growth: f64,
    pub circulation_drift: f64,
    pub elliptic_iterations: usize,
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub a_bar: Matrix2<f64>,
    pub b_bar: Matrix2<f64>,
    pub b0: f64,
}

/// Columns entirely below this level count as converged.
pub const ERROR_FLOOR: f64 = 1e-9;

impl ErrorTable {
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "eps [1],M [nodes],error_vorticity [L2],error_momentum [L2],reconstruction_defect [L2],runtime [s]\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:.17e},{},{:.17e},{:.17e},{:.17e},{:.3}\n",
                r.eps, r.m, r.vorticity, r.momentum, r.reconstruction, r.runtime
            ));
        }
        s
    }

    /// Columns that fail to decrease strictly in `1/ε`.
    pub fn non_monotone(&self) -> Vec<&'static str> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let cols: [(&'static str, fn(&ErrorRow) -> f64); 3] = [
            ("error_vorticity", |r| r.vorticity),
            ("error_momentum", |r| r.momentum),
            ("reconstruction_defect", |r| r.reconstruction),
        ];
        cols.iter()
            .filter(|(_, f)| {
                let v: Vec<f64> = rows.iter().map(f).collect();
                !v.iter().all(|&x| x <= ERROR_FLOOR) && v.windows(2).any(|p| p[1] >= p[0])
            })
            .map(|(name, _)| *name)
            .collect()
    }
}

/// Homogenized reference on the shared grid at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub w: ScalarField,
    /// `u = b̄⁻¹ J∇σ`.
    pub u: VectorField,
    pub t: f64,
}

fn table_rows(
    spec: &DepthSpec,
    eps_list: &[f64],
    w0: &ScalarField,
    opts: StudyOptions,
) -> Result<ErrorTable> {
    if eps_list.is_empty() {
        return Err(Error::Study("empty ε list".into()));
    }
    if w0.grid.n != opts.m || (w0.grid.length - 1.0).abs() > 0.0 {
        return Err(Error::Study(format!(
            "initial vorticity must live on the unit {}-grid",
            opts.m
        )));
    }
    if !spec.is_smooth() {
        return Err(Error::Unsupported(
            "the resolved ε-solver needs a smooth depth profile".into(),
        ));
    }
    for &e in eps_list {
        check_resolution(e, opts.m)?;
    }
    let cell_b = build_depth_field(spec, opts.cell_n)?;
    let sol = solve_lake_corrector(&cell_b, 1e-12)?;
    let tensors = homogenized_tensor_lake(&cell_b, &sol)?;
    let b0 = tensors.b0.expect("lake tensors carry b0");
    let model = HomogenizedModel::lake(tensors.a_bar, b0)?;
    let out = macroflow::run(
        w0,
        model,
        opts.t_end,
        opts.dt,
        &ForcingSpec::none(),
        RunHooks::default(),
    )?;
    let vel = macroflow::deformed_biot_savart(&out.state.w, model)?;
    let reference = Reference {
        w: out.state.w.clone(),
        u: vel.u,
        t: out.state.t,
    };
    let vbar = VectorField {
        grid: vel.transport.grid,
        x: vel.transport.x.iter().map(|v| v * b0).collect(),
        y: vel.transport.y.iter().map(|v| v * b0).collect(),
    };
    let mut rows = Vec::new();
    for &e in eps_list {
        let clock = Instant::now();
        let solver = EpsSolver::new(spec, e, opts.m, opts.tol)?;
        let state = solver.initial_state(w0)?;
        let run = run_eps(&solver, state, opts.t_end, opts.dt, 0)?;
        let first = run.diagnostics[0];
        let last = *run.diagnostics.last().expect("non-empty diagnostics");
        let st = &run.state;
        let diff = ScalarField {
            grid: st.w.grid,
            data: st
                .w
                .data
                .iter()
                .zip(&reference.w.data)
                .map(|(a, b)| a - b)
                .collect(),
        };
        let vorticity = low_pass_norm(&diff, LOW_PASS_RADIUS);
        let (_, mom) = solver.velocity(&st.stream.data);
        let momentum = cell_average_gap(&mom, &vbar, inverse_eps(e)?)?;
        let rec = corrector_reconstruction_error(
            st,
            &solver,
            spec,
            &sol,
            &tensors.derived,
            &reference.u,
            reference.t,
        )?;
        rows.push(ErrorRow {
            eps: e,
            m: opts.m,
            vorticity,
            momentum,
            reconstruction: rec.defect,
            velocity_norm: rec.velocity_norm,
            pv_growth: last.pv_growth,
            circulation_drift: (last.circulation - first.circulation).abs(),
            elliptic_iterations: st.elliptic.max_iterations,
            runtime: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(ErrorTable {
        rows,
        a_bar: tensors.a_bar,
        b_bar: tensors.derived,
        b0,
    })
}

/// Error table without the monotonicity requirement.
pub fn convergence_table(
    spec: &DepthSpec,
    eps_list: &[f64],
    w0: &ScalarField,
    opts: StudyOptions,
) -> Result<ErrorTable> {
    table_rows(spec, eps_list, w0, opts)
}

/// Error table; fails with the full table if a column does not decrease
/// strictly in `1/ε`.
pub fn convergence_study(
    spec: &DepthSpec,
    eps_list: &[f64],
    w0: &ScalarField,
    opts: StudyOptions,
) -> Result<ErrorTable> {
    let table = table_rows(spec, eps_list, w0, opts)?;
    let bad = table.non_monotone();
    if !bad.is_empty() {
        return Err(Error::Study(format!(
            "non-monotone columns {bad:?}\n{}",
            table.csv()
        )));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgeom::TrigTerm;

    fn trig() -> DepthSpec {
        DepthSpec::trigonometric(
            0.75,
            vec![
                TrigTerm {
                    k: [1, 0],
                    amplitude: 0.15,
                    phase: 0.0,
                },
                TrigTerm {
                    k: [0, 1],
                    amplitude: 0.1,
                    phase: 0.5,
                },
            ],
            2.0,
        )
    }

    #[test]
    fn inverse_eps_rejects_non_integers() {
        assert_eq!(inverse_eps(0.25).unwrap(), 4);
        assert!(inverse_eps(0.3).is_err());
        assert!(inverse_eps(0.0).is_err());
    }

    #[test]
    fn resolution_is_enforced() {
        assert!(EpsSolver::new(&trig(), 0.25, 32, 1e-8).is_err());
        assert!(EpsSolver::new(&trig(), 0.25, 64, 1e-8).is_ok());
    }

    #[test]
    fn two_phase_is_rejected() {
        let ms = crate::microgeom::Microstructure::disk_with_fraction(0.1, 0.05);
        let spec = DepthSpec::two_phase(1.0, 2.0, ms, 2.0);
        assert!(EpsSolver::new(&spec, 0.25, 64, 1e-8).is_err());
    }

    #[test]
    fn initial_state_is_consistent() {
        let g = Grid::unit(64).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        let w0 = ScalarField::from_fn(g, |[x, y]| (tp * x).sin() * (tp * y).cos());
        let run = solve_lake_eps(&trig(), 0.25, &w0, 0.0, 1e-3, 1e-10).unwrap();
        let d = run.diagnostics[0];
        assert_eq!(run.state.steps, 0);
        assert!(d.elliptic_residual <= 1e-8, "{}", d.elliptic_residual);
        assert!(d.divergence_residual <= 1e-8, "{}", d.divergence_residual);
    }

    #[test]
    fn cell_average_gap_of_equal_fields_is_zero() {
        let g = Grid::unit(32).unwrap();
        let f = VectorField::from_fn(g, |p| [p[0], p[1] * p[0]]);
        assert_eq!(cell_average_gap(&f, &f, 4).unwrap(), 0.0);
    }
}
