//! Homogenized vorticity dynamics on a periodic torus of side `L`.
//!
//! Both homogenized systems reduce to the same scalar form: solve
//! `div(ā∇σ) = w`, transport `w` conservatively by `U = J∇σ / c`. For stiff
//! inclusions `u = J∇σ` and `c = 1 − λ`; for the lake `u = b̄⁻¹J∇σ` and `c = b₀`.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::efftensor::{b_bar, eigenvalues, m_bar, rotation};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::spectral::Spectral;

pub const CFL_LIMIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroVariant {
    Inclusions,
    Lake,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizedModel {
    pub variant: MacroVariant,
    /// Elliptic tensor of the stream-function problem.
    pub a_bar: Matrix2<f64>,
    /// Transport divisor `1 − λ` or `b₀`.
    pub c: f64,
    /// `m̄` (inclusions) or `b̄` (lake).
    pub derived: Matrix2<f64>,
}

impl HomogenizedModel {
    pub fn inclusions(a_bar: Matrix2<f64>, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::MacroState(format!(
                "volume fraction {lambda} outside [0, 1)"
            )));
        }
        Ok(Self {
            variant: MacroVariant::Inclusions,
            derived: m_bar(&a_bar)?,
            a_bar,
            c: 1.0 - lambda,
        })
    }

    pub fn lake(a_bar: Matrix2<f64>, b0: f64) -> Result<Self> {
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(Error::MacroState(format!(
                "averaged depth must be positive, got {b0}"
            )));
        }
        Ok(Self {
            variant: MacroVariant::Lake,
            derived: b_bar(&a_bar)?,
            a_bar,
            c: b0,
        })
    }

    /// Model with an explicit transport divisor.
    pub fn new(variant: MacroVariant, a_bar: Matrix2<f64>, c: f64) -> Result<Self> {
        match variant {
            MacroVariant::Inclusions => Self::inclusions(a_bar, 1.0 - c),
            MacroVariant::Lake => Self::lake(a_bar, c),
        }
    }

    /// Inclusions model from `m̄`, using `ā = J m̄ Jᵀ`.
    pub fn from_m_bar(m: Matrix2<f64>, lambda: f64) -> Result<Self> {
        let j = rotation();
        Self::inclusions(j * m * j.transpose(), lambda)
    }

    /// Lake model from `b̄`, using `ā = J b̄⁻¹ Jᵀ`.
    pub fn from_b_bar(b: Matrix2<f64>, b0: f64) -> Result<Self> {
        let inv = b
            .try_inverse()
            .ok_or_else(|| Error::Singular("b̄ is not invertible".into()))?;
        let j = rotation();
        Self::lake(j * inv * j.transpose(), b0)
    }

    /// Standard 2D Euler.
    pub fn euler() -> Self {
        Self::inclusions(Matrix2::identity(), 0.0).expect("identity is SPD")
    }

    pub fn validate(&self) -> Result<()> {
        let ev = eigenvalues(&self.a_bar);
        if ev[0] <= 0.0 || crate::efftensor::asymmetry(&self.a_bar) > 1e-8 {
            return Err(Error::MacroState(format!(
                "ā must be symmetric positive definite, got {:?}",
                self.a_bar
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::MacroState(format!(
                "transport divisor must be positive, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    /// Integer mode; the wavenumber is `2π k / L`.
    pub k: [i32; 2],
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Envelope {
    #[default]
    Constant,
    Oscillating {
        omega: f64,
    },
    Decaying {
        rate: f64,
    },
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant => 1.0,
            Envelope::Oscillating { omega } => (omega * t).cos(),
            Envelope::Decaying { rate } => (-rate * t).exp(),
        }
    }
}

/// `g(t, x) = envelope(t) Σ a cos(2π k·x / L + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ForcingSpec {
    #[serde(default)]
    pub terms: Vec<ForcingTerm>,
    #[serde(default)]
    pub envelope: Envelope,
    /// Permit a nonzero-mean forcing; disables the circulation check.
    #[serde(default)]
    pub allow_nonzero_mean: bool,
}

impl ForcingSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    pub fn has_mean(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.k == [0, 0] && t.amplitude * t.phase.cos() != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .terms
            .iter()
            .all(|t| t.amplitude.is_finite() && t.phase.is_finite())
        {
            return Err(Error::MacroState("forcing terms must be finite".into()));
        }
        if self.has_mean() && !self.allow_nonzero_mean {
            return Err(Error::MacroState(
                "forcing has a nonzero mean; set allow_nonzero_mean to accept it".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, grid: Grid, t: f64) -> Vec<f64> {
        let env = self.envelope.at(t);
        let tau = 2.0 * std::f64::consts::PI / grid.length;
        grid.nodes()
            .map(|(_, _, p)| {
                env * self
                    .terms
                    .iter()
                    .map(|f| {
                        f.amplitude
                            * (tau * (f.k[0] as f64 * p[0] + f.k[1] as f64 * p[1]) + f.phase).cos()
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// Upper bound for `‖g(t)‖∞`.
    pub fn sup_bound(&self, t: f64) -> f64 {
        self.envelope.at(t).abs() * self.terms.iter().map(|f| f.amplitude.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub w: ScalarField,
    pub t: f64,
    pub steps: usize,
    /// Stream function of the current `w`.
    pub sigma: Option<ScalarField>,
}

impl MacroState {
    pub fn new(w: ScalarField) -> Result<Self> {
        if !w.all_finite() {
            return Err(Error::NonFinite { t: 0.0 });
        }
        Ok(Self {
            w,
            t: 0.0,
            steps: 0,
            sigma: None,
        })
    }
}

/// Random zero-mean vorticity with Gaussian-damped spectrum on modes
/// `1 <= |k|∞ <= kmax`, scaled to `max|w| = amplitude`.
pub fn random_smooth_vorticity(grid: Grid, seed: u64, kmax: u32, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmax as i32;
    let mut terms = Vec::new();
    for ky in 0..=km {
        for kx in -km..=km {
            if ky == 0 && kx <= 0 {
                continue;
            }
            let r2 = (kx * kx + ky * ky) as f64;
            let a = rng.random_range(-1.0..1.0) * (-r2 / (kmax as f64).powi(2)).exp();
            let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            terms.push(ForcingTerm {
                k: [kx, ky],
                amplitude: a,
                phase,
            });
        }
    }
    let spec = ForcingSpec {
        terms,
        ..ForcingSpec::default()
    };
    let mut w = ScalarField {
        grid,
        data: spec.sample(grid, 0.0),
    };
    w.subtract_mean();
    let m = w.max_abs();
    if m > 0.0 {
        w.data.iter_mut().for_each(|v| *v *= amplitude / m);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    /// `½∫∇σ·ā∇σ`.
    pub energy: f64,
    pub circulation: f64,
    pub enstrophy: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub sigma: ScalarField,
    /// `u` of the homogenized system.
    pub u: VectorField,
    /// `J∇σ / c`.
    pub transport: VectorField,
}

/// Spectral operators for one model on one grid.
#[derive(Debug, Clone)]
pub struct MacroSolver {
    pub model: HomogenizedModel,
    pub spectral: Spectral,
    /// `kᵀ ā k` per mode.
    symbol: Vec<f64>,
}

impl MacroSolver {
    pub fn new(grid: Grid, model: HomogenizedModel) -> Result<Self> {
        model.validate()?;
        let spectral = Spectral::new(grid);
        let a = model.a_bar;
        let symbol = (0..grid.len())
            .map(|idx| {
                let (kx, ky) = (spectral.kx(idx), spectral.ky(idx));
                a[(0, 0)] * kx * kx + (a[(0, 1)] + a[(1, 0)]) * kx * ky + a[(1, 1)] * ky * ky
            })
            .collect();
        Ok(Self {
            model,
            spectral,
            symbol,
        })
    }

    pub fn grid(&self) -> Grid {
        self.spectral.grid
    }

    fn check_mean(&self, w: &[f64]) -> Result<()> {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if mean.abs() > 1e-12 * scale.max(1e-300) && mean != 0.0 {
            return Err(Error::MacroState(format!(
                "vorticity must have zero mean on the torus (mean = {mean:.3e})"
            )));
        }
        Ok(())
    }

    fn sigma_hat(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        w_hat
            .iter()
            .zip(&self.symbol)
            .map(|(&c, &s)| {
                if s == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    -c / s
                }
            })
            .collect()
    }

    /// Deformed Biot–Savart reconstruction.
    pub fn deformed_biot_savart(&self, w: &ScalarField) -> Result<Velocity> {
        self.check_mean(&w.data)?;
        let g = self.grid();
        let sh = self.sigma_hat(&self.spectral.fft.forward(&w.data));
        let (sx, sy) = self.spectral.gradient(&sh);
        let sigma = ScalarField {
            grid: g,
            data: self.spectral.fft.inverse_real(&sh),
        };
        let c = self.model.c;
        let transport = VectorField {
            grid: g,
            x: sy.iter().map(|v| -v / c).collect(),
            y: sx.iter().map(|v| v / c).collect(),
        };
        let u = match self.model.variant {
            MacroVariant::Inclusions => VectorField {
                grid: g,
                x: sy.iter().map(|v| -v).collect(),
                y: sx.clone(),
            },
            MacroVariant::Lake => {
                let binv = self
                    .model
                    .derived
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("b̄ is not invertible".into()))?;
                let mut u = VectorField::zeros(g);
                for k in 0..g.len() {
                    let (vx, vy) = (-sy[k], sx[k]);
                    u.x[k] = binv[(0, 0)] * vx + binv[(0, 1)] * vy;
                    u.y[k] = binv[(1, 0)] * vx + binv[(1, 1)] * vy;
                }
                u
            }
        };
        Ok(Velocity {
            sigma,
            u,
            transport,
        })
    }

    /// Spectral curl of a vector field.
    pub fn curl(&self, f: &VectorField) -> ScalarField {
        let i = Complex64::new(0.0, 1.0);
        let fx = self.spectral.fft.forward(&f.x);
        let fy = self.spectral.fft.forward(&f.y);
        let spec: Vec<Complex64> = (0..fx.len())
            .map(|idx| i * (self.spectral.kx(idx) * fy[idx] - self.spectral.ky(idx) * fx[idx]))
            .collect();
        ScalarField {
            grid: f.grid,
            data: self.spectral.fft.inverse_real(&spec),
        }
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(&self, f: &VectorField) -> ScalarField {
        ScalarField {
            grid: f.grid,
            data: self
                .spectral
                .fft
                .inverse_real(&self.spectral.divergence_hat(&f.x, &f.y)),
        }
    }

    /// Projects onto the retained (2/3-rule) band.
    pub fn dealias(&self, w: &ScalarField) -> ScalarField {
        let mut spec = self.spectral.fft.forward(&w.data);
        self.spectral.dealias(&mut spec);
        ScalarField {
            grid: w.grid,
            data: self.spectral.fft.inverse_real(&spec),
        }
    }

    /// `−P div(w U)` with `U = J∇σ / c`, band-limited. Returns the tendency
    /// and `max|U|`.
    fn tendency(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let fft = &self.spectral.fft;
        let mut wh = fft.forward(w);
        self.spectral.dealias(&mut wh);
        let sh = self.sigma_hat(&wh);
        let (sx, sy) = self.spectral.gradient(&sh);
        let c = self.model.c;
        let mut umax = 0.0f64;
        let mut fx = vec![0.0; w.len()];
        let mut fy = vec![0.0; w.len()];
        for k in 0..w.len() {
            let (ux, uy) = (-sy[k] / c, sx[k] / c);
            umax = umax.max(ux.hypot(uy));
            fx[k] = w[k] * ux;
            fy[k] = w[k] * uy;
        }
        let mut div = self.spectral.divergence_hat(&fx, &fy);
        self.spectral.dealias(&mut div);
        div.iter_mut().for_each(|v| *v = -*v);
        (fft.inverse_real(&div), umax)
    }

    pub fn max_transport_speed(&self, w: &ScalarField) -> f64 {
        self.tendency(&w.data).1
    }

    /// Directional derivative of the energy along the semi-discrete flow,
    /// `dE/dt = −∫σ ∂ₜw`: must vanish for the Galerkin-truncated system.
    pub fn energy_rate(&self, w: &ScalarField) -> f64 {
        let (rhs, _) = self.tendency(&w.data);
        let sh = self.sigma_hat(&self.spectral.fft.forward(&w.data));
        let sigma = self.spectral.fft.inverse_real(&sh);
        -sigma.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() * w.grid.area_element()
    }

    pub fn energy(&self, w: &ScalarField) -> f64 {
        let g = w.grid;
        let wh = self.spectral.fft.forward(&w.data);
        let sh = self.sigma_hat(&wh);
        let n2 = (g.len() as f64).powi(2);
        0.5 * sh
            .iter()
            .zip(&self.symbol)
            .map(|(c, s)| s * c.norm_sqr())
            .sum::<f64>()
            * g.length
            * g.length
            / n2
    }

    pub fn diagnostics(&self, state: &MacroState) -> Diagnostics {
        let w = &state.w;
        conserved_diagnostics_with(self, w, state.t)
    }

    /// One SSP-RK3 step.
    pub fn step(&self, state: &mut MacroState, dt: f64, g: &ForcingSpec) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::MacroState(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let grid = self.grid();
        if state.w.grid != grid {
            return Err(Error::MacroState(
                "state grid does not match solver grid".into(),
            ));
        }
        if state.steps == 0 && state.t == 0.0 {
            self.check_mean(&state.w.data)?;
        }
        let dx = grid.h();
        let forcing = |t: f64| -> Option<Vec<f64>> {
            if g.is_zero() {
                None
            } else {
                let mut spec = self.spectral.fft.forward(&g.sample(grid, t));
                self.spectral.dealias(&mut spec);
                Some(self.spectral.fft.inverse_real(&spec))
            }
        };
        let rhs = |w: &[f64], t: f64| -> (Vec<f64>, f64) {
            let (mut r, umax) = self.tendency(w);
            if let Some(f) = forcing(t) {
                r.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            }
            (r, umax)
        };
        let w0 = &state.w.data;
        let t = state.t;
        let (l0, umax) = rhs(w0, t);
        let cfl = dt * umax / dx;
        if cfl > CFL_LIMIT {
            return Err(Error::Cfl {
                cfl,
                limit: CFL_LIMIT,
            });
        }
        let w1: Vec<f64> = w0.iter().zip(&l0).map(|(a, b)| a + dt * b).collect();
        let (l1, _) = rhs(&w1, t + dt);
        let w2: Vec<f64> = (0..w0.len())
            .map(|k| 0.75 * w0[k] + 0.25 * (w1[k] + dt * l1[k]))
            .collect();
        let (l2, _) = rhs(&w2, t + 0.5 * dt);
        let w3: Vec<f64> = (0..w0.len())
            .map(|k| w0[k] / 3.0 + 2.0 / 3.0 * (w2[k] + dt * l2[k]))
            .collect();
        if w3.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t + dt });
        }
        state.w.data = w3;
        state.t = t + dt;
        state.steps += 1;
        state.sigma = None;
        Ok(())
    }
}

pub fn deformed_biot_savart(w: &ScalarField, model: HomogenizedModel) -> Result<Velocity> {
    MacroSolver::new(w.grid, model)?.deformed_biot_savart(w)
}

fn conserved_diagnostics_with(solver: &MacroSolver, w: &ScalarField, t: f64) -> Diagnostics {
    let da = w.grid.area_element();
    Diagnostics {
        t,
        energy: solver.energy(w),
        circulation: w.data.iter().sum::<f64>() * da,
        enstrophy: w.data.iter().map(|v| v * v).sum::<f64>() * da,
        max_abs: w.max_abs(),
    }
}

pub fn conserved_diagnostics(state: &MacroState, model: HomogenizedModel) -> Result<Diagnostics> {
    let solver = MacroSolver::new(state.w.grid, model)?;
    Ok(solver.diagnostics(state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub state: MacroState,
    /// Diagnostics at the cadence, including the initial and final states.
    pub diagnostics: Vec<Diagnostics>,
    pub dumps: Vec<MacroState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunHooks {
    /// Record diagnostics every `cadence` steps (0: initial and final only).
    pub diagnostics_every: usize,
    /// Keep full states every `dump_every` steps (0: none).
    pub dump_every: usize,
}

/// Advances `state` until `t_end`; the last step is shortened to land on it.
pub fn run_from(
    solver: &MacroSolver,
    mut state: MacroState,
    t_end: f64,
    dt: f64,
    g: &ForcingSpec,
    hooks: RunHooks,
) -> Result<RunOutput> {
    g.validate()?;
    if !(dt > 0.0) || !(t_end >= state.t) {
        return Err(Error::MacroState(format!(
            "invalid horizon: t = {}, T = {t_end}, dt = {dt}",
            state.t
        )));
    }
    let mut diagnostics = vec![solver.diagnostics(&state)];
    let mut dumps = Vec::new();
    let eps = 1e-12 * dt;
    while state.t < t_end - eps {
        let remaining = t_end - state.t;
        let h = if remaining < dt * (1.0 + 1e-9) {
            remaining
        } else {
            dt
        };
        solver.step(&mut state, h, g)?;
        if hooks.diagnostics_every > 0 && state.steps % hooks.diagnostics_every == 0 {
            diagnostics.push(solver.diagnostics(&state));
        }
        if hooks.dump_every > 0 && state.steps % hooks.dump_every == 0 {
            dumps.push(state.clone());
        }
    }
    if diagnostics.last().map(|d| d.t) != Some(state.t) {
        diagnostics.push(solver.diagnostics(&state));
    }
    Ok(RunOutput {
        state,
        diagnostics,
        dumps,
    })
}

pub fn run(
    w0: &ScalarField,
    model: HomogenizedModel,
    t_end: f64,
    dt: f64,
    g: &ForcingSpec,
    hooks: RunHooks,
) -> Result<RunOutput> {
    let solver = MacroSolver::new(w0.grid, model)?;
    let state = MacroState::new(solver.dealias(w0))?;
    solver.check_mean(&state.w.data)?;
    run_from(&solver, state, t_end, dt, g, hooks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceReport {
    pub flagged_fraction: f64,
    /// Size of the largest periodic 4-connected flagged component, as a
    /// fraction of the nodes.
    pub largest_component: f64,
    pub flags: Vec<bool>,
}

/// Primitive directions `(p, q)` with `max(|p|, |q|) <= dmax`, half-plane
/// representatives, from the Farey sequence of order `dmax`.
pub fn rational_directions(dmax: u32) -> Vec<[f64; 2]> {
    let mut fracs: Vec<(u32, u32)> = vec![(0, 1), (1, 1)];
    // Stern–Brocot refinement restricted to denominators and numerators <= dmax
    let mut i = 0;
    while i + 1 < fracs.len() {
        let (a, b) = fracs[i];
        let (c, d) = fracs[i + 1];
        let (p, q) = (a + c, b + d);
        if q <= dmax {
            fracs.insert(i + 1, (p, q));
        } else {
            i += 1;
        }
    }
    let mut out = Vec::new();
    for &(p, q) in &fracs {
        let (pf, qf) = (p as f64, q as f64);
        let r = pf.hypot(qf);
        // slope p/q in [0, 1] and its reflections into the other octants
        for v in [[qf, pf], [pf, qf], [-pf, qf], [-qf, pf]] {
            let u = [v[0] / r, v[1] / r];
            if !out
                .iter()
                .any(|w: &[f64; 2]| (w[0] * u[1] - w[1] * u[0]).abs() < 1e-12)
            {
                out.push(u);
            }
        }
    }
    out
}

/// Heuristic detector of one-dimensional flow with rational direction: a
/// node is flagged when, over a `(2r+1)²` window, the velocity is coherent
/// (structure-tensor anisotropy `>= 1 − tol`), nearly constant along its own
/// direction (`Σ|(d·∇)u|² <= tol Σ|∇u|²`) and aligned with a rational slope of
/// height `<= dmax` (`|sin| <= tol`).
pub fn resonance_diagnostic(u: &VectorField, tol: f64, dmax: u32) -> ResonanceReport {
    const R: isize = 2;
    let g = u.grid;
    let n = g.n as isize;
    let h2 = 2.0 * g.h();
    let dirs = rational_directions(dmax);
    let mut grads = vec![[0.0f64; 4]; g.len()];
    for j in 0..n {
        for i in 0..n {
            let k = g.wrap(i, j);
            let (xp, xm, yp, ym) = (
                g.wrap(i + 1, j),
                g.wrap(i - 1, j),
                g.wrap(i, j + 1),
                g.wrap(i, j - 1),
            );
            grads[k] = [
                (u.x[xp] - u.x[xm]) / h2,
                (u.x[yp] - u.x[ym]) / h2,
                (u.y[xp] - u.y[xm]) / h2,
                (u.y[yp] - u.y[ym]) / h2,
            ];
        }
    }
    let scale = u.max_norm();
    let mut flags = vec![false; g.len()];
    for j in 0..n {
        for i in 0..n {
            let mut v = [0.0f64; 3];
            let mut cells = Vec::with_capacity(((2 * R + 1) * (2 * R + 1)) as usize);
            for b in -R..=R {
                for a in -R..=R {
                    let k = g.wrap(i + a, j + b);
                    let (ux, uy) = (u.x[k], u.y[k]);
                    v[0] += ux * ux;
                    v[1] += ux * uy;
                    v[2] += uy * uy;
                    cells.push(k);
                }
            }
            let tr = v[0] + v[2];
            if tr <= (1e-6 * scale).powi(2) * cells.len() as f64 {
                continue;
            }
            let disc = ((v[0] - v[2]).powi(2) + 4.0 * v[1] * v[1]).sqrt();
            let coherence = disc / tr;
            if coherence < 1.0 - tol {
                continue;
            }
            let l1 = 0.5 * (tr + disc);
            // leading eigenvector
            let d = if v[1].abs() > 1e-300 {
                let e = [l1 - v[2], v[1]];
                let r = e[0].hypot(e[1]);
                [e[0] / r, e[1] / r]
            } else if v[0] >= v[2] {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            let mut along = 0.0;
            let mut total = 0.0;
            for &k in &cells {
                let gr = grads[k];
                let dx = gr[0] * d[0] + gr[1] * d[1];
                let dy = gr[2] * d[0] + gr[3] * d[1];
                along += dx * dx + dy * dy;
                total += gr.iter().map(|x| x * x).sum::<f64>();
            }
            if total > 0.0 && along > tol * total {
                continue;
            }
            let rational = dirs
                .iter()
                .any(|r| (r[0] * d[1] - r[1] * d[0]).abs() <= tol);
            if rational {
                flags[g.wrap(i, j)] = true;
            }
        }
    }
    let count = flags.iter().filter(|&&f| f).count();
    let largest = largest_component(g, &flags);
    ResonanceReport {
        flagged_fraction: count as f64 / g.len() as f64,
        largest_component: largest as f64 / g.len() as f64,
        flags,
    }
}

fn largest_component(g: Grid, flags: &[bool]) -> usize {
    let n = g.n as isize;
    let mut seen = vec![false; flags.len()];
    let mut best = 0;
    let mut stack = Vec::new();
    for start in 0..flags.len() {
        if !flags[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(k) = stack.pop() {
            size += 1;
            let (i, j) = ((k % g.n) as isize, (k / g.n) as isize);
            for (a, b) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nb = g.wrap((i + a).rem_euclid(n), (j + b).rem_euclid(n));
                if flags[nb] && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        best = best.max(size);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_mode_stream_function() {
        let g = Grid::new(32, 1.0).unwrap();
        let tp = 2.0 * PI;
        let w = ScalarField::from_fn(g, |[x, _]| (tp * x).sin() * tp * tp);
        let v = deformed_biot_savart(&w, HomogenizedModel::euler()).unwrap();
        for (k, (_, _, [x, _])) in g.nodes().enumerate() {
            assert!((v.sigma.data[k] + (tp * x).sin()).abs() < 1e-12);
            assert!(v.u.x[k].abs() < 1e-12);
            assert!((v.u.y[k] + tp * (tp * x).cos()).abs() < 1e-10);
        }
        let aniso = HomogenizedModel::inclusions(Matrix2::new(2.0, 0.0, 0.0, 1.0), 0.0).unwrap();
        let v2 = deformed_biot_savart(&w, aniso).unwrap();
        for k in 0..g.len() {
            assert!((v2.sigma.data[k] - 0.5 * v.sigma.data[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let g = Grid::new(16, 1.0).unwrap();
        let w = ScalarField::constant(g, 1.0);
        let err = deformed_biot_savart(&w, HomogenizedModel::euler()).unwrap_err();
        assert!(err.to_string().contains("zero mean"));
    }

    #[test]
    fn zero_state_diagnostics() {
        let g = Grid::new(16, 1.0).unwrap();
        let st = MacroState::new(ScalarField::zeros(g)).unwrap();
        let d = conserved_diagnostics(&st, HomogenizedModel::euler()).unwrap();
        assert_eq!(
            (d.energy, d.circulation, d.enstrophy, d.max_abs),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn single_mode_energy() {
        let g = Grid::new(32, 1.0).unwrap();
        let amp = 0.7;
        let w = ScalarField::from_fn(g, |[x, _]| amp * (2.0 * PI * x).sin());
        let st = MacroState::new(w).unwrap();
        let d = conserved_diagnostics(&st, HomogenizedModel::euler()).unwrap();
        let expect = 0.25 * amp * amp / (2.0 * PI).powi(2);
        assert!(
            (d.energy - expect).abs() < 1e-14,
            "{} vs {}",
            d.energy,
            expect
        );
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let g = Grid::new(16, 1.0).unwrap();
        let w = ScalarField::from_fn(g, |[x, y]| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let out = run(
            &w,
            HomogenizedModel::euler(),
            0.0,
            0.01,
            &ForcingSpec::none(),
            RunHooks::default(),
        )
        .unwrap();
        assert_eq!(out.state.steps, 0);
        assert!(out
            .state
            .w
            .data
            .iter()
            .zip(&w.data)
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = Grid::new(16, 1.0).unwrap();
        let w = ScalarField::from_fn(g, |[x, y]| {
            50.0 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
        });
        let solver = MacroSolver::new(g, HomogenizedModel::euler()).unwrap();
        let mut st = MacroState::new(w).unwrap();
        assert!(matches!(
            solver.step(&mut st, 1.0, &ForcingSpec::none()),
            Err(Error::Cfl { .. })
        ));
        assert_eq!(st.steps, 0);
    }

    #[test]
    fn forcing_mean_requires_opt_in() {
        let mut f = ForcingSpec {
            terms: vec![ForcingTerm {
                k: [0, 0],
                amplitude: 1.0,
                phase: 0.0,
            }],
            ..ForcingSpec::default()
        };
        assert!(f.validate().is_err());
        f.allow_nonzero_mean = true;
        assert!(f.validate().is_ok());
    }

    #[test]
    fn farey_directions() {
        let d1 = rational_directions(1);
        assert_eq!(d1.len(), 4);
        // primitive vectors with max norm <= 2: (1,0),(0,1),(1,±1),(1,±2),(2,±1)
        assert_eq!(rational_directions(2).len(), 8);
    }

    #[test]
    fn shear_flow_is_flagged_and_vortex_is_not() {
        let g = Grid::new(64, 1.0).unwrap();
        let tp = 2.0 * PI;
        let shear = VectorField::from_fn(g, |[x, _]| {
            [0.0, (tp * x).sin() + 0.3 * (2.0 * tp * x).cos()]
        });
        let r = resonance_diagnostic(&shear, 1e-2, 5);
        assert!(r.flagged_fraction > 0.9, "{}", r.flagged_fraction);
        assert!(r.largest_component > 0.2);
        let vortex = VectorField::from_fn(g, |[x, y]| {
            [
                (tp * x).sin() * (tp * y).cos(),
                -(tp * x).cos() * (tp * y).sin(),
            ]
        });
        let r = resonance_diagnostic(&vortex, 1e-2, 5);
        assert!(r.flagged_fraction < 0.05, "{}", r.flagged_fraction);
    }
}
