//! Periodic corrector cell problems.
//!
//! Both correctors minimize a discrete Dirichlet energy
//! `E_e(u) = Σ_faces c_f (Δu + h e_f)^2` over periodic node fields, where `c_f`
//! is the harmonic mean of the node coefficient across the face. The lake
//! corrector uses `c = 1/b`; the stiff corrector uses the penalized
//! conductivity `1 + K χ_K` on a ladder of penalties.

use nalgebra::Matrix2;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{centered_gradient, Grid, ScalarField, VectorField};
use crate::microgeom::{cutoff_width, penalization_field, Microstructure};
use crate::pcg::{self, SolveStats};
use crate::spectral::{five_point_symbol, Fft2};

pub const DEFAULT_LADDER: [f64; 5] = [1e2, 1e3, 1e4, 1e5, 1e6];
pub const DEFAULT_MAX_ITER: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Stiff,
    Lake,
}

/// Coefficients on the cell faces; `x[k]` sits between node `k` and its
/// neighbour in the `+x₁` direction, `y[k]` between `k` and its `+x₂` neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCoefficients {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceCoefficients {
    pub fn harmonic(c: &ScalarField) -> Self {
        let g = c.grid;
        let n = g.n;
        let hm = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut x = vec![0.0; g.len()];
        let mut y = vec![0.0; g.len()];
        for j in 0..n {
            let jn = (j + 1) % n;
            for i in 0..n {
                let k = j * n + i;
                let kx = j * n + (i + 1) % n;
                let ky = jn * n + i;
                x[k] = hm(c.data[k], c.data[kx]);
                y[k] = hm(c.data[k], c.data[ky]);
            }
        }
        Self { grid: g, x, y }
    }

    /// Applies `(A u)_k = Σ_f c_f (u_k − u_nb)`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let jn = if j + 1 == n { 0 } else { j + 1 };
            let row = j * n;
            for i in 0..n {
                let k = row + i;
                let kx = row + if i + 1 == n { 0 } else { i + 1 };
                let ky = jn * n + i;
                let fx = self.x[k] * (u[k] - u[kx]);
                let fy = self.y[k] * (u[k] - u[ky]);
                out[k] += fx + fy;
                out[kx] -= fx;
                out[ky] -= fy;
            }
        }
    }

    /// Right-hand side `h (c_{k+1/2} − c_{k-1/2})·e` of the cell problem, sign
    /// chosen so that `A φ = rhs` is the Euler–Lagrange equation of the energy.
    pub fn rhs(&self, e: [f64; 2]) -> Vec<f64> {
        let g = self.grid;
        let n = g.n;
        let h = g.h();
        let mut out = vec![0.0; g.len()];
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let kxm = j * n + (i + n - 1) % n;
                let kym = ((j + n - 1) % n) * n + i;
                out[k] = h * (e[0] * (self.x[k] - self.x[kxm]) + e[1] * (self.y[k] - self.y[kym]));
            }
        }
        out
    }
}

/// Spectral inverse of the constant-coefficient 5-point operator.
#[derive(Debug, Clone)]
pub struct SpectralPreconditioner {
    fft: Fft2,
    inv_symbol: Vec<f64>,
}

impl SpectralPreconditioner {
    pub fn new(grid: Grid, coefficient: f64) -> Self {
        let h2 = grid.area_element();
        let inv_symbol = five_point_symbol(grid)
            .iter()
            .map(|&s| {
                if s == 0.0 {
                    0.0
                } else {
                    1.0 / (coefficient * h2 * s)
                }
            })
            .collect();
        Self {
            fft: Fft2::new(grid.n),
            inv_symbol,
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut spec = self.fft.forward(r);
        for (c, s) in spec.iter_mut().zip(&self.inv_symbol) {
            *c *= *s;
        }
        z.copy_from_slice(&self.fft.inverse_real(&spec));
    }

    /// Preconditions two residuals with one complex transform; valid because
    /// the symbol is real and even.
    pub fn apply_pair(&self, r1: &[f64], r2: &[f64], z1: &mut [f64], z2: &mut [f64]) {
        let packed: Vec<Complex64> = r1
            .iter()
            .zip(r2)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let mut spec = self.fft.forward_complex(packed);
        for (c, s) in spec.iter_mut().zip(&self.inv_symbol) {
            *c *= *s;
        }
        let out = self.fft.inverse_complex(spec);
        for (k, c) in out.iter().enumerate() {
            z1[k] = c.re;
            z2[k] = c.im;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSolve {
    /// Mean-zero periodic potential.
    pub potential: ScalarField,
    /// Centered-difference gradient of the potential.
    pub gradient: VectorField,
    pub stats: SolveStats,
}

/// Per-penalty record of the stiff ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderStep {
    pub k: f64,
    /// Minimal energies `E_K` for `e₁`, `e₂`.
    pub energies: [f64; 2],
    /// Full energy tensor at this penalty.
    pub tensor: Matrix2<f64>,
    pub iterations: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSolution {
    pub variant: Variant,
    pub grid: Grid,
    /// Node coefficient of the final solve (`1/b`, or `1 + K_max χ`).
    pub coefficient: ScalarField,
    pub faces: FaceCoefficients,
    pub directions: [DirectionSolve; 2],
    /// Empty for the lake variant.
    pub ladder: Vec<LadderStep>,
    /// Max `|∇φᵢ + eᵢ|` on eroded inclusion interiors (stiff only).
    pub rigidity: Option<[f64; 2]>,
    /// Geometry of the stiff variant.
    pub microstructure: Option<Microstructure>,
    pub tol: f64,
}

impl CorrectorSolution {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn potential(&self, i: usize) -> &ScalarField {
        &self.directions[i].potential
    }

    pub fn gradient(&self, i: usize) -> &VectorField {
        &self.directions[i].gradient
    }

    pub fn k_max(&self) -> Option<f64> {
        self.ladder.last().map(|s| s.k)
    }

    /// Corrector for a general direction, `φ_e = e₁φ₁ + e₂φ₂`.
    pub fn potential_along(&self, e: [f64; 2]) -> ScalarField {
        let (a, b) = (&self.directions[0].potential, &self.directions[1].potential);
        ScalarField {
            grid: self.grid,
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| e[0] * x + e[1] * y)
                .collect(),
        }
    }
}

/// Face quadratures of the tensor expressions. With `g_i = Δφᵢ + h eᵢ` on
/// every face: `with_penalty` is `δ + Σ Δφᵢ Δφⱼ + P`, `energy` is
/// `Σ gᵢ gⱼ + P`, `flux` is `Σ c_f h eᵢ gⱼ` and `weighted` is `Σ c_f gᵢ gⱼ`,
/// where `P = Σ (c_f − 1) gᵢ gⱼ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorForms {
    pub with_penalty: Matrix2<f64>,
    pub energy: Matrix2<f64>,
    pub flux: Matrix2<f64>,
    pub weighted: Matrix2<f64>,
}

pub fn tensor_forms(faces: &FaceCoefficients, p: [&ScalarField; 2]) -> TensorForms {
    let g = faces.grid;
    let n = g.n;
    let h = g.h();
    let mut grad_gram = Matrix2::zeros();
    let mut plain = Matrix2::zeros();
    let mut pen = Matrix2::zeros();
    let mut flux = Matrix2::zeros();
    let mut weighted = Matrix2::zeros();
    for (dir, coef) in [(0usize, &faces.x), (1usize, &faces.y)] {
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let nb = if dir == 0 {
                    j * n + (i + 1) % n
                } else {
                    ((j + 1) % n) * n + i
                };
                let d = [p[0].data[nb] - p[0].data[k], p[1].data[nb] - p[1].data[k]];
                let mut gv = d;
                gv[dir] += h;
                let c = coef[k];
                for a in 0..2 {
                    for b in 0..2 {
                        grad_gram[(a, b)] += d[a] * d[b];
                        plain[(a, b)] += gv[a] * gv[b];
                        pen[(a, b)] += (c - 1.0) * gv[a] * gv[b];
                        weighted[(a, b)] += c * gv[a] * gv[b];
                    }
                    flux[(dir, a)] += c * h * gv[a];
                }
            }
        }
    }
    TensorForms {
        with_penalty: Matrix2::identity() + grad_gram + pen,
        energy: plain + pen,
        flux,
        weighted,
    }
}

struct CellSystem {
    faces: FaceCoefficients,
    precond: SpectralPreconditioner,
}

impl CellSystem {
    fn new(c: &ScalarField) -> Self {
        Self {
            faces: FaceCoefficients::harmonic(c),
            precond: SpectralPreconditioner::new(c.grid, c.mean()),
        }
    }

    fn solve(&self, x: &mut [Vec<f64>; 2], tol: f64, max_iter: usize) -> Result<[SolveStats; 2]> {
        let b = [self.faces.rhs([1.0, 0.0]), self.faces.rhs([0.0, 1.0])];
        let [x0, x1] = x;
        let stats = pcg::solve_pair(
            |u, out| self.faces.apply(u, out),
            |r1, r2, z1, z2| self.precond.apply_pair(r1, r2, z1, z2),
            [&b[0], &b[1]],
            [x0.as_mut_slice(), x1.as_mut_slice()],
            tol,
            max_iter,
        )?;
        for xi in x.iter_mut() {
            let m = xi.iter().sum::<f64>() / xi.len() as f64;
            xi.iter_mut().for_each(|v| *v -= m);
        }
        Ok(stats)
    }
}

fn direction(grid: Grid, data: Vec<f64>, stats: SolveStats) -> DirectionSolve {
    let potential = ScalarField { grid, data };
    let gradient = centered_gradient(&potential);
    DirectionSolve {
        potential,
        gradient,
        stats,
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "tolerance must lie in (0, 1), got {tol}"
        )))
    }
}

/// Lake corrector, `div(b⁻¹(∇ψᵢ + eᵢ)) = 0`.
pub fn solve_lake_corrector(b: &ScalarField, tol: f64) -> Result<CorrectorSolution> {
    solve_lake_corrector_with(b, tol, DEFAULT_MAX_ITER)
}

pub fn solve_lake_corrector_with(
    b: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<CorrectorSolution> {
    check_tol(tol)?;
    if !b.all_finite() || b.min() <= 0.0 {
        return Err(Error::Depth("depth must be finite and positive".into()));
    }
    let grid = b.grid;
    let c = b.map(|v| 1.0 / v);
    let sys = CellSystem::new(&c);
    let mut x = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    let [s0, s1] = sys.solve(&mut x, tol, max_iter)?;
    let [x0, x1] = x;
    Ok(CorrectorSolution {
        variant: Variant::Lake,
        grid,
        coefficient: c,
        faces: sys.faces,
        directions: [direction(grid, x0, s0), direction(grid, x1, s1)],
        ladder: Vec::new(),
        rigidity: None,
        microstructure: None,
        tol,
    })
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Unsupported("penalty ladder is empty".into()));
    }
    for w in ladder.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Unsupported(format!(
                "penalty ladder must be strictly increasing: {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    if !(ladder[0] > 0.0) || !ladder.iter().all(|k| k.is_finite()) {
        return Err(Error::Unsupported(
            "penalties must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Relative slack admitted in the energy monotonicity check.
const MONOTONE_SLACK: f64 = 1e-9;

/// Stiff-inclusion corrector via penalization on an increasing ladder of
/// penalties; each solve is warm-started from the previous one.
pub fn solve_stiff_corrector(
    ms: &Microstructure,
    n: usize,
    ladder: &[f64],
    tol: f64,
) -> Result<CorrectorSolution> {
    solve_stiff_corrector_with(ms, n, ladder, tol, DEFAULT_MAX_ITER)
}

pub fn solve_stiff_corrector_with(
    ms: &Microstructure,
    n: usize,
    ladder: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CorrectorSolution> {
    check_tol(tol)?;
    validate_ladder(ladder)?;
    ms.ensure_valid()?;
    let grid = Grid::unit(n)?;
    let mut x = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    let mut steps: Vec<LadderStep> = Vec::with_capacity(ladder.len());
    let mut last = None;
    for &k in ladder {
        let c = penalization_field(ms, n, k)?;
        let sys = CellSystem::new(&c);
        let stats = sys.solve(&mut x, tol, max_iter)?;
        let p0 = ScalarField {
            grid,
            data: x[0].clone(),
        };
        let p1 = ScalarField {
            grid,
            data: x[1].clone(),
        };
        let forms = tensor_forms(&sys.faces, [&p0, &p1]);
        let energies = [forms.energy[(0, 0)], forms.energy[(1, 1)]];
        if let Some(prev) = steps.last() {
            for d in 0..2 {
                let slack = MONOTONE_SLACK * prev.energies[d].abs().max(1.0);
                if energies[d] < prev.energies[d] - slack {
                    return Err(Error::NonMonotoneEnergy {
                        k_prev: prev.k,
                        k,
                        previous: prev.energies[d],
                        current: energies[d],
                    });
                }
            }
        }
        steps.push(LadderStep {
            k,
            energies,
            tensor: forms.energy,
            iterations: [stats[0].iterations, stats[1].iterations],
        });
        last = Some((c, sys.faces, stats));
    }
    let (c, faces, [s0, s1]) = last.expect("ladder is non-empty");
    let [x0, x1] = x;
    let directions = [direction(grid, x0, s0), direction(grid, x1, s1)];
    let k_max = *ladder.last().unwrap();
    let rigidity = rigidity(ms, grid, k_max, &directions);
    Ok(CorrectorSolution {
        variant: Variant::Stiff,
        grid,
        coefficient: c,
        faces,
        directions,
        ladder: steps,
        rigidity: Some(rigidity),
        microstructure: Some(ms.clone()),
        tol,
    })
}

/// Nodes deep enough inside an inclusion that the whole centered stencil
/// sees the full penalty.
fn eroded_interior(ms: &Microstructure, grid: Grid, k_max: f64) -> Vec<bool> {
    let depth = cutoff_width(grid.n, k_max) + 2.0 * grid.h();
    grid.nodes()
        .map(|(_, _, p)| ms.signed_depth(p) >= depth)
        .collect()
}

fn rigidity(ms: &Microstructure, grid: Grid, k_max: f64, dirs: &[DirectionSolve; 2]) -> [f64; 2] {
    let mask = eroded_interior(ms, grid, k_max);
    let mut out = [0.0; 2];
    for (d, sol) in dirs.iter().enumerate() {
        for (k, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            let mut v = sol.gradient.at(k);
            v[d] += 1.0;
            out[d] = f64::max(out[d], v[0].hypot(v[1]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    /// Max nodal residual of the discrete equation away from inclusions,
    /// relative to the max right-hand side.
    pub harmonicity: [f64; 2],
    /// Max `|∇φᵢ + eᵢ|` over eroded inclusion interiors.
    pub rigidity: Option<[f64; 2]>,
    /// Net flux of `∇φᵢ + eᵢ` out of each inclusion, through the boundary of
    /// its `2h`-dilation; indexed `[inclusion][direction]`.
    pub inclusion_flux: Vec<[f64; 2]>,
    /// Root-mean-square `|∇φᵢ|` over the cell.
    pub gradient_norm: [f64; 2],
    /// Mean of `∇φᵢ` over the cell.
    pub gradient_mean: [[f64; 2]; 2],
    /// Max `|mean(φᵢ)|` relative to `max|φᵢ|`.
    pub mean_potential: [f64; 2],
}

pub fn corrector_diagnostics(
    sol: &CorrectorSolution,
    ms: Option<&Microstructure>,
) -> DiagnosticsReport {
    let grid = sol.grid;
    let n = grid.n;
    let h = grid.h();
    let depth: Option<Vec<f64>> =
        ms.map(|m| grid.nodes().map(|(_, _, p)| m.signed_depth(p)).collect());
    let mut harmonicity = [0.0; 2];
    let mut gradient_norm = [0.0; 2];
    let mut gradient_mean = [[0.0; 2]; 2];
    let mut mean_potential = [0.0; 2];
    let mut out = vec![0.0; grid.len()];
    for d in 0..2 {
        let mut e = [0.0; 2];
        e[d] = 1.0;
        let rhs = sol.faces.rhs(e);
        let pot = &sol.directions[d].potential;
        sol.faces.apply(&pot.data, &mut out);
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for k in 0..grid.len() {
            let far = depth.as_ref().is_none_or(|dp| dp[k] < -2.0 * h);
            if far {
                worst = worst.max((out[k] - rhs[k]).abs());
            }
        }
        harmonicity[d] = if scale > 0.0 { worst / scale } else { worst };
        let gr = &sol.directions[d].gradient;
        gradient_mean[d] = gr.mean();
        gradient_norm[d] =
            (gr.x.iter().chain(&gr.y).map(|v| v * v).sum::<f64>() / grid.len() as f64).sqrt();
        let m = pot.mean();
        let amp = pot.max_abs();
        mean_potential[d] = if amp > 0.0 { m.abs() / amp } else { m.abs() };
    }

    let mut inclusion_flux = Vec::new();
    if let Some(ms) = ms {
        for inc in &ms.inclusions {
            let c = inc.center();
            let mask: Vec<bool> = grid
                .nodes()
                .map(|(_, _, p)| {
                    let d = [
                        crate::grid::wrap_coord(p[0] - c[0], 1.0),
                        crate::grid::wrap_coord(p[1] - c[1], 1.0),
                    ];
                    inc.depth_at_offset(d) > -2.0 * h
                })
                .collect();
            let mut flux = [0.0; 2];
            for (d, f) in flux.iter_mut().enumerate() {
                let u = &sol.directions[d].potential.data;
                let mut total = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        let k = j * n + i;
                        for dir in 0..2 {
                            let nb = if dir == 0 {
                                j * n + (i + 1) % n
                            } else {
                                ((j + 1) % n) * n + i
                            };
                            if mask[k] == mask[nb] {
                                continue;
                            }
                            let mut g = u[nb] - u[k];
                            if dir == d {
                                g += h;
                            }
                            // outward orientation relative to the mask
                            total += if mask[k] { g } else { -g };
                        }
                    }
                }
                *f = total;
            }
            inclusion_flux.push(flux);
        }
    }

    let rigidity = match (sol.variant, ms) {
        (Variant::Stiff, Some(ms)) => sol.k_max().map(|k| rigidity(ms, grid, k, &sol.directions)),
        _ => None,
    };

    DiagnosticsReport {
        harmonicity,
        rigidity,
        inclusion_flux,
        gradient_norm,
        gradient_mean,
        mean_potential,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgeom::{build_depth_field, DepthSpec, LaminateTerm};

    #[test]
    fn harmonic_faces_of_constant_field() {
        let g = Grid::unit(16).unwrap();
        let f = FaceCoefficients::harmonic(&ScalarField::constant(g, 3.0));
        assert!(f.x.iter().chain(&f.y).all(|&v| (v - 3.0).abs() < 1e-15));
        assert!(f.rhs([1.0, 0.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_is_symmetric_and_annihilates_constants() {
        let g = Grid::unit(16).unwrap();
        let c = ScalarField::from_fn(g, |[x, y]| 2.0 + (6.0 * x).sin() * (4.0 * y).cos());
        let f = FaceCoefficients::harmonic(&c);
        let u: Vec<f64> = (0..g.len()).map(|k| ((k * 37) % 11) as f64).collect();
        let v: Vec<f64> = (0..g.len()).map(|k| ((k * 13) % 7) as f64).collect();
        let (mut au, mut av) = (vec![0.0; g.len()], vec![0.0; g.len()]);
        f.apply(&u, &mut au);
        f.apply(&v, &mut av);
        assert!((pcg::dot(&au, &v) - pcg::dot(&u, &av)).abs() < 1e-9);
        f.apply(&vec![1.0; g.len()], &mut au);
        assert!(au.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn constant_depth_gives_zero_corrector() {
        let b = ScalarField::constant(Grid::unit(32).unwrap(), 2.0);
        let sol = solve_lake_corrector(&b, 1e-10).unwrap();
        for d in 0..2 {
            assert!(sol.potential(d).max_abs() == 0.0);
        }
        let diag = corrector_diagnostics(&sol, None);
        assert!(diag.harmonicity.iter().all(|&v| v <= 1e-10));
    }

    #[test]
    fn laminate_second_direction_vanishes() {
        let spec = DepthSpec::laminate(
            1.0,
            vec![LaminateTerm {
                k: 1,
                amplitude: 0.5,
                phase: 0.0,
            }],
            4.0,
        );
        let b = build_depth_field(&spec, 64).unwrap();
        let sol = solve_lake_corrector(&b, 1e-12).unwrap();
        assert!(sol.potential(1).max_abs() < 1e-12);
        assert!(sol.potential(0).max_abs() > 1e-2);
        let h = &sol.directions[0].stats.history;
        assert!(h.len() > 1);
    }

    #[test]
    fn empty_structure_has_unit_energies() {
        let sol =
            solve_stiff_corrector(&Microstructure::empty(0.1), 32, &DEFAULT_LADDER, 1e-10).unwrap();
        for s in &sol.ladder {
            assert!((s.energies[0] - 1.0).abs() < 1e-12 && (s.energies[1] - 1.0).abs() < 1e-12);
        }
        assert!(sol.potential(0).max_abs() == 0.0);
    }

    #[test]
    fn ladder_must_increase() {
        assert!(validate_ladder(&[1e2, 1e3]).is_ok());
        let err = validate_ladder(&[1e3, 1e2]).unwrap_err().to_string();
        assert!(err.contains("1000") && err.contains("100"));
        assert!(validate_ladder(&[]).is_err());
    }
}
