//! Effective tensors assembled from corrector solutions, and the closed-form
//! relations they are checked against.

use nalgebra::Matrix2;

use crate::cellsolve::{self, tensor_forms, CorrectorSolution, Variant};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::microgeom::{area_fraction, Inclusion, Microstructure};

/// Rotation by +90°, `J(a, b) = (−b, a)`.
pub fn rotation() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Frobenius-norm asymmetry relative to the norm of the matrix.
pub fn asymmetry(a: &Matrix2<f64>) -> f64 {
    let n = a.norm();
    if n == 0.0 {
        0.0
    } else {
        (a - a.transpose()).norm() / n
    }
}

/// Eigenvalues of the symmetric part, ascending.
pub fn eigenvalues(a: &Matrix2<f64>) -> [f64; 2] {
    let s = 0.5 * (a + a.transpose());
    let ev = s.symmetric_eigenvalues();
    let (l0, l1) = (ev[0], ev[1]);
    if l0 <= l1 {
        [l0, l1]
    } else {
        [l1, l0]
    }
}

fn check_spd(a: &Matrix2<f64>, what: &str) -> Result<()> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular(format!("{what} has non-finite entries")));
    }
    let asym = asymmetry(a);
    if asym > 1e-8 {
        return Err(Error::Singular(format!(
            "{what} is not symmetric (relative asymmetry {asym:.3e})"
        )));
    }
    let ev = eigenvalues(a);
    if ev[0] <= 0.0 {
        return Err(Error::Singular(format!(
            "{what} is not positive definite (eigenvalues {ev:?})"
        )));
    }
    Ok(())
}

/// `m̄ = Jᵀ ā J`.
pub fn m_bar(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    check_spd(a, "homogenized matrix")?;
    let j = rotation();
    Ok(j.transpose() * a * j)
}

/// `b̄ = Jᵀ ā⁻¹ J`.
pub fn b_bar(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    check_spd(a, "homogenized matrix")?;
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::Singular("homogenized matrix is not invertible".into()))?;
    let j = rotation();
    Ok(j.transpose() * inv * j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiluteVariant {
    Stiff,
    /// Depth `α` outside the inclusions and `β` inside.
    Lake {
        alpha: f64,
        beta: f64,
    },
}

/// Largest volume fraction for which the first-order expansion is offered.
pub const DILUTE_LIMIT: f64 = 0.1;

/// First-order dilute expansion for a dilute set of disks.
pub fn dilute_cm(
    variant: DiluteVariant,
    shapes: &[Inclusion],
    lambda: f64,
) -> Result<Matrix2<f64>> {
    if shapes.iter().any(|s| !matches!(s, Inclusion::Disk { .. })) {
        return Err(Error::Unsupported(
            "dilute expansion is available for disks only".into(),
        ));
    }
    if !(0.0..=DILUTE_LIMIT).contains(&lambda) {
        return Err(Error::Unsupported(format!(
            "volume fraction {lambda} outside the dilute envelope [0, {DILUTE_LIMIT}]"
        )));
    }
    let id = Matrix2::identity();
    Ok(match variant {
        DiluteVariant::Stiff => id * (1.0 + 2.0 * lambda),
        DiluteVariant::Lake { alpha, beta } => {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::Unsupported("depths must be positive".into()));
            }
            id * (1.0 / alpha + lambda * 2.0 * (alpha - beta) / (alpha * (alpha + beta)))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dilute {
    pub prediction: Matrix2<f64>,
    /// Operator 2-norm of `ā − prediction`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveTensors {
    pub variant: Variant,
    pub n: usize,
    pub a_bar: Matrix2<f64>,
    /// `m̄` (stiff) or `b̄` (lake).
    pub derived: Matrix2<f64>,
    /// Rasterized inclusion volume fraction (stiff).
    pub lambda: Option<f64>,
    /// Averaged depth (lake).
    pub b0: Option<f64>,
    /// Relative gap between the two tensor expressions.
    pub formula_gap: f64,
    /// Relative gap between energy and flux expressions.
    pub galerkin_gap: f64,
    pub asymmetry: f64,
    /// Per-penalty tensors of the stiff ladder.
    pub raw: Vec<(f64, Matrix2<f64>)>,
    pub dilute: Option<Dilute>,
}

fn rel_gap(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

impl EffectiveTensors {
    pub fn attach_dilute(&mut self, prediction: Matrix2<f64>) {
        let gap = (self.a_bar - prediction)
            .svd(false, false)
            .singular_values
            .max();
        self.dilute = Some(Dilute { prediction, gap });
    }

    /// Richardson extrapolation across the two largest penalties, assuming
    /// an `O(1/K)` penalization error.
    pub fn extrapolated(raw: &[(f64, Matrix2<f64>)]) -> Option<Matrix2<f64>> {
        let m = raw.len();
        if m < 2 {
            return None;
        }
        let (k1, a1) = raw[m - 2];
        let (k2, a2) = raw[m - 1];
        Some(a2 + (a2 - a1) / (k2 / k1 - 1.0))
    }
}

/// `δᵢⱼ + ∫∇φᵢ·∇φⱼ` and `∫(∇φᵢ+eᵢ)·(∇φⱼ+eⱼ)` (both including the penalty
/// contribution of the finite-`K` conductivity); the canonical `ā` is the
/// ladder extrapolation.
pub fn homogenized_tensor_stiff(sol: &CorrectorSolution) -> Result<EffectiveTensors> {
    if sol.variant != Variant::Stiff {
        return Err(Error::Assembly(
            "expected a stiff corrector solution".into(),
        ));
    }
    let forms = tensor_forms(&sol.faces, [sol.potential(0), sol.potential(1)]);
    let raw: Vec<(f64, Matrix2<f64>)> = sol.ladder.iter().map(|s| (s.k, s.tensor)).collect();
    let a_bar = EffectiveTensors::extrapolated(&raw).unwrap_or(forms.energy);
    let formula_gap = rel_gap(&forms.with_penalty, &forms.energy);
    let galerkin_gap = rel_gap(&forms.flux, &forms.weighted);
    let asym = asymmetry(&a_bar);
    let ev = eigenvalues(&(a_bar - Matrix2::identity()));
    if asym > 1e-8 || ev[0] < -1e-8 || !a_bar.iter().all(|v| v.is_finite()) {
        return Err(Error::Assembly(format!(
            "stiff tensor {a_bar:?}: asymmetry {asym:.3e}, eigenvalues of ā − Id {ev:?}, formula gap {formula_gap:.3e}"
        )));
    }
    let derived = m_bar(&a_bar).map_err(|e| Error::Assembly(e.to_string()))?;
    let lambda = sol
        .microstructure
        .as_ref()
        .map(|ms| area_fraction(ms, sol.grid, 4).mean());
    let mut out = EffectiveTensors {
        variant: Variant::Stiff,
        n: sol.n(),
        a_bar,
        derived,
        lambda,
        b0: None,
        formula_gap,
        galerkin_gap,
        asymmetry: asym,
        raw,
        dilute: None,
    };
    if let Some(ms) = &sol.microstructure {
        if let Ok(pred) = dilute_cm(DiluteVariant::Stiff, &ms.inclusions, ms.volume_fraction()) {
            out.attach_dilute(pred);
        }
    }
    Ok(out)
}

/// `∫b⁻¹(∇ψᵢ+eᵢ)·(∇ψⱼ+eⱼ)` against `eᵢ·∫b⁻¹(∇ψⱼ+eⱼ)`, with `b̄` and `b₀`.
pub fn homogenized_tensor_lake(
    b: &ScalarField,
    sol: &CorrectorSolution,
) -> Result<EffectiveTensors> {
    if sol.variant != Variant::Lake {
        return Err(Error::Assembly("expected a lake corrector solution".into()));
    }
    if b.grid != sol.grid {
        return Err(Error::Assembly(
            "depth field and corrector live on different grids".into(),
        ));
    }
    let forms = tensor_forms(&sol.faces, [sol.potential(0), sol.potential(1)]);
    let a_bar = forms.weighted;
    let formula_gap = rel_gap(&forms.flux, &forms.weighted);
    let asym = asymmetry(&a_bar);
    let ev = eigenvalues(&a_bar);
    let b0 = b.mean();
    let inv_mean = b.data.iter().map(|v| 1.0 / v).sum::<f64>() / b.data.len() as f64;
    let slack = 1e-8 * inv_mean;
    if asym > 1e-8 || ev[0] < 1.0 / b0 - slack || ev[1] > inv_mean + slack {
        return Err(Error::Assembly(format!(
            "lake tensor {a_bar:?}: asymmetry {asym:.3e}, eigenvalues {ev:?} outside [{}, {inv_mean}]",
            1.0 / b0
        )));
    }
    let derived = b_bar(&a_bar).map_err(|e| Error::Assembly(e.to_string()))?;
    Ok(EffectiveTensors {
        variant: Variant::Lake,
        n: sol.n(),
        a_bar,
        derived,
        lambda: None,
        b0: Some(b0),
        formula_gap,
        galerkin_gap: formula_gap,
        asymmetry: asym,
        raw: Vec::new(),
        dilute: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// Effective tensor of the pointwise coefficient `b`.
    pub direct: Matrix2<f64>,
    /// `Jᵀ ā⁻¹ J` with `ā` the effective tensor of `b⁻¹`.
    pub dual: Matrix2<f64>,
    /// Relative Frobenius gap.
    pub gap: f64,
}

/// Keller-type duality: homogenizing `b` directly against `b̄`.
pub fn duality_check(b: &ScalarField, tol: f64) -> Result<DualityReport> {
    let sol = cellsolve::solve_lake_corrector(b, tol)?;
    let dual = homogenized_tensor_lake(b, &sol)?.derived;
    let inv = b.map(|v| 1.0 / v);
    let sol_inv = cellsolve::solve_lake_corrector(&inv, tol)?;
    let direct = homogenized_tensor_lake(&inv, &sol_inv)?.a_bar;
    Ok(DualityReport {
        direct,
        dual,
        gap: rel_gap(&dual, &direct),
    })
}

#[derive(Debug, Clone, Copy)]
pub enum CellGeometry<'a> {
    Inclusions(&'a Microstructure),
    Depth(&'a ScalarField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStatistics {
    pub lambda: f64,
    pub b0: Option<f64>,
}

/// Volume fraction (rasterized at `n`, 4 x 4 subsampling) or averaged depth.
pub fn cell_statistics(geom: CellGeometry<'_>, n: usize) -> Result<CellStatistics> {
    Ok(match geom {
        CellGeometry::Inclusions(ms) => CellStatistics {
            lambda: crate::microgeom::rasterize_indicator(ms, n, 4)?.mean(),
            b0: None,
        },
        CellGeometry::Depth(b) => CellStatistics {
            lambda: 0.0,
            b0: Some(b.mean()),
        },
    })
}
