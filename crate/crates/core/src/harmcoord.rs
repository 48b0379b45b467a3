//! Corrected harmonic coordinates `Φ(x) = x + φ(x)` and numerical checks of
//! their diffeomorphism property.

use crate::cellsolve::CorrectorSolution;
use crate::error::{Error, Result};
use crate::grid::{centered_gradient, Grid, ScalarField};

pub const DEFAULT_EROSION_CELLS: f64 = 3.0;
/// Fine pixels per grid cell used by the image-coverage test.
pub const COVERAGE_REFINEMENT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    pub grid: Grid,
    pub displacement: [ScalarField; 2],
    /// `det(Id + ∇φ)` from centered differences.
    pub jacobian: ScalarField,
    /// Signed distance to the inclusions (positive inside), if any.
    pub depth: Option<ScalarField>,
}

impl CoordinateMap {
    pub fn from_displacement(displacement: [ScalarField; 2], depth: Option<ScalarField>) -> Self {
        let grid = displacement[0].grid;
        let g1 = centered_gradient(&displacement[0]);
        let g2 = centered_gradient(&displacement[1]);
        let data = (0..grid.len())
            .map(|k| (1.0 + g1.x[k]) * (1.0 + g2.y[k]) - g1.y[k] * g2.x[k])
            .collect();
        Self {
            grid,
            displacement,
            jacobian: ScalarField { grid, data },
            depth,
        }
    }

    /// Nodes at distance at least `δ` from the inclusions.
    pub fn eroded_mask(&self, delta: f64) -> Vec<bool> {
        match &self.depth {
            Some(d) => d.data.iter().map(|&v| v <= -delta).collect(),
            None => vec![true; self.grid.len()],
        }
    }

    /// Image of node `(i, j)` with unwrapped index offsets.
    fn image(&self, i: isize, j: isize) -> [f64; 2] {
        let g = self.grid;
        let k = g.wrap(i, j);
        let h = g.h();
        [
            -0.5 * g.length + i as f64 * h + self.displacement[0].data[k],
            -0.5 * g.length + j as f64 * h + self.displacement[1].data[k],
        ]
    }
}

pub fn build_map(sol: &CorrectorSolution) -> CoordinateMap {
    let depth = sol
        .microstructure
        .as_ref()
        .map(|ms| ms.depth_field(sol.grid));
    CoordinateMap::from_displacement([sol.potential(0).clone(), sol.potential(1).clone()], depth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub min_det: f64,
    pub argmin: [f64; 2],
    /// Mask nodes with `det <= 0`.
    pub sign_changes: usize,
    pub mask_nodes: usize,
    /// `∫|det|` over the masked cells for the piecewise-linear map.
    pub area_formula: f64,
    /// Area covered by the images, from a refined point-in-image test.
    pub image_area: f64,
    /// `|area_formula − image_area| / area_formula`.
    pub area_gap: f64,
}

fn check_delta(grid: Grid, delta_cells: f64) -> Result<f64> {
    if delta_cells < 2.0 {
        return Err(Error::Unsupported(format!(
            "erosion must be at least 2 grid cells, got {delta_cells}"
        )));
    }
    Ok(delta_cells * grid.h())
}

pub fn jacobian_analysis(map: &CoordinateMap, delta_cells: f64) -> Result<JacobianReport> {
    let g = map.grid;
    let mask = map.eroded_mask(check_delta(g, delta_cells)?);
    let mut min_det = f64::INFINITY;
    let mut argmin = [0.0; 2];
    let mut sign_changes = 0;
    let mut mask_nodes = 0;
    for (i, j, p) in g.nodes() {
        let k = g.idx(i, j);
        if !mask[k] {
            continue;
        }
        mask_nodes += 1;
        let d = map.jacobian.data[k];
        if d <= 0.0 {
            sign_changes += 1;
        }
        if d < min_det {
            min_det = d;
            argmin = p;
        }
    }
    let (area_formula, image_area) = image_coverage(map, &mask);
    let area_gap = if area_formula > 0.0 {
        (area_formula - image_area).abs() / area_formula
    } else {
        0.0
    };
    Ok(JacobianReport {
        min_det,
        argmin,
        sign_changes,
        mask_nodes,
        area_formula,
        image_area,
        area_gap,
    })
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Maps every masked cell as two triangles, sums their unsigned areas
/// (area formula with multiplicity) and marks the fine pixels on the torus
/// whose centers fall in an image. The two agree iff the map is injective
/// on the mask, up to pixelization.
fn image_coverage(map: &CoordinateMap, mask: &[bool]) -> (f64, f64) {
    let g = map.grid;
    let n = g.n as isize;
    let r = COVERAGE_REFINEMENT;
    let m = g.n * r;
    let ph = g.length / m as f64;
    let origin = -0.5 * g.length;
    let mut covered = vec![false; m * m];
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            if !corners.iter().all(|&(a, b)| mask[g.wrap(a, b)]) {
                continue;
            }
            let p: Vec<[f64; 2]> = corners.iter().map(|&(a, b)| map.image(a, b)).collect();
            for mut tri in [[p[0], p[1], p[2]], [p[0], p[2], p[3]]] {
                let area = 0.5 * orient(tri[0], tri[1], tri[2]);
                total += area.abs();
                if area == 0.0 {
                    continue;
                }
                if area < 0.0 {
                    tri.swap(1, 2);
                }
                let xs = tri.iter().map(|q| q[0]);
                let ys = tri.iter().map(|q| q[1]);
                let (x0, x1) = (
                    xs.clone().fold(f64::INFINITY, f64::min),
                    xs.fold(f64::NEG_INFINITY, f64::max),
                );
                let (y0, y1) = (
                    ys.clone().fold(f64::INFINITY, f64::min),
                    ys.fold(f64::NEG_INFINITY, f64::max),
                );
                let a0 = ((x0 - origin) / ph - 0.5).ceil() as isize;
                let a1 = ((x1 - origin) / ph - 0.5).floor() as isize;
                let b0 = ((y0 - origin) / ph - 0.5).ceil() as isize;
                let b1 = ((y1 - origin) / ph - 0.5).floor() as isize;
                for b in b0..=b1 {
                    for a in a0..=a1 {
                        let c = [
                            origin + (a as f64 + 0.5) * ph,
                            origin + (b as f64 + 0.5) * ph,
                        ];
                        if orient(tri[0], tri[1], c) >= 0.0
                            && orient(tri[1], tri[2], c) >= 0.0
                            && orient(tri[2], tri[0], c) >= 0.0
                        {
                            let ia = a.rem_euclid(m as isize) as usize;
                            let ib = b.rem_euclid(m as isize) as usize;
                            covered[ib * m + ia] = true;
                        }
                    }
                }
            }
        }
    }
    let area = covered.iter().filter(|&&c| c).count() as f64 * ph * ph;
    (total, area)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedReport {
    pub direction: [f64; 2],
    pub min_speed: f64,
    pub argmin: [f64; 2],
}

/// Minimum of `|e + ∇φ_e|` over the `δ`-eroded complement of the inclusions,
/// with `∇φ_e = e₁∇φ₁ + e₂∇φ₂`.
pub fn direction_speed_min(
    sol: &CorrectorSolution,
    e: [f64; 2],
    delta_cells: f64,
) -> Result<SpeedReport> {
    let norm = e[0].hypot(e[1]);
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Unsupported(format!(
            "direction must be a unit vector, |e| = {norm}"
        )));
    }
    let g = sol.grid;
    let delta = check_delta(g, delta_cells)?;
    let depth = sol.microstructure.as_ref().map(|ms| ms.depth_field(g));
    let (g1, g2) = (sol.gradient(0), sol.gradient(1));
    let mut best = f64::INFINITY;
    let mut argmin = [0.0; 2];
    for (i, j, p) in g.nodes() {
        let k = g.idx(i, j);
        if depth.as_ref().is_some_and(|d| d.data[k] > -delta) {
            continue;
        }
        let vx = e[0] + e[0] * g1.x[k] + e[1] * g2.x[k];
        let vy = e[1] + e[0] * g1.y[k] + e[1] * g2.y[k];
        let s = vx.hypot(vy);
        if s < best {
            best = s;
            argmin = p;
        }
    }
    Ok(SpeedReport {
        direction: e,
        min_speed: best,
        argmin,
    })
}

/// `count` unit directions equally spaced on the circle.
pub fn direction_fan(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            [t.cos(), t.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_is_perfect() {
        let g = Grid::unit(32).unwrap();
        let map =
            CoordinateMap::from_displacement([ScalarField::zeros(g), ScalarField::zeros(g)], None);
        let rep = jacobian_analysis(&map, 3.0).unwrap();
        assert_eq!(rep.min_det, 1.0);
        assert_eq!(rep.sign_changes, 0);
        assert!(rep.area_gap <= 1e-3, "{}", rep.area_gap);
        assert!((rep.area_formula - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folded_map_is_detected() {
        let g = Grid::unit(64).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        // a mild smooth displacement, negated and scaled by five
        let d1 = ScalarField::from_fn(g, |[x, y]| -5.0 * 0.05 * (tau * x).sin() * (tau * y).cos());
        let d2 = ScalarField::from_fn(g, |[_, y]| -5.0 * 0.05 * (tau * y).sin());
        let map = CoordinateMap::from_displacement([d1, d2], None);
        let rep = jacobian_analysis(&map, 3.0).unwrap();
        assert!(rep.sign_changes > 0);
        assert!(rep.area_gap > 1e-2);
    }

    #[test]
    fn erosion_floor() {
        let g = Grid::unit(16).unwrap();
        let map =
            CoordinateMap::from_displacement([ScalarField::zeros(g), ScalarField::zeros(g)], None);
        assert!(jacobian_analysis(&map, 1.0).is_err());
    }

    #[test]
    fn fan_is_unit() {
        let f = direction_fan(16);
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|e| (e[0].hypot(e[1]) - 1.0).abs() < 1e-15));
    }
}
