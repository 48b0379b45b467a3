//! Periodic cubic B-spline interpolation (C², exact on nodes).

use crate::grid::{Grid, ScalarField};
use crate::spectral::Fft2;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicBicubic {
    grid: Grid,
    /// B-spline coefficients.
    data: Vec<f64>,
}

#[inline]
fn weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    let dw = [
        -0.5 * s * s,
        0.5 * (3.0 * t2 - 4.0 * t),
        0.5 * (-3.0 * t2 + 2.0 * t + 1.0),
        0.5 * t2,
    ];
    (w, dw)
}

impl PeriodicBicubic {
    /// Solves the periodic interpolation conditions `(c₋₁ + 4c₀ + c₁)/6 = f`
    /// in each direction by division in Fourier space.
    pub fn new(field: &ScalarField) -> Self {
        let n = field.grid.n;
        let fft = Fft2::new(n);
        let sym: Vec<f64> = (0..n)
            .map(|m| (4.0 + 2.0 * (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos()) / 6.0)
            .collect();
        let mut spec = fft.forward(&field.data);
        for j in 0..n {
            for i in 0..n {
                spec[j * n + i] /= sym[i] * sym[j];
            }
        }
        Self {
            grid: field.grid,
            data: fft.inverse_real(&spec),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    fn locate(&self, x: f64) -> (isize, f64) {
        let g = self.grid;
        let s = (x + 0.5 * g.length) / g.h();
        let f = s.floor();
        (f as isize, s - f)
    }

    /// Value and gradient at an arbitrary (unwrapped) point.
    pub fn eval_grad(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let g = self.grid;
        let n = g.n as isize;
        let (i0, tx) = self.locate(p[0]);
        let (j0, ty) = self.locate(p[1]);
        let (wx, dwx) = weights(tx);
        let (wy, dwy) = weights(ty);
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (b, (&wyb, &dwyb)) in wy.iter().zip(&dwy).enumerate() {
            let row = (j0 - 1 + b as isize).rem_euclid(n) as usize * g.n;
            let mut rv = 0.0;
            let mut rd = 0.0;
            for a in 0..4 {
                let col = (i0 - 1 + a as isize).rem_euclid(n) as usize;
                let f = self.data[row + col];
                rv += wx[a] * f;
                rd += dwx[a] * f;
            }
            v += wyb * rv;
            gx += wyb * rd;
            gy += dwyb * rv;
        }
        let inv_h = 1.0 / g.h();
        (v, [gx * inv_h, gy * inv_h])
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_grad(p).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn reproduces_nodes_and_is_periodic() {
        let g = Grid::unit(32).unwrap();
        let f = ScalarField::from_fn(g, |[x, y]| (2.0 * PI * x).sin() + (4.0 * PI * y).cos());
        let it = PeriodicBicubic::new(&f);
        for (i, j, p) in g.nodes().step_by(7) {
            assert!((it.eval(p) - f.at(i, j)).abs() < 1e-13);
            assert!((it.eval([p[0] + 1.0, p[1] - 2.0]) - f.at(i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_is_accurate_for_smooth_data() {
        let g = Grid::unit(64).unwrap();
        let f = ScalarField::from_fn(g, |[x, y]| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let it = PeriodicBicubic::new(&f);
        let p = [0.1234, -0.377];
        let (v, gr) = it.eval_grad(p);
        let tp = 2.0 * PI;
        assert!((v - (tp * p[0]).sin() * (tp * p[1]).cos()).abs() < 1e-4);
        assert!((gr[0] - tp * (tp * p[0]).cos() * (tp * p[1]).cos()).abs() < 1e-2);
        assert!((gr[1] + tp * (tp * p[0]).sin() * (tp * p[1]).sin()).abs() < 1e-2);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let g = Grid::unit(16).unwrap();
        let f = ScalarField::from_fn(g, |[x, y]| {
            ((x * 17.0).sin() * (y * 5.0 + 1.0).cos()).powi(3)
        });
        let it = PeriodicBicubic::new(&f);
        let p = [0.013, 0.271];
        let e = 1e-6;
        let (_, gr) = it.eval_grad(p);
        let fx = (it.eval([p[0] + e, p[1]]) - it.eval([p[0] - e, p[1]])) / (2.0 * e);
        let fy = (it.eval([p[0], p[1] + e]) - it.eval([p[0], p[1] - e])) / (2.0 * e);
        assert!((gr[0] - fx).abs() < 1e-6 && (gr[1] - fy).abs() < 1e-6);
    }
}
