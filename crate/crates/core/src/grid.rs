//! Uniform periodic node grids.
//!
//! Every field lives on an `n x n` node grid covering the periodic square
//! `[-L/2, L/2)^2`. Node `(i, j)` sits at `(-L/2 + i h, -L/2 + j h)` with
//! `h = L / n`; samples are stored row-major with `j` (the second coordinate)
//! as the row index, so the flat index is `j * n + i`.

use crate::error::{Error, Result};

/// Smallest admissible grid size.
pub const MIN_GRID: usize = 16;

/// Grid geometry shared by scalar and vector fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < MIN_GRID || n % 2 != 0 {
            return Err(Error::Grid(format!(
                "grid size must be even and at least {MIN_GRID}, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Grid(format!(
                "side length must be positive, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    /// The unit periodicity cell `Q = [-1/2, 1/2)^2`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Periodic index with signed offsets.
    #[inline]
    pub fn wrap(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        let ii = i.rem_euclid(n) as usize;
        let jj = j.rem_euclid(n) as usize;
        jj * self.n + ii
    }

    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        -0.5 * self.length + k as f64 * self.h()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(i), self.coord(j)]
    }

    /// Iterator over `(i, j, [x, y])` in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, [f64; 2])> + '_ {
        (0..self.n).flat_map(move |j| (0..self.n).map(move |i| (i, j, self.node(i, j))))
    }

    /// Cell area element `h^2`.
    #[inline]
    pub fn area_element(&self) -> f64 {
        self.h() * self.h()
    }
}

/// Wrap a coordinate into `[-L/2, L/2)`.
#[inline]
pub fn wrap_coord(x: f64, length: f64) -> f64 {
    let y = (x + 0.5 * length).rem_euclid(length) - 0.5 * length;
    // rem_euclid can return `length` itself for tiny negative inputs
    if y >= 0.5 * length {
        y - length
    } else {
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let data = grid.nodes().map(|(_, _, p)| f(p)).collect();
        Self { grid, data }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Grid(format!(
                "expected {} samples, got {}",
                grid.len(),
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite sample at index {k}")));
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_wrapped(&self, i: isize, j: isize) -> f64 {
        self.data[self.grid.wrap(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ f` over the periodic square.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.area_element()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.data.iter_mut().for_each(|v| *v -= m);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for (i, j, p) in grid.nodes() {
            let v = f(p);
            let k = grid.idx(i, j);
            out.x[k] = v[0];
            out.y[k] = v[1];
        }
        out
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.x[k], self.y[k]]
    }

    pub fn mean(&self) -> [f64; 2] {
        let m = self.x.len() as f64;
        [
            self.x.iter().sum::<f64>() / m,
            self.y.iter().sum::<f64>() / m,
        ]
    }

    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// Centered-difference divergence at the nodes.
    pub fn divergence(&self) -> ScalarField {
        let g = self.grid;
        let h2 = 2.0 * g.h();
        let mut out = ScalarField::zeros(g);
        for j in 0..g.n as isize {
            for i in 0..g.n as isize {
                let dx = self.x[g.wrap(i + 1, j)] - self.x[g.wrap(i - 1, j)];
                let dy = self.y[g.wrap(i, j + 1)] - self.y[g.wrap(i, j - 1)];
                out.data[g.wrap(i, j)] = (dx + dy) / h2;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Centered-difference gradient of a periodic node field.
pub fn centered_gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let h2 = 2.0 * g.h();
    let mut out = VectorField::zeros(g);
    for j in 0..g.n as isize {
        for i in 0..g.n as isize {
            let k = g.wrap(i, j);
            out.x[k] = (f.data[g.wrap(i + 1, j)] - f.data[g.wrap(i - 1, j)]) / h2;
            out.y[k] = (f.data[g.wrap(i, j + 1)] - f.data[g.wrap(i, j - 1)]) / h2;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(Grid::new(8, 1.0).is_err());
        assert!(Grid::new(17, 1.0).is_err());
        assert!(Grid::new(16, 0.0).is_err());
        assert!(Grid::new(16, 1.0).is_ok());
    }

    #[test]
    fn node_layout_is_row_major_and_centered() {
        let g = Grid::unit(16).unwrap();
        assert_eq!(g.node(0, 0), [-0.5, -0.5]);
        assert_eq!(g.node(8, 8), [0.0, 0.0]);
        assert_eq!(g.idx(3, 2), 2 * 16 + 3);
        assert_eq!(g.wrap(-1, 16), g.idx(15, 0));
    }

    #[test]
    fn wrap_coord_stays_in_cell() {
        for &x in &[-0.5, 0.49999, 0.5, 1.25, -3.7, -1e-18] {
            let y = wrap_coord(x, 1.0);
            assert!((-0.5..0.5).contains(&y), "{x} -> {y}");
        }
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let g = Grid::unit(16).unwrap();
        let mut v = vec![0.0; g.len()];
        v[5] = f64::NAN;
        assert!(ScalarField::from_vec(g, v).is_err());
    }

    #[test]
    fn rotated_gradient_is_divergence_free() {
        let g = Grid::unit(32).unwrap();
        let f = ScalarField::from_fn(g, |[x, y]| {
            (6.0 * x).sin() * (2.0 * std::f64::consts::PI * y).cos() + x * x
        });
        let grad = centered_gradient(&f);
        let rot = VectorField {
            grid: g,
            x: grad.y.iter().map(|v| -v).collect(),
            y: grad.x.clone(),
        };
        assert!(rot.divergence().max_abs() < 1e-10);
    }
}
