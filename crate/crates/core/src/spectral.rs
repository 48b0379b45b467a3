//! Two-dimensional FFTs on periodic node grids and the spectral operators
//! built on them.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Square 2D complex FFT of size `n x n`, row-major storage.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // rows
        plan.process_with_scratch(buf, &mut scratch);
        // columns via transpose
        let mut t = vec![Complex64::new(0.0, 0.0); n * n];
        transpose(buf, &mut t, n);
        plan.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, n);
    }

    /// Unnormalized forward transform of a real field.
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd);
        buf
    }

    pub fn forward_complex(&self, mut data: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut data, &self.fwd);
        data
    }

    /// Normalized inverse transform.
    pub fn inverse_complex(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut spec, &self.inv);
        let scale = 1.0 / (self.n * self.n) as f64;
        spec.iter_mut().for_each(|c| *c *= scale);
        spec
    }

    /// Inverse transform (normalized) keeping the real part.
    pub fn inverse_real(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.transform(&mut buf, &self.inv);
        let scale = 1.0 / (self.n * self.n) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 32;
    for jb in (0..n).step_by(B) {
        for ib in (0..n).step_by(B) {
            for j in jb..(jb + B).min(n) {
                for i in ib..(ib + B).min(n) {
                    dst[i * n + j] = src[j * n + i];
                }
            }
        }
    }
}

/// Signed frequency of FFT index `k` on an `n`-point grid.
#[inline]
pub fn signed_mode(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Spectral calculus on a periodic square grid: wavenumbers, derivative
/// symbols (Nyquist modes are given zero derivative so the operators stay
/// real and skew-adjoint) and the 2/3-rule dealiasing mask.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub grid: Grid,
    pub fft: Fft2,
    /// Derivative wavenumber per FFT index (zero at Nyquist).
    pub k: Vec<f64>,
    /// Signed integer modes per FFT index.
    pub modes: Vec<i64>,
    keep: Vec<bool>,
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / grid.length;
        let modes: Vec<i64> = (0..n).map(|k| signed_mode(k, n)).collect();
        let k = modes
            .iter()
            .map(|&m| {
                if m.unsigned_abs() as usize == n / 2 {
                    0.0
                } else {
                    m as f64 * two_pi_over_l
                }
            })
            .collect();
        let cutoff = (n / 3) as u64;
        let keep = modes.iter().map(|m| m.unsigned_abs() <= cutoff).collect();
        Self {
            grid,
            fft: Fft2::new(n),
            k,
            modes,
            keep,
        }
    }

    #[inline]
    pub fn kx(&self, idx: usize) -> f64 {
        self.k[idx % self.grid.n]
    }

    #[inline]
    pub fn ky(&self, idx: usize) -> f64 {
        self.k[idx / self.grid.n]
    }

    #[inline]
    pub fn retained(&self, idx: usize) -> bool {
        let n = self.grid.n;
        self.keep[idx % n] && self.keep[idx / n]
    }

    pub fn dealias(&self, spec: &mut [Complex64]) {
        for (idx, c) in spec.iter_mut().enumerate() {
            if !self.retained(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Spectral gradient of a real field given its transform. Both
    /// components come from one complex inverse transform.
    pub fn gradient(&self, spec: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let packed: Vec<Complex64> = spec
            .iter()
            .enumerate()
            .map(|(idx, &c)| Complex64::new(-self.ky(idx), self.kx(idx)) * c)
            .collect();
        let out = self.fft.inverse_complex(packed);
        (
            out.iter().map(|c| c.re).collect(),
            out.iter().map(|c| c.im).collect(),
        )
    }

    /// Transform of `div(F)` for a real vector field `F = (fx, fy)`, from one
    /// complex forward transform of `fx + i fy`.
    pub fn divergence_hat(&self, fx: &[f64], fy: &[f64]) -> Vec<Complex64> {
        let n = self.grid.n;
        let packed: Vec<Complex64> = fx
            .iter()
            .zip(fy)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let f = self.fft.forward_complex(packed);
        let i = Complex64::new(0.0, 1.0);
        (0..f.len())
            .map(|idx| {
                let (a, b) = (idx % n, idx / n);
                let mirror = ((n - b) % n) * n + (n - a) % n;
                let c = f[mirror].conj();
                let cx = 0.5 * (f[idx] + c);
                let cy = -0.5 * i * (f[idx] - c);
                i * (self.kx(idx) * cx + self.ky(idx) * cy)
            })
            .collect()
    }
}

/// Eigenvalues of the negative periodic 5-point Laplacian, `(4/h^2)(sin^2(pi k1/n) + sin^2(pi k2/n))`,
/// in FFT storage order.
pub fn five_point_symbol(grid: Grid) -> Vec<f64> {
    let n = grid.n;
    let h = grid.h();
    let s: Vec<f64> = (0..n)
        .map(|k| {
            let t = (std::f64::consts::PI * k as f64 / n as f64).sin();
            4.0 * t * t / (h * h)
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            out[j * n + i] = s[i] + s[j];
        }
    }
    out
}
