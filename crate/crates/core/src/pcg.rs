//! Preconditioned conjugate gradients for symmetric positive semi-definite
//! operators restricted to the complement of their kernel.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `‖r‖ / ‖b‖`.
    pub residual: f64,
    /// Relative residual after every iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Fixed-order dot product; reductions are sequential so repeated runs are bitwise identical.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// `apply` writes `A v` into its second argument, `precond` writes `M^{-1} r`.
/// Fails with [`Error::NotConverged`] (carrying the residual history) if the
/// relative residual does not drop below `tol` within `max_iter` iterations.
pub fn solve<A, P>(
    mut apply: A,
    mut precond: P,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats>
where
    A: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut history = vec![res];

    let mut it = 0;
    while res > tol {
        if it == max_iter {
            return Err(Error::NotConverged {
                iterations: it,
                residual: res,
                history,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // direction in the kernel: nothing left to reduce
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        it += 1;
        res = dot(&r, &r).sqrt() / bnorm;
        history.push(res);
    }

    Ok(SolveStats {
        iterations: it,
        residual: res,
        history,
    })
}

/// Two independent solves in lockstep sharing one preconditioner call per
/// iteration; `precond(r1, r2, z1, z2)`. Each system stops on its own
/// convergence; failure of either is reported.
pub fn solve_pair<A, P>(
    mut apply: A,
    mut precond: P,
    b: [&[f64]; 2],
    x: [&mut [f64]; 2],
    tol: f64,
    max_iter: usize,
) -> Result<[SolveStats; 2]>
where
    A: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &[f64], &mut [f64], &mut [f64]),
{
    let n = b[0].len();
    let [x0, x1] = x;
    let xs = [x0, x1];
    let bnorm = [dot(b[0], b[0]).sqrt(), dot(b[1], b[1]).sqrt()];
    let mut r = [vec![0.0; n], vec![0.0; n]];
    for s in 0..2 {
        if bnorm[s] == 0.0 {
            xs[s].iter_mut().for_each(|v| *v = 0.0);
        } else {
            apply(xs[s], &mut r[s]);
            for (ri, bi) in r[s].iter_mut().zip(b[s]) {
                *ri = bi - *ri;
            }
        }
    }
    let mut z = [vec![0.0; n], vec![0.0; n]];
    {
        let [z0, z1] = &mut z;
        precond(&r[0], &r[1], z0, z1);
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = [dot(&r[0], &z[0]), dot(&r[1], &z[1])];
    let mut res = [0.0; 2];
    let mut history = [Vec::new(), Vec::new()];
    let mut active = [true; 2];
    let mut iters = [0usize; 2];
    for s in 0..2 {
        res[s] = if bnorm[s] == 0.0 {
            0.0
        } else {
            dot(&r[s], &r[s]).sqrt() / bnorm[s]
        };
        history[s].push(res[s]);
        active[s] = res[s] > tol;
    }
    while active[0] || active[1] {
        for s in 0..2 {
            if !active[s] {
                continue;
            }
            if iters[s] == max_iter {
                return Err(Error::NotConverged {
                    iterations: iters[s],
                    residual: res[s],
                    history: std::mem::take(&mut history[s]),
                });
            }
            apply(&p[s], &mut ap);
            let pap = dot(&p[s], &ap);
            if pap <= 0.0 {
                active[s] = false;
                continue;
            }
            let alpha = rz[s] / pap;
            let (xv, rv, pv) = (&mut *xs[s], &mut r[s], &p[s]);
            for k in 0..n {
                xv[k] += alpha * pv[k];
                rv[k] -= alpha * ap[k];
            }
        }
        {
            let [z0, z1] = &mut z;
            precond(&r[0], &r[1], z0, z1);
        }
        for s in 0..2 {
            if !active[s] {
                continue;
            }
            let rz_new = dot(&r[s], &z[s]);
            let beta = rz_new / rz[s];
            rz[s] = rz_new;
            let (pv, zv) = (&mut p[s], &z[s]);
            for k in 0..n {
                pv[k] = zv[k] + beta * pv[k];
            }
            iters[s] += 1;
            res[s] = dot(&r[s], &r[s]).sqrt() / bnorm[s];
            history[s].push(res[s]);
            active[s] = res[s] > tol;
        }
    }
    let [h0, h1] = history;
    Ok([
        SolveStats {
            iterations: iters[0],
            residual: res[0],
            history: h0,
        },
        SolveStats {
            iterations: iters[1],
            residual: res[1],
            history: h1,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let l = if i > 0 { v[i - 1] } else { 0.0 };
            let r = if i + 1 < n { v[i + 1] } else { 0.0 };
            out[i] = 4.0 * v[i] - l - r;
        }
    }

    #[test]
    fn solves_spd_tridiagonal() {
        let n = 50;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        tridiag(&xs, &mut b);
        let mut x = vec![0.0; n];
        let st = solve(tridiag, |r, z| z.copy_from_slice(r), &b, &mut x, 1e-12, 200).unwrap();
        assert!(st.residual <= 1e-12);
        for (a, e) in x.iter().zip(&xs) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn paired_solve_matches_single_solves() {
        let n = 60;
        let b1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).sin()).collect();
        let b2: Vec<f64> = vec![0.0; n];
        let b3: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let jacobi = |r1: &[f64], r2: &[f64], z1: &mut [f64], z2: &mut [f64]| {
            for k in 0..r1.len() {
                z1[k] = r1[k] / 4.0;
                z2[k] = r2[k] / 4.0;
            }
        };
        let (mut x1, mut x3) = (vec![0.0; n], vec![0.0; n]);
        let st = solve_pair(tridiag, jacobi, [&b1, &b3], [&mut x1, &mut x3], 1e-12, 500).unwrap();
        let mut y1 = vec![0.0; n];
        solve(
            tridiag,
            |r, z| z.copy_from_slice(r),
            &b1,
            &mut y1,
            1e-12,
            500,
        )
        .unwrap();
        assert!(x1.iter().zip(&y1).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(st.iter().all(|s| s.residual <= 1e-12));
        let (mut z1, mut z2) = (vec![1.0; n], vec![0.0; n]);
        let st = solve_pair(tridiag, jacobi, [&b2, &b1], [&mut z1, &mut z2], 1e-12, 500).unwrap();
        assert_eq!(st[0].iterations, 0);
        assert!(z1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let mut x = vec![1.0; 4];
        let st = solve(
            tridiag,
            |r, z| z.copy_from_slice(r),
            &[0.0; 4],
            &mut x,
            1e-8,
            10,
        )
        .unwrap();
        assert_eq!(st.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reports_history_on_failure() {
        let n = 200;
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        match solve(tridiag, |r, z| z.copy_from_slice(r), &b, &mut x, 1e-14, 2) {
            Err(Error::NotConverged {
                iterations,
                history,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
