//! Dense linear algebra, finite differences and the seeded random stream
//! shared by every other module.
//!
//! Everything is 64-bit and dense: the largest system solved anywhere in the
//! crate is the 30-bus power-flow Jacobian (53 unknowns).

mod matrix;
mod rng;

pub use matrix::{add, axpy, dot, norm2, norm_inf, scale, sub, Matrix};
pub use rng::{derive_seed, Rng};

use crate::error::{ensure_dim, Error, Result};

/// Relative pivot threshold used by [`solve_linear`].
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// LU factorization with partial pivoting, `P A = L U` stored in place.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "LU factorization (square matrix)",
                expected: a.rows(),
                got: a.cols(),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFiniteValue("matrix".into()));
        }
        let n = a.rows();
        let threshold = PIVOT_TOLERANCE * a.norm_inf();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= threshold || pivot == 0.0 {
                return Err(Error::SingularMatrix { pivot, threshold });
            }
            if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for r in (k + 1)..n {
                let f = lu[(r, k)] / d;
                lu[(r, k)] = f;
                if f != 0.0 {
                    for c in (k + 1)..n {
                        let v = lu[(k, c)];
                        lu[(r, c)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        ensure_dim("LU right-hand side", n, b.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s = dot(&self.lu.row(r)[..r], &x[..r]);
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s = dot(&self.lu.row(r)[r + 1..], &x[r + 1..]);
            x[r] = (x[r] - s) / self.lu[(r, r)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("linear solve".into()));
        }
        Ok(x)
    }
}

/// Solves `A x = b` by partial-pivoting LU.
///
/// Fails with [`Error::SingularMatrix`] when a pivot magnitude falls below
/// `1e-12 * ||A||_inf`.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("linear system right-hand side", a.rows(), b.len())?;
    Lu::factor(a)?.solve(b)
}

/// Result of [`least_squares_min_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub solution: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm solution `r = -J^+ f` of `J r = -f`.
///
/// Applies the pseudoinverse through a one-sided Jacobi SVD of `J`. Singular
/// values at or below `1e-10 * sigma_max` are treated as zero, which both
/// defines the effective rank and keeps `r` in the row space of `J`.
pub fn least_squares_min_norm(j: &Matrix, f: &[f64]) -> Result<LeastSquares> {
    let (k, d) = (j.rows(), j.cols());
    ensure_dim("least-squares residual", k, f.len())?;
    if !j.is_finite() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("least-squares input".into()));
    }
    let svd = Svd::new(j);
    let cutoff = RANK_TOLERANCE * svd.sigma.iter().cloned().fold(0.0, f64::max);
    let mut solution = vec![0.0; d];
    let mut rank = 0;
    for (c, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        rank += 1;
        // u_c = A v_c / s; coefficient <u_c, f> / s
        let coeff = (0..k).map(|r| svd.us[(r, c)] * f[r]).sum::<f64>() / (s * s);
        for (i, x) in solution.iter_mut().enumerate() {
            *x -= coeff * svd.v[(i, c)];
        }
    }
    Ok(LeastSquares {
        solution,
        rank,
        rank_deficient: rank < k.min(d),
    })
}

const RANK_TOLERANCE: f64 = 1e-10;

/// One-sided Jacobi SVD: `A V = U S` with the columns of `us` equal to `U S`.
struct Svd {
    us: Matrix,
    v: Matrix,
    sigma: Vec<f64>,
}

impl Svd {
    fn new(a: &Matrix) -> Self {
        let (k, d) = (a.rows(), a.cols());
        let mut us = a.clone();
        let mut v = Matrix::identity(d);
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..d {
                for q in (p + 1)..d {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for r in 0..k {
                        let (x, y) = (us[(r, p)], us[(r, q)]);
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..k {
                        let (x, y) = (us[(r, p)], us[(r, q)]);
                        us[(r, p)] = c * x - s * y;
                        us[(r, q)] = s * x + c * y;
                    }
                    for r in 0..d {
                        let (x, y) = (v[(r, p)], v[(r, q)]);
                        v[(r, p)] = c * x - s * y;
                        v[(r, q)] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let sigma = (0..d)
            .map(|c| (0..k).map(|r| us[(r, c)] * us[(r, c)]).sum::<f64>().sqrt())
            .collect();
        Self { us, v, sigma }
    }
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &Matrix, rel_tol: f64) -> usize {
    let sigma = Svd::new(a).sigma;
    let max = sigma.iter().cloned().fold(0.0, f64::max);
    sigma.iter().filter(|&&s| s > rel_tol * max && s > 0.0).count()
}

/// Default central-difference step for a probe point `x`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * norm_inf(x).max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: Option<f64>) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let h = h.unwrap_or_else(|| default_fd_step(x));
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "finite-difference probe along coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian (`k x d`) of a vector function.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], h: Option<f64>) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let h = h.unwrap_or_else(|| default_fd_step(x));
    let k = f(x).len();
    let mut jac = Matrix::zeros(k, x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        for r in 0..k {
            let v = (fp[r] - fm[r]) / (2.0 * h);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue("finite-difference Jacobian".into()));
            }
            jac[(r, i)] = v;
        }
    }
    Ok(jac)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)] * m[(r, c)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}
