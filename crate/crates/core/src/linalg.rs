//! Small dense solvers: real Cholesky for the BSS Eval Gram systems and
//! complex Gaussian elimination for AR normal equations.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T: Real> {
    lower: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Array2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch("Cholesky needs a square matrix".into()));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::Numerical(format!("matrix not positive definite at pivot {j}")));
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    /// Factorizes `a`, retrying once with `ridge_rel * trace(a)` added to the
    /// diagonal. The flag reports whether the ridge was needed.
    pub fn with_ridge(a: &Array2<T>, ridge_rel: T) -> Result<(Self, bool)> {
        match Self::new(a) {
            Ok(c) => Ok((c, false)),
            Err(_) => {
                let trace: T = a.diag().iter().copied().sum();
                let mut reg = a.clone();
                let bump = ridge_rel * trace.max(T::min_positive_value());
                for i in 0..a.nrows() {
                    reg[[i, i]] += bump;
                }
                Ok((Self::new(&reg)?, true))
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn solve(&self, b: &Array1<T>) -> Array1<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }
}

/// Solves a small complex linear system by Gaussian elimination with partial
/// pivoting.
pub fn solve_complex<T: Real>(a: &Array2<Complex<T>>, b: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::ShapeMismatch("complex solve dimensions".into()));
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].norm().partial_cmp(&m[[j, col]].norm()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if !(m[[pivot, col]].norm() > T::zero()) {
            return Err(Error::Numerical("singular complex system".into()));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[[col, k]];
                m[[col, k]] = m[[pivot, k]];
                m[[pivot, k]] = tmp;
            }
            rhs.swap(col, pivot);
        }
        let p = m[[col, col]];
        for row in col + 1..n {
            let factor = m[[row, col]] / p;
            if factor.norm() == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[[col, k]];
                m[[row, k]] = m[[row, k]] - factor * v;
            }
            let r = rhs[col];
            rhs[row] = rhs[row] - factor * r;
        }
    }
    let mut x = vec![Complex::new(T::zero(), T::zero()); n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in i + 1..n {
            s = s - m[[i, k]] * x[k];
        }
        x[i] = s / m[[i, i]];
    }
    Ok(x)
}

/// `A^H` for a complex matrix.
pub fn adjoint<T: Real>(a: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    a.t().mapv(|c| c.conj())
}

/// Replaces `a` by `(a + a^H) / 2`.
pub fn hermitize<T: Real>(a: &mut Array2<Complex<T>>) {
    let n = a.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        a[[i, i]] = Complex::new(a[[i, i]].re, T::zero());
        for j in i + 1..n {
            let avg = (a[[i, j]] + a[[j, i]].conj()) * half;
            a[[i, j]] = avg;
            a[[j, i]] = avg.conj();
        }
    }
}
