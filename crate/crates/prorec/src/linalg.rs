//! Small dense symmetric positive-definite solves backing the alternating
//! least-squares updates. One factorization is shared by every row solve of a
//! half-epoch, so only the d×d system is factored here.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Cholesky factorization `A = L Lᵀ` of a symmetric positive-definite matrix.
/// Returns the lower-triangular factor `L`.
pub(crate) fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    debug_assert_eq!(d, a.ncols());
    let mut l = Array2::<f64>::zeros((d, d));
    for k in 0..d {
        let mut diag = a[[k, k]];
        for s in 0..k {
            diag -= l[[k, s]] * l[[k, s]];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(Error::Numerical {
                context: "cholesky",
                detail: format!("non-positive pivot at index {k} (value {diag:e})"),
            });
        }
        let lkk = diag.sqrt();
        l[[k, k]] = lkk;
        for i in (k + 1)..d {
            let mut v = a[[i, k]];
            for s in 0..k {
                v -= l[[i, s]] * l[[k, s]];
            }
            l[[i, k]] = v / lkk;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` in place given the lower factor from [`cholesky`].
pub(crate) fn solve_with_factor(l: &Array2<f64>, b: &mut [f64]) {
    let d = l.nrows();
    debug_assert_eq!(b.len(), d);
    // Forward substitution: L y = b.
    for i in 0..d {
        let mut v = b[i];
        for s in 0..i {
            v -= l[[i, s]] * b[s];
        }
        b[i] = v / l[[i, i]];
    }
    // Back substitution: Lᵀ x = y.
    for i in (0..d).rev() {
        let mut v = b[i];
        for s in (i + 1)..d {
            v -= l[[s, i]] * b[s];
        }
        b[i] = v / l[[i, i]];
    }
}
