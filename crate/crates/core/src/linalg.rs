//! Small dense helpers shared by the program assembler, the conic solver and
//! the estimator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Length of the scaled half-vectorization of a `d x d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Recovers `d` from an svec length.
pub fn svec_dim(len: usize) -> usize {
    let mut d = 0;
    while svec_len(d) < len {
        d += 1;
    }
    debug_assert_eq!(svec_len(d), len);
    d
}

/// Scaled half-vectorization: lower triangle, column by column, with the
/// off-diagonal entries multiplied by sqrt(2) so that
/// `svec(X) . svec(Y) == trace(X Y)`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(svec_len(d));
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            out[k] = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * std::f64::consts::SQRT_2
            };
            k += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> DMatrix<f64> {
    let d = svec_dim(v.len());
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Orthonormal basis matrix `E_k` of the svec coordinate `k`.
pub fn svec_basis(d: usize, k: usize) -> DMatrix<f64> {
    let mut v = vec![0.0; svec_len(d)];
    v[k] = 1.0;
    smat(&v)
}

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.max()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Converts row-major nested vectors into a matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_from(d: usize, vals: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |i, j| vals[i * d + j]);
        sym(&m)
    }

    proptest! {
        #[test]
        fn svec_preserves_trace_inner_product(
            vals_x in proptest::collection::vec(-5.0..5.0f64, 16),
            vals_y in proptest::collection::vec(-5.0..5.0f64, 16),
        ) {
            let x = sym_from(4, &vals_x);
            let y = sym_from(4, &vals_y);
            let lhs = svec(&x).dot(&svec(&y));
            let rhs = (&x * &y).trace();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn smat_inverts_svec(vals in proptest::collection::vec(-5.0..5.0f64, 9)) {
            let x = sym_from(3, &vals);
            let back = smat(svec(&x).as_slice());
            prop_assert!((back - x).abs().max() <= 1e-15);
        }
    }

    #[test]
    fn svec_basis_is_orthonormal() {
        for a in 0..6 {
            for b in 0..6 {
                let ip = (svec_basis(3, a) * svec_basis(3, b)).trace();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-15);
            }
        }
    }
}
