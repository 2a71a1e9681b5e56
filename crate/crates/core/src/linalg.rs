//! Dense linear-algebra helpers shared by the matrix builders and the solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;

/// Factorizations whose condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest `|a_ij - a_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + m^T) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    m.clone().symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor. Fails if the factorization breaks down or the condition estimate
/// `(max L_ii / min L_ii)^2` exceeds [`MAX_CONDITION`].
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned {
            context: context.to_owned(),
            condition: f64::INFINITY,
        })?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let condition = if n == 0 { 1.0 } else { (hi / lo).powi(2) };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned {
            context: context.to_owned(),
            condition,
        });
    }
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `m * x` for symmetric `m`. Entry `i` is the dot product of column `i`
/// with `x` (contiguous in column-major storage), summed left to right, so
/// the result is identical with or without the thread pool.
pub fn sym_matvec(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    debug_assert_eq!(m.nrows(), n);
    debug_assert_eq!(x.len(), n);
    let xs = x.as_slice();
    let out = par::map_range(n, |i| {
        let col = m.column(i);
        col.iter().zip(xs).fold(0.0, |acc, (a, b)| acc + a * b)
    });
    DVector::from_vec(out)
}

/// `x^T m x` for symmetric `m`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    sym_matvec(m, x).dot(x)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(*b);
        off += k;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_matches_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&a, "test").unwrap();
        let prod = &a * &inv;
        assert!((prod - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_near_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(spd_inverse(&a, "t"), Err(Error::IllConditioned { .. })));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_inverse(&indefinite, "t").is_err());
    }

    #[test]
    fn sym_matvec_agrees_with_nalgebra() {
        let m = DMatrix::from_fn(7, 7, |i, j| ((i * 3 + j * 5) % 11) as f64 - 5.0);
        let mut s = m.clone() + m.transpose();
        symmetrize(&mut s);
        let x = DVector::from_fn(7, |i, _| i as f64 * 0.25 - 1.0);
        assert!((sym_matvec(&s, &x) - &s * &x).norm() < 1e-12);
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DMatrix::from_element(1, 1, 3.0);
        let d = block_diag(&[&a, &b]);
        assert_eq!(d[(2, 2)], 3.0);
        assert_eq!(d[(0, 2)], 0.0);
        assert_eq!(d[(1, 0)], 1.0);
    }
}
