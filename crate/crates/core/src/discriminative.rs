//! Discriminative-clustering cost matrices.
//!
//! For centered features `Xc` and ridge `beta`, the square-loss classifier
//! can be minimized out in closed form, leaving the quadratic form
//! `y^T D y` with `D = I - Xc (Xc^T Xc + beta I)^{-1} Xc^T`. The kernel path
//! uses the equivalent `D = beta (Pi K Pi + beta I)^{-1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::instance::FeatureBlock;
use crate::linalg;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Linear,
    Kernel,
}

#[derive(Debug, Clone)]
pub struct DiscriminativeMatrix {
    pub d: DMatrix<f64>,
    pub beta: f64,
    pub source: Source,
}

/// Tolerance for kernel symmetry.
const SYM_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for a kernel.
const PSD_TOL: f64 = -1e-8;

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::param("beta", format!("{beta} must be > 0")))
    }
}

/// `Pi X` with `Pi = I - 11^T/n`: subtracts each column's mean.
pub fn center_features(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::param("features", "need at least one row"));
    }
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// `beta (Xc Xc^T + beta I_n)^{-1}`, the n × n form of the same matrix.
pub fn woodbury_form(xc: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    check_beta(beta)?;
    let n = xc.nrows();
    let gram = xc * xc.transpose() + DMatrix::identity(n, n) * beta;
    Ok(linalg::spd_inverse(&gram, "D (n x n Woodbury form)")? * beta)
}

/// Builds `D` from centered features. Uses the d × d inverse when `d <= n`
/// and the n × n Woodbury form otherwise.
pub fn build_d_linear(xc: &DMatrix<f64>, beta: f64) -> Result<DiscriminativeMatrix> {
    check_beta(beta)?;
    if xc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("centered features".into()));
    }
    let (n, d) = xc.shape();
    let mut dm = if d > n {
        woodbury_form(xc, beta)?
    } else {
        let inner = xc.transpose() * xc + DMatrix::identity(d, d) * beta;
        let inv = linalg::spd_inverse(&inner, "D (d x d ridge system)")?;
        DMatrix::identity(n, n) - xc * inv * xc.transpose()
    };
    linalg::symmetrize(&mut dm);
    Ok(DiscriminativeMatrix {
        d: dm,
        beta,
        source: Source::Linear,
    })
}

/// Builds `D = beta (Pi K Pi + beta I)^{-1}` from a kernel matrix.
pub fn build_d_kernel(k: &DMatrix<f64>, beta: f64) -> Result<DiscriminativeMatrix> {
    check_beta(beta)?;
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::Dimension {
            context: "kernel columns".into(),
            expected: n,
            actual: k.ncols(),
        });
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel".into()));
    }
    let asym = linalg::max_asymmetry(k);
    if asym > SYM_TOL {
        return Err(Error::NotSymmetric {
            name: "kernel".into(),
            asymmetry: asym,
        });
    }
    let min_eig = linalg::min_eigenvalue(k);
    if min_eig < PSD_TOL {
        return Err(Error::Indefinite {
            name: "kernel".into(),
            min_eigenvalue: min_eig,
        });
    }
    let kc = double_center(k);
    let mut dm = linalg::spd_inverse(&(kc + DMatrix::identity(n, n) * beta), "D (kernel path)")? * beta;
    linalg::symmetrize(&mut dm);
    Ok(DiscriminativeMatrix {
        d: dm,
        beta,
        source: Source::Kernel,
    })
}

/// `Pi K Pi`.
fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut out = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand);
    linalg::symmetrize(&mut out);
    out
}

/// Builds `D` for a feature block: raw features are centered first.
pub fn build_d(block: &FeatureBlock, beta: f64) -> Result<DiscriminativeMatrix> {
    match block {
        FeatureBlock::Raw(x) => build_d_linear(&center_features(x)?, beta),
        FeatureBlock::Kernel(k) => build_d_kernel(k, beta),
    }
}

const CHI2_EPS: f64 = 1e-12;

/// `0.5 * sum_t (a_t - b_t)^2 / (a_t + b_t + eps)`.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x - y;
            diff * diff / (x + y + CHI2_EPS)
        })
        .sum::<f64>()
}

/// Exponentiated chi-square kernel `exp(-chi2(a,b) / sigma)` with `sigma`
/// the mean pairwise distance over all ordered pairs `a != b` (1 when that
/// mean is 0). The diagonal is exactly 1.
pub fn chi2_kernel(features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chi2 features".into()));
    }
    if let Some(v) = features.iter().find(|v| **v < 0.0) {
        return Err(Error::param("features", format!("chi-square kernel needs nonnegative entries, found {v}")));
    }
    let n = features.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).iter().copied().collect()).collect();
    // Upper triangle, one row per task; each entry is computed once and mirrored.
    let upper: Vec<Vec<f64>> = par::map_range(n, |i| ((i + 1)..n).map(|j| chi2_distance(&rows[i], &rows[j])).collect());
    let pairs = n * n.saturating_sub(1) / 2;
    let total: f64 = upper.iter().flatten().sum();
    let mean = if pairs == 0 { 0.0 } else { total / pairs as f64 };
    let sigma = if mean > 0.0 { mean } else { 1.0 };
    let mut k = DMatrix::identity(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &dist) in row.iter().enumerate() {
            let j = i + 1 + off;
            let v = (-dist / sigma).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}
