//! Per-frame superpixel similarity `W`, the normalized Laplacian
//! `L = I - Q^{-1/2} W Q^{-1/2}`, and the two-way normalized-cut score.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::instance::{Frame, Hyperparameters};
use crate::linalg;
use crate::par;

#[derive(Debug, Clone)]
pub struct FrameLaplacian {
    pub w: DMatrix<f64>,
    /// Diagonal of the degree matrix `Q`.
    pub degrees: Vec<f64>,
    pub l: DMatrix<f64>,
}

/// `W_ab = exp(-lambda_p |p_a - p_b|^2 - lambda_c |c_a - c_b|^2)` for
/// `a != b`, zero diagonal. With `knn = Some(k)` an edge survives if either
/// endpoint has the other among its `k` most similar neighbours.
pub fn build_w(
    positions: &DMatrix<f64>,
    colors: &DMatrix<f64>,
    lambda_p: f64,
    lambda_c: f64,
    knn: Option<usize>,
) -> Result<DMatrix<f64>> {
    let n = positions.nrows();
    if colors.nrows() != n {
        return Err(Error::Dimension {
            context: "W colours".into(),
            expected: n,
            actual: colors.nrows(),
        });
    }
    if positions.iter().chain(colors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("W inputs".into()));
    }
    for (name, v) in [("lambda_p", lambda_p), ("lambda_c", lambda_c)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param(name, "must be finite and >= 0"));
        }
    }
    let sq = |m: &DMatrix<f64>, a: usize, b: usize| -> f64 {
        (0..m.ncols()).map(|t| (m[(a, t)] - m[(b, t)]).powi(2)).sum()
    };
    let rows: Vec<Vec<f64>> = par::map_range(n, |a| {
        (0..n)
            .map(|b| {
                if a == b {
                    0.0
                } else {
                    (-lambda_p * sq(positions, a, b) - lambda_c * sq(colors, a, b)).exp()
                }
            })
            .collect()
    });
    let mut w = DMatrix::from_fn(n, n, |a, b| rows[a][b]);
    // Entry (a,b) and (b,a) use the same squared distances, so w is
    // symmetric already; enforce it bitwise.
    linalg::symmetrize(&mut w);
    if let Some(k) = knn {
        sparsify_knn(&mut w, k);
    }
    Ok(w)
}

fn sparsify_knn(w: &mut DMatrix<f64>, k: usize) {
    let n = w.nrows();
    let mut keep = vec![vec![false; n]; n];
    for a in 0..n {
        let mut nbrs: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        nbrs.sort_by(|&x, &y| w[(a, y)].total_cmp(&w[(a, x)]).then(x.cmp(&y)));
        for &b in nbrs.iter().take(k) {
            keep[a][b] = true;
            keep[b][a] = true;
        }
    }
    for a in 0..n {
        for b in 0..n {
            if !keep[a][b] {
                w[(a, b)] = 0.0;
            }
        }
    }
}

/// Normalized Laplacian. Isolated nodes (zero degree) get `Q^{-1/2} = 0`,
/// hence `L_ii = 1`.
pub fn build_l(w: DMatrix<f64>) -> FrameLaplacian {
    let n = w.nrows();
    let degrees: Vec<f64> = (0..n).map(|i| w.row(i).iter().sum()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut l = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
    });
    linalg::symmetrize(&mut l);
    FrameLaplacian { w, degrees, l }
}

/// Builds every frame's Laplacian (concurrently when enabled).
pub fn frame_laplacians(frames: &[Frame], hyper: &Hyperparameters) -> Result<Vec<FrameLaplacian>> {
    par::map_slice(frames, |f| {
        build_w(&f.sp_positions, &f.sp_colors, hyper.lambda_p, hyper.lambda_c, hyper.knn).map(build_l)
    })
    .into_iter()
    .collect()
}

/// Block-diagonal assembly of per-frame Laplacians over the global index.
pub fn global_laplacian(laps: &[FrameLaplacian]) -> DMatrix<f64> {
    let blocks: Vec<&DMatrix<f64>> = laps.iter().map(|l| &l.l).collect();
    linalg::block_diag(&blocks)
}

/// `cut/assoc(A) + cut/assoc(B)` for the split given by `y`. `None` when
/// either side is empty or has zero association.
pub fn ncut_score(w: &DMatrix<f64>, y: &[bool]) -> Result<Option<f64>> {
    let n = w.nrows();
    if y.len() != n {
        return Err(Error::Dimension {
            context: "ncut labels".into(),
            expected: n,
            actual: y.len(),
        });
    }
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for a in 0..n {
        let row: f64 = w.row(a).iter().sum();
        if y[a] {
            assoc_a += row;
            for b in 0..n {
                if !y[b] {
                    cut += w[(a, b)];
                }
            }
        } else {
            assoc_b += row;
        }
    }
    let (na, nb) = (y.iter().filter(|&&v| v).count(), y.iter().filter(|&&v| !v).count());
    if na == 0 || nb == 0 || assoc_a <= 0.0 || assoc_b <= 0.0 {
        return Ok(None);
    }
    Ok(Some(cut / assoc_a + cut / assoc_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn w_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.2, 0.3, 0.2, 0.3]);
        let c = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.9, 0.1, 0.5, 0.9]);
        let w = build_w(&p, &c, 0.001, 0.05, None).unwrap();
        assert_eq!(w[(0, 1)], 1.0);
        assert_eq!(w[(0, 0)], 0.0);

        let p = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, 0.9]);
        let c = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3, 0.2, 0.1]);
        let w = build_w(&p, &c, 0.0, 0.0, None).unwrap();
        assert!(w.iter().enumerate().all(|(k, &v)| if k % 4 == 0 { v == 0.0 } else { v == 1.0 }));

        let p = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let c = DMatrix::from_row_slice(2, 3, &[0.4; 6]);
        let w = build_w(&p, &c, 0.001, 0.05, None).unwrap();
        assert_eq!(w[(0, 1)], (-0.001f64).exp());
    }

    #[test]
    fn l_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let lap = build_l(w);
        assert_eq!(lap.l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let eig = linalg::eigenvalues(&lap.l);
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(e[0].abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12);

        let lap = build_l(DMatrix::zeros(3, 3));
        assert_eq!(lap.l, DMatrix::identity(3, 3));
    }

    #[test]
    fn random_w_gives_psd_laplacian_with_known_null_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10;
        let p = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0));
        let c = DMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0));
        let lap = build_l(build_w(&p, &c, 3.0, 2.0, None).unwrap());
        for _ in 0..100 {
            let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            assert!(y.dot(&(&lap.l * &y)) >= -1e-9);
        }
        let root = DVector::from_iterator(n, lap.degrees.iter().map(|d| d.sqrt()));
        assert!((&lap.l * root).amax() < 1e-6);
        assert!(linalg::max_eigenvalue(&lap.l) <= 2.0 + 1e-9);
    }

    #[test]
    fn knn_keeps_symmetric_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = DMatrix::from_fn(8, 2, |_, _| rng.random_range(0.0..1.0));
        let c = DMatrix::from_fn(8, 3, |_, _| rng.random_range(0.0..1.0));
        let w = build_w(&p, &c, 5.0, 1.0, Some(2)).unwrap();
        assert_eq!(w, w.transpose());
        for a in 0..8 {
            let nz = w.row(a).iter().filter(|&&v| v > 0.0).count();
            assert!(nz >= 2);
        }
    }

    #[test]
    fn ncut_examples() {
        let w = DMatrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0, 0.0,
        ]);
        assert_eq!(ncut_score(&w, &[true, true, false, false]).unwrap(), Some(0.0));
        assert_eq!(ncut_score(&w, &[true; 4]).unwrap(), None);

        let chain = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let s = ncut_score(&chain, &[true, true, false]).unwrap().unwrap();
        assert!((s - 4.0 / 3.0).abs() < 1e-15);
        // complement invariance
        assert_eq!(ncut_score(&chain, &[false, false, true]).unwrap().unwrap(), s);

        assert!(ncut_score(&chain, &[true]).is_err());
    }
}
