//! Histogram-matching foreground term.
//!
//! For frames `k, l` with histogram matrices `H^k` (bins × superpixels), the
//! foreground histograms are `H^k y^k`; the term penalizes
//! `|H^k y^k - H^l y^l|^2` summed over frame pairs, written as `y^T F y`
//! over the global superpixel index.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::instance::{FPairs, FScale, HistogramBlock};
use crate::par;

#[derive(Debug, Clone)]
pub struct ForegroundMatrix {
    pub f: DMatrix<f64>,
    pub scale_mode: FScale,
    pub pairs: FPairs,
}

/// Unordered frame pairs `(k, l)`, `k < l`, matched by the term.
pub fn frame_pairs(k_frames: usize, pairs: FPairs) -> Vec<(usize, usize)> {
    match pairs {
        FPairs::All => (0..k_frames).flat_map(|k| ((k + 1)..k_frames).map(move |l| (k, l))).collect(),
        FPairs::Consecutive => (1..k_frames).map(|l| (l - 1, l)).collect(),
    }
}

pub fn build_f(hist: &HistogramBlock, scale_mode: FScale, pairs: FPairs) -> Result<ForegroundMatrix> {
    let k_frames = hist.per_frame.len();
    if k_frames == 0 {
        return Err(Error::param("histograms", "need at least one frame"));
    }
    if let Some(h) = hist.per_frame.iter().find(|h| h.nrows() != hist.d_bins) {
        return Err(Error::Dimension {
            context: "histogram bins".into(),
            expected: hist.d_bins,
            actual: h.nrows(),
        });
    }
    let c = match scale_mode {
        FScale::None => 1.0,
        FScale::Pairs => 1.0 / k_frames as f64,
    };
    let sizes: Vec<usize> = hist.per_frame.iter().map(|h| h.ncols()).collect();
    let mut offsets = Vec::with_capacity(k_frames);
    let mut n = 0;
    for s in &sizes {
        offsets.push(n);
        n += s;
    }
    let pair_list = frame_pairs(k_frames, pairs);
    let mut degree = vec![0usize; k_frames];
    for &(k, l) in &pair_list {
        degree[k] += 1;
        degree[l] += 1;
    }

    // Diagonal blocks, then off-diagonal blocks; each Gram block is an
    // independent product.
    let diag: Vec<DMatrix<f64>> = par::map_range(k_frames, |k| {
        let h = &hist.per_frame[k];
        h.transpose() * h * (c * degree[k] as f64)
    });
    let off: Vec<DMatrix<f64>> = par::map_slice(&pair_list, |&(k, l)| {
        hist.per_frame[k].transpose() * &hist.per_frame[l] * (-c)
    });

    let mut f = DMatrix::zeros(n, n);
    for (k, block) in diag.iter().enumerate() {
        f.view_mut((offsets[k], offsets[k]), (sizes[k], sizes[k])).copy_from(block);
    }
    for (&(k, l), block) in pair_list.iter().zip(&off) {
        f.view_mut((offsets[k], offsets[l]), (sizes[k], sizes[l])).copy_from(block);
        f.view_mut((offsets[l], offsets[k]), (sizes[l], sizes[k])).copy_from(&block.transpose());
    }
    crate::linalg::symmetrize(&mut f);
    Ok(ForegroundMatrix {
        f,
        scale_mode,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hist(rng: &mut ChaCha8Rng, sizes: &[usize], bins: usize) -> HistogramBlock {
        HistogramBlock {
            d_bins: bins,
            per_frame: sizes
                .iter()
                .map(|&n| DMatrix::from_fn(bins, n, |_, _| rng.random_range(0..6) as f64))
                .collect(),
        }
    }

    fn random_binary(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
    }

    #[test]
    fn two_frames_match_direct_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hist = random_hist(&mut rng, &[4, 6], 8);
        let fm = build_f(&hist, FScale::None, FPairs::All).unwrap();
        for _ in 0..50 {
            let y = random_binary(&mut rng, 10);
            let h1 = &hist.per_frame[0] * y.rows(0, 4);
            let h2 = &hist.per_frame[1] * y.rows(4, 6);
            let direct = (h1 - h2).norm_squared();
            assert!((linalg::quad_form(&fm.f, &y) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_frames_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = random_hist(&mut rng, &[5], 6).per_frame.remove(0);
        let hist = HistogramBlock { d_bins: 6, per_frame: vec![one.clone(), one] };
        let fm = build_f(&hist, FScale::Pairs, FPairs::All).unwrap();
        let half = random_binary(&mut rng, 5);
        let mut y = DVector::zeros(10);
        y.rows_mut(0, 5).copy_from(&half);
        y.rows_mut(5, 5).copy_from(&half);
        assert!(linalg::quad_form(&fm.f, &y).abs() < 1e-9);
    }

    #[test]
    fn single_frame_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hist = random_hist(&mut rng, &[7], 5);
        let fm = build_f(&hist, FScale::Pairs, FPairs::All).unwrap();
        assert_eq!(fm.f, DMatrix::zeros(7, 7));
    }

    #[test]
    fn pair_sum_identity_and_scaling() {
        // sum_{k<l} |a_k - a_l|^2 = K sum_k |a_k - mean|^2
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sizes = [3, 4, 2, 5];
        let hist = random_hist(&mut rng, &sizes, 7);
        let none = build_f(&hist, FScale::None, FPairs::All).unwrap();
        let pairs = build_f(&hist, FScale::Pairs, FPairs::All).unwrap();
        for _ in 0..20 {
            let y = random_binary(&mut rng, 14);
            let mut off = 0;
            let a: Vec<DVector<f64>> = sizes
                .iter()
                .zip(&hist.per_frame)
                .map(|(&n, h)| {
                    let v = h * y.rows(off, n);
                    off += n;
                    v
                })
                .collect();
            let mean = a.iter().fold(DVector::zeros(7), |acc, v| acc + v) / 4.0;
            let spread: f64 = a.iter().map(|v| (v - &mean).norm_squared()).sum();
            let q = linalg::quad_form(&none.f, &y);
            assert!((q - 4.0 * spread).abs() < 1e-8 * (1.0 + q));
            assert!((linalg::quad_form(&pairs.f, &y) - q / 4.0).abs() < 1e-8 * (1.0 + q));
        }
        assert!(linalg::min_eigenvalue(&none.f) >= -1e-8 * linalg::max_eigenvalue(&none.f).max(1.0));
    }

    #[test]
    fn consecutive_pairs_only_couple_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hist = random_hist(&mut rng, &[2, 2, 2], 4);
        let fm = build_f(&hist, FScale::None, FPairs::Consecutive).unwrap();
        assert!(fm.f.view((0, 4), (2, 2)).iter().all(|&v| v == 0.0));
        assert_eq!(frame_pairs(3, FPairs::Consecutive), vec![(0, 1), (1, 2)]);
        assert_eq!(frame_pairs(3, FPairs::All), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn bin_mismatch_is_rejected() {
        let hist = HistogramBlock {
            d_bins: 4,
            per_frame: vec![DMatrix::zeros(4, 2), DMatrix::zeros(3, 2)],
        };
        assert!(build_f(&hist, FScale::None, FPairs::All).is_err());
    }
}
