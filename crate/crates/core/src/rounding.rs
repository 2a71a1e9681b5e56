//! Turns the relaxed `(y, z)` into one box and one binary mask per frame.

use nalgebra::DMatrix;

use crate::instance::ProblemInstance;
use crate::par;
use crate::spatial::{ncut_score, FrameLaplacian};

pub const DEFAULT_THRESHOLDS: usize = 30;

/// Per frame, the index of the largest `z` entry (lowest index on ties).
pub fn select_boxes(v: &[f64], instance: &ProblemInstance) -> Vec<usize> {
    let layout = instance.layout();
    (0..instance.frames.len())
        .map(|f| {
            let zs = layout.box_range(f, &instance.frames).map(|k| v[layout.n_sp_total + k]);
            let mut best = (0usize, f64::NEG_INFINITY);
            for (i, z) in zs.enumerate() {
                if z > best.1 {
                    best = (i, z);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMask {
    pub mask: Vec<bool>,
    /// Threshold on the max-normalized `y` that produced the mask; `None`
    /// for the all-zero branch.
    pub threshold: Option<f64>,
    /// Normalized-cut score of the chosen mask, when non-degenerate.
    pub ncut: Option<f64>,
}

/// Thresholds `k / (n + 1)` for `k = 1..=n`.
pub fn threshold_grid(n_thresholds: usize) -> Vec<f64> {
    (1..=n_thresholds).map(|k| k as f64 / (n_thresholds + 1) as f64).collect()
}

/// Normalizes `y` by its max, thresholds it on a uniform grid, and keeps the
/// candidate with the smallest normalized cut on `w` (larger threshold on
/// ties). Falls back to `y_hat >= 0.5` when every candidate is degenerate.
pub fn round_frame(y: &[f64], w: &DMatrix<f64>, n_thresholds: usize) -> FrameMask {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 1e-12) {
        return FrameMask {
            mask: vec![false; y.len()],
            threshold: None,
            ncut: None,
        };
    }
    let y_hat: Vec<f64> = y.iter().map(|v| v / max).collect();
    let mut best: Option<(f64, f64, Vec<bool>)> = None;
    for t in threshold_grid(n_thresholds.max(1)) {
        let mask: Vec<bool> = y_hat.iter().map(|&v| v >= t).collect();
        let Ok(Some(score)) = ncut_score(w, &mask) else { continue };
        let better = match &best {
            None => true,
            Some((bs, bt, _)) => score < *bs || (score == *bs && t > *bt),
        };
        if better {
            best = Some((score, t, mask));
        }
    }
    match best {
        Some((score, t, mask)) => FrameMask {
            mask,
            threshold: Some(t),
            ncut: Some(score),
        },
        None => FrameMask {
            mask: y_hat.iter().map(|&v| v >= 0.5).collect(),
            threshold: Some(0.5),
            ncut: None,
        },
    }
}

/// Rounds every frame's `y` block independently (concurrently when enabled).
pub fn round_segmentation(v: &[f64], instance: &ProblemInstance, laplacians: &[FrameLaplacian], n_thresholds: usize) -> Vec<FrameMask> {
    let layout = instance.layout();
    let frames: Vec<usize> = (0..instance.frames.len()).collect();
    par::map_slice(&frames, |&f| {
        let ys = &v[layout.sp_range(f, &instance.frames)];
        round_frame(ys, &laplacians[f].w, n_thresholds)
    })
}

/// Clears mask entries outside the selected box's superpixels.
pub fn restrict_to_boxes(masks: &mut [FrameMask], instance: &ProblemInstance, boxes: &[usize]) {
    for ((m, frame), &b) in masks.iter_mut().zip(&instance.frames).zip(boxes) {
        let mut inside = vec![false; frame.n_sp()];
        for &j in &frame.memberships[b] {
            inside[j] = true;
        }
        for (bit, keep) in m.mask.iter_mut().zip(inside) {
            *bit &= keep;
        }
    }
}

/// Foreground superpixel indices of a mask.
pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect()
}
