//! Exhaustive integer optimum, used as a test oracle.
//!
//! Feasibility is checked directly on the box-local indicators `x_i = P_i y`
//! rather than through the assembled constraint rows, and the objective is
//! evaluated term by term, so the oracle shares no code path with the
//! relaxed solver.

use nalgebra::DVector;

use super::ObjectiveMatrices;
use crate::error::{Error, Result};
use crate::instance::{Hyperparameters, ProblemInstance};
use crate::par;

pub const MAX_BRUTE_SUPERPIXELS: usize = 16;
pub const MAX_BRUTE_BOXES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Binary `(y; z)`.
    pub v: Vec<u8>,
    pub objective: f64,
    /// Number of feasible binary points visited.
    pub feasible_count: usize,
}

/// Integer feasibility of `(y, z)` for one frame, on local indices.
fn frame_feasible(memberships: &[Vec<usize>], n_sp: usize, y: &[u8], z: &[u8], gamma: f64, eta: f64) -> bool {
    if z.iter().map(|&b| b as usize).sum::<usize>() != 1 {
        return false;
    }
    let mut lhs = vec![0usize; n_sp];
    let mut rhs = vec![0usize; n_sp];
    let mut covered = vec![false; n_sp];
    for (i, set) in memberships.iter().enumerate() {
        let x: Vec<u8> = set.iter().map(|&j| y[j]).collect();
        let total: usize = x.iter().map(|&b| b as usize).sum();
        let size = set.len() as f64;
        let zi = z[i] as f64;
        if gamma * size * zi > total as f64 || total as f64 > eta * size * zi {
            return false;
        }
        for (r, &j) in set.iter().enumerate() {
            lhs[j] += x[r] as usize;
            rhs[j] += z[i] as usize;
            covered[j] = true;
        }
    }
    (0..n_sp).all(|j| lhs[j] <= rhs[j] && (covered[j] || y[j] == 0))
}

/// Enumerates every binary `(y, z)` with one box per frame and returns the
/// lowest objective; ties go to the lexicographically smallest `v`.
pub fn brute_force(instance: &ProblemInstance, m: &ObjectiveMatrices, hyper: &Hyperparameters) -> Result<BruteForceResult> {
    let layout = instance.layout();
    let (ns, nb) = (layout.n_sp_total, layout.n_box_total);
    if ns > MAX_BRUTE_SUPERPIXELS || nb > MAX_BRUTE_BOXES {
        return Err(Error::TooLarge(format!(
            "{ns} superpixels / {nb} boxes exceed the enumeration guard ({MAX_BRUTE_SUPERPIXELS} / {MAX_BRUTE_BOXES})"
        )));
    }
    let y_count: usize = if hyper.freeze_segmentation { 1 } else { 1 << ns };

    // One box per frame: mixed-radix enumeration of the choices.
    let mut z_choices: Vec<Vec<u8>> = vec![Vec::new()];
    for frame in &instance.frames {
        let mut next = Vec::new();
        for prefix in &z_choices {
            for i in 0..frame.m_box() {
                let mut z = prefix.clone();
                z.extend((0..frame.m_box()).map(|k| (k == i) as u8));
                next.push(z);
            }
        }
        z_choices = next;
    }

    let bits = |mask: usize| -> Vec<u8> { (0..ns).map(|j| ((mask >> (ns - 1 - j)) & 1) as u8).collect() };
    let z_energy: Vec<f64> = z_choices
        .iter()
        .map(|z| {
            let zf = DVector::from_iterator(nb, z.iter().map(|&b| b as f64));
            m.energy(hyper, &DVector::zeros(ns), &zf)
        })
        .collect();

    // Ties compare the full binary vectors, so the result does not depend on
    // enumeration order or thread scheduling.
    let best = par::map_range(y_count, |mask| {
        let y = bits(mask);
        let yf = DVector::from_iterator(ns, y.iter().map(|&b| b as f64));
        let y_energy = m.energy(hyper, &yf, &DVector::zeros(nb));
        let mut local: Option<(f64, Vec<u8>)> = None;
        let mut count = 0usize;
        for (z, &ze) in z_choices.iter().zip(&z_energy) {
            let ok = instance.frames.iter().enumerate().all(|(f, frame)| {
                let ys = &y[layout.sp_range(f, &instance.frames)];
                let zs = &z[layout.box_range(f, &instance.frames)];
                frame_feasible(&frame.memberships, frame.n_sp(), ys, zs, hyper.gamma, hyper.eta)
            });
            if !ok {
                continue;
            }
            count += 1;
            let e = y_energy + ze;
            let mut v = y.clone();
            v.extend_from_slice(z);
            let better = match &local {
                None => true,
                Some((be, bv)) => e < *be || (e == *be && v < *bv),
            };
            if better {
                local = Some((e, v));
            }
        }
        (local, count)
    });

    let mut feasible_count = 0;
    let mut winner: Option<(f64, Vec<u8>)> = None;
    for (local, count) in best {
        feasible_count += count;
        if let Some((e, v)) = local {
            let better = match &winner {
                None => true,
                Some((be, bv)) => e < *be || (e == *be && v < *bv),
            };
            if better {
                winner = Some((e, v));
            }
        }
    }
    let (objective, v) = winner.ok_or_else(|| Error::Infeasible("no binary point satisfies the constraints".into()))?;
    Ok(BruteForceResult {
        v,
        objective,
        feasible_count,
    })
}
