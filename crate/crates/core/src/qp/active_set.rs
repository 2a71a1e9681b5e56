//! Direct active-set refinement on the equilibrated problem.
//!
//! Starting from an ADMM iterate, guesses which rows sit at a bound, solves
//! the equality-constrained KKT system for that guess, and updates the guess
//! with the primal-dual active-set rule until it stops changing.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::admm::ScaledProblem;

const DELTA: f64 = 1e-9;
const REFINE_STEPS: usize = 12;
const MAX_SWEEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Side {
    Lower,
    Upper,
}

/// Row `r` is held at `side` of its interval.
type ActiveSet = Vec<Option<Side>>;

fn classify(sp: &ScaledProblem, ax: &[f64], y: &[f64], weight: &[f64]) -> ActiveSet {
    (0..sp.a.nrows)
        .map(|r| {
            let (l, u) = (sp.l[r], sp.u[r]);
            if l == u {
                return Some(Side::Upper);
            }
            if u.is_finite() && y[r] + weight[r] * (ax[r] - u) > 0.0 {
                Some(Side::Upper)
            } else if l.is_finite() && y[r] + weight[r] * (ax[r] - l) < 0.0 {
                Some(Side::Lower)
            } else {
                None
            }
        })
        .collect()
}

/// Solves `[P A_W^T; A_W 0] [x; y_W] = [-q; b_W]` with a `DELTA`
/// quasi-definite shift and iterative refinement against the unshifted
/// matrix.
fn solve_kkt(sp: &ScaledProblem, active: &ActiveSet) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = sp.p.nrows();
    let rows: Vec<usize> = (0..sp.a.nrows).filter(|&r| active[r].is_some()).collect();
    let k = rows.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&sp.p);
    let mut rhs = DVector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -sp.q[j];
    }
    for (slot, &r) in rows.iter().enumerate() {
        for (j, v) in sp.a.row(r) {
            kkt[(n + slot, j)] += v;
            kkt[(j, n + slot)] += v;
        }
        rhs[n + slot] = match active[r] {
            Some(Side::Lower) => sp.l[r],
            _ => sp.u[r],
        };
    }
    let mut shifted = kkt.clone();
    for i in 0..n {
        shifted[(i, i)] += DELTA;
    }
    for i in n..n + k {
        shifted[(i, i)] -= DELTA;
    }
    let lu = shifted.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..REFINE_STEPS {
        let res = &rhs - &kkt * &sol;
        if res.amax() < 1e-14 * (1.0 + rhs.amax()) {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = vec![0.0; sp.a.nrows];
    for (slot, &r) in rows.iter().enumerate() {
        y[r] = sol[n + slot];
    }
    Some((x, y))
}

/// Returns the last KKT solution reached; the caller judges it.
pub(super) fn refine(sp: &ScaledProblem, x: &DVector<f64>, y: &[f64], rho: &[f64]) -> Option<(DVector<f64>, Vec<f64>)> {
    let ax = sp.a.matvec(x.as_slice());
    let mut active = classify(sp, &ax, y, rho);
    let mut seen: HashSet<ActiveSet> = HashSet::new();
    let unit = vec![1.0; sp.a.nrows];
    let mut last = None;
    for _ in 0..MAX_SWEEPS {
        if !seen.insert(active.clone()) {
            break;
        }
        let (xs, ys) = solve_kkt(sp, &active)?;
        let ax = sp.a.matvec(xs.as_slice());
        let next = classify(sp, &ax, &ys, &unit);
        let done = next == active;
        last = Some((xs, ys));
        if done {
            break;
        }
        active = next;
    }
    last
}
