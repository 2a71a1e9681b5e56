//! Operator-splitting solver (ADMM in the OSQP form) for
//! `min 1/2 x^T P x + q^T x  s.t.  l <= A x <= u`, with `P = 2Q`.
//!
//! General rows, equality rows and the variable box are stacked into one
//! `A`. Rows and columns are Ruiz-equilibrated before iterating; step size
//! `rho` adapts to the primal/dual residual ratio. Candidate iterates are
//! refined by the active-set polish in [`super::active_set`] and accepted
//! only when the KKT conditions hold in original units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::active_set;
use super::{kkt_residuals, Diagnostics, QuadraticProgram, Solution, Status, TraceEntry};
use crate::constraints::CsrMatrix;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Max equality residual / inequality violation at optimality.
    pub tol_feas: f64,
    /// Max stationarity residual, scaled by `1 + |c|_inf`.
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// A residual trace entry is kept every this many iterations.
    pub trace_every: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: 1e-6,
            tol_kkt: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 15,
            adaptive_rho: true,
            polish: true,
            check_every: 10,
            trace_every: 100,
        }
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const INFEASIBILITY_TOL: f64 = 1e-7;

/// Equilibrated problem data. Original quantities are recovered as
/// `x = D x_s`, `y = E y_s / cost`, `Ax = E^{-1} (A x)_s`.
pub(super) struct ScaledProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub cost: f64,
    pub n_ineq: usize,
    pub n_eq: usize,
}

impl ScaledProblem {
    fn new(qp: &QuadraticProgram, iters: usize) -> Self {
        let cs = &qp.constraints;
        let n = qp.n_vars();
        let mut a = CsrMatrix::new(n);
        let mut l = Vec::new();
        let mut u = Vec::new();
        for r in 0..cs.a_ineq.nrows {
            a.push_row(&cs.a_ineq.row(r).collect::<Vec<_>>());
            l.push(f64::NEG_INFINITY);
            u.push(cs.b_ineq[r]);
        }
        for r in 0..cs.a_eq.nrows {
            a.push_row(&cs.a_eq.row(r).collect::<Vec<_>>());
            l.push(cs.b_eq[r]);
            u.push(cs.b_eq[r]);
        }
        for j in 0..n {
            a.push_row(&[(j, 1.0)]);
            l.push(cs.lower[j]);
            u.push(cs.upper[j]);
        }
        let m = a.nrows;
        let mut p = &qp.q * 2.0;
        let mut q = qp.c.clone();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut cost = 1.0;
        let limit = |norm: f64| {
            if norm < MIN_SCALING {
                1.0
            } else {
                norm.min(MAX_SCALING)
            }
        };
        for _ in 0..iters {
            let mut col = vec![0.0f64; n];
            for j in 0..n {
                col[j] = p.column(j).amax();
            }
            let mut row = vec![0.0f64; m];
            for r in 0..m {
                for (j, v) in a.row(r) {
                    col[j] = col[j].max(v.abs());
                    row[r] = row[r].max(v.abs());
                }
            }
            let dj: Vec<f64> = col.iter().map(|&c| 1.0 / limit(c).sqrt()).collect();
            let er: Vec<f64> = row.iter().map(|&c| 1.0 / limit(c).sqrt()).collect();
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dj[i] * dj[j];
                }
                q[j] *= dj[j];
                d[j] *= dj[j];
            }
            for r in 0..m {
                for k in a.indptr[r]..a.indptr[r + 1] {
                    a.data[k] *= er[r] * dj[a.indices[k]];
                }
                e[r] *= er[r];
            }
            let mean_col = if n == 0 { 0.0 } else { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 };
            let c = 1.0 / limit(mean_col.max(q.amax()));
            p *= c;
            q *= c;
            cost *= c;
        }
        let l = l.iter().zip(&e).map(|(v, s)| v * s).collect();
        let u = u.iter().zip(&e).map(|(v, s)| v * s).collect();
        ScaledProblem {
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            cost,
            n_ineq: cs.a_ineq.nrows,
            n_eq: cs.a_eq.nrows,
        }
    }

    /// Original-unit primal point (clipped into the variable box) and
    /// general-row multipliers.
    pub fn unscale(&self, qp: &QuadraticProgram, x: &DVector<f64>, y: &[f64]) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let cs = &qp.constraints;
        let v = DVector::from_fn(x.len(), |j, _| (x[j] * self.d[j]).clamp(cs.lower[j], cs.upper[j]));
        let y_ineq = DVector::from_fn(self.n_ineq, |r, _| (y[r] * self.e[r] / self.cost).max(0.0));
        let y_eq = DVector::from_fn(self.n_eq, |k, _| {
            let r = self.n_ineq + k;
            y[r] * self.e[r] / self.cost
        });
        (v, y_ineq, y_eq)
    }
}

struct Candidate {
    v: DVector<f64>,
    y_ineq: DVector<f64>,
    y_eq: DVector<f64>,
    primal: f64,
    dual: f64,
    complementarity: f64,
}

impl Candidate {
    fn passes(&self, s: &SolverSettings, dual_scale: f64) -> bool {
        self.primal <= s.tol_feas && self.dual <= s.tol_kkt * dual_scale
    }

    /// Ordering used to keep the best iterate when no candidate passes.
    fn merit(&self, s: &SolverSettings, dual_scale: f64) -> f64 {
        (self.primal / s.tol_feas).max(self.dual / (s.tol_kkt * dual_scale))
    }
}

fn evaluate(qp: &QuadraticProgram, sp: &ScaledProblem, s: &SolverSettings, x: &DVector<f64>, y: &[f64]) -> Candidate {
    let (v, y_ineq, y_eq) = sp.unscale(qp, x, y);
    let k = kkt_residuals(qp, &v, &y_ineq, &y_eq, s.tol_feas);
    Candidate {
        v,
        y_ineq,
        y_eq,
        primal: k.primal,
        dual: k.dual,
        complementarity: k.complementarity,
    }
}

fn kkt_matrix(sp: &ScaledProblem, sigma: f64, rho: &[f64]) -> DMatrix<f64> {
    let n = sp.p.nrows();
    let mut k = sp.p.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    for r in 0..sp.a.nrows {
        let terms: Vec<(usize, f64)> = sp.a.row(r).collect();
        for &(i, vi) in &terms {
            for &(j, vj) in &terms {
                k[(i, j)] += rho[r] * vi * vj;
            }
        }
    }
    k
}

fn row_rho(sp: &ScaledProblem, rho: f64) -> Vec<f64> {
    (0..sp.a.nrows)
        .map(|r| {
            let (l, u) = (sp.l[r], sp.u[r]);
            if l == f64::NEG_INFINITY && u == f64::INFINITY {
                RHO_MIN
            } else if l == u {
                (rho * RHO_EQ_FACTOR).min(RHO_MAX)
            } else {
                rho
            }
        })
        .collect()
}

/// Solves the relaxed QP. Deterministic for fixed inputs and settings.
pub fn solve(qp: &QuadraticProgram, settings: &SolverSettings) -> Solution {
    let n = qp.n_vars();
    let sp = ScaledProblem::new(qp, settings.scaling_iters);
    let m = sp.a.nrows;
    let dual_scale = 1.0 + qp.c.amax();

    let mut rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
    let mut rho_vec = row_rho(&sp, rho);
    let mut chol = match kkt_matrix(&sp, settings.sigma, &rho_vec).cholesky() {
        Some(c) => c,
        None => return failure(qp, Status::NumericalFailure, 0, Vec::new()),
    };

    let mut x = DVector::zeros(n);
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut y_prev = y.clone();
    let mut trace = Vec::new();
    let mut rho_updates = 0;
    let mut polish_attempts = 0;
    let mut next_polish_level = 1e-3;
    let mut best: Option<Candidate> = None;
    let alpha = settings.alpha;
    let check_every = settings.check_every.max(1);

    let finish = |c: Candidate, status: Status, iterations: usize, polished: bool, trace: Vec<TraceEntry>, rho_updates: usize, polish_attempts: usize| {
        Solution {
            objective: qp.objective(&c.v),
            primal_residual: c.primal,
            dual_residual: c.dual,
            iterations,
            status,
            diagnostics: Diagnostics {
                trace,
                rho_updates,
                polished,
                polish_attempts,
                complementarity: c.complementarity,
            },
            v: c.v,
            y_ineq: c.y_ineq,
            y_eq: c.y_eq,
        }
    };

    for iter in 1..=settings.max_iter {
        y_prev.copy_from_slice(&y);
        let w: Vec<f64> = (0..m).map(|r| rho_vec[r] * z[r] - y[r]).collect();
        let rhs = &x * settings.sigma - &sp.q + DVector::from_vec(sp.a.tmatvec(&w));
        let x_tilde = chol.solve(&rhs);
        let z_tilde = sp.a.matvec(x_tilde.as_slice());
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        for r in 0..m {
            let z_relax = alpha * z_tilde[r] + (1.0 - alpha) * z[r];
            let z_new = (z_relax + y[r] / rho_vec[r]).clamp(sp.l[r], sp.u[r]);
            y[r] += rho_vec[r] * (z_relax - z_new);
            z[r] = z_new;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return match best {
                Some(c) => finish(c, Status::NumericalFailure, iter, false, trace, rho_updates, polish_attempts),
                None => failure(qp, Status::NumericalFailure, iter, trace),
            };
        }

        if iter % check_every != 0 && iter != settings.max_iter {
            continue;
        }

        // Scaled residuals drive rho adaptation; original-unit residuals drive
        // the trace and termination.
        let ax = sp.a.matvec(x.as_slice());
        let px = linalg::sym_matvec(&sp.p, &x);
        let aty = DVector::from_vec(sp.a.tmatvec(&y));
        let prim_s = (0..m).map(|r| (ax[r] - z[r]).abs()).fold(0.0, f64::max);
        let dual_vec = &px + &sp.q + &aty;
        let dual_s = dual_vec.amax();
        let prim_u = (0..m).map(|r| (ax[r] - z[r]).abs() / sp.e[r]).fold(0.0, f64::max);
        let dual_u = (0..n).map(|j| dual_vec[j].abs() / sp.d[j]).fold(0.0, f64::max) / sp.cost;

        if settings.trace_every > 0 && (iter % settings.trace_every == 0 || iter == check_every) {
            trace.push(TraceEntry {
                iteration: iter,
                primal_residual: prim_u,
                dual_residual: dual_u,
                rho,
            });
        }

        let cand = evaluate(qp, &sp, settings, &x, &y);
        if cand.passes(settings, dual_scale) {
            // A cheap polish usually tightens residuals by orders of magnitude.
            if settings.polish {
                polish_attempts += 1;
                if let Some(p) = try_polish(qp, &sp, settings, &x, &y, &rho_vec) {
                    if p.passes(settings, dual_scale) && p.merit(settings, dual_scale) <= cand.merit(settings, dual_scale) {
                        return finish(p, Status::Optimal, iter, true, trace, rho_updates, polish_attempts);
                    }
                }
            }
            return finish(cand, Status::Optimal, iter, false, trace, rho_updates, polish_attempts);
        }
        let level = (prim_u / settings.tol_feas.max(1e-300)).max(dual_u / (settings.tol_kkt * dual_scale)) * settings.tol_feas;
        if settings.polish && level <= next_polish_level {
            next_polish_level = level * 0.1;
            polish_attempts += 1;
            if let Some(p) = try_polish(qp, &sp, settings, &x, &y, &rho_vec) {
                if p.passes(settings, dual_scale) {
                    return finish(p, Status::Optimal, iter, true, trace, rho_updates, polish_attempts);
                }
            }
        }
        if best.as_ref().is_none_or(|b| cand.merit(settings, dual_scale) < b.merit(settings, dual_scale)) {
            best = Some(cand);
        }

        if infeasibility_certificate(&sp, &y, &y_prev) {
            let c = best.take().unwrap();
            return finish(c, Status::Infeasible, iter, false, trace, rho_updates, polish_attempts);
        }

        if settings.adaptive_rho && iter % (5 * check_every) == 0 {
            let z_norm = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let ax_norm = ax.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let prim_norm = ax_norm.max(z_norm).max(1e-30);
            let dual_norm = px.amax().max(aty.amax()).max(sp.q.amax()).max(1e-30);
            let ratio = ((prim_s / prim_norm) / (dual_s / dual_norm).max(1e-30)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho != rho {
                    rho = new_rho;
                    rho_vec = row_rho(&sp, rho);
                    match kkt_matrix(&sp, settings.sigma, &rho_vec).cholesky() {
                        Some(c) => chol = c,
                        None => {
                            let c = best.take().unwrap();
                            return finish(c, Status::NumericalFailure, iter, false, trace, rho_updates, polish_attempts);
                        }
                    }
                    rho_updates += 1;
                }
            }
        }
    }

    // Out of iterations: one last active-set attempt from the final iterate.
    if settings.polish {
        polish_attempts += 1;
        if let Some(p) = try_polish(qp, &sp, settings, &x, &y, &rho_vec) {
            if p.passes(settings, dual_scale) {
                return finish(p, Status::Optimal, settings.max_iter, true, trace, rho_updates, polish_attempts);
            }
            if best.as_ref().is_none_or(|b| p.merit(settings, dual_scale) < b.merit(settings, dual_scale)) {
                best = Some(p);
            }
        }
    }
    match best {
        Some(c) => finish(c, Status::MaxIter, settings.max_iter, false, trace, rho_updates, polish_attempts),
        None => failure(qp, Status::MaxIter, settings.max_iter, trace),
    }
}

fn try_polish(
    qp: &QuadraticProgram,
    sp: &ScaledProblem,
    settings: &SolverSettings,
    x: &DVector<f64>,
    y: &[f64],
    rho: &[f64],
) -> Option<Candidate> {
    let (xp, yp) = active_set::refine(sp, x, y, rho)?;
    Some(evaluate(qp, sp, settings, &xp, &yp))
}

/// Primal infeasibility test on the latest dual increment `dy`:
/// `A^T dy ~ 0` while `u^T dy+ + l^T dy- < 0`.
fn infeasibility_certificate(sp: &ScaledProblem, y: &[f64], y_prev: &[f64]) -> bool {
    let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let norm = dy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if norm < 1e-12 {
        return false;
    }
    let at = sp.a.tmatvec(&dy);
    let at_norm = at.iter().zip(&sp.d).fold(0.0f64, |a, (v, d)| a.max((v / d).abs()));
    if at_norm > INFEASIBILITY_TOL * norm {
        return false;
    }
    let mut support = 0.0;
    for r in 0..dy.len() {
        if dy[r] > 0.0 {
            if sp.u[r] == f64::INFINITY {
                return false;
            }
            support += sp.u[r] * dy[r];
        } else if dy[r] < 0.0 {
            if sp.l[r] == f64::NEG_INFINITY {
                return false;
            }
            support += sp.l[r] * dy[r];
        }
    }
    support < -INFEASIBILITY_TOL * norm
}

fn failure(qp: &QuadraticProgram, status: Status, iterations: usize, trace: Vec<TraceEntry>) -> Solution {
    let n = qp.n_vars();
    let v = DVector::zeros(n);
    Solution {
        objective: qp.objective(&v),
        v,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iterations,
        status,
        y_ineq: DVector::zeros(qp.constraints.a_ineq.nrows),
        y_eq: DVector::zeros(qp.constraints.a_eq.nrows),
        diagnostics: Diagnostics {
            trace,
            rho_updates: 0,
            polished: false,
            polish_attempts: 0,
            complementarity: f64::NAN,
        },
    }
}
