//! Relaxed convex QP over `v = (y; z)`:
//!
//! ```text
//! minimize   v^T Q v + c^T v
//! subject to A_ineq v <= b_ineq,  A_eq v = b_eq,  lower <= v <= upper
//! ```
//!
//! with `Q = blockdiag(D_s + kappa F + alpha L, lambda D_b)` and
//! `c = (mu s_s; lambda nu s_b)`.

mod active_set;
mod admm;
mod brute;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::constraints::{build_constraints, ConstraintSet};
use crate::discriminative::build_d;
use crate::error::{Error, Result};
use crate::foreground::build_f;
use crate::instance::{Hyperparameters, ProblemInstance};
use crate::linalg;
use crate::spatial::{frame_laplacians, global_laplacian, FrameLaplacian};

pub use admm::{solve, SolverSettings};
pub use brute::{brute_force, BruteForceResult, MAX_BRUTE_BOXES, MAX_BRUTE_SUPERPIXELS};

/// Default diagonal lift added to `Q`.
pub const RIDGE_EPS: f64 = 1e-9;
/// Most negative eigenvalue tolerated in `Q` before the lift.
pub const PSD_TOL: f64 = -1e-8;

/// All objective ingredients, over the global indices.
#[derive(Debug, Clone)]
pub struct ObjectiveMatrices {
    pub d_s: DMatrix<f64>,
    pub d_b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub laplacians: Vec<FrameLaplacian>,
    pub l_global: DMatrix<f64>,
    pub s_s: DVector<f64>,
    pub s_b: DVector<f64>,
}

impl ObjectiveMatrices {
    pub fn build(instance: &ProblemInstance) -> Result<Self> {
        let h = &instance.hyper;
        let d_s = build_d(&instance.sp_features, h.beta_s)?.d;
        let d_b = build_d(&instance.box_features, h.beta_b)?.d;
        let f = build_f(&instance.histograms, h.f_scale, h.f_pairs)?.f;
        let laplacians = frame_laplacians(&instance.frames, h)?;
        let l_global = global_laplacian(&laplacians);
        Ok(ObjectiveMatrices {
            d_s,
            d_b,
            f,
            laplacians,
            l_global,
            s_s: DVector::from_vec(instance.sp_saliency_cost()),
            s_b: DVector::from_vec(instance.box_saliency_cost()),
        })
    }

    /// The weighted objective evaluated term by term (no ridge).
    pub fn energy(&self, hyper: &Hyperparameters, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let seg = hyper.seg_disc_weight * linalg::quad_form(&self.d_s, y)
            + hyper.kappa * linalg::quad_form(&self.f, y)
            + hyper.alpha * linalg::quad_form(&self.l_global, y)
            + hyper.mu * y.dot(&self.s_s);
        let loc = hyper.box_disc_weight * linalg::quad_form(&self.d_b, z) + hyper.nu * z.dot(&self.s_b);
        seg + hyper.lambda * loc
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub constraints: ConstraintSet,
    pub ridge_eps: f64,
}

impl QuadraticProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    /// `v^T Q v + c^T v`.
    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.q, v) + self.c.dot(v)
    }
}

/// Assembles `Q` and `c` and the constraint system. `freeze_segmentation`
/// pins the `y` block to zero through its upper bounds.
pub fn assemble_qp(instance: &ProblemInstance, m: &ObjectiveMatrices, hyper: &Hyperparameters) -> Result<QuadraticProgram> {
    hyper.validate()?;
    let layout = instance.layout();
    let (ns, nb) = (layout.n_sp_total, layout.n_box_total);
    let dim = |ctx: &str, expected: usize, actual: usize| -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Dimension { context: ctx.into(), expected, actual })
        }
    };
    dim("D_s", ns, m.d_s.nrows())?;
    dim("F", ns, m.f.nrows())?;
    dim("L", ns, m.l_global.nrows())?;
    dim("D_b", nb, m.d_b.nrows())?;
    dim("s_s", ns, m.s_s.len())?;
    dim("s_b", nb, m.s_b.len())?;

    let n = ns + nb;
    let mut q = DMatrix::zeros(n, n);
    let seg = &m.d_s * hyper.seg_disc_weight + &m.f * hyper.kappa + &m.l_global * hyper.alpha;
    q.view_mut((0, 0), (ns, ns)).copy_from(&seg);
    q.view_mut((ns, ns), (nb, nb)).copy_from(&(&m.d_b * (hyper.lambda * hyper.box_disc_weight)));
    linalg::symmetrize(&mut q);

    let min_eig = linalg::min_eigenvalue(&q);
    let scale = linalg::max_eigenvalue(&q).abs().max(1.0);
    if min_eig < PSD_TOL * scale {
        return Err(Error::Indefinite {
            name: "Q".into(),
            min_eigenvalue: min_eig,
        });
    }
    for i in 0..n {
        q[(i, i)] += RIDGE_EPS;
    }

    let mut c = DVector::zeros(n);
    c.rows_mut(0, ns).copy_from(&(&m.s_s * hyper.mu));
    c.rows_mut(ns, nb).copy_from(&(&m.s_b * (hyper.lambda * hyper.nu)));

    let mut constraints = build_constraints(instance, hyper.gamma, hyper.eta)?;
    if hyper.freeze_segmentation {
        constraints.upper[..ns].iter_mut().for_each(|u| *u = 0.0);
    }
    Ok(QuadraticProgram {
        q,
        c,
        constraints,
        ridge_eps: RIDGE_EPS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub trace: Vec<TraceEntry>,
    pub rho_updates: usize,
    pub polished: bool,
    pub polish_attempts: usize,
    /// Max `|multiplier * slack|` over inequality rows.
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub v: DVector<f64>,
    pub objective: f64,
    /// Max of equality residual and inequality violation.
    pub primal_residual: f64,
    /// Stationarity of the Lagrangian (absolute, sup norm).
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: Status,
    /// Multipliers of the inequality rows (>= 0).
    pub y_ineq: DVector<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: DVector<f64>,
    pub diagnostics: Diagnostics,
}

/// Residuals of a candidate primal/dual pair in original units.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

/// Evaluates feasibility and stationarity of `(v, y_ineq, y_eq)`. `v` must
/// already lie inside its bounds. Bound multipliers are chosen optimally
/// per coordinate: a coordinate within `act_tol` of a bound may absorb
/// gradient pointing out of the box.
pub(crate) fn kkt_residuals(
    qp: &QuadraticProgram,
    v: &DVector<f64>,
    y_ineq: &DVector<f64>,
    y_eq: &DVector<f64>,
    act_tol: f64,
) -> KktResiduals {
    let cs = &qp.constraints;
    let vs = v.as_slice();
    let mut primal = 0.0f64;
    let mut compl = 0.0f64;
    for r in 0..cs.a_ineq.nrows {
        let slack = cs.a_ineq.row_dot(r, vs) - cs.b_ineq[r];
        primal = primal.max(slack);
        compl = compl.max((y_ineq[r] * slack).abs());
    }
    for r in 0..cs.a_eq.nrows {
        primal = primal.max((cs.a_eq.row_dot(r, vs) - cs.b_eq[r]).abs());
    }
    let mut g = linalg::sym_matvec(&qp.q, v) * 2.0 + &qp.c;
    for (j, a) in cs.a_ineq.tmatvec(y_ineq.as_slice()).into_iter().enumerate() {
        g[j] += a;
    }
    for (j, a) in cs.a_eq.tmatvec(y_eq.as_slice()).into_iter().enumerate() {
        g[j] += a;
    }
    let mut dual = 0.0f64;
    for j in 0..g.len() {
        let (lo, hi) = (cs.lower[j], cs.upper[j]);
        let at_lo = v[j] - lo <= act_tol;
        let at_hi = hi - v[j] <= act_tol;
        let r = match (at_lo, at_hi) {
            (true, true) => 0.0,
            (true, false) => (-g[j]).max(0.0),
            (false, true) => g[j].max(0.0),
            (false, false) => g[j].abs(),
        };
        dual = dual.max(r);
    }
    KktResiduals {
        primal: primal.max(0.0),
        dual,
        complementarity: compl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::synth;

    #[test]
    fn zero_weights_leave_only_d_s() {
        let inst = synth::toy_instance();
        let m = ObjectiveMatrices::build(&inst).unwrap();
        let h = Hyperparameters { kappa: 0.0, alpha: 0.0, mu: 0.0, lambda: 0.0, ..inst.hyper.clone() };
        let qp = assemble_qp(&inst, &m, &h).unwrap();
        let v = DVector::from_vec(vec![0.3, 0.9, 0.1, 0.5, 0.0, 0.4, 0.6]);
        let y = v.rows(0, 5).into_owned();
        let expect = linalg::quad_form(&m.d_s, &y);
        let ridge = RIDGE_EPS * v.norm_squared();
        assert!((qp.objective(&v) - expect - ridge).abs() < 1e-12);
    }

    #[test]
    fn default_box_saliency_weight() {
        let inst = synth::toy_instance();
        let m = ObjectiveMatrices::build(&inst).unwrap();
        let qp = assemble_qp(&inst, &m, &Hyperparameters::default()).unwrap();
        for i in 0..2 {
            assert!((qp.c[5 + i] - 0.01 * m.s_b[i]).abs() < 1e-15);
        }
        assert_eq!(qp.objective(&DVector::zeros(7)), 0.0);
    }

    #[test]
    fn objective_matches_energy_plus_ridge() {
        let inst = synth::toy_instance();
        let m = ObjectiveMatrices::build(&inst).unwrap();
        let h = inst.hyper.clone();
        let qp = assemble_qp(&inst, &m, &h).unwrap();
        let v = DVector::from_vec(vec![0.2, 0.1, 0.7, 0.5, 0.0, 0.6, 0.4]);
        let e = m.energy(&h, &v.rows(0, 5).into_owned(), &v.rows(5, 2).into_owned());
        let diff = qp.objective(&v) - e;
        assert!(diff >= -1e-12 && diff <= RIDGE_EPS * 7.0 + 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let inst = synth::toy_instance();
        let mut m = ObjectiveMatrices::build(&inst).unwrap();
        m.d_b = DMatrix::identity(3, 3);
        assert!(matches!(assemble_qp(&inst, &m, &inst.hyper), Err(Error::Dimension { .. })));
    }

    #[test]
    fn indefinite_q_is_reported() {
        let inst = synth::toy_instance();
        let mut m = ObjectiveMatrices::build(&inst).unwrap();
        m.d_s[(0, 0)] = -5.0;
        assert!(matches!(assemble_qp(&inst, &m, &inst.hyper), Err(Error::Indefinite { .. })));
    }
}
