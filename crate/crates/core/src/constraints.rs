//! Linear constraints coupling superpixel labels `y` and box selections `z`.
//!
//! Box-local indicators are eliminated through `x_i = P_i y`, so every row
//! is written over the stacked vector `v = (y; z)`:
//!
//! * per box: `gamma |S_i| z_i <= sum_{j in S_i} y_j <= eta |S_i| z_i`
//! * per covered superpixel: `c_j y_j <= sum_{i : j in S_i} z_i`
//! * per uncovered superpixel: `y_j = 0`
//! * per frame: `sum_i z_i = 1`
//! * bounds `0 <= v <= 1`

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::instance::{Frame, Layout, ProblemInstance};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(ncols: usize) -> Self {
        CsrMatrix {
            nrows: 0,
            ncols,
            indptr: vec![0],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Appends a row of `(column, value)` terms in the given order.
    pub fn push_row(&mut self, terms: &[(usize, f64)]) {
        for &(j, v) in terms {
            debug_assert!(j < self.ncols);
            self.indices.push(j);
            self.data.push(v);
        }
        self.indptr.push(self.indices.len());
        self.nrows += 1;
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.data[span].iter().copied())
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.row(r).fold(0.0, |acc, (j, v)| acc + v * x[j])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row_dot(r, x)).collect()
    }

    /// `A^T y`.
    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate().take(self.nrows) {
            for (j, v) in self.row(r) {
                out[j] += v * yr;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (j, v) in self.row(r) {
                m[(r, j)] += v;
            }
        }
        m
    }
}

/// What a constraint row encodes; indices are frame-local.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    BoxLower { frame: usize, bx: usize },
    BoxUpper { frame: usize, bx: usize },
    Superpixel { frame: usize, sp: usize },
    Uncovered { frame: usize, sp: usize },
    OneBox { frame: usize },
}

impl RowKind {
    pub fn label(&self) -> String {
        match *self {
            RowKind::BoxLower { frame, bx } => format!("frame {frame} box {bx} min-fill"),
            RowKind::BoxUpper { frame, bx } => format!("frame {frame} box {bx} max-fill"),
            RowKind::Superpixel { frame, sp } => format!("frame {frame} superpixel {sp} coverage"),
            RowKind::Uncovered { frame, sp } => format!("frame {frame} superpixel {sp} uncovered"),
            RowKind::OneBox { frame } => format!("frame {frame} one box"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    /// Rows of `A_ineq v <= b_ineq`.
    pub a_ineq: CsrMatrix,
    pub b_ineq: Vec<f64>,
    pub ineq_kinds: Vec<RowKind>,
    /// Rows of `A_eq v = b_eq`.
    pub a_eq: CsrMatrix,
    pub b_eq: Vec<f64>,
    pub eq_kinds: Vec<RowKind>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub layout: Layout,
}

impl ConstraintSet {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }
}

/// `|S_i| × n_sp` selector with a single 1 per row at column `S_i[r]`.
pub fn build_projection(frame: &Frame, bx: usize) -> DMatrix<f64> {
    let set = &frame.memberships[bx];
    let mut p = DMatrix::zeros(set.len(), frame.n_sp());
    for (r, &j) in set.iter().enumerate() {
        p[(r, j)] = 1.0;
    }
    p
}

pub fn build_constraints(instance: &ProblemInstance, gamma: f64, eta: f64) -> Result<ConstraintSet> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::param("gamma/eta", "must lie in [0,1]"));
    }
    if gamma > eta {
        return Err(Error::param("gamma", format!("gamma = {gamma} exceeds eta = {eta}")));
    }
    let layout = instance.layout();
    let n = layout.n_vars();
    let mut a_ineq = CsrMatrix::new(n);
    let mut b_ineq = Vec::new();
    let mut ineq_kinds = Vec::new();
    let mut a_eq = CsrMatrix::new(n);
    let mut b_eq = Vec::new();
    let mut eq_kinds = Vec::new();

    for (f, frame) in instance.frames.iter().enumerate() {
        for (i, set) in frame.memberships.iter().enumerate() {
            let size = set.len() as f64;
            let z = layout.box_var(f, i);
            let ys = set.iter().map(|&j| (layout.sp_index(f, j), 1.0));
            let mut lower = vec![(z, gamma * size)];
            lower.extend(ys.clone().map(|(j, _)| (j, -1.0)));
            a_ineq.push_row(&lower);
            b_ineq.push(0.0);
            ineq_kinds.push(RowKind::BoxLower { frame: f, bx: i });

            let mut upper: Vec<(usize, f64)> = ys.collect();
            upper.push((z, -eta * size));
            a_ineq.push_row(&upper);
            b_ineq.push(0.0);
            ineq_kinds.push(RowKind::BoxUpper { frame: f, bx: i });
        }
    }
    let mut containing: Vec<Vec<Vec<usize>>> = Vec::with_capacity(instance.frames.len());
    for frame in &instance.frames {
        let mut c = vec![Vec::new(); frame.n_sp()];
        for (i, set) in frame.memberships.iter().enumerate() {
            for &j in set {
                c[j].push(i);
            }
        }
        containing.push(c);
    }
    for (f, frame) in instance.frames.iter().enumerate() {
        for j in 0..frame.n_sp() {
            let boxes = &containing[f][j];
            if boxes.is_empty() {
                continue;
            }
            let mut row = vec![(layout.sp_index(f, j), boxes.len() as f64)];
            row.extend(boxes.iter().map(|&i| (layout.box_var(f, i), -1.0)));
            a_ineq.push_row(&row);
            b_ineq.push(0.0);
            ineq_kinds.push(RowKind::Superpixel { frame: f, sp: j });
        }
    }
    for (f, frame) in instance.frames.iter().enumerate() {
        for j in 0..frame.n_sp() {
            if containing[f][j].is_empty() {
                a_eq.push_row(&[(layout.sp_index(f, j), 1.0)]);
                b_eq.push(0.0);
                eq_kinds.push(RowKind::Uncovered { frame: f, sp: j });
            }
        }
    }
    for (f, frame) in instance.frames.iter().enumerate() {
        let row: Vec<(usize, f64)> = (0..frame.m_box()).map(|i| (layout.box_var(f, i), 1.0)).collect();
        a_eq.push_row(&row);
        b_eq.push(1.0);
        eq_kinds.push(RowKind::OneBox { frame: f });
    }

    Ok(ConstraintSet {
        a_ineq,
        b_ineq,
        ineq_kinds,
        a_eq,
        b_eq,
        eq_kinds,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
        layout,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolatedRow {
    Inequality(usize, RowKind),
    Equality(usize, RowKind),
    Bound(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: ViolatedRow,
    /// Positive amount by which the row is violated.
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
    pub max_violation: f64,
    pub passed: bool,
}

/// Lists every row violated by more than `tol`; passes iff the largest
/// violation is at most `tol`.
pub fn check_feasible(v: &[f64], cs: &ConstraintSet, tol: f64) -> Result<FeasibilityReport> {
    if v.len() != cs.n_vars() {
        return Err(Error::Dimension {
            context: "feasibility vector".into(),
            expected: cs.n_vars(),
            actual: v.len(),
        });
    }
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    let mut note = |row: ViolatedRow, amount: f64| {
        worst = worst.max(amount);
        if amount > tol {
            violations.push(Violation { row, amount });
        }
    };
    for r in 0..cs.a_ineq.nrows {
        let slack = cs.a_ineq.row_dot(r, v) - cs.b_ineq[r];
        note(ViolatedRow::Inequality(r, cs.ineq_kinds[r]), slack.max(0.0));
    }
    for r in 0..cs.a_eq.nrows {
        let res = (cs.a_eq.row_dot(r, v) - cs.b_eq[r]).abs();
        note(ViolatedRow::Equality(r, cs.eq_kinds[r]), res);
    }
    for (j, &x) in v.iter().enumerate() {
        let out = (cs.lower[j] - x).max(x - cs.upper[j]).max(0.0);
        note(ViolatedRow::Bound(j), out);
    }
    Ok(FeasibilityReport {
        passed: worst <= tol,
        violations,
        max_violation: worst,
    })
}

fn fmt_num(x: f64) -> String {
    let s = format!("{:.12}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn term(coef: f64, name: &str) -> String {
    if (coef - 1.0).abs() < 1e-15 {
        name.to_owned()
    } else {
        format!("{}{}", fmt_num(coef), name)
    }
}

/// Plain-text dump of projections and rows with 1-based variable names
/// (`y_j`, `z_i`; suffixed `@frame_id` when there is more than one frame).
/// Row order: box rows by frame then box, superpixel rows, equalities.
pub fn dump(instance: &ProblemInstance, cs: &ConstraintSet) -> String {
    let multi = instance.frames.len() > 1;
    let layout = &cs.layout;
    let mut names = Vec::with_capacity(layout.n_vars());
    for (prefix, counts) in [("y", instance.frames.iter().map(Frame::n_sp).collect::<Vec<_>>()), ("z", instance.frames.iter().map(Frame::m_box).collect())] {
        for (f, &c) in counts.iter().enumerate() {
            for k in 0..c {
                names.push(if multi {
                    format!("{prefix}_{}@{}", k + 1, instance.frames[f].frame_id)
                } else {
                    format!("{prefix}_{}", k + 1)
                });
            }
        }
    }
    let side = |terms: &[(usize, f64)]| -> String {
        if terms.is_empty() {
            "0".into()
        } else {
            terms.iter().map(|&(j, c)| term(c, &names[j])).collect::<Vec<_>>().join(" + ")
        }
    };
    let mut out = String::new();
    let _ = writeln!(out, "# fgcluster constraint dump (1-based variable names; row comments use 0-based file indices)");
    let _ = writeln!(out, "# variables: {} superpixels (y), {} boxes (z)", layout.n_sp_total, layout.n_box_total);
    for frame in &instance.frames {
        for i in 0..frame.m_box() {
            let members: Vec<String> = frame.memberships[i].iter().map(|j| (j + 1).to_string()).collect();
            let tag = if multi { format!("@{}", frame.frame_id) } else { String::new() };
            let _ = writeln!(out, "projection P_{}{tag} (S = {{{}}}):", i + 1, members.join(", "));
            let p = build_projection(frame, i);
            for r in 0..p.nrows() {
                let row: Vec<String> = p.row(r).iter().map(|v| fmt_num(*v)).collect();
                let _ = writeln!(out, "  [{}]", row.join(", "));
            }
        }
    }
    let _ = writeln!(out, "inequalities:");
    for r in 0..cs.a_ineq.nrows {
        let (pos, neg): (Vec<_>, Vec<_>) = cs.a_ineq.row(r).partition(|&(_, c)| c > 0.0);
        let neg: Vec<(usize, f64)> = neg.into_iter().map(|(j, c)| (j, -c)).collect();
        let mut rhs = side(&neg);
        let b = cs.b_ineq[r];
        if b != 0.0 {
            rhs = if neg.is_empty() { fmt_num(b) } else { format!("{rhs} + {}", fmt_num(b)) };
        }
        let _ = writeln!(out, "  {} ≤ {}    # {}", side(&pos), rhs, cs.ineq_kinds[r].label());
    }
    let _ = writeln!(out, "equalities:");
    for r in 0..cs.a_eq.nrows {
        let terms: Vec<(usize, f64)> = cs.a_eq.row(r).collect();
        let _ = writeln!(out, "  {} = {}    # {}", side(&terms), fmt_num(cs.b_eq[r]), cs.eq_kinds[r].label());
    }
    let _ = writeln!(out, "bounds:\n  0 ≤ v ≤ 1");
    out
}

/// `v` as a column vector.
pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::synth;

    #[test]
    fn projection_examples() {
        let toy = synth::toy_instance();
        let p = build_projection(&toy.frames[0], 0);
        let expect = DMatrix::from_row_slice(3, 5, &[
            1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 0.0,
        ]);
        assert_eq!(p, expect);

        let mut frame = toy.frames[0].clone();
        frame.memberships = vec![(0..5).collect(), vec![4]];
        assert_eq!(build_projection(&frame, 0), DMatrix::identity(5, 5));
        assert_eq!(build_projection(&frame, 1), DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn toy_rows_match_expansion() {
        let toy = synth::toy_instance();
        let cs = build_constraints(&toy, 0.25, 0.75).unwrap();
        // box 1 (vars y0,y2,y3 and z0 at index 5)
        let lower: Vec<_> = cs.a_ineq.row(0).collect();
        assert_eq!(lower, vec![(5, 0.75), (0, -1.0), (2, -1.0), (3, -1.0)]);
        let upper: Vec<_> = cs.a_ineq.row(1).collect();
        assert_eq!(upper, vec![(0, 1.0), (2, 1.0), (3, 1.0), (5, -2.25)]);
        // superpixel 1 is in both boxes: 2 y_1 - z_1 - z_2 <= 0
        let sp1 = cs.ineq_kinds.iter().position(|k| *k == RowKind::Superpixel { frame: 0, sp: 0 }).unwrap();
        assert_eq!(cs.a_ineq.row(sp1).collect::<Vec<_>>(), vec![(0, 2.0), (5, -1.0), (6, -1.0)]);
        // superpixel 5 is uncovered
        assert_eq!(cs.eq_kinds[0], RowKind::Uncovered { frame: 0, sp: 4 });
        assert_eq!(cs.a_ineq.nrows, 2 * 2 + 4);
        assert_eq!(cs.a_eq.nrows, 1 + 1);
    }

    #[test]
    fn single_full_box_degenerates() {
        let mut inst = synth::toy_instance();
        let frame = &mut inst.frames[0];
        frame.memberships = vec![(0..5).collect()];
        frame.box_rects.truncate(1);
        frame.box_saliency_raw.truncate(1);
        inst.box_features = crate::instance::FeatureBlock::Raw(DMatrix::zeros(1, 2));
        let cs = build_constraints(&inst, 0.0, 1.0).unwrap();
        // box rows: 0 <= sum y <= 5 z, then y_j <= z for each j, and z = 1
        assert_eq!(cs.a_ineq.nrows, 2 + 5);
        for j in 0..5 {
            assert_eq!(cs.a_ineq.row(2 + j).collect::<Vec<_>>(), vec![(j, 1.0), (5, -1.0)]);
        }
        assert_eq!(cs.a_eq.nrows, 1);
        assert_eq!(cs.a_eq.row(0).collect::<Vec<_>>(), vec![(5, 1.0)]);
    }

    #[test]
    fn gamma_above_eta_is_rejected() {
        assert!(build_constraints(&synth::toy_instance(), 0.6, 0.5).is_err());
    }

    #[test]
    fn zero_vector_violates_one_box_rows() {
        let toy = synth::toy_instance();
        let cs = build_constraints(&toy, 0.3, 0.7).unwrap();
        let rep = check_feasible(&[0.0; 7], &cs, 1e-9).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.violations.len(), 1);
        assert!(matches!(rep.violations[0].row, ViolatedRow::Equality(_, RowKind::OneBox { frame: 0 })));
        assert!(check_feasible(&[0.0; 6], &cs, 0.0).is_err());
    }

    #[test]
    fn csr_products() {
        let mut a = CsrMatrix::new(3);
        a.push_row(&[(0, 1.0), (2, 2.0)]);
        a.push_row(&[(1, -1.0)]);
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]), vec![7.0, -2.0]);
        assert_eq!(a.tmatvec(&[1.0, 1.0]), vec![1.0, -1.0, 2.0]);
        assert_eq!(a.to_dense(), DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]));
    }
}
