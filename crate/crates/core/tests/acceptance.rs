//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Reference values are computed here from first principles (explicit
//! inverses, direct histogram differences, exhaustive enumeration, planted
//! ground truth) rather than through the library's own helpers.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fgcluster::constraints::{build_constraints, check_feasible, RowKind, ViolatedRow};
use fgcluster::discriminative::{build_d_linear, chi2_kernel, woodbury_form};
use fgcluster::foreground::build_f;
use fgcluster::instance::synth::{synth_instance, Background, SynthSpec};
use fgcluster::instance::{
    FPairs, FScale, FeatureBlock, Frame, HistogramBlock, Hyperparameters, ProblemInstance, Rect,
};
use fgcluster::pipeline::{run, Ablation, ResultsFile, RunConfig};
use fgcluster::qp::{self, brute_force, ObjectiveMatrices, SolverSettings, Status};
use fgcluster::rounding::{round_frame, threshold_grid, DEFAULT_THRESHOLDS};
use fgcluster::spatial::frame_laplacians;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    DMatrix::from_fn(r, c, |_, _| n.sample(rng))
}

fn center(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let mean = col.sum() / col.len() as f64;
        col.add_scalar_mut(-mean);
    }
    xc
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - w * h;
    w * h / union
}

fn mask_iou(pred: &[usize], truth: &[usize], counts: &[u64]) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (j, &c) in counts.iter().enumerate() {
        let (p, t) = (pred.contains(&j), truth.contains(&j));
        if p && t {
            inter += c;
        }
        if p || t {
            union += c;
        }
    }
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

/// Mean over frames of (box IoU > 0.5) and of mask IoU, from the planted
/// ground truth.
fn score(inst: &ProblemInstance, boxes: &[usize], masks: &[Vec<usize>]) -> (f64, f64) {
    let mut hits = 0usize;
    let mut iou = 0.0;
    for ((f, &b), m) in inst.frames.iter().zip(boxes).zip(masks) {
        let gt = f.ground_truth.as_ref().expect("synthetic ground truth");
        if rect_iou(&f.box_rects[b], gt.rect.as_ref().unwrap()) > 0.5 {
            hits += 1;
        }
        iou += mask_iou(m, gt.mask.as_ref().unwrap(), &f.sp_pixel_counts);
    }
    let k = inst.frames.len() as f64;
    (100.0 * hits as f64 / k, iou / k)
}

fn solve_and_score(inst: &ProblemInstance, ablation: Ablation) -> Result<(f64, f64, Status), String> {
    let cfg = RunConfig {
        ablation,
        ..RunConfig::default()
    };
    let out = run(inst, &cfg).map_err(|e| e.to_string())?;
    let masks: Vec<Vec<usize>> = out
        .masks
        .iter()
        .map(|m| m.mask.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
        .collect();
    let (corloc, iou) = score(inst, &out.boxes, &masks);
    Ok((corloc, iou, out.solution.status))
}

fn woodbury_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=20);
        let xc = center(&gaussian(&mut rng, n, d));
        for beta in [0.01, 0.1, 1.0] {
            let inner = (xc.transpose() * &xc + DMatrix::identity(d, d) * beta).try_inverse().ok_or("singular d x d system")?;
            let eq4 = DMatrix::identity(n, n) - &xc * inner * xc.transpose();
            let outer = (&xc * xc.transpose() + DMatrix::identity(n, n) * beta).try_inverse().ok_or("singular n x n system")?;
            let wood = outer * beta;
            let lib_eq4 = build_d_linear(&xc, beta).map_err(|e| e.to_string())?.d;
            let lib_wood = woodbury_form(&xc, beta).map_err(|e| e.to_string())?;
            for err in [(&eq4 - &wood).norm(), (&lib_eq4 - &wood).norm(), (&lib_wood - &eq4).norm()] {
                worst = worst.max(err);
            }
        }
    }
    ensure(worst < 1e-8, || format!("max Frobenius gap {worst:e} >= 1e-8"))?;
    Ok(format!("300 cases, max Frobenius gap {worst:.2e} < 1e-8"))
}

fn psd_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst = [f64::INFINITY; 5];
    for i in 0..50u64 {
        let spec = SynthSpec {
            frames: rng.random_range(2..=5),
            n_sp: [24, 30, 40][rng.random_range(0..3)],
            m_box: rng.random_range(2..=4),
            sp_noise: rng.random_range(0.5..4.0),
            box_noise: rng.random_range(0.2..2.0),
            max_box_overlap: 0.6,
            background: if i % 2 == 0 { Background::VideoLike } else { Background::ImageLike },
            hyper: Hyperparameters {
                f_pairs: if i % 3 == 0 { FPairs::Consecutive } else { FPairs::All },
                knn: if i % 4 == 0 { Some(5) } else { None },
                ..Hyperparameters::default()
            },
            ..SynthSpec::default()
        };
        let mut inst = synth_instance(&spec, i).map_err(|e| format!("instance {i}: {e}"))?;
        if i % 5 == 0 {
            // Exercise the kernel path with a chi-square kernel.
            let x = inst.sp_features.matrix().map(f64::abs);
            inst.sp_features = FeatureBlock::Kernel(chi2_kernel(&x).map_err(|e| e.to_string())?);
        }
        let m = ObjectiveMatrices::build(&inst).map_err(|e| format!("instance {i}: {e}"))?;
        let q = qp::assemble_qp(&inst, &m, &inst.hyper).map_err(|e| format!("instance {i}: {e}"))?;
        let lap_min = frame_laplacians(&inst.frames, &inst.hyper)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|l| min_eig(&l.l))
            .fold(f64::INFINITY, f64::min);
        for (slot, v) in [min_eig(&m.d_s), min_eig(&m.d_b), lap_min, min_eig(&m.f), min_eig(&q.q)].into_iter().enumerate() {
            worst[slot] = worst[slot].min(v);
        }
    }
    let names = ["D_s", "D_b", "L", "F", "Q"];
    let summary = names.iter().zip(worst).map(|(n, v)| format!("{n} {v:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst.iter().all(|&v| v >= -1e-8), || format!("min eigenvalue below -1e-8: {summary}"))?;
    Ok(format!("50 instances, min eigenvalues {summary}"))
}

fn histogram_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let bins = rng.random_range(4..=40);
        let frames: Vec<DMatrix<f64>> = (0..2)
            .map(|_| {
                let n = rng.random_range(3..=20);
                DMatrix::from_fn(bins, n, |_, _| rng.random_range(0..12) as f64)
            })
            .collect();
        let hist = HistogramBlock {
            d_bins: bins,
            per_frame: frames.clone(),
        };
        let f = build_f(&hist, FScale::None, FPairs::All).map_err(|e| e.to_string())?.f;
        let (n1, n2) = (frames[0].ncols(), frames[1].ncols());
        for _ in 0..100 {
            let y = DVector::from_fn(n1 + n2, |_, _| rng.random_range(0..2) as f64);
            let y1 = y.rows(0, n1).into_owned();
            let y2 = y.rows(n1, n2).into_owned();
            let direct = (&frames[0] * y1 - &frames[1] * y2).norm_squared();
            let quad = (y.transpose() * &f * &y)[(0, 0)];
            worst = worst.max((quad - direct).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max |y'Fy - ||H1y1 - H2y2||^2| = {worst:e}"))?;
    Ok(format!("1000 binary vectors, max gap {worst:.1e} < 1e-9"))
}

fn toy_golden() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_fgcluster"))
        .args(["toy", "--dump", "--out"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("toy exited with {}", out.status))?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = text.lines().map(|l| l.split('#').next().unwrap().trim()).collect();

    // S_1 = {1, 3, 4} in 1-based indices over n = 5 superpixels.
    let p1: Vec<String> = [1usize, 3, 4]
        .iter()
        .map(|&k| format!("[{}]", (1..=5).map(|j| if j == k { "1" } else { "0" }).collect::<Vec<_>>().join(", ")))
        .collect();
    let at = rows.iter().position(|l| l.starts_with("projection P_1 ")).ok_or("no P_1 block")?;
    ensure(rows[at + 1..at + 4] == p1.iter().map(String::as_str).collect::<Vec<_>>()[..], || {
        format!("P_1 rows {:?} != {:?}", &rows[at + 1..at + 4], p1)
    })?;

    // gamma = 0.3, eta = 1 - gamma: 3 * 0.3 = 0.9 and 3 * 0.7 = 2.1.
    let expected = [
        "0.9z_1 ≤ y_1 + y_3 + y_4",
        "y_1 + y_3 + y_4 ≤ 2.1z_1",
        "2y_1 ≤ z_1 + z_2",
        "y_2 ≤ z_2",
        "y_3 ≤ z_1",
        "2y_4 ≤ z_1 + z_2",
    ];
    for e in expected {
        ensure(rows.contains(&e), || format!("missing row `{e}`"))?;
    }
    let manifest = fgcluster::instance::load_instance(&dir.path().join("toy.json")).map_err(|e| e.to_string())?;
    ensure(manifest.frames[0].memberships == vec![vec![0, 2, 3], vec![0, 1, 3]], || {
        format!("reloaded memberships {:?}", manifest.frames[0].memberships)
    })?;
    Ok("P_1 and the four expanded superpixel rows match; box rows use eta = 1 - gamma".into())
}

/// Random small instance with two frames, at most 12 superpixels and 4 boxes.
fn small_instance(rng: &mut ChaCha8Rng) -> ProblemInstance {
    let bins = 8;
    let mut frames = Vec::new();
    let mut hists = Vec::new();
    let mut n_total = 0;
    let mut m_total = 0;
    for k in 0..2 {
        let n = rng.random_range(3..=6);
        let m = rng.random_range(1..=2);
        n_total += n;
        m_total += m;
        let memberships: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let size = rng.random_range(2..=n);
                let mut idx: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    idx.swap(i, rng.random_range(0..=i));
                }
                let mut s = idx[..size].to_vec();
                s.sort_unstable();
                s
            })
            .collect();
        let counts: Vec<u64> = (0..n).map(|_| rng.random_range(1..=6)).collect();
        let mut h = DMatrix::zeros(bins, n);
        for (j, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                h[(rng.random_range(0..bins), j)] += 1.0;
            }
        }
        hists.push(h);
        frames.push(Frame {
            frame_id: format!("r{k}"),
            class: None,
            sp_positions: DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0)),
            sp_colors: DMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0)),
            sp_pixel_counts: counts,
            box_rects: (0..m).map(|i| Rect::new(i as f64, 0.0, i as f64 + 10.0, 10.0)).collect(),
            memberships,
            sp_saliency_raw: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            box_saliency_raw: (0..m).map(|_| rng.random_range(0.0..1.0)).collect(),
            ground_truth: None,
        });
    }
    ProblemInstance {
        frames,
        sp_features: FeatureBlock::Raw(gaussian(rng, n_total, 3)),
        box_features: FeatureBlock::Raw(gaussian(rng, m_total, 2)),
        histograms: HistogramBlock {
            d_bins: bins,
            per_frame: hists,
        },
        hyper: Hyperparameters::default(),
    }
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut done = 0;
    let mut max_gap = f64::NEG_INFINITY;
    let (mut max_primal, mut max_dual) = (0.0f64, 0.0f64);
    while done < 25 {
        let inst = small_instance(&mut rng);
        let m = ObjectiveMatrices::build(&inst).map_err(|e| e.to_string())?;
        let Ok(bf) = brute_force(&inst, &m, &inst.hyper) else {
            // No binary point satisfies the constraints; draw again.
            continue;
        };
        done += 1;
        let q = qp::assemble_qp(&inst, &m, &inst.hyper).map_err(|e| e.to_string())?;
        let sol = qp::solve(&q, &SolverSettings::default());
        ensure(sol.status == Status::Optimal, || format!("instance {done}: status {:?}", sol.status))?;
        max_primal = max_primal.max(sol.primal_residual);
        max_dual = max_dual.max(sol.dual_residual);
        let ns = inst.layout().n_sp_total;
        let y = sol.v.rows(0, ns).into_owned();
        let z = sol.v.rows(ns, sol.v.len() - ns).into_owned();
        let relaxed = m.energy(&inst.hyper, &y, &z);
        max_gap = max_gap.max(relaxed - bf.objective);
        ensure(relaxed <= bf.objective + 1e-6, || {
            format!("instance {done}: relaxed {relaxed} > integer {} + 1e-6", bf.objective)
        })?;

        let out = run(&inst, &RunConfig::default()).map_err(|e| e.to_string())?;
        let layout = inst.layout();
        let mut v = vec![0.0; layout.n_vars()];
        for (f, (mask, &b)) in out.masks.iter().zip(&out.boxes).enumerate() {
            for (j, &bit) in mask.mask.iter().enumerate() {
                v[layout.sp_index(f, j)] = bit as u8 as f64;
            }
            v[layout.box_var(f, b)] = 1.0;
        }
        let cs = build_constraints(&inst, inst.hyper.gamma, inst.hyper.eta).map_err(|e| e.to_string())?;
        let report = check_feasible(&v, &cs, 0.0).map_err(|e| e.to_string())?;
        let box_violations: Vec<_> = report
            .violations
            .iter()
            .filter(|viol| match viol.row {
                ViolatedRow::Equality(_, RowKind::OneBox { .. }) => true,
                ViolatedRow::Bound(j) => j >= ns,
                _ => false,
            })
            .collect();
        ensure(box_violations.is_empty(), || format!("instance {done}: rounded boxes violate {box_violations:?}"))?;
    }
    ensure(max_primal <= 1e-6 && max_dual <= 1e-6, || {
        format!("residuals primal {max_primal:e} dual {max_dual:e} exceed 1e-6")
    })?;
    Ok(format!(
        "25 instances optimal, max relaxed - integer {max_gap:.2e}, residuals primal {max_primal:.1e} dual {max_dual:.1e}"
    ))
}

fn planted_recovery() -> Check {
    let spec = SynthSpec::default();
    let (mut corloc, mut iou) = (0.0, 0.0);
    for seed in 0..20 {
        let inst = synth_instance(&spec, seed).map_err(|e| e.to_string())?;
        let (c, i, status) = solve_and_score(&inst, Ablation::Full)?;
        ensure(status == Status::Optimal, || format!("seed {seed}: status {status:?}"))?;
        corloc += c / 20.0;
        iou += i / 20.0;
    }
    ensure(corloc == 100.0 && iou >= 0.9, || format!("CorLoc {corloc:.1}, mean IoU {iou:.3}"))?;
    Ok(format!("20 instances, CorLoc {corloc:.0}%, mean IoU {iou:.3} >= 0.9"))
}

/// Video-like instances whose superpixel features are too noisy to separate
/// the object alone.
fn ablation_spec() -> SynthSpec {
    SynthSpec {
        background: Background::VideoLike,
        sp_noise: 4.0,
        ..SynthSpec::default()
    }
}

fn ablation_trend() -> Check {
    let spec = ablation_spec();
    let arms = [Ablation::Full, Ablation::LocSeg, Ablation::SegOnly];
    let mut mean = [0.0; 3];
    for seed in 0..20 {
        let inst = synth_instance(&spec, seed).map_err(|e| e.to_string())?;
        for (slot, &a) in arms.iter().enumerate() {
            mean[slot] += solve_and_score(&inst, a)?.1 / 20.0;
        }
    }
    let [full, loc_seg, seg] = mean;
    let line = format!("mean IoU full {full:.3}, loc+seg {loc_seg:.3}, seg-only {seg:.3}");
    ensure(full >= loc_seg && loc_seg >= seg - 0.02 && full >= seg + 0.05, || line.clone())?;
    Ok(line)
}

fn ncut(w: &DMatrix<f64>, a: &[bool]) -> Option<f64> {
    let n = a.len();
    let mut cut = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if a[i] {
                va += w[(i, j)];
                if !a[j] {
                    cut += w[(i, j)];
                }
            } else {
                vb += w[(i, j)];
            }
        }
    }
    (va > 0.0 && vb > 0.0).then(|| cut / va + cut / vb)
}

fn rounding_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    for frame in 0..50 {
        let n = rng.random_range(4..=30);
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 };
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let base = round_frame(&y, &w, DEFAULT_THRESHOLDS);
        for c in [0.1, 1.0, 7.0] {
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let r = round_frame(&scaled, &w, DEFAULT_THRESHOLDS);
            ensure(r.mask == base.mask, || format!("frame {frame}: mask changes under y <- {c} y"))?;
        }
        let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best = threshold_grid(DEFAULT_THRESHOLDS)
            .into_iter()
            .filter_map(|t| ncut(&w, &y.iter().map(|v| v / max >= t).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            let chosen = ncut(&w, &base.mask).ok_or_else(|| format!("frame {frame}: chosen mask is degenerate"))?;
            ensure((chosen - best).abs() <= 1e-12, || format!("frame {frame}: chosen ncut {chosen} vs min {best}"))?;
        }
    }
    Ok("50 frames: masks invariant for c in {0.1, 1, 7}; chosen ncut is the minimum".into())
}

fn solve_cli(instance: &Path, out: &Path, threads: Option<&str>) -> Result<ResultsFile, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fgcluster"));
    cmd.args(["solve", "--seed", "7", "--out"]).arg(out).arg(instance);
    if let Some(t) = threads {
        cmd.env("FGCLUSTER_THREADS", t);
    }
    let status = cmd.output().map_err(|e| e.to_string())?;
    ensure(status.status.success(), || format!("solve failed: {}", String::from_utf8_lossy(&status.stderr)))?;
    ResultsFile::load(&out.join("inst.results.json")).map_err(|e| e.to_string())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gen = Command::new(env!("CARGO_BIN_EXE_fgcluster"))
        .args(["synth", "--seed", "7", "--name", "inst", "--out"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(gen.status.success(), || "synth failed".into())?;
    let inst = dir.path().join("inst.json");
    let runs = [
        solve_cli(&inst, &dir.path().join("a"), None)?,
        solve_cli(&inst, &dir.path().join("b"), None)?,
        solve_cli(&inst, &dir.path().join("c"), Some("1"))?,
    ];
    let mut max_diff = 0.0f64;
    for r in &runs[1..] {
        ensure(r.v.len() == runs[0].v.len(), || "solution lengths differ".into())?;
        for (a, b) in r.v.iter().zip(&runs[0].v) {
            max_diff = max_diff.max((a - b).abs());
        }
        let key = |x: &ResultsFile| x.frames.iter().map(|f| (f.selected_box, f.mask.clone())).collect::<Vec<_>>();
        ensure(key(r) == key(&runs[0]), || "selected boxes or masks differ".into())?;
    }
    ensure(max_diff <= 1e-12, || format!("max |v_a - v_b| = {max_diff:e}"))?;
    Ok(format!("3 runs (one single-threaded), max |dv| = {max_diff:.1e}, boxes and masks identical"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, fn() -> Check); 9] = [
        ("woodbury identity", Some(Duration::from_secs(5)), woodbury_identity),
        ("psd suite", Some(Duration::from_secs(30)), psd_suite),
        ("histogram quadratic form", None, histogram_check),
        ("toy golden dump", None, toy_golden),
        ("oracle equivalence", Some(Duration::from_secs(120)), oracle_equivalence),
        ("planted recovery", Some(Duration::from_secs(120)), planted_recovery),
        ("ablation trend", None, ablation_trend),
        ("rounding properties", None, rounding_properties),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let over = budget.filter(|b| elapsed > *b);
        let (tag, detail) = match (&result, over) {
            (Ok(d), None) => ("PASS", d.clone()),
            (Ok(d), Some(b)) => ("FAIL", format!("{d}; exceeded {b:?} budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
