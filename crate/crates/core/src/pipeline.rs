//! End-to-end runs: configuration layering, ablations, solve, round and
//! evaluate, and the JSON documents exchanged by the command-line tool.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{self, EvaluationReport, FrameEvaluation};
use crate::instance::{Hyperparameters, ProblemInstance, FORMAT_VERSION};
use crate::par;
use crate::qp::{self, ObjectiveMatrices, SolverSettings, Status};
use crate::rounding::{self, FrameMask, DEFAULT_THRESHOLDS};

/// Baselines obtained by zeroing terms of the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Ablation {
    /// Every term active.
    #[default]
    #[serde(rename = "full")]
    Full,
    /// No foreground model (`kappa = 0`).
    #[serde(rename = "loc+seg")]
    LocSeg,
    /// Box selection only: box discriminative term and saliency, segmentation
    /// frozen at zero.
    #[serde(rename = "loc-only")]
    LocOnly,
    /// Box selection by saliency alone.
    #[serde(rename = "sal-only")]
    SalOnly,
    /// Segmentation alone: no box cues and no foreground model
    /// (`lambda = kappa = 0`).
    #[serde(rename = "seg-only")]
    SegOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Full, Ablation::LocSeg, Ablation::LocOnly, Ablation::SalOnly, Ablation::SegOnly];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::LocSeg => "loc+seg",
            Ablation::LocOnly => "loc-only",
            Ablation::SalOnly => "sal-only",
            Ablation::SegOnly => "seg-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::param("ablate", format!("unknown ablation `{s}` (expected full, loc+seg, loc-only, sal-only, seg-only)")))
    }

    /// The hyperparameters this baseline runs with.
    pub fn apply(self, h: &Hyperparameters) -> Hyperparameters {
        let mut h = h.clone();
        match self {
            Ablation::Full => {}
            Ablation::LocSeg => h.kappa = 0.0,
            Ablation::LocOnly | Ablation::SalOnly => {
                h.kappa = 0.0;
                h.alpha = 0.0;
                h.mu = 0.0;
                h.gamma = 0.0;
                h.freeze_segmentation = true;
                if self == Ablation::SalOnly {
                    h.box_disc_weight = 0.0;
                }
            }
            Ablation::SegOnly => {
                h.lambda = 0.0;
                h.kappa = 0.0;
            }
        }
        h
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundingSettings {
    pub n_thresholds: usize,
    /// Clear mask entries outside the selected box.
    pub mask_in_box: bool,
}

impl Default for RoundingSettings {
    fn default() -> Self {
        RoundingSettings {
            n_thresholds: DEFAULT_THRESHOLDS,
            mask_in_box: false,
        }
    }
}

/// Contents of a `--config` file. `hyper` is a partial override object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub hyper: serde_json::Value,
    pub solver: serde_json::Value,
    pub rounding: serde_json::Value,
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Everything a run needs besides the instance. Hyperparameters are layered
/// as defaults < instance manifest < `hyper_overrides` < ablation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper_overrides: serde_json::Value,
    pub solver: SolverSettings,
    pub rounding: RoundingSettings,
    pub ablation: Ablation,
    /// Recorded for provenance; the solver itself is deterministic.
    pub seed: Option<u64>,
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) -> Result<()> {
    match (base, patch) {
        (_, serde_json::Value::Null) => Ok(()),
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                b.insert(k.clone(), v.clone());
            }
            Ok(())
        }
        (b @ serde_json::Value::Null, p @ serde_json::Value::Object(_)) => {
            *b = p.clone();
            Ok(())
        }
        _ => Err(Error::param("config", "override blocks must be JSON objects")),
    }
}

impl RunConfig {
    /// Layers a config file on top of `self`.
    pub fn with_file(mut self, file: &ConfigFile) -> Result<Self> {
        merge(&mut self.hyper_overrides, &file.hyper)?;
        let mut solver = serde_json::to_value(&self.solver)?;
        merge(&mut solver, &file.solver)?;
        self.solver = serde_json::from_value(solver)?;
        let mut rounding = serde_json::to_value(&self.rounding)?;
        merge(&mut rounding, &file.rounding)?;
        self.rounding = serde_json::from_value(rounding)?;
        if let Some(a) = file.ablation {
            self.ablation = a;
        }
        if file.seed.is_some() {
            self.seed = file.seed;
        }
        Ok(self)
    }

    /// Adds one hyperparameter override (highest precedence so far).
    pub fn set_hyper(&mut self, key: &str, value: serde_json::Value) -> Result<()> {
        let patch = serde_json::json!({ key: value });
        merge(&mut self.hyper_overrides, &patch)
    }

    /// Effective hyperparameters for `instance`.
    pub fn hyper_for(&self, instance: &ProblemInstance) -> Result<Hyperparameters> {
        let h = self.ablation.apply(&instance.hyper.overlay(&self.hyper_overrides)?);
        h.validate()?;
        Ok(h)
    }
}

/// Solved, rounded output of one instance.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub hyper: Hyperparameters,
    pub solution: qp::Solution,
    pub boxes: Vec<usize>,
    pub masks: Vec<FrameMask>,
}

/// Builds the matrices, solves the relaxation and rounds it.
pub fn run(instance: &ProblemInstance, cfg: &RunConfig) -> Result<RunOutput> {
    instance.validate()?;
    let hyper = cfg.hyper_for(instance)?;
    let mut inst = instance.clone();
    inst.hyper = hyper.clone();
    let m = ObjectiveMatrices::build(&inst)?;
    let qp = qp::assemble_qp(&inst, &m, &hyper)?;
    let solution = qp::solve(&qp, &cfg.solver);
    if solution.status == Status::Infeasible {
        return Err(Error::Infeasible(format!(
            "constraints admit no point (primal residual {:e})",
            solution.primal_residual
        )));
    }
    let v = solution.v.as_slice();
    let boxes = rounding::select_boxes(v, &inst);
    let mut masks = rounding::round_segmentation(v, &inst, &m.laplacians, cfg.rounding.n_thresholds);
    if cfg.rounding.mask_in_box {
        rounding::restrict_to_boxes(&mut masks, &inst, &boxes);
    }
    Ok(RunOutput {
        hyper,
        solution,
        boxes,
        masks,
    })
}

/// Runs several instances concurrently; results keep input order.
pub fn run_batch(instances: &[ProblemInstance], cfg: &RunConfig) -> Vec<Result<RunOutput>> {
    par::map_slice(instances, |inst| run(inst, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: String,
    pub selected_box: usize,
    /// Foreground superpixel indices.
    pub mask: Vec<usize>,
    pub threshold: Option<f64>,
    pub ncut: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub ablation: Ablation,
    pub hyper: Hyperparameters,
    pub solver: SolverSettings,
    pub rounding: RoundingSettings,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub format_version: u32,
    pub status: String,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Relaxed solution `(y; z)`.
    pub v: Vec<f64>,
    pub frames: Vec<FrameResult>,
    pub diagnostics: serde_json::Value,
    pub config: ConfigEcho,
}

impl ResultsFile {
    pub fn new(instance: &ProblemInstance, out: &RunOutput, cfg: &RunConfig) -> Result<Self> {
        let status = serde_json::to_value(out.solution.status)?;
        Ok(ResultsFile {
            format_version: FORMAT_VERSION,
            status: status.as_str().unwrap_or_default().to_owned(),
            objective: out.solution.objective,
            primal_residual: out.solution.primal_residual,
            dual_residual: out.solution.dual_residual,
            iterations: out.solution.iterations,
            v: out.solution.v.iter().copied().collect(),
            frames: instance
                .frames
                .iter()
                .zip(&out.boxes)
                .zip(&out.masks)
                .map(|((f, &b), m)| FrameResult {
                    frame_id: f.frame_id.clone(),
                    selected_box: b,
                    mask: rounding::mask_indices(&m.mask),
                    threshold: m.threshold,
                    ncut: m.ncut,
                })
                .collect(),
            diagnostics: serde_json::to_value(&out.solution.diagnostics)?,
            config: ConfigEcho {
                ablation: cfg.ablation,
                hyper: out.hyper.clone(),
                solver: cfg.solver.clone(),
                rounding: cfg.rounding.clone(),
                seed: cfg.seed,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: ResultsFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if r.format_version != FORMAT_VERSION {
            return Err(Error::Manifest {
                path: path.to_owned(),
                message: format!("unsupported format_version {}", r.format_version),
            });
        }
        Ok(r)
    }
}

/// Scores selected boxes and masks against the instance's ground truth.
pub fn evaluate(instance: &ProblemInstance, frames: &[FrameResult]) -> Result<EvaluationReport> {
    if frames.len() != instance.frames.len() {
        return Err(Error::Dimension {
            context: "results frames".into(),
            expected: instance.frames.len(),
            actual: frames.len(),
        });
    }
    let mut out = Vec::with_capacity(frames.len());
    for (f, r) in instance.frames.iter().zip(frames) {
        if f.frame_id != r.frame_id {
            return Err(Error::invalid("frame_id", Some(&r.frame_id), format!("results frame does not match instance frame {}", f.frame_id)));
        }
        if r.selected_box >= f.m_box() {
            return Err(Error::invalid("selected_box", Some(&r.frame_id), format!("box {} out of range", r.selected_box)));
        }
        if let Some(&j) = r.mask.iter().find(|&&j| j >= f.n_sp()) {
            return Err(Error::invalid("mask", Some(&r.frame_id), format!("superpixel {j} out of range")));
        }
        let gt = f.ground_truth.as_ref();
        let iou_box = match gt.and_then(|g| g.rect) {
            Some(g) => Some(evaluation::iou_rect(&f.box_rects[r.selected_box], &g)?),
            None => None,
        };
        let iou_mask = match gt.and_then(|g| g.mask.as_ref()) {
            Some(g) => {
                let mut pred = vec![false; f.n_sp()];
                r.mask.iter().for_each(|&j| pred[j] = true);
                let mut truth = vec![false; f.n_sp()];
                g.iter().for_each(|&j| truth[j] = true);
                Some(evaluation::iou_mask(&pred, &truth, &f.sp_pixel_counts)?)
            }
            None => None,
        };
        out.push(FrameEvaluation {
            frame_id: f.frame_id.clone(),
            class: f.class.clone(),
            selected_box: r.selected_box,
            iou_box,
            iou_mask,
        });
    }
    Ok(evaluation::aggregate(out))
}

/// Convenience: run and evaluate in one step.
pub fn run_and_evaluate(instance: &ProblemInstance, cfg: &RunConfig) -> Result<(RunOutput, EvaluationReport)> {
    let out = run(instance, cfg)?;
    let results = ResultsFile::new(instance, &out, cfg)?;
    let report = evaluate(instance, &results.frames)?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::synth;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!(Ablation::parse("nope").is_err());
    }

    #[test]
    fn ablations_only_touch_weights() {
        let h = Hyperparameters::default();
        assert_eq!(Ablation::Full.apply(&h), h);
        assert_eq!(Ablation::LocSeg.apply(&h).kappa, 0.0);
        let seg = Ablation::SegOnly.apply(&h);
        assert!(seg.lambda == 0.0 && seg.kappa == 0.0);
        let s = Ablation::SalOnly.apply(&h);
        assert!(s.freeze_segmentation && s.box_disc_weight == 0.0 && s.gamma == 0.0);
        let l = Ablation::LocOnly.apply(&h);
        assert!(l.freeze_segmentation && l.box_disc_weight == 1.0);
    }

    #[test]
    fn precedence_instance_then_file_then_flags() {
        let mut inst = synth::toy_instance();
        inst.hyper.kappa = 3.0;
        inst.hyper.mu = 0.5;
        let file = ConfigFile {
            hyper: serde_json::json!({"mu": 0.25, "alpha": 0.7}),
            ..ConfigFile::default()
        };
        let mut cfg = RunConfig::default().with_file(&file).unwrap();
        cfg.set_hyper("alpha", serde_json::json!(0.9)).unwrap();
        let h = cfg.hyper_for(&inst).unwrap();
        assert_eq!((h.kappa, h.mu, h.alpha), (3.0, 0.25, 0.9));
        cfg.ablation = Ablation::LocSeg;
        assert_eq!(cfg.hyper_for(&inst).unwrap().kappa, 0.0);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let file = ConfigFile {
            solver: serde_json::json!({"tol_feaz": 1e-3}),
            ..ConfigFile::default()
        };
        assert!(RunConfig::default().with_file(&file).is_err());
        let bad_hyper = RunConfig {
            hyper_overrides: serde_json::json!({"kapa": 1.0}),
            ..RunConfig::default()
        };
        assert!(bad_hyper.hyper_for(&synth::toy_instance()).is_err());
    }

    #[test]
    fn toy_selects_planted_box() {
        let toy = synth::toy_instance();
        let out = run(&toy, &RunConfig::default()).unwrap();
        assert_eq!(out.solution.status, Status::Optimal);
        assert_eq!(out.boxes, vec![0]);
    }
}
