//! Problem data model: frames, superpixel/box features, colour histograms and
//! hyperparameters, plus validation and the global index layout shared by
//! every matrix builder.

mod io;
pub mod synth;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use io::{load_instance, read_fgcm, save_instance, save_instance_indexed, write_atomic, write_fgcm, FORMAT_VERSION, FGCM_MAGIC};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_proper(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Rect::new(a[0], a[1], a[2], a[3])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rect: Option<Rect>,
    /// Foreground superpixels (frame-local indices).
    pub mask: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub class: Option<String>,
    /// n_sp × 2, normalized image coordinates.
    pub sp_positions: DMatrix<f64>,
    /// n_sp × 3, mean colour per channel in [0,1].
    pub sp_colors: DMatrix<f64>,
    pub sp_pixel_counts: Vec<u64>,
    /// `memberships[i]` lists the frame-local superpixels inside box `i`.
    pub memberships: Vec<Vec<usize>>,
    pub box_rects: Vec<Rect>,
    pub sp_saliency_raw: Vec<f64>,
    pub box_saliency_raw: Vec<f64>,
    pub ground_truth: Option<GroundTruth>,
}

impl Frame {
    pub fn n_sp(&self) -> usize {
        self.sp_pixel_counts.len()
    }

    pub fn m_box(&self) -> usize {
        self.memberships.len()
    }

    /// Number of boxes containing each superpixel.
    pub fn coverage(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_sp()];
        for set in &self.memberships {
            for &j in set {
                c[j] += 1;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureBlock {
    /// rows × dim feature matrix.
    Raw(DMatrix<f64>),
    /// rows × rows symmetric PSD kernel.
    Kernel(DMatrix<f64>),
}

impl FeatureBlock {
    pub fn rows(&self) -> usize {
        match self {
            FeatureBlock::Raw(m) | FeatureBlock::Kernel(m) => m.nrows(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FeatureBlock::Raw(_) => "raw_features",
            FeatureBlock::Kernel(_) => "precomputed_kernel",
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        match self {
            FeatureBlock::Raw(m) | FeatureBlock::Kernel(m) => m,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            FeatureBlock::Raw(m) => {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(field, None, "non-finite feature entry"));
                }
            }
            FeatureBlock::Kernel(k) => {
                if k.nrows() != k.ncols() {
                    return Err(Error::invalid(field, None, format!("kernel is {}x{}, not square", k.nrows(), k.ncols())));
                }
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(field, None, "non-finite kernel entry"));
                }
                let asym = linalg::max_asymmetry(k);
                if asym > 1e-9 {
                    return Err(Error::invalid(field, None, format!("kernel asymmetry {asym:e} exceeds 1e-9")));
                }
                let min_eig = linalg::min_eigenvalue(k);
                if min_eig < -1e-8 {
                    return Err(Error::invalid(field, None, format!("kernel min eigenvalue {min_eig:e} below -1e-8")));
                }
            }
        }
        Ok(())
    }
}

/// Per-frame colour histograms: `per_frame[f]` is d_bins × n_sp(f), column
/// `j` holding the pixel counts of superpixel `j` per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBlock {
    pub d_bins: usize,
    pub per_frame: Vec<DMatrix<f64>>,
}

/// Default bin count: 7 bins per RGB channel.
pub const DEFAULT_BINS: usize = 7 * 7 * 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FScale {
    None,
    #[default]
    Pairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FPairs {
    #[default]
    All,
    Consecutive,
}

/// Objective weights and constraint parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Ridge regularizer of the superpixel classifier.
    pub beta_s: f64,
    /// Ridge regularizer of the box classifier.
    pub beta_b: f64,
    /// Foreground histogram-matching weight.
    pub kappa: f64,
    /// Weight of the whole localization block.
    pub lambda: f64,
    /// Spatial smoothness (Laplacian) weight.
    pub alpha: f64,
    /// Superpixel saliency weight.
    pub mu: f64,
    /// Box saliency weight (inside the localization block).
    pub nu: f64,
    /// Minimum foreground fraction of the selected box.
    pub gamma: f64,
    /// Maximum foreground fraction of the selected box.
    pub eta: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub saliency_floor: f64,
    pub f_scale: FScale,
    pub f_pairs: FPairs,
    /// Symmetric k-nearest-neighbour sparsification of W; dense when unset.
    pub knn: Option<usize>,
    /// Multiplier on the superpixel discriminative term (1 = plain objective).
    pub seg_disc_weight: f64,
    /// Multiplier on the box discriminative term (1 = plain objective).
    pub box_disc_weight: f64,
    /// Pin every superpixel variable to 0.
    pub freeze_segmentation: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            beta_s: 0.1,
            beta_b: 0.1,
            kappa: 10.0,
            lambda: 10.0,
            alpha: 0.1,
            mu: 0.01,
            nu: 0.001,
            gamma: 0.3,
            eta: 0.9,
            lambda_p: 0.001,
            lambda_c: 0.05,
            saliency_floor: 1e-6,
            f_scale: FScale::Pairs,
            f_pairs: FPairs::All,
            knn: None,
            seg_disc_weight: 1.0,
            box_disc_weight: 1.0,
            freeze_segmentation: false,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("nu", self.nu),
            ("lambda_p", self.lambda_p),
            ("lambda_c", self.lambda_c),
            ("seg_disc_weight", self.seg_disc_weight),
            ("box_disc_weight", self.box_disc_weight),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("hyper.{name}"), None, format!("{w} must be finite and >= 0")));
            }
        }
        for (name, b) in [("beta_s", self.beta_s), ("beta_b", self.beta_b)] {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::invalid(format!("hyper.{name}"), None, format!("{b} must be > 0")));
            }
        }
        if !(0.0 <= self.gamma && self.gamma <= self.eta && self.eta <= 1.0) {
            return Err(Error::invalid(
                "hyper.gamma",
                None,
                format!("need 0 <= gamma <= eta <= 1, got gamma={} eta={}", self.gamma, self.eta),
            ));
        }
        if !(self.saliency_floor > 0.0 && self.saliency_floor < 1.0) {
            return Err(Error::invalid("hyper.saliency_floor", None, "must lie in (0,1)"));
        }
        if self.knn == Some(0) {
            return Err(Error::invalid("hyper.knn", None, "must be >= 1 when set"));
        }
        Ok(())
    }

    /// Applies a JSON object of field overrides on top of `self`.
    pub fn overlay(&self, patch: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        match (base.as_object_mut(), patch) {
            (Some(obj), serde_json::Value::Object(p)) => {
                for (k, v) in p {
                    obj.insert(k.clone(), v.clone());
                }
            }
            (_, serde_json::Value::Null) => {}
            _ => return Err(Error::param("hyper", "override block must be a JSON object")),
        }
        Ok(serde_json::from_value(base)?)
    }
}

/// `-log(max(raw, floor))`.
pub fn saliency_cost(raw: f64, floor: f64) -> f64 {
    -raw.max(floor).ln()
}

/// Offsets of each frame's superpixels and boxes in the global vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub sp_offsets: Vec<usize>,
    pub box_offsets: Vec<usize>,
    pub n_sp_total: usize,
    pub n_box_total: usize,
}

impl Layout {
    pub fn from_frames(frames: &[Frame]) -> Self {
        let mut sp_offsets = Vec::with_capacity(frames.len());
        let mut box_offsets = Vec::with_capacity(frames.len());
        let (mut ns, mut nb) = (0, 0);
        for f in frames {
            sp_offsets.push(ns);
            box_offsets.push(nb);
            ns += f.n_sp();
            nb += f.m_box();
        }
        Layout {
            sp_offsets,
            box_offsets,
            n_sp_total: ns,
            n_box_total: nb,
        }
    }

    /// Length of the stacked variable vector `(y; z)`.
    pub fn n_vars(&self) -> usize {
        self.n_sp_total + self.n_box_total
    }

    pub fn sp_index(&self, frame: usize, j: usize) -> usize {
        self.sp_offsets[frame] + j
    }

    /// Position of box `i` of `frame` inside `(y; z)`.
    pub fn box_var(&self, frame: usize, i: usize) -> usize {
        self.n_sp_total + self.box_offsets[frame] + i
    }

    pub fn sp_range(&self, frame: usize, frames: &[Frame]) -> std::ops::Range<usize> {
        let s = self.sp_offsets[frame];
        s..s + frames[frame].n_sp()
    }

    pub fn box_range(&self, frame: usize, frames: &[Frame]) -> std::ops::Range<usize> {
        let s = self.box_offsets[frame];
        s..s + frames[frame].m_box()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub frames: Vec<Frame>,
    /// One row per superpixel, global indexing.
    pub sp_features: FeatureBlock,
    /// One row per box, global indexing.
    pub box_features: FeatureBlock,
    pub histograms: HistogramBlock,
    pub hyper: Hyperparameters,
}

impl ProblemInstance {
    pub fn layout(&self) -> Layout {
        Layout::from_frames(&self.frames)
    }

    /// Superpixel saliency costs, global order.
    pub fn sp_saliency_cost(&self) -> Vec<f64> {
        let floor = self.hyper.saliency_floor;
        self.frames
            .iter()
            .flat_map(|f| f.sp_saliency_raw.iter().map(move |&r| saliency_cost(r, floor)))
            .collect()
    }

    /// Box saliency costs, global order.
    pub fn box_saliency_cost(&self) -> Vec<f64> {
        let floor = self.hyper.saliency_floor;
        self.frames
            .iter()
            .flat_map(|f| f.box_saliency_raw.iter().map(move |&r| saliency_cost(r, floor)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.frames.is_empty() {
            return Err(Error::invalid("frames", None, "instance has no frames"));
        }
        let mut ids = std::collections::HashSet::new();
        for f in &self.frames {
            validate_frame(f)?;
            if !ids.insert(f.frame_id.as_str()) {
                return Err(Error::invalid("frame_id", Some(&f.frame_id), "duplicate frame id"));
            }
        }
        let layout = self.layout();
        if self.sp_features.rows() != layout.n_sp_total {
            return Err(Error::invalid(
                "sp_features",
                None,
                format!("{} rows, expected {} (total superpixels)", self.sp_features.rows(), layout.n_sp_total),
            ));
        }
        if self.box_features.rows() != layout.n_box_total {
            return Err(Error::invalid(
                "box_features",
                None,
                format!("{} rows, expected {} (total boxes)", self.box_features.rows(), layout.n_box_total),
            ));
        }
        self.sp_features.validate("sp_features")?;
        self.box_features.validate("box_features")?;
        self.validate_histograms()
    }

    fn validate_histograms(&self) -> Result<()> {
        let h = &self.histograms;
        if h.per_frame.len() != self.frames.len() {
            return Err(Error::invalid(
                "histograms",
                None,
                format!("{} histogram blocks for {} frames", h.per_frame.len(), self.frames.len()),
            ));
        }
        for (f, m) in self.frames.iter().zip(&h.per_frame) {
            let id = Some(f.frame_id.as_str());
            if m.nrows() != h.d_bins {
                return Err(Error::invalid("histograms", id, format!("{} bins, expected {}", m.nrows(), h.d_bins)));
            }
            if m.ncols() != f.n_sp() {
                return Err(Error::invalid("histograms", id, format!("{} columns, expected n_sp={}", m.ncols(), f.n_sp())));
            }
            for j in 0..m.ncols() {
                let col = m.column(j);
                if col.iter().any(|&v| !(v >= 0.0 && v.fract() == 0.0 && v.is_finite())) {
                    return Err(Error::invalid("histograms", id, format!("column {j} has a negative or non-integer count")));
                }
                let sum: f64 = col.iter().sum();
                if sum != f.sp_pixel_counts[j] as f64 {
                    return Err(Error::invalid(
                        "histograms",
                        id,
                        format!("column {j} sums to {sum}, but sp_pixel_counts[{j}] = {}", f.sp_pixel_counts[j]),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn validate_frame(f: &Frame) -> Result<()> {
    let id = Some(f.frame_id.as_str());
    let n = f.n_sp();
    let m = f.m_box();
    if n == 0 {
        return Err(Error::invalid("n_sp", id, "frame has no superpixels"));
    }
    if m == 0 {
        return Err(Error::invalid("m_box", id, "frame has no boxes"));
    }
    let shape = |field: &str, rows: usize, cols: usize, er: usize, ec: usize| {
        if rows != er || cols != ec {
            Err(Error::invalid(field, id, format!("shape {rows}x{cols}, expected {er}x{ec}")))
        } else {
            Ok(())
        }
    };
    shape("sp_positions", f.sp_positions.nrows(), f.sp_positions.ncols(), n, 2)?;
    shape("sp_colors", f.sp_colors.nrows(), f.sp_colors.ncols(), n, 3)?;
    shape("sp_saliency", f.sp_saliency_raw.len(), 1, n, 1)?;
    shape("box_saliency", f.box_saliency_raw.len(), 1, m, 1)?;
    shape("box_rects", f.box_rects.len(), 1, m, 1)?;
    if f.sp_positions.iter().chain(f.sp_colors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("sp_positions/sp_colors", id, "non-finite entry"));
    }
    if let Some(j) = f.sp_pixel_counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid("sp_pixel_counts", id, format!("superpixel {j} has zero pixels")));
    }
    for (i, set) in f.memberships.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::invalid("memberships", id, format!("box {i}: empty membership")));
        }
        let mut seen = vec![false; n];
        for &j in set {
            if j >= n {
                return Err(Error::invalid("memberships", id, format!("box {i}: superpixel index {j} out of range [0, {n})")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid("memberships", id, format!("box {i}: duplicate superpixel {j}")));
            }
        }
    }
    for (name, vals) in [("sp_saliency", &f.sp_saliency_raw), ("box_saliency", &f.box_saliency_raw)] {
        if let Some(v) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(name, id, format!("saliency {v} outside [0,1]")));
        }
    }
    if let Some(i) = f.box_rects.iter().position(|r| !r.is_proper()) {
        return Err(Error::invalid("box_rects", id, format!("box {i}: need x_min < x_max and y_min < y_max")));
    }
    if let Some(gt) = &f.ground_truth {
        if let Some(r) = &gt.rect {
            if !r.is_proper() {
                return Err(Error::invalid("ground_truth.box", id, "degenerate rectangle"));
            }
        }
        if let Some(mask) = &gt.mask {
            if let Some(j) = mask.iter().find(|&&j| j >= n) {
                return Err(Error::invalid("ground_truth.mask", id, format!("superpixel index {j} out of range")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saliency_cost_values() {
        assert_eq!(saliency_cost(1.0, 1e-6), 0.0);
        assert!((saliency_cost(0.0, 1e-6) - 13.815510557964274).abs() < 1e-12);
        assert!((saliency_cost(0.5, 1e-6) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saliency_cost_monotone_and_zero_only_at_one() {
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(saliency_cost(w[1], 1e-6) <= saliency_cost(w[0], 1e-6));
        }
        for &r in &grid[..grid.len() - 1] {
            assert!(saliency_cost(r, 1e-6) > 0.0);
        }
    }

    #[test]
    fn hyper_defaults_are_valid() {
        let h = Hyperparameters::default();
        h.validate().unwrap();
        assert_eq!((h.gamma, h.eta, h.kappa, h.lambda, h.nu), (0.3, 0.9, 10.0, 10.0, 0.001));
        assert_eq!((h.lambda_p, h.lambda_c), (0.001, 0.05));
    }

    #[test]
    fn hyper_rejects_gamma_above_eta() {
        let h = Hyperparameters { gamma: 0.8, eta: 0.5, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparameters { beta_s: 0.0, ..Default::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn overlay_replaces_only_named_fields() {
        let h = Hyperparameters::default()
            .overlay(&serde_json::json!({"kappa": 0.0, "f_scale": "none"}))
            .unwrap();
        assert_eq!(h.kappa, 0.0);
        assert_eq!(h.f_scale, FScale::None);
        assert_eq!(h.lambda, 10.0);
        assert!(Hyperparameters::default().overlay(&serde_json::json!({"kapa": 1})).is_err());
    }
}
