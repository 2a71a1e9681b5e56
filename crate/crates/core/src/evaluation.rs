//! Localization (CorLoc) and segmentation (Jaccard) metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Rect;

/// Intersection over union of two rectangles.
pub fn iou_rect(a: &Rect, b: &Rect) -> Result<f64> {
    if !(a.is_proper() && a.area() > 0.0) || !(b.is_proper() && b.area() > 0.0) {
        return Err(Error::param("rect", "degenerate rectangle (zero area)"));
    }
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Localization counts as correct when IoU is strictly above this.
pub const CORLOC_IOU: f64 = 0.5;

/// Percentage of frames whose prediction overlaps ground truth with
/// IoU > 0.5. Frames without ground truth are skipped.
pub fn corloc(predicted: &[Rect], gt: &[Option<Rect>]) -> Result<f64> {
    if predicted.len() != gt.len() {
        return Err(Error::Dimension {
            context: "corloc frames".into(),
            expected: gt.len(),
            actual: predicted.len(),
        });
    }
    let mut evaluated = 0usize;
    let mut hits = 0usize;
    for (p, g) in predicted.iter().zip(gt) {
        let Some(g) = g else { continue };
        evaluated += 1;
        if iou_rect(p, g)? > CORLOC_IOU {
            hits += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::param("ground_truth", "no frame has a ground-truth box"));
    }
    Ok(100.0 * hits as f64 / evaluated as f64)
}

/// Pixel-weighted Jaccard index of two superpixel masks; 1 when both are
/// empty.
pub fn iou_mask(pred: &[bool], gt: &[bool], pixel_counts: &[u64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != pixel_counts.len() {
        return Err(Error::Dimension {
            context: "mask length".into(),
            expected: pixel_counts.len(),
            actual: if pred.len() != pixel_counts.len() { pred.len() } else { gt.len() },
        });
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for ((&p, &g), &c) in pred.iter().zip(gt).zip(pixel_counts) {
        if p && g {
            inter += c;
        }
        if p || g {
            union += c;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub selected_box: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_box: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_mask: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub corloc: f64,
    pub evaluated_frames: usize,
    pub per_class_corloc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Mean over evaluated frames.
    pub mean_iou: f64,
    /// Mean of per-class means.
    pub mean_iou_per_class: f64,
    pub per_class_iou: BTreeMap<String, f64>,
    pub evaluated_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub frames: Vec<FrameEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization: Option<Localization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

const UNTAGGED: &str = "_all";

fn class_means(frames: &[FrameEvaluation], value: impl Fn(&FrameEvaluation) -> Option<f64>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for f in frames {
        if let Some(v) = value(f) {
            let e = acc.entry(f.class.clone().unwrap_or_else(|| UNTAGGED.into())).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Aggregates per-frame values. Sections without any ground truth are
/// omitted. Aggregates are sums over frames, so frame order is irrelevant
/// up to floating-point summation order.
pub fn aggregate(mut frames: Vec<FrameEvaluation>) -> EvaluationReport {
    // Canonical order makes the aggregates bitwise independent of input order.
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let boxes: Vec<f64> = frames.iter().filter_map(|f| f.iou_box).collect();
    let localization = (!boxes.is_empty()).then(|| Localization {
        corloc: 100.0 * boxes.iter().filter(|&&v| v > CORLOC_IOU).count() as f64 / boxes.len() as f64,
        evaluated_frames: boxes.len(),
        per_class_corloc: class_means(&frames, |f| f.iou_box.map(|v| if v > CORLOC_IOU { 100.0 } else { 0.0 })),
    });
    let masks: Vec<f64> = frames.iter().filter_map(|f| f.iou_mask).collect();
    let segmentation = (!masks.is_empty()).then(|| {
        let per_class = class_means(&frames, |f| f.iou_mask);
        Segmentation {
            mean_iou: masks.iter().sum::<f64>() / masks.len() as f64,
            mean_iou_per_class: per_class.values().sum::<f64>() / per_class.len() as f64,
            per_class_iou: per_class,
            evaluated_frames: masks.len(),
        }
    });
    EvaluationReport {
        format_version: crate::instance::FORMAT_VERSION,
        frames,
        localization,
        segmentation,
    }
}
