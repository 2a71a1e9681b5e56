//! Seeded synthetic instances with a planted object, plus the five-superpixel
//! toy instance used for golden dumps.
//!
//! Superpixels sit on a regular grid of square cells. Each frame has one
//! planted box whose central cells are foreground; every other box avoids the
//! foreground cells, so the planted (mask, box) pair is feasible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureBlock, Frame, GroundTruth, HistogramBlock, Hyperparameters, ProblemInstance, Rect, DEFAULT_BINS};
use crate::error::{Error, Result};

/// Side of one grid cell in pixels.
pub const CELL_PX: f64 = 16.0;
const BINS_PER_CHANNEL: usize = 7;
const MAX_BOX_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    /// Background clusters and colours shared by all frames.
    #[default]
    VideoLike,
    /// Every frame draws its own background clusters and colours.
    ImageLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub frames: usize,
    pub n_sp: usize,
    pub m_box: usize,
    /// Cells in the planted box.
    pub box_cells: usize,
    /// Share of the planted box's cells that are foreground.
    pub fg_fraction: f64,
    /// Inclusive range of cells in each non-planted box.
    pub distractor_cells: (usize, usize),
    /// Largest IoU allowed between any two boxes of a frame.
    pub max_box_overlap: f64,
    pub sp_dim: usize,
    pub box_dim: usize,
    /// Distance between the foreground mean and the background means.
    pub sp_separation: f64,
    pub sp_noise: f64,
    /// Distance between the planted box's features and the others'.
    pub box_separation: f64,
    pub box_noise: f64,
    pub background: Background,
    pub bg_clusters: usize,
    /// Spread of background cluster means around the origin.
    pub bg_spread: f64,
    /// Per-frame perturbation of shared background means (video-like only).
    pub bg_jitter: f64,
    pub saliency_fg: (f64, f64),
    pub saliency_bg: (f64, f64),
    /// Gaussian noise added to superpixel saliency before clipping to [0, 1].
    pub saliency_noise: f64,
    /// Inclusive range of pixels per superpixel.
    pub pixels: (u64, u64),
    pub color_noise: f64,
    pub class: String,
    pub hyper: Hyperparameters,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 5,
            n_sp: 40,
            m_box: 5,
            box_cells: 6,
            fg_fraction: 0.5,
            distractor_cells: (6, 6),
            max_box_overlap: 0.2,
            sp_dim: 8,
            box_dim: 8,
            sp_separation: 8.0,
            sp_noise: 1.0,
            box_separation: 8.0,
            box_noise: 1.0,
            background: Background::VideoLike,
            bg_clusters: 3,
            bg_spread: 1.0,
            bg_jitter: 0.1,
            saliency_fg: (0.6, 0.9),
            saliency_bg: (0.05, 0.35),
            saliency_noise: 0.0,
            pixels: (8, 16),
            color_noise: 6.0,
            class: "synth".into(),
            hyper: Hyperparameters::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    cols: usize,
    rows: usize,
    n: usize,
}

impl Grid {
    fn new(n: usize) -> Self {
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols);
        Grid { cols, rows, n }
    }

    fn cell(&self, cx: usize, cy: usize) -> Option<usize> {
        let j = cy * self.cols + cx;
        (cx < self.cols && cy < self.rows && j < self.n).then_some(j)
    }

    fn center(&self, j: usize) -> (f64, f64) {
        let (cx, cy) = (j % self.cols, j / self.cols);
        ((cx as f64 + 0.5) * CELL_PX, (cy as f64 + 0.5) * CELL_PX)
    }
}

/// Cell rectangle `[x0, x1) × [y0, y1)` in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl CellRect {
    fn cells(&self, g: &Grid) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        for cy in self.y0..self.y1 {
            for cx in self.x0..self.x1 {
                out.push(g.cell(cx, cy)?);
            }
        }
        Some(out)
    }

    fn rect(&self) -> Rect {
        Rect::new(
            self.x0 as f64 * CELL_PX,
            self.y0 as f64 * CELL_PX,
            self.x1 as f64 * CELL_PX,
            self.y1 as f64 * CELL_PX,
        )
    }
}

fn shape_for(cells: usize, g: &Grid) -> Result<(usize, usize)> {
    // Most square factorization that fits the grid.
    let mut best = None;
    for w in 1..=cells {
        if cells % w != 0 {
            continue;
        }
        let h = cells / w;
        if w > g.cols || h > g.rows - usize::from(g.n < g.cols * g.rows) {
            continue;
        }
        let skew = w.abs_diff(h);
        if best.is_none_or(|(_, _, s)| skew < s) {
            best = Some((w, h, skew));
        }
    }
    best.map(|(w, h, _)| (w, h))
        .ok_or_else(|| Error::param("box_cells", format!("{cells} cells do not fit a {}x{} grid", g.cols, g.rows)))
}

fn iou(a: &Rect, b: &Rect) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

fn bin_of(rgb: [f64; 3]) -> usize {
    let b = |v: f64| ((v.clamp(0.0, 255.999) / 256.0) * BINS_PER_CHANNEL as f64) as usize;
    (b(rgb[0]) * BINS_PER_CHANNEL + b(rgb[1])) * BINS_PER_CHANNEL + b(rgb[2])
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = DVector::from_fn(dim, |_, _| n.sample(rng));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, avoid: &[[f64; 3]], min_dist: f64) -> [f64; 3] {
    loop {
        let c = [rng.random_range(20.0..235.0), rng.random_range(20.0..235.0), rng.random_range(20.0..235.0)];
        let far = avoid
            .iter()
            .all(|a| ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2) + (a[2] - c[2]).powi(2)).sqrt() >= min_dist);
        if far {
            return c;
        }
    }
}

/// Pixel-count histogram of `pixels` samples around `color`.
fn sample_histogram(rng: &mut ChaCha8Rng, color: [f64; 3], pixels: u64, noise: Normal<f64>) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..pixels {
        let px = [color[0] + noise.sample(rng), color[1] + noise.sample(rng), color[2] + noise.sample(rng)];
        *counts.entry(bin_of(px)).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

fn check_spec(spec: &SynthSpec) -> Result<()> {
    spec.hyper.validate()?;
    let positive = [
        ("frames", spec.frames),
        ("n_sp", spec.n_sp),
        ("m_box", spec.m_box),
        ("box_cells", spec.box_cells),
        ("sp_dim", spec.sp_dim),
        ("box_dim", spec.box_dim),
        ("bg_clusters", spec.bg_clusters),
    ];
    for (name, v) in positive {
        if v == 0 {
            return Err(Error::param(name, "must be positive"));
        }
    }
    let finite = [
        spec.sp_separation,
        spec.sp_noise,
        spec.box_separation,
        spec.box_noise,
        spec.bg_spread,
        spec.bg_jitter,
        spec.saliency_noise,
        spec.color_noise,
    ];
    if finite.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param("spec", "separations, noises and spreads must be finite and nonnegative"));
    }
    for (name, (lo, hi)) in [("saliency_fg", spec.saliency_fg), ("saliency_bg", spec.saliency_bg)] {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::param(name, "range must satisfy 0 <= lo <= hi <= 1"));
        }
    }
    if spec.pixels.0 == 0 || spec.pixels.0 > spec.pixels.1 {
        return Err(Error::param("pixels", "range must satisfy 1 <= lo <= hi"));
    }
    if spec.distractor_cells.0 == 0 || spec.distractor_cells.0 > spec.distractor_cells.1 {
        return Err(Error::param("distractor_cells", "range must satisfy 1 <= lo <= hi"));
    }
    if spec.box_cells > spec.n_sp {
        return Err(Error::param("box_cells", "planted box is larger than the frame"));
    }
    let n_fg = planted_fg_count(spec);
    if n_fg == 0 {
        return Err(Error::param("fg_fraction", "planted foreground is empty"));
    }
    let frac = n_fg as f64 / spec.box_cells as f64;
    let (g, e) = (spec.hyper.gamma, spec.hyper.eta);
    if frac < g || frac > e {
        return Err(Error::Infeasible(format!(
            "planted foreground fraction {frac} of the planted box lies outside [gamma={g}, eta={e}]"
        )));
    }
    Ok(())
}

fn planted_fg_count(spec: &SynthSpec) -> usize {
    (spec.fg_fraction * spec.box_cells as f64).round() as usize
}

struct FrameLayout {
    boxes: Vec<CellRect>,
    planted: usize,
    fg: Vec<usize>,
}

fn layout_frame(rng: &mut ChaCha8Rng, spec: &SynthSpec, g: &Grid, frame_id: &str) -> Result<FrameLayout> {
    let (w, h) = shape_for(spec.box_cells, g)?;
    let mut tries = 0;
    let planted = loop {
        tries += 1;
        if tries > MAX_BOX_ATTEMPTS {
            return Err(Error::Infeasible(format!("frame {frame_id}: no room for the planted box")));
        }
        let x0 = rng.random_range(0..=g.cols - w);
        let y0 = rng.random_range(0..=g.rows - h);
        let r = CellRect { x0, y0, x1: x0 + w, y1: y0 + h };
        if r.cells(g).is_some() {
            break r;
        }
    };
    let cells = planted.cells(g).expect("checked above");
    // Foreground: the cells closest to the box centre, ties by index.
    let (mx, my) = ((planted.x0 + planted.x1) as f64 / 2.0, (planted.y0 + planted.y1) as f64 / 2.0);
    let mut by_dist: Vec<(f64, usize)> = cells
        .iter()
        .map(|&j| {
            let (cx, cy) = ((j % g.cols) as f64 + 0.5, (j / g.cols) as f64 + 0.5);
            ((cx - mx).powi(2) + (cy - my).powi(2), j)
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut fg: Vec<usize> = by_dist[..planted_fg_count(spec)].iter().map(|&(_, j)| j).collect();
    fg.sort_unstable();

    let shapes: Vec<(usize, usize)> = (1..=g.cols)
        .flat_map(|w| (1..=g.rows).map(move |h| (w, h)))
        .filter(|&(w, h)| (spec.distractor_cells.0..=spec.distractor_cells.1).contains(&(w * h)) && w.abs_diff(h) <= 2)
        .collect();
    if shapes.is_empty() {
        return Err(Error::param("distractor_cells", "no box shape of that size fits the grid"));
    }
    let gt = planted.rect();
    let mut others: Vec<CellRect> = Vec::new();
    let mut attempts = 0;
    while others.len() + 1 < spec.m_box {
        attempts += 1;
        if attempts > MAX_BOX_ATTEMPTS {
            return Err(Error::Infeasible(format!(
                "frame {frame_id}: could not place {} distractor boxes away from the planted foreground",
                spec.m_box - 1
            )));
        }
        let (bw, bh) = shapes[rng.random_range(0..shapes.len())];
        let x0 = rng.random_range(0..=g.cols - bw);
        let y0 = rng.random_range(0..=g.rows - bh);
        let r = CellRect { x0, y0, x1: x0 + bw, y1: y0 + bh };
        let Some(cells) = r.cells(g) else { continue };
        if cells.iter().any(|j| fg.binary_search(j).is_ok()) || r == planted || others.contains(&r) {
            continue;
        }
        if iou(&r.rect(), &gt) >= 0.4 {
            continue;
        }
        if others.iter().chain(std::iter::once(&planted)).any(|o| iou(&o.rect(), &r.rect()) > spec.max_box_overlap) {
            continue;
        }
        others.push(r);
    }
    let planted_idx = rng.random_range(0..spec.m_box);
    let mut boxes = others;
    boxes.insert(planted_idx, planted);
    Ok(FrameLayout { boxes, planted: planted_idx, fg })
}

/// Generates a seeded instance with one planted object per frame.
///
/// Identical `(spec, seed)` pairs produce identical instances.
pub fn synth_instance(spec: &SynthSpec, seed: u64) -> Result<ProblemInstance> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid::new(spec.n_sp);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let color_noise = Normal::new(0.0, spec.color_noise.max(1e-9)).unwrap();

    let fg_dir = random_unit(&mut rng, spec.sp_dim);
    let fg_mean = &fg_dir * spec.sp_separation;
    let box_dir = random_unit(&mut rng, spec.box_dim);
    let fg_color = random_color(&mut rng, &[], 0.0);

    let draw_bg = |rng: &mut ChaCha8Rng| -> (Vec<DVector<f64>>, Vec<[f64; 3]>) {
        let mut means = Vec::new();
        let mut colors: Vec<[f64; 3]> = Vec::new();
        for _ in 0..spec.bg_clusters {
            // Keep background means off the foreground direction.
            let mut m = DVector::from_fn(spec.sp_dim, |_, _| unit.sample(rng) * spec.bg_spread);
            let along = m.dot(&fg_dir);
            m -= &fg_dir * along;
            means.push(m);
            let mut avoid = colors.clone();
            avoid.push(fg_color);
            colors.push(random_color(rng, &avoid, 60.0));
        }
        (means, colors)
    };
    let shared_bg = draw_bg(&mut rng);

    // Foreground histogram templates shared by every frame, so the planted
    // masks have identical colour histograms.
    let n_fg = planted_fg_count(spec);
    let fg_templates: Vec<(u64, Vec<(usize, f64)>)> = (0..n_fg)
        .map(|_| {
            let p = rng.random_range(spec.pixels.0..=spec.pixels.1);
            (p, sample_histogram(&mut rng, fg_color, p, color_noise))
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut sp_rows: Vec<DVector<f64>> = Vec::new();
    let mut box_rows: Vec<DVector<f64>> = Vec::new();
    let mut hists = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let frame_id = format!("f{k:03}");
        let lay = layout_frame(&mut rng, spec, &g, &frame_id)?;
        let (bg_means, bg_colors) = match spec.background {
            Background::VideoLike => {
                let means = shared_bg
                    .0
                    .iter()
                    .map(|m| m + DVector::from_fn(spec.sp_dim, |_, _| unit.sample(&mut rng) * spec.bg_jitter))
                    .collect();
                (means, shared_bg.1.clone())
            }
            Background::ImageLike => draw_bg(&mut rng),
        };

        let n = spec.n_sp;
        let mut positions = DMatrix::zeros(n, 2);
        let mut colors = DMatrix::zeros(n, 3);
        let mut pixel_counts = vec![0u64; n];
        let mut saliency = vec![0.0; n];
        let mut hist = DMatrix::zeros(DEFAULT_BINS, n);
        let mut fg_slot = 0;
        for j in 0..n {
            let (px, py) = g.center(j);
            positions[(j, 0)] = px;
            positions[(j, 1)] = py;
            let is_fg = lay.fg.binary_search(&j).is_ok();
            let (mean, color, sal_range) = if is_fg {
                (fg_mean.clone(), fg_color, spec.saliency_fg)
            } else {
                let c = rng.random_range(0..spec.bg_clusters);
                (bg_means[c].clone(), bg_colors[c], spec.saliency_bg)
            };
            sp_rows.push(mean + DVector::from_fn(spec.sp_dim, |_, _| unit.sample(&mut rng) * spec.sp_noise));
            for (ch, c) in color.iter().enumerate() {
                colors[(j, ch)] = (c + color_noise.sample(&mut rng)).clamp(0.0, 255.0);
            }
            let (counts, bins) = if is_fg {
                let t = &fg_templates[fg_slot];
                fg_slot += 1;
                (t.0, t.1.clone())
            } else {
                let p = rng.random_range(spec.pixels.0..=spec.pixels.1);
                (p, sample_histogram(&mut rng, color, p, color_noise))
            };
            pixel_counts[j] = counts;
            for (b, c) in bins {
                hist[(b, j)] = c;
            }
            let base = if sal_range.0 < sal_range.1 { rng.random_range(sal_range.0..=sal_range.1) } else { sal_range.0 };
            saliency[j] = (base + unit.sample(&mut rng) * spec.saliency_noise).clamp(0.0, 1.0);
        }

        let memberships: Vec<Vec<usize>> = lay.boxes.iter().map(|b| b.cells(&g).expect("placed boxes lie on the grid")).collect();
        let box_saliency = memberships
            .iter()
            .map(|m| {
                let w: u64 = m.iter().map(|&j| pixel_counts[j]).sum();
                m.iter().map(|&j| saliency[j] * pixel_counts[j] as f64).sum::<f64>() / w as f64
            })
            .collect();
        for (i, m) in memberships.iter().enumerate() {
            let fg_share = m.iter().filter(|j| lay.fg.binary_search(j).is_ok()).count() as f64 / m.len() as f64;
            let center = &box_dir * (spec.box_separation * fg_share / spec.fg_fraction.max(1e-12)).min(spec.box_separation);
            debug_assert!(i != lay.planted || fg_share > 0.0);
            box_rows.push(center + DVector::from_fn(spec.box_dim, |_, _| unit.sample(&mut rng) * spec.box_noise));
        }

        frames.push(Frame {
            frame_id,
            class: Some(spec.class.clone()),
            sp_positions: positions,
            sp_colors: colors,
            sp_pixel_counts: pixel_counts,
            box_rects: lay.boxes.iter().map(CellRect::rect).collect(),
            memberships,
            sp_saliency_raw: saliency,
            box_saliency_raw: box_saliency,
            ground_truth: Some(GroundTruth {
                rect: Some(lay.boxes[lay.planted].rect()),
                mask: Some(lay.fg.clone()),
            }),
        });
        hists.push(hist);
    }

    let stack = |rows: &[DVector<f64>], dim: usize| DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
    let inst = ProblemInstance {
        frames,
        sp_features: FeatureBlock::Raw(stack(&sp_rows, spec.sp_dim)),
        box_features: FeatureBlock::Raw(stack(&box_rows, spec.box_dim)),
        histograms: HistogramBlock {
            d_bins: DEFAULT_BINS,
            per_frame: hists,
        },
        hyper: spec.hyper.clone(),
    };
    inst.validate()?;
    Ok(inst)
}

/// Index of the ground-truth box of each frame (the box whose rectangle
/// equals the ground-truth rectangle).
pub fn planted_boxes(instance: &ProblemInstance) -> Vec<Option<usize>> {
    instance
        .frames
        .iter()
        .map(|f| {
            let gt = f.ground_truth.as_ref()?.rect?;
            f.box_rects.iter().position(|r| *r == gt)
        })
        .collect()
}

/// The appendix toy: one frame, five superpixels and two boxes with
/// memberships {0, 2, 3} and {0, 1, 3}; γ = 0.3 and η = 1 − γ.
///
/// Superpixel 2 carries the most distinct features and the highest
/// saliency, the shared superpixels 0 and 3 lean towards it, and the first
/// box is the ground truth. Superpixels 0 and 3 lie in both boxes, so a
/// binary solution can only mark 1 or 2 as foreground.
pub fn toy_instance() -> ProblemInstance {
    let n = 5;
    let positions = DMatrix::from_row_slice(n, 2, &[8.0, 8.0, 40.0, 8.0, 8.0, 24.0, 24.0, 24.0, 40.0, 40.0]);
    let palette = [[60.0, 60.0, 200.0], [60.0, 200.0, 60.0], [220.0, 40.0, 40.0], [60.0, 60.0, 200.0], [60.0, 200.0, 60.0]];
    let colors = DMatrix::from_fn(n, 3, |r, c| palette[r][c]);
    let pixel_counts = vec![4u64, 4, 4, 4, 4];
    let mut hist = DMatrix::zeros(DEFAULT_BINS, n);
    for (j, c) in palette.iter().enumerate() {
        hist[(bin_of(*c), j)] = pixel_counts[j] as f64;
    }
    let sp_features = DMatrix::from_row_slice(n, 2, &[1.5, 1.5, 0.0, 0.0, 4.0, 4.0, 1.4, 1.6, 0.1, -0.1]);
    let box_features = DMatrix::from_row_slice(2, 2, &[10.0, 10.0, 0.0, 0.0]);
    let rects = vec![Rect::new(0.0, 0.0, 32.0, 32.0), Rect::new(16.0, 0.0, 48.0, 48.0)];
    let frame = Frame {
        frame_id: "toy".into(),
        class: Some("toy".into()),
        sp_positions: positions,
        sp_colors: colors,
        sp_pixel_counts: pixel_counts,
        memberships: vec![vec![0, 2, 3], vec![0, 1, 3]],
        box_rects: rects.clone(),
        sp_saliency_raw: vec![0.3, 0.2, 0.9, 0.3, 0.2],
        box_saliency_raw: vec![0.9, 0.05],
        ground_truth: Some(GroundTruth {
            rect: Some(rects[0]),
            mask: Some(vec![2]),
        }),
    };
    ProblemInstance {
        frames: vec![frame],
        sp_features: FeatureBlock::Raw(sp_features),
        box_features: FeatureBlock::Raw(box_features),
        histograms: HistogramBlock {
            d_bins: DEFAULT_BINS,
            per_frame: vec![hist],
        },
        hyper: Hyperparameters {
            gamma: 0.3,
            eta: 0.7,
            ..Hyperparameters::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_is_valid() {
        let t = toy_instance();
        t.validate().unwrap();
        assert_eq!(t.frames[0].memberships, vec![vec![0, 2, 3], vec![0, 1, 3]]);
        assert_eq!(planted_boxes(&t), vec![Some(0)]);
    }

    #[test]
    fn same_seed_same_instance() {
        let spec = SynthSpec::default();
        assert_eq!(synth_instance(&spec, 7).unwrap(), synth_instance(&spec, 7).unwrap());
        assert_ne!(synth_instance(&spec, 7).unwrap(), synth_instance(&spec, 8).unwrap());
    }

    #[test]
    fn planted_box_holds_the_mask_exclusively() {
        let spec = SynthSpec::default();
        for seed in 0..10 {
            let inst = synth_instance(&spec, seed).unwrap();
            for (f, b) in inst.frames.iter().zip(planted_boxes(&inst)) {
                let b = b.expect("planted box present");
                let mask = f.ground_truth.as_ref().unwrap().mask.clone().unwrap();
                let cov = f.coverage();
                for j in &mask {
                    assert!(f.memberships[b].contains(j));
                    assert_eq!(cov[*j], 1, "foreground superpixel shared with another box");
                }
                let frac = mask.len() as f64 / f.memberships[b].len() as f64;
                assert!((0.3..=0.9).contains(&frac));
            }
        }
    }

    #[test]
    fn video_like_backgrounds_are_closer_than_foreground() {
        let spec = SynthSpec::default();
        let inst = synth_instance(&spec, 3).unwrap();
        let x = inst.sp_features.matrix();
        let layout = inst.layout();
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for (k, f) in inst.frames.iter().enumerate() {
            let mask = f.ground_truth.as_ref().unwrap().mask.clone().unwrap();
            for j in 0..f.n_sp() {
                let row = x.row(layout.sp_index(k, j)).transpose();
                if mask.contains(&j) { fg.push(row) } else { bg.push(row) }
            }
        }
        let mean = |v: &[DVector<f64>]| v.iter().fold(DVector::zeros(spec.sp_dim), |a, b| a + b) / v.len() as f64;
        let (mf, mb) = (mean(&fg), mean(&bg));
        let bg_spread = bg.iter().map(|r| (r - &mb).norm()).sum::<f64>() / bg.len() as f64;
        assert!(bg_spread < (mf - mb).norm());
    }

    #[test]
    fn infeasible_fraction_is_rejected() {
        let spec = SynthSpec {
            fg_fraction: 0.95,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_instance(&spec, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn fraction_half_is_feasible_under_defaults() {
        let spec = SynthSpec {
            hyper: Hyperparameters {
                gamma: 0.3,
                eta: 0.9,
                ..Hyperparameters::default()
            },
            ..SynthSpec::default()
        };
        synth_instance(&spec, 11).unwrap();
    }
}
