//! JSON manifest plus binary "FGCM" matrix sidecars.
//!
//! Sidecar layout: magic `F G C M 0x01`, u32 LE rows, u32 LE cols, then
//! rows × cols f64 LE in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FeatureBlock, Frame, GroundTruth, HistogramBlock, Hyperparameters, ProblemInstance, Rect};
use crate::error::{Error, Result};

pub const FGCM_MAGIC: [u8; 5] = *b"FGCM\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    /// Base of every superpixel index in the manifest (0 or 1).
    #[serde(default)]
    index_base: usize,
    frames: Vec<FrameEntry>,
    #[serde(default)]
    hyper: serde_json::Value,
    sidecars: Sidecars,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    n_sp: usize,
    m_box: usize,
    sp_pixel_counts: Vec<u64>,
    memberships: Vec<Vec<usize>>,
    box_rects: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthEntry {
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    rect: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecars {
    sp_positions: String,
    sp_colors: String,
    sp_saliency: String,
    box_saliency: String,
    sp_features: FeatureSidecar,
    box_features: FeatureSidecar,
    histograms: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureSidecar {
    kind: String,
    path: String,
}

pub fn write_fgcm(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = m.shape();
    let too_big = |n: usize| u32::try_from(n).map_err(|_| Error::Sidecar {
        path: path.to_owned(),
        message: format!("dimension {n} exceeds u32"),
    });
    let mut buf = Vec::with_capacity(13 + 8 * rows * cols);
    buf.extend_from_slice(&FGCM_MAGIC);
    buf.extend_from_slice(&too_big(rows)?.to_le_bytes());
    buf.extend_from_slice(&too_big(cols)?.to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

pub fn read_fgcm(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Sidecar {
        path: path.to_owned(),
        message,
    };
    if bytes.len() < 13 || bytes[..5] != FGCM_MAGIC {
        return Err(bad("bad magic (expected FGCM 0x01)".into()));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(13))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("{rows}x{cols} needs {expected} bytes, file has {}", bytes.len())));
    }
    let mut data = bytes[13..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = data.next().unwrap();
        }
    }
    Ok(m)
}

/// Writes `bytes` to a temporary sibling file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// Loads and validates an instance from a manifest file.
pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| manifest_err(path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(manifest_err(path, format!("unsupported format_version {}", manifest.format_version)));
    }
    if manifest.index_base > 1 {
        return Err(manifest_err(path, "index_base must be 0 or 1"));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let side = |rel: &str| read_fgcm(&dir.join(rel));
    let sc = &manifest.sidecars;

    let positions = side(&sc.sp_positions)?;
    let colors = side(&sc.sp_colors)?;
    let sp_sal = side(&sc.sp_saliency)?;
    let box_sal = side(&sc.box_saliency)?;
    let n_total: usize = manifest.frames.iter().map(|f| f.n_sp).sum();
    let m_total: usize = manifest.frames.iter().map(|f| f.m_box).sum();
    for (name, m, rows, cols) in [
        ("sp_positions", &positions, n_total, 2),
        ("sp_colors", &colors, n_total, 3),
        ("sp_saliency", &sp_sal, n_total, 1),
        ("box_saliency", &box_sal, m_total, 1),
    ] {
        if m.shape() != (rows, cols) {
            return Err(Error::invalid(
                name,
                None,
                format!("sidecar is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
            ));
        }
    }
    if sc.histograms.len() != manifest.frames.len() {
        return Err(Error::invalid(
            "histograms",
            None,
            format!("{} histogram sidecars for {} frames", sc.histograms.len(), manifest.frames.len()),
        ));
    }

    let base = manifest.index_base;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let (mut so, mut bo) = (0usize, 0usize);
    for fe in &manifest.frames {
        let id = Some(fe.frame_id.as_str());
        if fe.sp_pixel_counts.len() != fe.n_sp {
            return Err(Error::invalid("sp_pixel_counts", id, format!("{} entries, n_sp = {}", fe.sp_pixel_counts.len(), fe.n_sp)));
        }
        if fe.memberships.len() != fe.m_box || fe.box_rects.len() != fe.m_box {
            return Err(Error::invalid("memberships", id, format!("memberships/box_rects lengths differ from m_box = {}", fe.m_box)));
        }
        let rebase = |field: &str, idx: &[usize]| -> Result<Vec<usize>> {
            idx.iter()
                .map(|&j| {
                    j.checked_sub(base)
                        .ok_or_else(|| Error::invalid(field, id, format!("index {j} below index_base {base}")))
                })
                .collect()
        };
        let memberships = fe
            .memberships
            .iter()
            .map(|s| rebase("memberships", s))
            .collect::<Result<Vec<_>>>()?;
        let ground_truth = match &fe.ground_truth {
            None => None,
            Some(g) => Some(GroundTruth {
                rect: g.rect.map(Rect::from_array),
                mask: g.mask.as_deref().map(|m| rebase("ground_truth.mask", m)).transpose()?,
            }),
        };
        frames.push(Frame {
            frame_id: fe.frame_id.clone(),
            class: fe.class.clone(),
            sp_positions: positions.rows(so, fe.n_sp).into_owned(),
            sp_colors: colors.rows(so, fe.n_sp).into_owned(),
            sp_pixel_counts: fe.sp_pixel_counts.clone(),
            memberships,
            box_rects: fe.box_rects.iter().copied().map(Rect::from_array).collect(),
            sp_saliency_raw: sp_sal.rows(so, fe.n_sp).iter().copied().collect(),
            box_saliency_raw: box_sal.rows(bo, fe.m_box).iter().copied().collect(),
            ground_truth,
        });
        so += fe.n_sp;
        bo += fe.m_box;
    }

    let feature = |fs: &FeatureSidecar, field: &str| -> Result<FeatureBlock> {
        let m = side(&fs.path)?;
        match fs.kind.as_str() {
            "raw_features" => Ok(FeatureBlock::Raw(m)),
            "precomputed_kernel" => Ok(FeatureBlock::Kernel(m)),
            other => Err(manifest_err(path, format!("{field}.kind: unknown kind `{other}`"))),
        }
    };
    let sp_features = feature(&sc.sp_features, "sp_features")?;
    let box_features = feature(&sc.box_features, "box_features")?;

    let per_frame = sc.histograms.iter().map(|p| side(p)).collect::<Result<Vec<_>>>()?;
    let d_bins = per_frame.first().map(|m| m.nrows()).unwrap_or(super::DEFAULT_BINS);
    let hyper = Hyperparameters::default()
        .overlay(&manifest.hyper)
        .map_err(|e| manifest_err(path, format!("hyper: {e}")))?;

    let instance = ProblemInstance {
        frames,
        sp_features,
        box_features,
        histograms: HistogramBlock { d_bins, per_frame },
        hyper,
    };
    instance.validate()?;
    Ok(instance)
}

/// Writes `instance` as a manifest at `path` plus sidecars next to it, with
/// 0-based indices.
pub fn save_instance(instance: &ProblemInstance, path: &Path) -> Result<()> {
    save_instance_indexed(instance, path, 0)
}

/// As [`save_instance`], writing superpixel indices with the given base.
pub fn save_instance_indexed(instance: &ProblemInstance, path: &Path, index_base: usize) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| manifest_err(path, "manifest path has no file name"))?
        .to_owned();
    let name = |tag: &str| format!("{stem}.{tag}.fgcm");
    let put = |tag: &str, m: &DMatrix<f64>| -> Result<String> {
        let rel = name(tag);
        write_fgcm(&dir.join(&rel), m)?;
        Ok(rel)
    };

    let stack = |f: &dyn Fn(&Frame) -> DMatrix<f64>, cols: usize| -> DMatrix<f64> {
        let parts: Vec<DMatrix<f64>> = instance.frames.iter().map(f).collect();
        let rows = parts.iter().map(|p| p.nrows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r = 0;
        for p in parts {
            out.rows_mut(r, p.nrows()).copy_from(&p);
            r += p.nrows();
        }
        out
    };
    let positions = stack(&|f| f.sp_positions.clone(), 2);
    let colors = stack(&|f| f.sp_colors.clone(), 3);
    let sp_sal = stack(&|f| DMatrix::from_column_slice(f.n_sp(), 1, &f.sp_saliency_raw), 1);
    let box_sal = stack(&|f| DMatrix::from_column_slice(f.m_box(), 1, &f.box_saliency_raw), 1);

    let histograms = instance
        .histograms
        .per_frame
        .iter()
        .enumerate()
        .map(|(k, h)| put(&format!("hist{k}"), h))
        .collect::<Result<Vec<_>>>()?;

    let sidecars = Sidecars {
        sp_positions: put("sp_positions", &positions)?,
        sp_colors: put("sp_colors", &colors)?,
        sp_saliency: put("sp_saliency", &sp_sal)?,
        box_saliency: put("box_saliency", &box_sal)?,
        sp_features: FeatureSidecar {
            kind: instance.sp_features.kind().into(),
            path: put("sp_features", instance.sp_features.matrix())?,
        },
        box_features: FeatureSidecar {
            kind: instance.box_features.kind().into(),
            path: put("box_features", instance.box_features.matrix())?,
        },
        histograms,
    };

    let shift = |v: &[usize]| v.iter().map(|j| j + index_base).collect::<Vec<_>>();
    let frames = instance
        .frames
        .iter()
        .map(|f| FrameEntry {
            frame_id: f.frame_id.clone(),
            class: f.class.clone(),
            n_sp: f.n_sp(),
            m_box: f.m_box(),
            sp_pixel_counts: f.sp_pixel_counts.clone(),
            memberships: f.memberships.iter().map(|s| shift(s)).collect(),
            box_rects: f.box_rects.iter().map(|r| r.to_array()).collect(),
            ground_truth: f.ground_truth.as_ref().map(|g| GroundTruthEntry {
                rect: g.rect.map(Rect::to_array),
                mask: g.mask.as_deref().map(shift),
            }),
        })
        .collect();

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        index_base,
        frames,
        hyper: serde_json::to_value(&instance.hyper)?,
        sidecars,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(path, text.as_bytes())
}
