//! Tiled prediction, dataset evaluation and density-map export.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_image, reassemble, tile_for_inference, DataError, DatasetIndex, DensityMap, Sample, Split,
};
use crate::model::{load_checkpoint, predict_density, CheckpointError, ModelError, ModelParams};
use crate::objectives::{evaluate_metrics, Metrics};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset split has no images")]
    EmptyDataset,
    #[error("no image could be evaluated")]
    NothingEvaluated,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("malformed density file: {0}")]
    DensityFormat(String),
}

/// Full-resolution density assembled from per-tile predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub density: DensityMap,
    pub count: f64,
    pub per_tile_counts: Vec<f64>,
}

/// Tile the image, run each tile separately and stitch the fine density maps.
pub fn predict_image(params: &ModelParams, image: &Tensor) -> Result<Prediction, InferenceError> {
    let channels = image.shape().channels;
    if channels != params.config.input_channels {
        return Err(ModelError::InputChannels {
            expected: params.config.input_channels,
            actual: channels,
        }
        .into());
    }
    let (tiles, layout) = tile_for_inference(image);
    let maps = tiles
        .iter()
        .map(|t| predict_density(params, t))
        .collect::<Result<Vec<_>, _>>()?;
    let per_tile_counts: Vec<f64> = maps.iter().map(Tensor::sum).collect();
    let full = reassemble(&layout, &maps)?;
    let density = DensityMap::from_tensor(&full, 0)?;
    Ok(Prediction {
        count: per_tile_counts.iter().sum(),
        density,
        per_tile_counts,
    })
}

pub fn predict(checkpoint: &Path, image: &Path) -> Result<Prediction, InferenceError> {
    let params = load_checkpoint(checkpoint)?;
    let img = load_image(image, params.config.input_channels)?;
    predict_image(&params, &img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub gt_count: Option<f64>,
    pub predicted_count: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// `None` when no image could be evaluated.
    pub metrics: Option<Metrics>,
    pub evaluated: usize,
    pub total: usize,
    /// Set when at least one image failed.
    pub partial: bool,
}

impl EvalReport {
    /// Metrics recomputed from the successful rows.
    pub fn recompute_metrics(&self) -> Option<Metrics> {
        let pairs: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.predicted_count?, r.gt_count?)))
            .collect();
        evaluate_metrics(&pairs).ok()
    }
}

/// Evaluate already-loaded samples; load failures become error rows. The
/// ground-truth count is the number of annotated heads.
pub fn evaluate_samples(
    params: &ModelParams,
    items: Vec<Result<Sample, (String, DataError)>>,
) -> EvalReport {
    let run = |item: Result<Sample, (String, DataError)>| -> ReportRow {
        match item {
            Ok(s) => {
                let gt = s.annotations.count() as f64;
                match predict_image(params, &s.image) {
                    Ok(p) => ReportRow {
                        id: s.id,
                        gt_count: Some(gt),
                        predicted_count: Some(p.count),
                        error: None,
                    },
                    Err(e) => ReportRow {
                        id: s.id,
                        gt_count: Some(gt),
                        predicted_count: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err((id, e)) => ReportRow {
                id,
                gt_count: None,
                predicted_count: None,
                error: Some(e.to_string()),
            },
        }
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<ReportRow> = {
        use rayon::prelude::*;
        items.into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<ReportRow> = items.into_iter().map(run).collect();

    let total = rows.len();
    let mut report = EvalReport {
        evaluated: rows.iter().filter(|r| r.predicted_count.is_some()).count(),
        total,
        partial: false,
        metrics: None,
        rows,
    };
    report.partial = report.evaluated < total;
    report.metrics = report.recompute_metrics();
    report
}

/// Evaluate a checkpoint on one split of a dataset index.
pub fn evaluate(
    checkpoint: &Path,
    index: &Path,
    split: Split,
    sigma: f64,
) -> Result<EvalReport, InferenceError> {
    let params = load_checkpoint(checkpoint)?;
    let idx = DatasetIndex::load(index)?;
    let entries = idx.entries(split);
    if entries.is_empty() {
        return Err(InferenceError::EmptyDataset);
    }
    let items = entries
        .iter()
        .map(|p| {
            Sample::load(p, params.config.input_channels, sigma)
                .map_err(|e| (p.display().to_string(), e))
        })
        .collect();
    let report = evaluate_samples(&params, items);
    if report.metrics.is_none() {
        return Err(InferenceError::NothingEvaluated);
    }
    Ok(report)
}

/// 8-bit rendering: the map maximum becomes 255, zero stays zero.
pub fn heatmap_image(density: &DensityMap) -> GrayImage {
    let max = density.max();
    let (w, h) = (density.width() as u32, density.height() as u32);
    GrayImage::from_fn(w, h, |x, y| {
        let v = density.at(y as usize, x as usize);
        let level = if max > 0.0 {
            (v / max * 255.0).floor().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        Luma([level])
    })
}

/// Write a grayscale heatmap; the format follows the extension (`.png`, `.pgm`).
pub fn export_heatmap(density: &DensityMap, path: &Path) -> Result<(), InferenceError> {
    heatmap_image(density)
        .save(path)
        .map_err(|source| InferenceError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Serialize, Deserialize)]
struct DensityHeader {
    height: usize,
    width: usize,
    count: f64,
}

/// Raw density file: little-endian `u32` header length, JSON header
/// `{height, width, count}`, then row-major little-endian `f32` values.
pub fn encode_density(density: &DensityMap) -> Vec<u8> {
    let header = serde_json::to_vec(&DensityHeader {
        height: density.height(),
        width: density.width(),
        count: density.count(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(4 + header.len() + density.grid().len() * 4);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in density.grid() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_density(bytes: &[u8]) -> Result<DensityMap, InferenceError> {
    let bad = |m: &str| InferenceError::DensityFormat(m.to_string());
    if bytes.len() < 4 {
        return Err(bad("missing header length"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let header_bytes = bytes.get(4..4 + n).ok_or_else(|| bad("truncated header"))?;
    let header: DensityHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| InferenceError::DensityFormat(e.to_string()))?;
    let blob = &bytes[4 + n..];
    if blob.len() != header.height * header.width * 4 {
        return Err(bad("blob length does not match header dimensions"));
    }
    let grid = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(DensityMap::from_grid(header.height, header.width, grid)?)
}

pub fn write_density(density: &DensityMap, path: &Path) -> Result<(), InferenceError> {
    std::fs::write(path, encode_density(density)).map_err(|source| InferenceError::Io {
        path: path.to_path_buf(),
        source,
    })
}
