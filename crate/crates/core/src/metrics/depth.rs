use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::model::DepthMap;

/// Per-frame depth error suite in meters. No scale alignment is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricReport {
    pub frame_index: u64,
    pub valid_pixel_count: usize,
    pub rmse: f64,
    pub mse: f64,
    pub absrel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetricReport {
    /// Looks up a metric by its registered id.
    pub fn get(&self, metric_id: &str) -> Option<f64> {
        Some(match metric_id {
            "rmse" => self.rmse,
            "mse" => self.mse,
            "absrel" => self.absrel,
            "delta1" => self.delta1,
            "delta2" => self.delta2,
            "delta3" => self.delta3,
            _ => return None,
        })
    }
}

pub const DEPTH_METRIC_IDS: [&str; 6] = ["rmse", "mse", "absrel", "delta1", "delta2", "delta3"];

const DELTA_BASE: f64 = 1.25;

/// Depth metrics over pixels where both maps are valid.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetricReport, MetricError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    let thresholds = [DELTA_BASE, DELTA_BASE * DELTA_BASE, DELTA_BASE * DELTA_BASE * DELTA_BASE];
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut hits = [0usize; 3];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if p == 0 || g == 0 {
            continue;
        }
        let p = p as f64 / 1000.0;
        let g = g as f64 / 1000.0;
        let diff = p - g;
        n += 1;
        sq += diff * diff;
        rel += diff.abs() / g;
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricError::NoValidPixels);
    }
    let nf = n as f64;
    let mse = sq / nf;
    Ok(DepthMetricReport {
        frame_index: 0,
        valid_pixel_count: n,
        rmse: mse.sqrt(),
        mse,
        absrel: rel / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
    })
}

/// Like [`depth_metrics`] but first resamples `pred` onto the ground-truth
/// grid with nearest-neighbor lookup when the resolutions differ.
pub fn depth_metrics_resampled(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetricReport, MetricError> {
    if (pred.width(), pred.height()) == (gt.width(), gt.height()) {
        depth_metrics(pred, gt)
    } else {
        depth_metrics(&pred.resize_nearest(gt.width(), gt.height()), gt)
    }
}
