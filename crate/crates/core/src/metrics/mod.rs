//! Evaluation metrics: the depth error suite, flow-warped temporal
//! consistency, and lighting metrics over environment maps and probe renders.

mod depth;
mod lighting;
mod temporal;

pub use depth::{depth_metrics, depth_metrics_resampled, DepthMetricReport, DEPTH_METRIC_IDS};
pub use lighting::{
    env_angular, env_rmse, env_si_rmse, lighting_report, optimal_scale, LightingMetricReport, LightingTarget,
    RadianceView, LIGHTING_METRIC_IDS,
};
pub use temporal::{opw, warp_loss, FlowField, TemporalReport};

use serde::{Deserialize, Serialize};

use crate::lighting::{render_probe, ProbeMaterial};
use crate::model::{EnvironmentMap, TaskKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("dimension mismatch: prediction {pred:?} vs reference {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("at least two frames are required, got {0}")]
    TooFewFrames(usize),
    #[error("{frames} frames need {} flows, got {flows}", frames - 1)]
    FlowCountMismatch { frames: usize, flows: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("malformed flow: {0}")]
    MalformedFlow(String),
}

/// Whether `id` names a registered metric.
pub fn is_registered_metric(id: &str) -> bool {
    DEPTH_METRIC_IDS.contains(&id) || LIGHTING_METRIC_IDS.contains(&id)
}

/// One line of `metrics/<model_id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame_index: u64,
    pub metric_id: String,
    pub value: f64,
    pub model_id: String,
    pub task: TaskKind,
}

/// Three-sphere lighting evaluation: compares the environment maps directly,
/// then diffuse, matte and mirror probes rendered under each map at
/// resolution `r`. Returns four rows in that order.
pub fn three_sphere_eval(pred: &EnvironmentMap, gt: &EnvironmentMap, r: u32) -> Result<Vec<LightingMetricReport>, MetricError> {
    let mut rows = vec![lighting_report(LightingTarget::EnvMap, &pred.into(), &gt.into())?];
    let materials = [
        (LightingTarget::Diffuse, ProbeMaterial::diffuse([1.0; 3])),
        (LightingTarget::Matte, ProbeMaterial::matte([1.0; 3], ProbeMaterial::DEFAULT_PHONG_EXPONENT)),
        (LightingTarget::Mirror, ProbeMaterial::mirror()),
    ];
    for (target, material) in materials {
        let p = render_probe(pred, &material, r);
        let g = render_probe(gt, &material, r);
        rows.push(lighting_report(target, &p.view(), &g.view())?);
    }
    Ok(rows)
}
