use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::model::EnvironmentMap;

/// Borrowed linear RGB radiance image with an optional coverage mask.
#[derive(Debug, Clone, Copy)]
pub struct RadianceView<'a> {
    pub width: u32,
    pub height: u32,
    pub values: &'a [f32],
    pub mask: Option<&'a [bool]>,
}

impl<'a> From<&'a EnvironmentMap> for RadianceView<'a> {
    fn from(m: &'a EnvironmentMap) -> Self {
        RadianceView {
            width: m.width(),
            height: m.height(),
            values: m.values(),
            mask: None,
        }
    }
}

impl RadianceView<'_> {
    fn covered(&self, i: usize) -> bool {
        self.mask.is_none_or(|m| m[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightingTarget {
    EnvMap,
    Diffuse,
    Matte,
    Mirror,
}

impl LightingTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            LightingTarget::EnvMap => "env_map",
            LightingTarget::Diffuse => "diffuse",
            LightingTarget::Matte => "matte",
            LightingTarget::Mirror => "mirror",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingMetricReport {
    pub target: LightingTarget,
    pub angular_error_deg: f64,
    pub si_rmse: f64,
    pub rmse: f64,
}

impl LightingMetricReport {
    pub fn get(&self, metric_id: &str) -> Option<f64> {
        Some(match metric_id {
            "angular_error" => self.angular_error_deg,
            "si_rmse" => self.si_rmse,
            "rmse" => self.rmse,
            _ => return None,
        })
    }
}

pub const LIGHTING_METRIC_IDS: [&str; 3] = ["angular_error", "si_rmse", "rmse"];

/// Indices of pixels covered by both views.
fn shared_pixels<'a>(pred: &'a RadianceView, gt: &'a RadianceView) -> Result<impl Iterator<Item = usize> + 'a, MetricError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricError::DimensionMismatch {
            pred: (pred.width, pred.height),
            gt: (gt.width, gt.height),
        });
    }
    let n = pred.width as usize * pred.height as usize;
    Ok((0..n).filter(move |&i| pred.covered(i) && gt.covered(i)))
}

fn scaled_rmse(pred: &RadianceView, gt: &RadianceView, scale: f64) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in shared_pixels(pred, gt)? {
        for c in 0..3 {
            let d = scale * pred.values[i * 3 + c] as f64 - gt.values[i * 3 + c] as f64;
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(MetricError::NoValidPixels);
    }
    Ok((sum / count as f64).sqrt())
}

/// Root mean squared error over every channel of every covered pixel.
pub fn env_rmse(pred: &RadianceView, gt: &RadianceView) -> Result<f64, MetricError> {
    scaled_rmse(pred, gt, 1.0)
}

/// The least-squares scalar `s* = Σ pred·gt / Σ pred²` (0 for an all-zero
/// prediction).
pub fn optimal_scale(pred: &RadianceView, gt: &RadianceView) -> Result<f64, MetricError> {
    let mut pg = 0.0;
    let mut pp = 0.0;
    let mut gg = 0.0;
    for i in shared_pixels(pred, gt)? {
        for c in 0..3 {
            let p = pred.values[i * 3 + c] as f64;
            let g = gt.values[i * 3 + c] as f64;
            pg += p * g;
            pp += p * p;
            gg += g * g;
        }
    }
    if gg == 0.0 {
        return Err(MetricError::DegenerateInput("ground truth is identically zero"));
    }
    Ok(if pp == 0.0 { 0.0 } else { pg / pp })
}

/// RMSE after rescaling the prediction by [`optimal_scale`].
pub fn env_si_rmse(pred: &RadianceView, gt: &RadianceView) -> Result<f64, MetricError> {
    let s = optimal_scale(pred, gt)?;
    scaled_rmse(pred, gt, s)
}

/// Mean per-pixel angle in degrees between RGB vectors, over pixels where
/// both colors are nonzero.
pub fn env_angular(pred: &RadianceView, gt: &RadianceView) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut gt_nonzero = false;
    for i in shared_pixels(pred, gt)? {
        let p = [0, 1, 2].map(|c| pred.values[i * 3 + c] as f64);
        let g = [0, 1, 2].map(|c| gt.values[i * 3 + c] as f64);
        let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let ng = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        gt_nonzero |= ng > 0.0;
        if np > 0.0 && ng > 0.0 {
            // atan2 stays accurate near 0°, where acos of a rounded cosine does not
            let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
            let cross = [p[1] * g[2] - p[2] * g[1], p[2] * g[0] - p[0] * g[2], p[0] * g[1] - p[1] * g[0]];
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            sum += sin.atan2(dot).to_degrees();
            n += 1;
        }
    }
    if !gt_nonzero {
        return Err(MetricError::DegenerateInput("ground truth is identically zero"));
    }
    if n == 0 {
        return Err(MetricError::DegenerateInput("no pixel where both colors are nonzero"));
    }
    Ok(sum / n as f64)
}

pub fn lighting_report(target: LightingTarget, pred: &RadianceView, gt: &RadianceView) -> Result<LightingMetricReport, MetricError> {
    Ok(LightingMetricReport {
        target,
        angular_error_deg: env_angular(pred, gt)?,
        si_rmse: env_si_rmse(pred, gt)?,
        rmse: env_rmse(pred, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(values: &[f32]) -> RadianceView<'_> {
        RadianceView {
            width: values.len() as u32 / 3,
            height: 1,
            values,
            mask: None,
        }
    }

    #[test]
    fn identical_maps_are_zero() {
        let g = [0.2, 0.4, 0.1, 1.0, 0.5, 0.25];
        let r = lighting_report(LightingTarget::EnvMap, &view(&g), &view(&g)).unwrap();
        assert_eq!((r.angular_error_deg, r.si_rmse, r.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn scaled_prediction() {
        let g = [0.5f32, 0.25, 1.0, 2.0, 0.125, 0.75];
        let k = 3.0f32;
        let p: Vec<f32> = g.iter().map(|v| v * k).collect();
        let (pv, gv) = (view(&p), view(&g));
        assert!(env_angular(&pv, &gv).unwrap() < 1e-5);
        assert!(env_si_rmse(&pv, &gv).unwrap() < 1e-9);
        let mean_sq: f64 = g.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 6.0;
        let expected = (k as f64 - 1.0).abs() * mean_sq.sqrt();
        assert!((env_rmse(&pv, &gv).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_colors_are_ninety_degrees() {
        let p = [1.0, 0.0, 0.0];
        let g = [0.0, 1.0, 0.0];
        assert!((env_angular(&view(&p), &view(&g)).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let z = [0.0f32; 3];
        let g = [1.0f32, 1.0, 1.0];
        assert!(matches!(env_angular(&view(&g), &view(&z)), Err(MetricError::DegenerateInput(_))));
        assert!(matches!(env_si_rmse(&view(&g), &view(&z)), Err(MetricError::DegenerateInput(_))));
        assert!(matches!(env_angular(&view(&z), &view(&g)), Err(MetricError::DegenerateInput(_))));
        // zero prediction: optimal scale is 0, si-rmse falls back to rmse(0, gt)
        assert_eq!(env_si_rmse(&view(&z), &view(&g)).unwrap(), 1.0);
    }

    #[test]
    fn mask_restricts_pixels() {
        let p = [1.0, 0.0, 0.0, 5.0, 5.0, 5.0];
        let g = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let mask = [true, false];
        let pv = RadianceView { mask: Some(&mask), ..view(&p) };
        let gv = RadianceView { mask: Some(&mask), ..view(&g) };
        assert_eq!(env_rmse(&pv, &gv).unwrap(), 0.0);
    }
}
