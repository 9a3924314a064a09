//! Reference models with closed-form outputs, used as test doubles and for
//! exercising the pipeline without external services.

use serde_json::{Map, Value};

use super::{GatewayError, InferenceBackend, ModelKind, Prediction};
use crate::imageio::decode_env_pfm;
use crate::model::{depth_m_to_mm, DepthMap, EnvironmentMap, Frame, SessionManifest};

pub const BUILTIN_NAMES: [&str; 6] = ["sensor-passthrough", "constant", "scale", "plane-sweep", "gray-lit", "rotate-env"];

#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinModel {
    SensorPassthrough,
    /// Uniform depth in meters.
    Constant { meters: f64 },
    /// Sensor depth times `k`.
    Scale { k: f64 },
    /// `depth(v) = a + b · v / height` meters.
    PlaneSweep { a: f64, b: f64 },
    /// Constant environment map of radiance `level`.
    GrayLit { level: f32, height: u32 },
    /// Reference map rotated about the vertical axis.
    RotateEnv { map: EnvironmentMap },
}

fn positional_names(name: &str) -> &'static [&'static str] {
    match name {
        "constant" => &["c"],
        "scale" => &["k"],
        "plane-sweep" => &["a", "b"],
        "gray-lit" => &["level", "height"],
        "rotate-env" => &["source", "delta_deg"],
        _ => &[],
    }
}

/// Splits `"scale(k=2.0)"` or `"constant(1.0)"` into a name and parameters.
/// Bare names yield no parameters.
pub fn parse_builtin_spec(spec: &str) -> Result<(String, Map<String, Value>), GatewayError> {
    let spec = spec.trim();
    let Some(open) = spec.find('(') else {
        return Ok((spec.to_string(), Map::new()));
    };
    if !spec.ends_with(')') {
        return Err(GatewayError::BadDescriptor(format!("unbalanced parentheses in {spec:?}")));
    }
    let name = spec[..open].trim().to_string();
    let inner = &spec[open + 1..spec.len() - 1];
    let names = positional_names(&name);
    let mut params = Map::new();
    for (i, arg) in inner.split(',').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
        let (key, raw) = match arg.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim()),
            None => (
                names
                    .get(i)
                    .ok_or_else(|| GatewayError::BadDescriptor(format!("too many arguments for {name:?}")))?
                    .to_string(),
                arg,
            ),
        };
        let value = match raw.parse::<f64>() {
            Ok(f) => Value::from(f),
            Err(_) => Value::from(raw.trim_matches('"')),
        };
        params.insert(key, value);
    }
    Ok((name, params))
}

fn num(params: &Map<String, Value>, key: &str, default: Option<f64>) -> Result<f64, GatewayError> {
    match params.get(key) {
        Some(v) => v
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| GatewayError::BadDescriptor(format!("parameter {key:?} must be a finite number"))),
        None => default.ok_or_else(|| GatewayError::BadDescriptor(format!("missing parameter {key:?}"))),
    }
}

impl BuiltinModel {
    /// Builds a model from a name (optionally with inline arguments) and an
    /// explicit parameter map; explicit parameters win.
    pub fn from_spec(spec: &str, extra: &Map<String, Value>) -> Result<Self, GatewayError> {
        let (name, mut params) = parse_builtin_spec(spec)?;
        for (k, v) in extra {
            params.insert(k.clone(), v.clone());
        }
        let bad = |m: String| GatewayError::BadDescriptor(m);
        Ok(match name.as_str() {
            "sensor-passthrough" => BuiltinModel::SensorPassthrough,
            "constant" => {
                let c = num(&params, "c", None)?;
                if !(c > 0.0) {
                    return Err(bad(format!("constant depth must be > 0, got {c}")));
                }
                BuiltinModel::Constant { meters: c }
            }
            "scale" => {
                let k = num(&params, "k", None)?;
                if !(k > 0.0) {
                    return Err(bad(format!("scale factor must be > 0, got {k}")));
                }
                BuiltinModel::Scale { k }
            }
            "plane-sweep" => BuiltinModel::PlaneSweep {
                a: num(&params, "a", Some(0.5))?,
                b: num(&params, "b", Some(1.0))?,
            },
            "gray-lit" => {
                let level = num(&params, "level", Some(1.0))?;
                let height = num(&params, "height", Some(32.0))?;
                if level < 0.0 || height < 1.0 || height.fract() != 0.0 {
                    return Err(bad("gray-lit needs level ≥ 0 and a whole height ≥ 1".into()));
                }
                BuiltinModel::GrayLit {
                    level: level as f32,
                    height: height as u32,
                }
            }
            "rotate-env" => {
                let source = params
                    .get("source")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("rotate-env needs a source PFM path".into()))?;
                let bytes = std::fs::read(source).map_err(|e| bad(format!("cannot read {source:?}: {e}")))?;
                let map = decode_env_pfm(&bytes).map_err(|e| bad(format!("bad PFM {source:?}: {e}")))?;
                BuiltinModel::RotateEnv {
                    map: map.rotate_azimuth(num(&params, "delta_deg", Some(0.0))?),
                }
            }
            other => return Err(bad(format!("unknown builtin {other:?}; expected one of {BUILTIN_NAMES:?}"))),
        })
    }

    /// Rotated copy of an in-memory reference map.
    pub fn rotate_env(map: &EnvironmentMap, delta_deg: f64) -> Self {
        BuiltinModel::RotateEnv {
            map: map.rotate_azimuth(delta_deg),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            BuiltinModel::GrayLit { .. } | BuiltinModel::RotateEnv { .. } => ModelKind::Lighting,
            _ => ModelKind::Depth,
        }
    }
}

/// `round(v · k)` clamped to the representable range; valid samples never
/// collapse to the invalid marker.
pub(crate) fn scale_depth(v: u16, k: f64) -> u16 {
    if v == 0 {
        return 0;
    }
    (v as f64 * k).round().clamp(1.0, u16::MAX as f64) as u16
}

impl InferenceBackend for BuiltinModel {
    fn infer(&self, frame: &Frame, manifest: &SessionManifest) -> Result<Prediction, GatewayError> {
        let (w, h) = (frame.depth.width(), frame.depth.height());
        let _ = manifest;
        Ok(match self {
            BuiltinModel::SensorPassthrough => Prediction::Depth(frame.depth.clone()),
            BuiltinModel::Constant { meters } => Prediction::Depth(DepthMap::filled(w, h, depth_m_to_mm(*meters))),
            BuiltinModel::Scale { k } => {
                let values = frame.depth.values().iter().map(|&v| scale_depth(v, *k)).collect();
                Prediction::Depth(DepthMap::new(w, h, values).expect("same dims"))
            }
            BuiltinModel::PlaneSweep { a, b } => {
                let mut values = Vec::with_capacity(w as usize * h as usize);
                for v in 0..h {
                    let mm = depth_m_to_mm(a + b * v as f64 / h as f64);
                    values.extend(std::iter::repeat_n(mm, w as usize));
                }
                Prediction::Depth(DepthMap::new(w, h, values).expect("sized"))
            }
            BuiltinModel::GrayLit { level, height } => Prediction::Lighting(
                EnvironmentMap::constant(2 * height, *height, [*level; 3]).expect("valid radiance"),
            ),
            BuiltinModel::RotateEnv { map } => Prediction::Lighting(map.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::frame_2x2;
    use super::*;

    fn run(spec: &str, depth: [u16; 4]) -> Vec<u16> {
        let (f, m) = frame_2x2(depth);
        match BuiltinModel::from_spec(spec, &Map::new()).unwrap().infer(&f, &m).unwrap() {
            Prediction::Depth(d) => d.into_values(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_parsing() {
        let (n, p) = parse_builtin_spec("scale(k=2.0)").unwrap();
        assert_eq!(n, "scale");
        assert_eq!(p["k"], 2.0);
        let (n, p) = parse_builtin_spec("plane-sweep(0.5, 1)").unwrap();
        assert_eq!(n, "plane-sweep");
        assert_eq!((p["a"].as_f64(), p["b"].as_f64()), (Some(0.5), Some(1.0)));
        assert!(parse_builtin_spec("scale(k=2").is_err());
    }

    #[test]
    fn constant_fills_depth_grid() {
        assert_eq!(run("constant(1.0)", [0, 7, 9, 3]), vec![1000; 4]);
    }

    #[test]
    fn scale_saturates_and_keeps_holes() {
        assert_eq!(run("scale(k=2.0)", [1000, 0, 40000, 1]), vec![2000, 0, 65535, 2]);
        assert_eq!(run("scale(0.1)", [1, 0, 10, 65535]), vec![1, 0, 1, 6554]);
    }

    #[test]
    fn plane_sweep_rows() {
        assert_eq!(run("plane-sweep(a=0.5, b=1.0)", [0; 4]), vec![500, 500, 1000, 1000]);
    }

    #[test]
    fn rotate_env_zero_is_identity() {
        let mut v = vec![0.0f32; 8 * 4 * 3];
        v[5] = 2.5;
        let map = EnvironmentMap::new(8, 4, v).unwrap();
        let (f, m) = frame_2x2([0; 4]);
        assert_eq!(
            BuiltinModel::rotate_env(&map, 0.0).infer(&f, &m).unwrap(),
            Prediction::Lighting(map)
        );
    }

    #[test]
    fn gray_lit_map() {
        let (f, m) = frame_2x2([0; 4]);
        let p = BuiltinModel::from_spec("gray-lit", &Map::new()).unwrap().infer(&f, &m).unwrap();
        let Prediction::Lighting(map) = p else { panic!() };
        assert_eq!((map.width(), map.height()), (64, 32));
        assert!(map.values().iter().all(|&v| v == 1.0));
    }
}
