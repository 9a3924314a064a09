use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::model::DepthMap;

/// Backward flow from frame n to frame n−1 with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    /// `(du, dv)` per pixel, row-major.
    vectors: Vec<[f32; 2]>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, vectors: Vec<[f32; 2]>, valid: Vec<bool>) -> Result<Self, MetricError> {
        let n = width as usize * height as usize;
        if vectors.len() != n || valid.len() != n {
            return Err(MetricError::MalformedFlow(format!(
                "expected {n} entries, got {} vectors and {} flags",
                vectors.len(),
                valid.len()
            )));
        }
        Ok(FlowField {
            width,
            height,
            vectors,
            valid,
        })
    }

    /// Constant flow, valid everywhere.
    pub fn uniform(width: u32, height: u32, du: f32, dv: f32) -> Self {
        let n = width as usize * height as usize;
        FlowField {
            width,
            height,
            vectors: vec![[du, dv]; n],
            valid: vec![true; n],
        }
    }

    pub fn zero(width: u32, height: u32) -> Self {
        FlowField::uniform(width, height, 0.0, 0.0)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Option<[f32; 2]> {
        let i = y as usize * self.width as usize + x as usize;
        self.valid[i].then(|| self.vectors[i])
    }

    /// Raw flow file: `width u32 LE, height u32 LE`, then per pixel
    /// `du, dv, valid` as little-endian f32 (valid is 0.0 or 1.0).
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.vectors.len() * 12);
        for (v, ok) in self.vectors.iter().zip(&self.valid) {
            buf.extend_from_slice(&v[0].to_le_bytes());
            buf.extend_from_slice(&v[1].to_le_bytes());
            buf.extend_from_slice(&(if *ok { 1.0f32 } else { 0.0 }).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, MetricError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| MetricError::MalformedFlow(e.to_string()))?;
        if bytes.len() < 8 {
            return Err(MetricError::MalformedFlow("missing header".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = width as usize * height as usize;
        let body = &bytes[8..];
        if body.len() != n * 12 {
            return Err(MetricError::MalformedFlow(format!(
                "expected {} data bytes, found {}",
                n * 12,
                body.len()
            )));
        }
        let mut vectors = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for c in body.chunks_exact(12) {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap());
            vectors.push([f(0), f(4)]);
            valid.push(f(8) != 0.0);
        }
        FlowField::new(width, height, vectors, valid)
    }
}

/// Masked L1 warping loss between consecutive depth maps, in meters.
///
/// For every pixel `p` with valid flow whose rounded target `p + f(p)` lies
/// inside the image and where both depths are valid, accumulates
/// `|d_n(p) − d_prev(p + f(p))|`; returns the mean.
pub fn warp_loss(d_n: &DepthMap, d_prev: &DepthMap, flow: &FlowField) -> Result<f64, MetricError> {
    let dims = (d_n.width(), d_n.height());
    if dims != (d_prev.width(), d_prev.height()) || dims != (flow.width, flow.height) {
        return Err(MetricError::DimensionMismatch {
            pred: dims,
            gt: (d_prev.width(), d_prev.height()),
        });
    }
    let (w, h) = (dims.0 as i64, dims.1 as i64);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            let Some([du, dv]) = flow.at(x, y) else { continue };
            let cur = d_n.get(x, y);
            if cur == 0 {
                continue;
            }
            let tx = (x as f64 + du as f64).round();
            let ty = (y as f64 + dv as f64).round();
            if !(tx >= 0.0 && ty >= 0.0 && (tx as i64) < w && (ty as i64) < h) {
                continue;
            }
            let prev = d_prev.get(tx as u32, ty as u32);
            if prev == 0 {
                continue;
            }
            sum += (cur as f64 / 1000.0 - prev as f64 / 1000.0).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Sequence-level temporal consistency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub frame_count: usize,
    /// `pair_losses[i]` is the loss between frames `i + 1` and `i`.
    pub pair_losses: Vec<f64>,
    pub opw: f64,
}

/// Mean warping loss over all consecutive pairs; lower is smoother.
pub fn opw(depths: &[DepthMap], flows: &[FlowField]) -> Result<TemporalReport, MetricError> {
    if depths.len() < 2 {
        return Err(MetricError::TooFewFrames(depths.len()));
    }
    if flows.len() != depths.len() - 1 {
        return Err(MetricError::FlowCountMismatch {
            frames: depths.len(),
            flows: flows.len(),
        });
    }
    let pair_losses = depths
        .windows(2)
        .zip(flows)
        .map(|(pair, flow)| warp_loss(&pair[1], &pair[0], flow))
        .collect::<Result<Vec<_>, _>>()?;
    let opw = pair_losses.iter().sum::<f64>() / pair_losses.len() as f64;
    Ok(TemporalReport {
        frame_count: depths.len(),
        pair_losses,
        opw,
    })
}
