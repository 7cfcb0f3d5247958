//! Consistency measures for edited videos.
//!
//! * `flow_consistency`: mean L2 distance between dense optical flow of the
//!   original and of the edited video, per consecutive frame pair.
//! * `positional_deviation`: mean absolute per-channel difference to the
//!   original frames.
//! * `temporal_deviation`: mean absolute difference between each edited
//!   frame and its predecessor carried over through the layer atlas.
//!
//! Flow is Horn-Schunck on 0-255 luma with central-difference gradients of
//! the frame average, `I_t = b - a`, the 1/6 (edge) and 1/12 (corner)
//! neighbourhood average and replicated borders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::warp_keyframe;
use crate::scene::{AlphaMap, Frame, Scene};

pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_SMOOTHNESS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Per-pixel `(dx, dy)` in pixels, row-major.
    pub flow: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn mean(&self) -> [f64; 2] {
        let n = self.flow.len().max(1) as f64;
        let s = self
            .flow
            .iter()
            .fold([0.0, 0.0], |a, f| [a[0] + f[0], a[1] + f[1]]);
        [s[0] / n, s[1] / n]
    }
}

fn luma(frame: &Frame) -> Vec<f64> {
    frame
        .pixels
        .iter()
        .map(|p| 255.0 * (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
        .collect()
}

#[inline]
fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn neighbourhood_average(field: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let ym = clamp_idx(y as isize - 1, h);
        let yp = clamp_idx(y as isize + 1, h);
        for x in 0..w {
            let xm = clamp_idx(x as isize - 1, w);
            let xp = clamp_idx(x as isize + 1, w);
            let edge =
                field[ym * w + x] + field[yp * w + x] + field[y * w + xm] + field[y * w + xp];
            let corner =
                field[ym * w + xm] + field[ym * w + xp] + field[yp * w + xm] + field[yp * w + xp];
            out[y * w + x] = edge / 6.0 + corner / 12.0;
        }
    }
}

/// Horn-Schunck flow from `a` to `b`, starting from zero flow.
pub fn dense_flow(a: &Frame, b: &Frame, iterations: usize, smoothness: f64) -> Result<FlowField> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "flow between {:?} and {:?} frames",
            a.dims(),
            b.dims()
        )));
    }
    let (w, h) = a.dims();
    let (la, lb) = (luma(a), luma(b));
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h {
        let ym = clamp_idx(y as isize - 1, h);
        let yp = clamp_idx(y as isize + 1, h);
        for x in 0..w {
            let xm = clamp_idx(x as isize - 1, w);
            let xp = clamp_idx(x as isize + 1, w);
            let i = y * w + x;
            let avg = |k: usize| 0.5 * (la[k] + lb[k]);
            ix[i] = 0.5 * (avg(y * w + xp) - avg(y * w + xm));
            iy[i] = 0.5 * (avg(yp * w + x) - avg(ym * w + x));
            it[i] = lb[i] - la[i];
        }
    }
    let l2 = smoothness * smoothness;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut ub = vec![0.0; n];
    let mut vb = vec![0.0; n];
    for _ in 0..iterations {
        neighbourhood_average(&u, w, h, &mut ub);
        neighbourhood_average(&v, w, h, &mut vb);
        for i in 0..n {
            let r = (ix[i] * ub[i] + iy[i] * vb[i] + it[i]) / (l2 + ix[i] * ix[i] + iy[i] * iy[i]);
            u[i] = ub[i] - ix[i] * r;
            v[i] = vb[i] - iy[i] * r;
        }
    }
    Ok(FlowField {
        width: w,
        height: h,
        flow: u.into_iter().zip(v).map(|(a, b)| [a, b]).collect(),
    })
}

fn check_videos(a: &[Frame], b: &[Frame]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "videos have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i].dims() != b[i].dims()) {
        return Err(Error::Shape(format!(
            "frame {i} differs in size between the videos"
        )));
    }
    Ok(())
}

pub fn flow_consistency(original: &[Frame], edited: &[Frame]) -> Result<f64> {
    check_videos(original, edited)?;
    if original.len() < 2 {
        return Ok(0.0);
    }
    let per_pair: Vec<f64> = (0..original.len() - 1)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let fo = dense_flow(
                &original[i],
                &original[i + 1],
                DEFAULT_ITERATIONS,
                DEFAULT_SMOOTHNESS,
            )?;
            let fe = dense_flow(
                &edited[i],
                &edited[i + 1],
                DEFAULT_ITERATIONS,
                DEFAULT_SMOOTHNESS,
            )?;
            let sum: f64 = fo
                .flow
                .iter()
                .zip(&fe.flow)
                .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .sum();
            Ok(sum / fo.flow.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.iter().sum::<f64>() / per_pair.len() as f64)
}

pub fn positional_deviation(original: &[Frame], edited: &[Frame]) -> Result<f64> {
    check_videos(original, edited)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in original.iter().zip(edited) {
        for (p, q) in a.pixels.iter().zip(&b.pixels) {
            for c in 0..3 {
                sum += (p[c] - q[c]).abs();
            }
            count += 3;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Motion-compensated deviation between consecutive edited frames, measured
/// through the first foreground layer (the background when there is none).
/// Pairs without any comparable pixel are skipped.
pub fn temporal_deviation(edited: &[Frame], scene: &Scene) -> Result<f64> {
    if edited.len() != scene.frame_count {
        return Err(Error::Shape(format!(
            "{} edited frames for a {}-frame scene",
            edited.len(),
            scene.frame_count
        )));
    }
    if let Some(i) = edited
        .iter()
        .position(|f| f.dims() != (scene.width, scene.height))
    {
        return Err(Error::Shape(format!(
            "edited frame {i} differs in size from the scene"
        )));
    }
    if edited.len() < 2 {
        return Ok(0.0);
    }
    let layer = scene.foregrounds.first().unwrap_or(&scene.background);
    let dims = layer.atlas.dims();
    let per_pair: Vec<Option<f64>> = (1..edited.len())
        .into_par_iter()
        .map(|i| {
            let prev_alpha: AlphaMap = layer.alpha_map(i - 1);
            let alpha = layer.alpha_map(i);
            let valid = (0..edited[i - 1].pixels.len())
                .map(|p| prev_alpha.get(p) > 0.0)
                .collect();
            let prev = edited[i - 1].clone().with_validity(valid);
            let carried = warp_keyframe(&prev, &layer.uv[i - 1], &layer.uv[i], &alpha, dims);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (p, (c, e)) in carried.pixels.iter().zip(&edited[i].pixels).enumerate() {
                if !carried.is_valid(p) {
                    continue;
                }
                let a = alpha.get(p);
                for ch in 0..3 {
                    sum += (c[ch] - a * e[ch]).abs();
                }
                count += 3;
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    let used: Vec<f64> = per_pair.into_iter().flatten().collect();
    Ok(if used.is_empty() {
        0.0
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub flow_consistency: f64,
    pub positional_deviation: f64,
    pub temporal_deviation: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// All three metrics of `edited` against the scene's original frames.
pub fn evaluate(scene: &Scene, edited: &[Frame]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        flow_consistency: flow_consistency(&scene.frames, edited)?,
        positional_deviation: positional_deviation(&scene.frames, edited)?,
        temporal_deviation: temporal_deviation(edited, scene)?,
    })
}
