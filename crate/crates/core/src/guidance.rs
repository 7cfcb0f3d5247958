//! Structure guidance: Canny edge maps and an edge-overlap score.
//!
//! The detector runs entirely in integer arithmetic on an 8-bit luma image
//! so that its output is reproducible bit-for-bit:
//!
//! 1. luma `Y = (299 R + 587 G + 114 B + 500) / 1000` on 8-bit channels,
//! 2. 5x5 Gaussian (sigma 1.4) as the integer kernel summing to 159,
//! 3. 3x3 Sobel gradients,
//! 4. non-maximum suppression along the gradient quantized to 0/45/90/135 deg,
//! 5. hysteresis with 8-connectivity.
//!
//! Thresholds are on the 0-255 gradient scale; every stage pads by
//! replicating the border.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::scene::Frame;

pub const DEFAULT_LOW: f64 = 100.0;
pub const DEFAULT_HIGH: f64 = 200.0;

const GAUSS_5X5: [[i64; 5]; 5] = [
    [2, 4, 5, 4, 2],
    [4, 9, 12, 9, 4],
    [5, 12, 15, 12, 5],
    [4, 9, 12, 9, 4],
    [2, 4, 5, 4, 2],
];
const GAUSS_SUM: i64 = 159;

/// tan(22.5 deg) and tan(67.5 deg).
const TAN_22_5: f64 = 0.414_213_562_373_095_1;
const TAN_67_5: f64 = 2.414_213_562_373_095;

/// Binary edge image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        EdgeMap {
            width,
            height,
            edges: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// One byte per pixel, 0 or 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.edges
            .iter()
            .map(|&e| if e { 255 } else { 0 })
            .collect()
    }

    /// Inverse of [`EdgeMap::to_bytes`]; any non-zero byte is an edge.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::Shape(format!(
                "edge map {width}x{height} needs {} bytes, got {}",
                width * height,
                bytes.len()
            )));
        }
        Ok(EdgeMap {
            width,
            height,
            edges: bytes.iter().map(|&b| b != 0).collect(),
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .expect("buffer matches dimensions");
        img.save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_owned(),
                source: e,
            })
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> EdgeMap {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // Separable: rows then columns.
        let mut tmp = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                tmp[y * w + x] = (lo..=hi).any(|xx| self.edges[y * w + xx]);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| tmp[yy * w + x]);
            }
        }
        EdgeMap {
            width: w,
            height: h,
            edges: out,
        }
    }
}

fn quantize(c: f64) -> i64 {
    if c.is_finite() {
        (c.clamp(0.0, 1.0) * 255.0).round() as i64
    } else {
        0
    }
}

/// 8-bit luma with the 0.299/0.587/0.114 weights, rounded to nearest.
pub fn luma8(frame: &Frame) -> Vec<i64> {
    frame
        .pixels
        .iter()
        .map(|p| (299 * quantize(p[0]) + 587 * quantize(p[1]) + 114 * quantize(p[2]) + 500) / 1000)
        .collect()
}

#[inline]
fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Canny edges of `frame` with thresholds on the 0-255 gradient scale.
pub fn canny(frame: &Frame, low: f64, high: f64) -> Result<EdgeMap> {
    let (w, h) = frame.dims();
    if w < 5 || h < 5 {
        return Err(Error::InvalidArgument(format!(
            "canny needs at least a 5x5 frame, got {w}x{h}"
        )));
    }
    if !(low >= 0.0 && low <= high) {
        return Err(Error::InvalidArgument(format!(
            "canny thresholds must satisfy 0 <= low <= high, got ({low}, {high})"
        )));
    }

    let gray = luma8(frame);
    let at = |buf: &[i64], x: isize, y: isize| buf[clampi(y, h) * w + clampi(x, w)];

    // Blurred image scaled by GAUSS_SUM.
    let mut blur = vec![0i64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0;
            for (ky, row) in GAUSS_5X5.iter().enumerate() {
                for (kx, &k) in row.iter().enumerate() {
                    acc += k * at(&gray, x + kx as isize - 2, y + ky as isize - 2);
                }
            }
            blur[y as usize * w + x as usize] = acc;
        }
    }

    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    let mut mag2 = vec![0i64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| at(&blur, x + dx, y + dy);
            let sx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            let idx = y as usize * w + x as usize;
            gx[idx] = sx;
            gy[idx] = sy;
            mag2[idx] = sx * sx + sy * sy;
        }
    }

    // Compare squared magnitudes against thresholds scaled into blur units.
    let low2 = (low * GAUSS_SUM as f64).powi(2);
    let high2 = (high * GAUSS_SUM as f64).powi(2);

    let mut candidate = vec![false; w * h];
    let mut strong = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let idx = y as usize * w + x as usize;
            let m = mag2[idx];
            if (m as f64) <= low2 {
                continue;
            }
            let (ax, ay) = (gx[idx].abs() as f64, gy[idx].abs() as f64);
            let (dx, dy) = if ay <= ax * TAN_22_5 {
                (1, 0)
            } else if ay >= ax * TAN_67_5 {
                (0, 1)
            } else if (gx[idx] > 0) == (gy[idx] > 0) {
                (1, 1)
            } else {
                (1, -1)
            };
            let before = at(&mag2, x - dx, y - dy);
            let after = at(&mag2, x + dx, y + dy);
            if m > before && m >= after {
                candidate[idx] = true;
                if (m as f64) > high2 {
                    strong.push(idx);
                }
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for idx in strong {
        if !edges[idx] {
            edges[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (x, y) = ((idx % w) as isize, (idx / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if candidate[n] && !edges[n] {
                    edges[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }

    Ok(EdgeMap {
        width: w,
        height: h,
        edges,
    })
}

/// Canny with the default (100, 200) thresholds.
pub fn canny_default(frame: &Frame) -> Result<EdgeMap> {
    canny(frame, DEFAULT_LOW, DEFAULT_HIGH)
}

/// Intersection over union of the two maps after dilating both by `dilation`.
/// Two empty maps score 1.
pub fn edge_iou(a: &EdgeMap, b: &EdgeMap, dilation: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "edge maps differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (da, db) = (a.dilate(dilation), b.dilate(dilation));
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in da.edges.iter().zip(&db.edges) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
