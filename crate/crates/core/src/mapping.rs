//! Transport between frame space and atlas space.
//!
//! [`forward_sample`] reads an atlas through a UV map with bilinear
//! interpolation; [`inverse_splat`] is its adjoint, pushing frame pixels into
//! atlas texels with the same four weights and normalizing by the
//! accumulated weight.

use crate::scene::{AlphaMap, Atlas, Frame, Rgb, UvMap};

/// Texels whose accumulated weight is at or below this are uncovered.
pub const COVERAGE_EPS: f64 = 1e-6;

/// Continuous coordinates this close to an integer are snapped onto it, which
/// absorbs the rounding of UV values stored as f32.
const SNAP_EPS: f64 = 1e-4;

/// The four atlas texels around a continuous position and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

impl Taps {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.index.iter().copied().zip(self.weight.iter().copied())
    }
}

fn axis(coord: f64, size: usize) -> (usize, usize, f64) {
    if size < 2 {
        return (0, 0, 0.0);
    }
    let max = (size - 1) as f64;
    let mut x = coord.clamp(0.0, max);
    let r = x.round();
    if (x - r).abs() < SNAP_EPS {
        x = r;
    }
    let x0 = (x.floor() as usize).min(size - 2);
    (x0, x0 + 1, x - x0 as f64)
}

/// Bilinear taps for normalized coordinates `uv` in an atlas of `dims`.
pub fn bilinear_taps(uv: [f32; 2], dims: (usize, usize)) -> Taps {
    let (aw, ah) = dims;
    let px = uv[0] as f64 * (aw.max(1) - 1) as f64;
    let py = uv[1] as f64 * (ah.max(1) - 1) as f64;
    let (x0, x1, fx) = axis(px, aw);
    let (y0, y1, fy) = axis(py, ah);
    Taps {
        index: [y0 * aw + x0, y0 * aw + x1, y1 * aw + x0, y1 * aw + x1],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    }
}

#[inline]
fn gather(pixels: &[Rgb], taps: &Taps) -> Rgb {
    let mut out = [0.0; 3];
    for (i, w) in taps.iter() {
        let p = pixels[i];
        for c in 0..3 {
            out[c] += w * p[c];
        }
    }
    out
}

/// Samples `atlas` at every frame pixel. UNMAPPED pixels come out black and
/// invalid.
pub fn forward_sample(atlas: &Atlas, uv: &UvMap) -> Frame {
    let dims = atlas.dims();
    let mut pixels = Vec::with_capacity(uv.entries.len());
    let mut valid = Vec::with_capacity(uv.entries.len());
    for e in &uv.entries {
        match e {
            Some(coord) => {
                pixels.push(gather(&atlas.pixels, &bilinear_taps(*coord, dims)));
                valid.push(true);
            }
            None => {
                pixels.push([0.0; 3]);
                valid.push(false);
            }
        }
    }
    let frame = Frame::new(uv.width, uv.height, pixels);
    if valid.iter().all(|&v| v) {
        frame
    } else {
        frame.with_validity(valid)
    }
}

/// Atlas-space colors splatted from a single frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialAtlas {
    pub width: usize,
    pub height: usize,
    /// Normalized color; black where uncovered.
    pub color: Vec<Rgb>,
    /// Accumulated splat weight per texel.
    pub coverage: Vec<f64>,
}

impl PartialAtlas {
    #[inline]
    pub fn is_covered(&self, idx: usize) -> bool {
        self.coverage[idx] > COVERAGE_EPS
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn total_coverage(&self) -> f64 {
        self.coverage.iter().sum()
    }

    /// The normalized colors as an atlas (uncovered texels black).
    pub fn to_atlas(&self) -> Atlas {
        Atlas {
            width: self.width,
            height: self.height,
            pixels: self.color.clone(),
        }
    }
}

/// Per-pixel splat weights taken from an alpha map.
pub fn alpha_weights(alpha: &AlphaMap) -> Vec<f64> {
    alpha.values.iter().map(|&a| a as f64).collect()
}

/// Splats `frame` into an atlas of `dims`. Each pixel contributes with its
/// bilinear weights scaled by `mask[pixel]`; invalid and UNMAPPED pixels
/// contribute nothing.
pub fn inverse_splat(
    frame: &Frame,
    uv: &UvMap,
    mask: &[f64],
    dims: (usize, usize),
) -> PartialAtlas {
    assert_eq!(frame.dims(), uv.dims(), "frame and uv sizes differ");
    assert_eq!(
        mask.len(),
        frame.pixels.len(),
        "mask size differs from frame"
    );
    let n = dims.0 * dims.1;
    let mut acc = vec![[0.0f64; 3]; n];
    let mut coverage = vec![0.0f64; n];

    for (idx, (e, &m)) in uv.entries.iter().zip(mask).enumerate() {
        let Some(coord) = e else { continue };
        if m <= 0.0 || !frame.is_valid(idx) {
            continue;
        }
        let color = frame.pixels[idx];
        for (t, w) in bilinear_taps(*coord, dims).iter() {
            let w = w * m;
            if w == 0.0 {
                continue;
            }
            coverage[t] += w;
            for c in 0..3 {
                acc[t][c] += w * color[c];
            }
        }
    }

    for (a, &cov) in acc.iter_mut().zip(&coverage) {
        if cov > COVERAGE_EPS {
            for c in a.iter_mut() {
                *c /= cov;
            }
        } else {
            *a = [0.0; 3];
        }
    }
    PartialAtlas {
        width: dims.0,
        height: dims.1,
        color: acc,
        coverage,
    }
}

/// Carries the previous key frame's edit into the current frame through
/// atlas space and weights it by the current opacity.
///
/// A pixel is valid when it is mapped, `alpha_cur > 0`, and every texel it
/// reads with non-zero weight is covered.
pub fn warp_keyframe(
    prev: &Frame,
    uv_prev: &UvMap,
    uv_cur: &UvMap,
    alpha_cur: &AlphaMap,
    dims: (usize, usize),
) -> Frame {
    let ones = vec![1.0; prev.pixels.len()];
    let partial = inverse_splat(prev, uv_prev, &ones, dims);
    sample_partial(&partial, uv_cur, alpha_cur)
}

/// Samples a partial atlas through `uv`, weighting by `alpha` and marking
/// pixels that touch uncovered texels invalid.
pub fn sample_partial(partial: &PartialAtlas, uv: &UvMap, alpha: &AlphaMap) -> Frame {
    assert_eq!(uv.dims(), alpha.dims(), "uv and alpha sizes differ");
    let dims = partial.dims();
    let mut pixels = vec![[0.0; 3]; uv.entries.len()];
    let mut valid = vec![false; uv.entries.len()];
    for (idx, e) in uv.entries.iter().enumerate() {
        let a = alpha.get(idx);
        let Some(coord) = e else { continue };
        if a <= 0.0 {
            continue;
        }
        let taps = bilinear_taps(*coord, dims);
        if taps.iter().any(|(t, w)| w > 0.0 && !partial.is_covered(t)) {
            continue;
        }
        let s = gather(&partial.color, &taps);
        pixels[idx] = [a * s[0], a * s[1], a * s[2]];
        valid[idx] = true;
    }
    Frame::new(uv.width, uv.height, pixels).with_validity(valid)
}
