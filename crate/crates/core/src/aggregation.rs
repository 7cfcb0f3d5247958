//! Fusing per-key-frame partial atlases into one edited atlas.
//!
//! The network reads `4K` channels (normalized colour and coverage of every
//! key frame's partial atlas) and predicts a residual on top of the
//! coverage-weighted mean of the partials:
//!
//! ```text
//! out = conv2(relu(conv1(x))) + baseline
//! ```
//!
//! Both convolutions are 3x3 with zero padding 1. Training minimizes, summed
//! over key frames, the alpha-weighted mean L1 distance between the edited
//! key frame and the output atlas sampled through that frame's UV map.
//!
//! Only atlas texels read by some key-frame pixel influence the loss, so
//! training evaluates the network on their bounding box (grown by the
//! receptive field) instead of the whole atlas. The result is identical to a
//! full-atlas evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mapping::{bilinear_taps, inverse_splat};
use crate::scene::{AlphaMap, Atlas, Frame, Rgb, UvMap};

/// Hidden channel count.
pub const HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.003,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Axis-aligned texel rectangle inside an atlas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn full(w: usize, h: usize) -> Self {
        Region { x0: 0, y0: 0, w, h }
    }

    pub fn len(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grows by `r` texels on every side, clipped to an atlas of `dims`.
    pub fn grow(&self, r: usize, dims: (usize, usize)) -> Region {
        let x0 = self.x0.saturating_sub(r);
        let y0 = self.y0.saturating_sub(r);
        let x1 = (self.x0 + self.w + r).min(dims.0);
        let y1 = (self.y0 + self.h + r).min(dims.1);
        Region {
            x0,
            y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    #[inline]
    fn local(&self, atlas_idx: usize, atlas_w: usize) -> usize {
        let (x, y) = (atlas_idx % atlas_w, atlas_idx / atlas_w);
        (y - self.y0) * self.w + (x - self.x0)
    }

    /// Copies the region out of planar atlas-sized channels.
    fn crop(&self, planes: &[f64], channels: usize, atlas_w: usize, atlas_h: usize) -> Vec<f64> {
        let n = atlas_w * atlas_h;
        let mut out = Vec::with_capacity(channels * self.len());
        for c in 0..channels {
            for y in self.y0..self.y0 + self.h {
                let row = c * n + y * atlas_w;
                out.extend_from_slice(&planes[row + self.x0..row + self.x0 + self.w]);
            }
        }
        out
    }
}

/// Network inputs on the full atlas grid, stored channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct AggInputs {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// `4K` planes: `[R_0, G_0, B_0, cov_0, R_1, ...]`.
    pub channels: Vec<f64>,
    /// Three planes holding the coverage-weighted mean colour.
    pub baseline: Vec<f64>,
}

impl AggInputs {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn baseline_atlas(&self) -> Atlas {
        planes_to_atlas(&self.baseline, self.width, self.height)
    }
}

fn planes_to_atlas(planes: &[f64], w: usize, h: usize) -> Atlas {
    let n = w * h;
    let pixels = (0..n)
        .map(|i| [planes[i], planes[n + i], planes[2 * n + i]])
        .collect();
    Atlas {
        width: w,
        height: h,
        pixels,
    }
}

/// Splats every key frame (masked by its alpha) into an atlas of `dims` and
/// packs the partials and their coverage-weighted mean.
pub fn build_inputs(
    frames: &[Frame],
    uvs: &[&UvMap],
    alphas: &[&AlphaMap],
    dims: (usize, usize),
) -> Result<AggInputs> {
    let k = frames.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "aggregation needs at least one key frame".into(),
        ));
    }
    if uvs.len() != k || alphas.len() != k {
        return Err(Error::Shape(format!(
            "{k} key frames but {} uv maps and {} alpha maps",
            uvs.len(),
            alphas.len()
        )));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != frames[0].dims() || uvs[i].dims() != f.dims() || alphas[i].dims() != f.dims()
        {
            return Err(Error::Shape(format!(
                "key frame {i} differs in size from its uv/alpha or frame 0"
            )));
        }
    }
    let n = dims.0 * dims.1;
    let mut channels = vec![0.0; 4 * k * n];
    let mut num = vec![[0.0f64; 3]; n];
    let mut den = vec![0.0f64; n];
    for (j, frame) in frames.iter().enumerate() {
        let mask: Vec<f64> = alphas[j].values.iter().map(|&a| a as f64).collect();
        let partial = inverse_splat(frame, uvs[j], &mask, dims);
        for t in 0..n {
            let col = partial.color[t];
            for c in 0..3 {
                channels[(4 * j + c) * n + t] = col[c];
            }
            channels[(4 * j + 3) * n + t] = partial.coverage[t];
            if partial.is_covered(t) {
                let cov = partial.coverage[t];
                den[t] += cov;
                for c in 0..3 {
                    num[t][c] += cov * col[c];
                }
            }
        }
    }
    let mut baseline = vec![0.0; 3 * n];
    for t in 0..n {
        if den[t] > 0.0 {
            for c in 0..3 {
                baseline[c * n + t] = num[t][c] / den[t];
            }
        }
    }
    Ok(AggInputs {
        width: dims.0,
        height: dims.1,
        k,
        channels,
        baseline,
    })
}

/// Two-layer convolutional network; all parameters in one flat vector laid
/// out as `w1 [HIDDEN][4K][3][3]`, `b1 [HIDDEN]`, `w2 [3][HIDDEN][3][3]`,
/// `b2 [3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationNet {
    pub k: usize,
    pub params: Vec<f64>,
}

impl AggregationNet {
    pub fn param_count(k: usize) -> usize {
        HIDDEN * 4 * k * 9 + HIDDEN + 3 * HIDDEN * 9 + 3
    }

    pub fn zeros(k: usize) -> Self {
        AggregationNet {
            k,
            params: vec![0.0; Self::param_count(k)],
        }
    }

    /// Every weight and bias uniform in `±sqrt(1 / fan_in)`, where `fan_in`
    /// is the layer's input channels times 9.
    pub fn seeded(k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(k);
        let b1 = (1.0 / (4 * k * 9) as f64).sqrt();
        let b2 = (1.0 / (HIDDEN * 9) as f64).sqrt();
        let split = HIDDEN * 4 * k * 9 + HIDDEN;
        for (i, p) in net.params.iter_mut().enumerate() {
            let bound = if i < split { b1 } else { b2 };
            *p = rng.random_range(-bound..=bound);
        }
        net
    }

    pub fn in_channels(&self) -> usize {
        4 * self.k
    }

    /// End offsets of `w1`, `b1`, `w2` and `b2` in `params`.
    pub fn offsets(&self) -> [usize; 4] {
        let w1 = HIDDEN * self.in_channels() * 9;
        [
            w1,
            w1 + HIDDEN,
            w1 + HIDDEN + 3 * HIDDEN * 9,
            self.params.len(),
        ]
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.offsets()[0]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }
}

/// Calls `f(out_offset, in_offset, len)` for every contiguous row segment
/// where output texels of `out_r` read input texels of `in_r` through kernel
/// tap `(kx, ky)`. Reads outside the atlas are skipped (zero padding).
#[inline]
fn tap_rows(
    out_r: Region,
    in_r: Region,
    dims: (usize, usize),
    kx: usize,
    ky: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (aw, ah) = (dims.0 as isize, dims.1 as isize);
    let (dx, dy) = (kx as isize - 1, ky as isize - 1);
    let ox0 = out_r.x0 as isize;
    let lo = (-dx - ox0).max(0);
    let hi = (aw - dx - ox0).min(out_r.w as isize);
    if lo >= hi {
        return;
    }
    let len = (hi - lo) as usize;
    for oy in 0..out_r.h {
        let ay = (out_r.y0 + oy) as isize + dy;
        if ay < 0 || ay >= ah {
            continue;
        }
        let iy = (ay - in_r.y0 as isize) as usize;
        let ix = (ox0 + lo + dx - in_r.x0 as isize) as usize;
        f(oy * out_r.w + lo as usize, iy * in_r.w + ix, len);
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_r: Region,
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    out_r: Region,
    dims: (usize, usize),
) -> Vec<f64> {
    let (n_in, n_out) = (in_r.len(), out_r.len());
    let mut out = vec![0.0; cout * n_out];
    out.par_chunks_mut(n_out)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(b[o]);
            for c in 0..cin {
                let src = &input[c * n_in..(c + 1) * n_in];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = w[(o * cin + c) * 9 + ky * 3 + kx];
                        tap_rows(out_r, in_r, dims, kx, ky, |oo, io, len| {
                            for (d, s) in plane[oo..oo + len].iter_mut().zip(&src[io..io + len]) {
                                *d += wv * s;
                            }
                        });
                    }
                }
            }
        });
    out
}

/// Gradients of a convolution: writes `dw`, `db`, and, when requested, the
/// gradient with respect to the input region.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_r: Region,
    cin: usize,
    w: &[f64],
    cout: usize,
    out_r: Region,
    dims: (usize, usize),
    g_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (n_in, n_out) = (in_r.len(), out_r.len());
    for o in 0..cout {
        db[o] = g_out[o * n_out..(o + 1) * n_out].iter().sum();
    }
    dw.par_chunks_mut(cin * 9).enumerate().for_each(|(o, dwo)| {
        let go = &g_out[o * n_out..(o + 1) * n_out];
        for c in 0..cin {
            let src = &input[c * n_in..(c + 1) * n_in];
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0;
                    tap_rows(out_r, in_r, dims, kx, ky, |oo, io, len| {
                        for (g, s) in go[oo..oo + len].iter().zip(&src[io..io + len]) {
                            acc += g * s;
                        }
                    });
                    dwo[c * 9 + ky * 3 + kx] = acc;
                }
            }
        }
    });
    if !want_input_grad {
        return None;
    }
    let mut g_in = vec![0.0; cin * n_in];
    g_in.par_chunks_mut(n_in).enumerate().for_each(|(c, gi)| {
        for o in 0..cout {
            let go = &g_out[o * n_out..(o + 1) * n_out];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[(o * cin + c) * 9 + ky * 3 + kx];
                    tap_rows(out_r, in_r, dims, kx, ky, |oo, io, len| {
                        for (d, g) in gi[io..io + len].iter_mut().zip(&go[oo..oo + len]) {
                            *d += wv * g;
                        }
                    });
                }
            }
        }
    });
    Some(g_in)
}

struct Activations {
    r0: Region,
    r1: Region,
    r2: Region,
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    /// Network output including the baseline, three planes over `r0`.
    out: Vec<f64>,
}

fn forward_region(net: &AggregationNet, inputs: &AggInputs, r0: Region) -> Result<Activations> {
    if net.k != inputs.k {
        return Err(Error::Shape(format!(
            "network expects {} key frames, inputs carry {}",
            net.k, inputs.k
        )));
    }
    let dims = inputs.dims();
    let r1 = r0.grow(1, dims);
    let r2 = r1.grow(1, dims);
    let cin = net.in_channels();
    let input = r2.crop(&inputs.channels, cin, dims.0, dims.1);
    let pre = conv_forward(&input, r2, cin, net.w1(), net.b1(), HIDDEN, r1, dims);
    let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mut out = conv_forward(&act, r1, HIDDEN, net.w2(), net.b2(), 3, r0, dims);
    let base = r0.crop(&inputs.baseline, 3, dims.0, dims.1);
    for (o, b) in out.iter_mut().zip(&base) {
        *o += b;
    }
    Ok(Activations {
        r0,
        r1,
        r2,
        input,
        pre,
        act,
        out,
    })
}

/// Unclamped network output over the whole atlas.
pub fn net_forward(net: &AggregationNet, inputs: &AggInputs) -> Result<Vec<Rgb>> {
    let (w, h) = inputs.dims();
    let acts = forward_region(net, inputs, Region::full(w, h))?;
    Ok(planes_to_atlas(&acts.out, w, h).pixels)
}

#[derive(Clone, Debug)]
struct Sample {
    taps: [(usize, f64); 4],
    target: Rgb,
    weight: f64,
}

/// Key-frame supervision resolved into atlas taps, plus the network inputs.
#[derive(Clone, Debug)]
pub struct Problem {
    pub inputs: AggInputs,
    samples: Vec<Sample>,
    region: Region,
}

impl Problem {
    /// Pairs inputs with their key frames. Each key frame contributes its
    /// mapped pixels with `alpha > 0`, weighted by `alpha / (3 * sum alpha)`.
    pub fn new(
        inputs: AggInputs,
        frames: &[Frame],
        uvs: &[&UvMap],
        alphas: &[&AlphaMap],
    ) -> Result<Problem> {
        if frames.len() != inputs.k || uvs.len() != inputs.k || alphas.len() != inputs.k {
            return Err(Error::Shape(
                "key frame, uv and alpha counts must match the inputs".into(),
            ));
        }
        let dims = inputs.dims();
        let mut samples = Vec::new();
        for ((frame, uv), alpha) in frames.iter().zip(uvs).zip(alphas) {
            let used: Vec<usize> = (0..frame.pixels.len())
                .filter(|&p| uv.entries[p].is_some() && alpha.get(p) > 0.0)
                .collect();
            let total: f64 = used.iter().map(|&p| alpha.get(p)).sum();
            for p in used {
                let t = bilinear_taps(uv.entries[p].unwrap(), dims);
                samples.push(Sample {
                    taps: std::array::from_fn(|j| (t.index[j], t.weight[j])),
                    target: frame.pixels[p],
                    weight: alpha.get(p) / (3.0 * total),
                });
            }
        }
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for s in &samples {
            for &(t, w) in &s.taps {
                if w == 0.0 {
                    continue;
                }
                let (x, y) = (t % dims.0, t / dims.0);
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
        let region = match bounds {
            Some((x0, y0, x1, y1)) => Region {
                x0,
                y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            },
            None => Region {
                x0: 0,
                y0: 0,
                w: 0,
                h: 0,
            },
        };
        Ok(Problem {
            inputs,
            samples,
            region,
        })
    }

    /// Texels read by the loss.
    pub fn region(&self) -> Region {
        self.region
    }
}

/// Loss and its gradient with respect to every network parameter.
pub fn loss_and_grad(net: &AggregationNet, problem: &Problem) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.params.len()];
    if problem.samples.is_empty() {
        return Ok((0.0, grad));
    }
    let dims = problem.inputs.dims();
    let a = forward_region(net, &problem.inputs, problem.region)?;
    let n0 = a.r0.len();
    let mut loss = 0.0;
    let mut g_out = vec![0.0; 3 * n0];
    for s in &problem.samples {
        let local: [(usize, f64); 4] = s.taps.map(|(t, w)| {
            if w == 0.0 {
                (0, 0.0)
            } else {
                (a.r0.local(t, dims.0), w)
            }
        });
        for c in 0..3 {
            let plane = &a.out[c * n0..(c + 1) * n0];
            let v: f64 = local
                .iter()
                .map(|&(l, w)| if w == 0.0 { 0.0 } else { w * plane[l] })
                .sum();
            let d = v - s.target[c];
            loss += s.weight * d.abs();
            let g = if d > 0.0 {
                s.weight
            } else if d < 0.0 {
                -s.weight
            } else {
                0.0
            };
            if g != 0.0 {
                for &(l, w) in &local {
                    if w != 0.0 {
                        g_out[c * n0 + l] += w * g;
                    }
                }
            }
        }
    }

    let o = net.offsets();
    let (gw1, rest) = grad.split_at_mut(o[0]);
    let (gb1, rest) = rest.split_at_mut(HIDDEN);
    let (gw2, gb2) = rest.split_at_mut(3 * HIDDEN * 9);
    let g_act = conv_backward(
        &a.act,
        a.r1,
        HIDDEN,
        net.w2(),
        3,
        a.r0,
        dims,
        &g_out,
        gw2,
        gb2,
        true,
    )
    .expect("input gradient requested");
    let g_pre: Vec<f64> = g_act
        .iter()
        .zip(&a.pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();
    conv_backward(
        &a.input,
        a.r2,
        net.in_channels(),
        net.w1(),
        HIDDEN,
        a.r1,
        dims,
        &g_pre,
        gw1,
        gb1,
        false,
    );
    Ok((loss, grad))
}

pub fn loss(net: &AggregationNet, problem: &Problem) -> Result<f64> {
    if problem.samples.is_empty() {
        return Ok(0.0);
    }
    let dims = problem.inputs.dims();
    let a = forward_region(net, &problem.inputs, problem.region)?;
    let n0 = a.r0.len();
    let mut total = 0.0;
    for s in &problem.samples {
        for c in 0..3 {
            let plane = &a.out[c * n0..(c + 1) * n0];
            let v: f64 = s
                .taps
                .iter()
                .filter(|&&(_, w)| w != 0.0)
                .map(|&(t, w)| w * plane[a.r0.local(t, dims.0)])
                .sum();
            total += s.weight * (v - s.target[c]).abs();
        }
    }
    Ok(total)
}

/// Full-batch momentum descent, `v <- mu v - lr g; w <- w + v`.
///
/// Returns the loss before every update followed by the final loss, so the
/// history has `epochs + 1` entries.
pub fn train(net: &mut AggregationNet, problem: &Problem, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut velocity = vec![0.0; net.params.len()];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (l, g) = loss_and_grad(net, problem)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(l);
        for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&g) {
            *v = cfg.momentum * *v - cfg.lr * g;
            *p += *v;
        }
    }
    let last = loss(net, problem)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: cfg.epochs });
    }
    history.push(last);
    Ok(history)
}

#[derive(Clone, Debug)]
pub struct Aggregated {
    pub atlas: Atlas,
    pub history: Vec<f64>,
    pub net: AggregationNet,
}

/// Builds inputs from the edited key frames, trains a freshly seeded network
/// and exports its clamped output. With zero epochs the network is all
/// zeros, so the result is the clamped baseline.
pub fn aggregate(
    frames: &[Frame],
    uvs: &[&UvMap],
    alphas: &[&AlphaMap],
    dims: (usize, usize),
    cfg: &TrainConfig,
) -> Result<Aggregated> {
    cfg.validate()?;
    let inputs = build_inputs(frames, uvs, alphas, dims)?;
    let k = inputs.k;
    let problem = Problem::new(inputs, frames, uvs, alphas)?;
    let mut net = if cfg.epochs == 0 {
        AggregationNet::zeros(k)
    } else {
        AggregationNet::seeded(k, cfg.seed)
    };
    let history = train(&mut net, &problem, cfg)?;
    let out = net_forward(&net, &problem.inputs)?;
    let atlas = Atlas {
        width: dims.0,
        height: dims.1,
        pixels: out,
    }
    .clamped();
    Ok(Aggregated {
        atlas,
        history,
        net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::forward_sample;

    /// Direct full-atlas evaluation with explicit zero padding.
    fn naive_forward(net: &AggregationNet, inputs: &AggInputs) -> Vec<Rgb> {
        let (w, h) = inputs.dims();
        let n = w * h;
        let cin = net.in_channels();
        let at = |plane: &[f64], x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                plane[y as usize * w + x as usize]
            }
        };
        let mut hidden = vec![0.0; HIDDEN * n];
        for o in 0..HIDDEN {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = net.b1()[o];
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let v = at(
                                    &inputs.channels[c * n..(c + 1) * n],
                                    x + kx - 1,
                                    y + ky - 1,
                                );
                                s += net.w1()[(o * cin + c) * 9 + (ky * 3 + kx) as usize] * v;
                            }
                        }
                    }
                    hidden[o * n + y as usize * w + x as usize] = s.max(0.0);
                }
            }
        }
        (0..n)
            .map(|i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                std::array::from_fn(|j| {
                    let mut s = net.b2()[j] + inputs.baseline[j * n + i];
                    for o in 0..HIDDEN {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let v = at(&hidden[o * n..(o + 1) * n], x + kx - 1, y + ky - 1);
                                s += net.w2()[(j * HIDDEN + o) * 9 + (ky * 3 + kx) as usize] * v;
                            }
                        }
                    }
                    s
                })
            })
            .collect()
    }

    fn checker(w: usize, h: usize, shift: f64) -> Frame {
        Frame::new(
            w,
            h,
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let c = if (x / 2 + y / 2) % 2 == 0 { 0.2 } else { 0.7 };
                    [c + shift, 0.5 - shift, (x as f64 / w as f64) * 0.5 + shift]
                })
                .collect(),
        )
    }

    fn identity_problem(frames: &[Frame]) -> (Vec<UvMap>, Vec<AlphaMap>) {
        let (w, h) = frames[0].dims();
        (
            frames.iter().map(|_| UvMap::identity(w, h)).collect(),
            frames.iter().map(|_| AlphaMap::filled(w, h, 1.0)).collect(),
        )
    }

    #[test]
    fn single_full_partial_is_the_baseline() {
        let f = checker(6, 5, 0.0);
        let (uv, alpha) = identity_problem(std::slice::from_ref(&f));
        let inputs =
            build_inputs(std::slice::from_ref(&f), &[&uv[0]], &[&alpha[0]], (6, 5)).unwrap();
        assert_eq!(inputs.baseline_atlas().pixels, f.pixels);
        assert!(inputs.channels[3 * 30..4 * 30].iter().all(|&c| c == 1.0));
    }

    #[test]
    fn disjoint_partials_form_a_patchwork() {
        let (w, h) = (6, 4);
        let a = Frame::filled(w, h, [1.0, 0.0, 0.0]);
        let b = Frame::filled(w, h, [0.0, 0.0, 1.0]);
        let uv = UvMap::identity(w, h);
        let left = AlphaMap::new(
            w,
            h,
            (0..w * h)
                .map(|i| if i % w < 3 { 1.0 } else { 0.0 })
                .collect(),
        );
        let right = AlphaMap::new(
            w,
            h,
            (0..w * h)
                .map(|i| if i % w >= 3 { 1.0 } else { 0.0 })
                .collect(),
        );
        let inputs = build_inputs(&[a, b], &[&uv, &uv], &[&left, &right], (w, h)).unwrap();
        for (i, p) in inputs.baseline_atlas().pixels.iter().enumerate() {
            let expected = if i % w < 3 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            assert_eq!(*p, expected);
        }
    }

    #[test]
    fn identical_partials_average_to_either() {
        let f = checker(5, 5, 0.1);
        let uv = UvMap::identity(5, 5);
        let alpha = AlphaMap::filled(5, 5, 1.0);
        let inputs = build_inputs(
            &[f.clone(), f.clone()],
            &[&uv, &uv],
            &[&alpha, &alpha],
            (5, 5),
        )
        .unwrap();
        for (a, b) in inputs.baseline_atlas().pixels.iter().zip(&f.pixels) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_net_is_exactly_the_baseline() {
        let f = checker(7, 6, 0.0);
        let (uv, alpha) = identity_problem(std::slice::from_ref(&f));
        let inputs =
            build_inputs(std::slice::from_ref(&f), &[&uv[0]], &[&alpha[0]], (7, 6)).unwrap();
        let out = net_forward(&AggregationNet::zeros(1), &inputs).unwrap();
        assert_eq!(out, inputs.baseline_atlas().pixels);
    }

    #[test]
    fn bias_only_field_matches_hand_computation() {
        // Zero input and baseline on 5x5, conv1 weights zero, biases b1;
        // conv2 weights all 1/16 on hidden channel 0 only.
        let inputs = AggInputs {
            width: 5,
            height: 5,
            k: 1,
            channels: vec![0.0; 4 * 25],
            baseline: vec![0.0; 3 * 25],
        };
        let mut net = AggregationNet::zeros(1);
        let o = net.offsets();
        net.params[o[0]] = 0.5; // b1[0]
        net.params[o[0] + 1] = -0.25; // b1[1], killed by the ReLU
        for j in 0..3 {
            for t in 0..9 {
                net.params[o[1] + (j * HIDDEN) * 9 + t] = 1.0 / 16.0;
            }
        }
        net.params[o[2] + 2] = 0.125; // b2[2]
        let out = net_forward(&net, &inputs).unwrap();
        for (i, p) in out.iter().enumerate() {
            let (x, y) = (i % 5, i / 5);
            let nx = if x == 0 || x == 4 { 2.0 } else { 3.0 };
            let ny = if y == 0 || y == 4 { 2.0 } else { 3.0 };
            let v = 0.5 * nx * ny / 16.0;
            assert_eq!(*p, [v, v, v + 0.125], "texel {i}");
        }
    }

    #[test]
    fn forward_matches_naive_and_second_layer_is_linear() {
        let f0 = checker(9, 7, 0.0);
        let f1 = checker(9, 7, 0.1);
        let uv = UvMap::identity(9, 7);
        let alpha = AlphaMap::filled(9, 7, 1.0);
        let inputs = build_inputs(&[f0, f1], &[&uv, &uv], &[&alpha, &alpha], (9, 7)).unwrap();
        let net = AggregationNet::seeded(2, 5);
        let fast = net_forward(&net, &inputs).unwrap();
        let slow = naive_forward(&net, &inputs);
        for (a, b) in fast.iter().zip(&slow) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
        let mut doubled = net.clone();
        let o = doubled.offsets();
        for p in &mut doubled.params[o[1]..] {
            *p *= 2.0;
        }
        let out2 = net_forward(&doubled, &inputs).unwrap();
        let base = inputs.baseline_atlas().pixels;
        for i in 0..fast.len() {
            for c in 0..3 {
                let r1 = fast[i][c] - base[i][c];
                let r2 = out2[i][c] - base[i][c];
                assert!((r2 - 2.0 * r1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_forward_agrees_with_full_forward() {
        let f = checker(12, 10, 0.05);
        let uv = UvMap::identity(12, 10);
        let alpha = AlphaMap::new(
            12,
            10,
            (0..120)
                .map(|i| {
                    if (i % 12) > 3 && (i / 12) > 2 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        let inputs = build_inputs(std::slice::from_ref(&f), &[&uv], &[&alpha], (12, 10)).unwrap();
        let net = AggregationNet::seeded(1, 9);
        let full = net_forward(&net, &inputs).unwrap();
        let r = Region {
            x0: 3,
            y0: 2,
            w: 6,
            h: 5,
        };
        let part = forward_region(&net, &inputs, r).unwrap();
        for y in 0..r.h {
            for x in 0..r.w {
                let i = (r.y0 + y) * 12 + r.x0 + x;
                for c in 0..3 {
                    assert!((part.out[c * r.len() + y * r.w + x] - full[i][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_reproduction_has_zero_loss_and_gradient() {
        let f = checker(8, 8, 0.0);
        let (uv, alpha) = identity_problem(std::slice::from_ref(&f));
        let inputs =
            build_inputs(std::slice::from_ref(&f), &[&uv[0]], &[&alpha[0]], (8, 8)).unwrap();
        let problem =
            Problem::new(inputs, std::slice::from_ref(&f), &[&uv[0]], &[&alpha[0]]).unwrap();
        let (l, g) = loss_and_grad(&AggregationNet::zeros(1), &problem).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_matches_sampled_reference_and_is_homogeneous() {
        let f = checker(8, 6, 0.0);
        let target = checker(8, 6, 0.1);
        let uv = UvMap::identity(8, 6);
        let alpha = AlphaMap::new(8, 6, (0..48).map(|i| (i % 5) as f32 / 4.0).collect());
        let inputs = build_inputs(std::slice::from_ref(&f), &[&uv], &[&alpha], (8, 6)).unwrap();
        let net = AggregationNet::seeded(1, 2);
        let problem = Problem::new(
            inputs.clone(),
            std::slice::from_ref(&target),
            &[&uv],
            &[&alpha],
        )
        .unwrap();
        let l = loss(&net, &problem).unwrap();

        let out = Atlas::new(8, 6, naive_forward(&net, &inputs)).unwrap();
        let sampled = forward_sample(&out, &uv);
        let (mut num, mut den) = (0.0, 0.0);
        for p in 0..48 {
            let a = alpha.get(p);
            den += a;
            for c in 0..3 {
                num += a * (sampled.pixels[p][c] - target.pixels[p][c]).abs() / 3.0;
            }
        }
        assert!((l - num / den).abs() < 1e-12);

        // Targets pushed twice as far from the output double the loss.
        let far = Frame::new(
            8,
            6,
            sampled
                .pixels
                .iter()
                .zip(&target.pixels)
                .map(|(s, t)| std::array::from_fn(|c| s[c] + 2.0 * (t[c] - s[c])))
                .collect(),
        );
        let problem2 = Problem::new(inputs, std::slice::from_ref(&far), &[&uv], &[&alpha]).unwrap();
        assert!((loss(&net, &problem2).unwrap() - 2.0 * l).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let f = checker(6, 6, 0.0);
        let target = checker(6, 6, 0.2);
        let uv = UvMap::identity(6, 6);
        let alpha = AlphaMap::filled(6, 6, 1.0);
        let inputs = build_inputs(std::slice::from_ref(&f), &[&uv], &[&alpha], (6, 6)).unwrap();
        let problem =
            Problem::new(inputs, std::slice::from_ref(&target), &[&uv], &[&alpha]).unwrap();
        let mut net = AggregationNet::seeded(1, 3);
        let before = net.clone();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.0,
            momentum: 0.9,
            seed: 3,
        };
        let hist = train(&mut net, &problem, &cfg).unwrap();
        assert_eq!(net, before);
        assert_eq!(hist.len(), 6);
        assert!(hist.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let target = checker(10, 8, 0.08);
        let uv = UvMap::identity(10, 8);
        let alpha = AlphaMap::filled(10, 8, 1.0);
        let run = || {
            aggregate(
                std::slice::from_ref(&target),
                &[&uv],
                &[&alpha],
                (10, 8),
                &TrainConfig {
                    epochs: 60,
                    seed: 4,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.atlas, b.atlas);
        assert!(a.history.last().unwrap() < &a.history[0]);
    }

    #[test]
    fn zero_epochs_export_the_clamped_baseline() {
        let f = Frame::new(3, 3, vec![[0.5, 0.25, 1.0]; 9]);
        let uv = UvMap::identity(3, 3);
        let alpha = AlphaMap::filled(3, 3, 1.0);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = aggregate(std::slice::from_ref(&f), &[&uv], &[&alpha], (3, 3), &cfg).unwrap();
        assert_eq!(out.atlas.pixels, f.pixels);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0], 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig {
            lr: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            momentum: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(build_inputs(&[], &[], &[], (4, 4)).is_err());
    }
}
