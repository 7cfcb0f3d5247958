//! Finite-difference check of the aggregation gradients against a loss
//! computed independently of the library's forward pass.

use atlasforge::aggregation::{
    build_inputs, loss_and_grad, AggInputs, AggregationNet, Problem, HIDDEN,
};
use atlasforge::mapping::forward_sample;
use atlasforge::scene::{AlphaMap, Atlas, Frame, UvMap};

pub const ATLAS: (usize, usize) = (16, 16);
pub const STEP: f64 = 1e-4;

pub struct Fixture {
    pub frames: Vec<Frame>,
    pub uvs: Vec<UvMap>,
    pub alphas: Vec<AlphaMap>,
    pub net: AggregationNet,
}

pub struct Report {
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_param: usize,
    /// Smallest |pre-activation| anywhere in the hidden layer.
    pub relu_margin: f64,
    /// Smallest |sample - target| over supervised pixels.
    pub l1_margin: f64,
}

fn shifted_uv(w: usize, h: usize, ox: f64, oy: f64) -> UvMap {
    UvMap::from_texel_fn(w, h, ATLAS, |x, y| Some((x as f64 + ox, y as f64 + oy)))
}

fn pattern(w: usize, h: usize, phase: f64, offset: f64) -> Frame {
    Frame::new(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                std::array::from_fn(|c| {
                    0.45 + offset + 0.06 * ((0.7 * x + 0.4 * y + phase + c as f64).sin())
                })
            })
            .collect(),
    )
}

/// Two 12x12 key frames at different sub-texel offsets into a 16x16 atlas.
/// Parameters are chosen so no ReLU input and no L1 residual sits near zero;
/// the loss is then linear in each single parameter around the test point.
pub fn fixture() -> Fixture {
    let (w, h) = (12, 12);
    let frames = vec![pattern(w, h, 0.0, 0.25), pattern(w, h, 0.9, -0.2)];
    let uvs = vec![shifted_uv(w, h, 1.25, 1.5), shifted_uv(w, h, 3.5, 2.75)];
    let alphas = vec![
        AlphaMap::filled(w, h, 1.0),
        AlphaMap::new(
            w,
            h,
            (0..w * h)
                .map(|i| if i % w < 8 { 1.0 } else { 0.5 })
                .collect(),
        ),
    ];
    let mut net = AggregationNet::seeded(2, 17);
    let o = net.offsets();
    for p in &mut net.params[..o[0]] {
        *p *= 0.02;
    }
    for (j, p) in net.params[o[0]..o[1]].iter_mut().enumerate() {
        *p = if j % 2 == 0 { 0.5 } else { -0.5 };
    }
    for p in &mut net.params[o[1]..o[2]] {
        *p *= 0.5;
    }
    for p in &mut net.params[o[2]..o[3]] {
        *p = 0.3;
    }
    Fixture {
        frames,
        uvs,
        alphas,
        net,
    }
}

/// Returns (pre-activations, output atlas) by direct summation.
fn naive_forward(params: &[f64], k: usize, inputs: &AggInputs) -> (Vec<f64>, Atlas) {
    let (w, h) = (inputs.width, inputs.height);
    let n = w * h;
    let cin = 4 * k;
    let w1 = &params[..HIDDEN * cin * 9];
    let b1 = &params[HIDDEN * cin * 9..HIDDEN * cin * 9 + HIDDEN];
    let w2 = &params[HIDDEN * cin * 9 + HIDDEN..HIDDEN * cin * 9 + HIDDEN + 3 * HIDDEN * 9];
    let b2 = &params[params.len() - 3..];
    let read = |plane: &[f64], x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let mut pre = vec![0.0; HIDDEN * n];
    for o in 0..HIDDEN {
        for i in 0..n {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let mut s = b1[o];
            for c in 0..cin {
                for t in 0..9 {
                    let (dx, dy) = ((t % 3) as i64 - 1, (t / 3) as i64 - 1);
                    s += w1[(o * cin + c) * 9 + t]
                        * read(&inputs.channels[c * n..(c + 1) * n], x + dx, y + dy);
                }
            }
            pre[o * n + i] = s;
        }
    }
    let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let pixels = (0..n)
        .map(|i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            std::array::from_fn(|j| {
                let mut s = b2[j] + inputs.baseline[j * n + i];
                for o in 0..HIDDEN {
                    for t in 0..9 {
                        let (dx, dy) = ((t % 3) as i64 - 1, (t / 3) as i64 - 1);
                        s += w2[(j * HIDDEN + o) * 9 + t]
                            * read(&act[o * n..(o + 1) * n], x + dx, y + dy);
                    }
                }
                s
            })
        })
        .collect();
    (pre, Atlas::new(w, h, pixels).unwrap())
}

/// Loss and the smallest residual magnitude, via sampling the naive output.
fn naive_loss(params: &[f64], k: usize, inputs: &AggInputs, fx: &Fixture) -> (f64, f64, Vec<f64>) {
    let (pre, atlas) = naive_forward(params, k, inputs);
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    for ((frame, uv), alpha) in fx.frames.iter().zip(&fx.uvs).zip(&fx.alphas) {
        let sampled = forward_sample(&atlas, uv);
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..frame.pixels.len() {
            let a = alpha.get(p);
            if a <= 0.0 || uv.get(p).is_none() {
                continue;
            }
            den += a;
            for c in 0..3 {
                let d = sampled.pixels[p][c] - frame.pixels[p][c];
                margin = margin.min(d.abs());
                num += a * d.abs();
            }
        }
        total += num / (3.0 * den);
    }
    (total, margin, pre)
}

pub fn run() -> Report {
    let fx = fixture();
    let uv_refs: Vec<&UvMap> = fx.uvs.iter().collect();
    let alpha_refs: Vec<&AlphaMap> = fx.alphas.iter().collect();
    let inputs = build_inputs(&fx.frames, &uv_refs, &alpha_refs, ATLAS).unwrap();
    let problem = Problem::new(inputs.clone(), &fx.frames, &uv_refs, &alpha_refs).unwrap();
    let (_, analytic) = loss_and_grad(&fx.net, &problem).unwrap();
    let (_, l1_margin, pre) = naive_loss(&fx.net.params, 2, &inputs, &fx);
    let relu_margin = pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));

    let mut params = fx.net.params.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_param = 0;
    for i in 0..params.len() {
        let keep = params[i];
        params[i] = keep + STEP;
        let (plus, _, _) = naive_loss(&params, 2, &inputs, &fx);
        params[i] = keep - STEP;
        let (minus, _, _) = naive_loss(&params, 2, &inputs, &fx);
        params[i] = keep;
        let numeric = (plus - minus) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / scale;
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_param = i;
        }
    }
    Report {
        params: params.len(),
        max_rel_error,
        worst_param,
        relu_margin,
        l1_margin,
    }
}
