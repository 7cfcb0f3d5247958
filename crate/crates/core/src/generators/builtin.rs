use super::{GenInput, GenMode, Generator, NoiseHandling};
use crate::error::{Error, Result};
use crate::scene::{Frame, Rgb};

/// Copies valid pixels and fills each invalid pixel with the colour of the
/// nearest valid one (Euclidean distance; ties go to the smaller row, then
/// the smaller column). The result has no validity mask.
pub fn fill_nearest_valid(frame: &Frame) -> Result<Frame> {
    let Some(valid) = &frame.valid else {
        return Ok(frame.clone());
    };
    if !valid.iter().any(|&v| v) {
        return Err(Error::InvalidArgument("empty init: no valid pixels".into()));
    }
    let (w, h) = frame.dims();

    // Per column, the nearest valid row to each row (smaller row on ties).
    let mut col_best: Vec<Option<usize>> = vec![None; w * h];
    for x in 0..w {
        let mut above: Option<usize> = None;
        for y in 0..h {
            if valid[y * w + x] {
                above = Some(y);
            }
            col_best[y * w + x] = above;
        }
        let mut below: Option<usize> = None;
        for y in (0..h).rev() {
            if valid[y * w + x] {
                below = Some(y);
            }
            let idx = y * w + x;
            col_best[idx] = match (col_best[idx], below) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
        }
    }

    let mut pixels = frame.pixels.clone();
    for y in 0..h {
        for x in 0..w {
            if valid[y * w + x] {
                continue;
            }
            let mut best: Option<(usize, usize, usize)> = None;
            for c in 0..w {
                let Some(r) = col_best[y * w + c] else {
                    continue;
                };
                let d2 = x.abs_diff(c).pow(2) + y.abs_diff(r).pow(2);
                let key = (d2, r, c);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
            let (_, r, c) = best.expect("at least one valid pixel");
            pixels[y * w + x] = frame.pixels[r * w + c];
        }
    }
    Ok(Frame::new(w, h, pixels))
}

/// Stable hue angle in `[0, 360)` derived from the 64-bit FNV-1a hash of the
/// prompt bytes.
pub fn prompt_hue_degrees(prompt: &str) -> f64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in prompt.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // The top 53 bits keep the quotient strictly below 1.
    (hash >> 11) as f64 / (1u64 << 53) as f64 * 360.0
}

fn rgb_to_hsv(p: Rgb) -> (f64, f64, f64) {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let sector = (h.floor() as usize).min(5);
    let f = h - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Rotates every pixel's hue by `degrees`. Saturation-free pixels and the
/// value channel (per-pixel maximum) are left unchanged.
pub fn rotate_hue(frame: &Frame, degrees: f64) -> Frame {
    if degrees.rem_euclid(360.0) == 0.0 {
        return frame.clone();
    }
    let pixels = frame
        .pixels
        .iter()
        .map(|&p| {
            let (h, s, v) = rgb_to_hsv(p);
            if s == 0.0 {
                p
            } else {
                hsv_to_rgb(h + degrees, s, v)
            }
        })
        .collect();
    Frame {
        pixels,
        ..frame.clone()
    }
}

fn fill_init(input: &GenInput, id: &str) -> Result<Frame> {
    let init = input.require_init(id)?;
    fill_nearest_valid(init).map_err(|e| Error::Generator {
        generator: id.into(),
        message: e.to_string(),
    })
}

/// Identity generator: valid pixels verbatim, holes nearest-valid filled.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl Generator for Passthrough {
    fn id(&self) -> &str {
        "passthrough"
    }

    fn generate(&self, input: &GenInput) -> Result<Frame> {
        fill_init(input, self.id())
    }
}

/// Prompt-keyed hue rotation of the filled init.
///
/// In propagate mode the init already carries the edited appearance, so only
/// the hole fill is applied.
#[derive(Clone, Copy, Debug, Default)]
pub struct Recolor;

impl Generator for Recolor {
    fn id(&self) -> &str {
        "recolor"
    }

    fn generate(&self, input: &GenInput) -> Result<Frame> {
        let filled = fill_init(input, self.id())?;
        Ok(match input.mode {
            GenMode::First => rotate_hue(&filled, prompt_hue_degrees(&input.prompt)),
            GenMode::Propagate => filled,
        })
    }
}

/// Passthrough on an init the engine has already noised; output clamped to
/// `[0, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Stochastic;

impl Generator for Stochastic {
    fn id(&self) -> &str {
        "stochastic"
    }

    fn noise_handling(&self) -> NoiseHandling {
        NoiseHandling::Engine
    }

    fn generate(&self, input: &GenInput) -> Result<Frame> {
        let mut out = fill_init(input, self.id())?;
        for p in &mut out.pixels {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}
