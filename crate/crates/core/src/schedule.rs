//! Variance-preserving noise schedule and the perturbation step used during
//! propagation.
//!
//! With a linear rate `beta(s) = beta_min + s (beta_max - beta_min)`:
//!
//! ```text
//! alpha(t) = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2)
//! sigma(t) = sqrt(1 - alpha(t)^2)
//! ```
//!
//! Gaussian noise is drawn from a counter-based generator so that element
//! `i` of the noise field depends only on `(seed, i)`:
//!
//! * `k1 = splitmix64_mix(seed + GOLDEN * (2i + 1))`,
//!   `k2 = splitmix64_mix(seed + GOLDEN * (2i + 2))` (wrapping arithmetic,
//!   `GOLDEN = 0x9E3779B97F4A7C15`), i.e. the SplitMix64 outputs at those
//!   stream positions;
//! * `u1 = ((k1 >> 11) + 1) / 2^53` in `(0, 1]`, `u2 = (k2 >> 11) / 2^53`;
//! * `z = sqrt(-2 ln u1) cos(2 pi u2)` (Box-Muller, cosine branch).

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl ScheduleParams {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Ok(ScheduleParams { beta_min, beta_max })
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "noise time {t} is outside [0, 1]"
        )))
    }
}

/// Signal and noise scales at time `t`.
pub fn alpha_sigma(t: f64, params: ScheduleParams) -> Result<(f64, f64)> {
    check_t(t)?;
    let delta = params.beta_max - params.beta_min;
    let alpha = (-0.25 * t * t * delta - 0.5 * t * params.beta_min).exp();
    let sigma = (1.0 - alpha * alpha).max(0.0).sqrt();
    Ok((alpha, sigma))
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// The `index`-th standard-normal draw of the stream identified by `seed`.
pub fn standard_normal(seed: u64, index: u64) -> f64 {
    let pos = index.wrapping_mul(2);
    let k1 = mix64(seed.wrapping_add(GOLDEN.wrapping_mul(pos.wrapping_add(1))));
    let k2 = mix64(seed.wrapping_add(GOLDEN.wrapping_mul(pos.wrapping_add(2))));
    let u1 = ((k1 >> 11) + 1) as f64 * INV_2_53;
    let u2 = (k2 >> 11) as f64 * INV_2_53;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `alpha(t0) * x + sigma(t0) * z` with `z[i] = standard_normal(seed, i)`.
pub fn perturb(x: &[f64], t0: f64, seed: u64, params: ScheduleParams) -> Result<Vec<f64>> {
    let (alpha, sigma) = alpha_sigma(t0, params)?;
    if t0 == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| alpha * v + sigma * standard_normal(seed, i as u64))
        .collect())
}
