//! Edit-content generators.
//!
//! Every generator maps a [`GenInput`] to a full frame. The built-ins are
//! deterministic stand-ins for a diffusion backend; [`RemoteGenerator`]
//! forwards the request to a backend service over HTTP.

mod builtin;
pub mod protocol;
mod remote;

use std::time::Duration;

pub use builtin::{
    fill_nearest_valid, prompt_hue_degrees, rotate_hue, Passthrough, Recolor, Stochastic,
};
pub use remote::{check_health, remote_generate, RemoteGenerator};

use crate::error::{Error, Result};
use crate::guidance::EdgeMap;
use crate::scene::Frame;

/// Whether a request starts a propagation chain or continues it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    /// First key frame: `init` is the unedited foreground view.
    First,
    /// Later key frames: `init` is the appearance carried over from the
    /// previous edited key frame, with holes marked invalid.
    Propagate,
}

impl GenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::First => "first",
            GenMode::Propagate => "propagate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenInput {
    pub init: Option<Frame>,
    pub condition: EdgeMap,
    pub prompt: String,
    pub t0: f64,
    pub seed: u64,
    pub mode: GenMode,
}

impl GenInput {
    pub fn dims(&self) -> (usize, usize) {
        self.condition.dims()
    }

    fn require_init(&self, generator: &str) -> Result<&Frame> {
        let init = self.init.as_ref().ok_or_else(|| Error::Generator {
            generator: generator.into(),
            message: "missing init".into(),
        })?;
        if init.dims() != self.condition.dims() {
            return Err(Error::Shape(format!(
                "init is {:?} but condition is {:?}",
                init.dims(),
                self.condition.dims()
            )));
        }
        Ok(init)
    }
}

/// Who applies the propagation noise for a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseHandling {
    /// Deterministic generator; it receives the clean propagated appearance.
    None,
    /// The engine perturbs the propagated appearance before the call.
    Engine,
    /// The backend receives the clean appearance plus `t0` and noises in its
    /// own representation.
    Backend,
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;

    fn noise_handling(&self) -> NoiseHandling {
        NoiseHandling::None
    }

    fn generate(&self, input: &GenInput) -> Result<Frame>;
}

#[derive(Clone, Debug)]
pub struct GeneratorOptions {
    pub remote_url: Option<String>,
    pub timeout: Duration,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            remote_url: None,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Identifiers accepted by [`create_generator`].
pub const GENERATOR_IDS: &[&str] = &["passthrough", "recolor", "stochastic", "remote"];

pub fn create_generator(id: &str, opts: &GeneratorOptions) -> Result<Box<dyn Generator>> {
    match id {
        "passthrough" => Ok(Box::new(Passthrough)),
        "recolor" => Ok(Box::new(Recolor)),
        "stochastic" => Ok(Box::new(Stochastic)),
        "remote" => {
            let url = opts.remote_url.clone().ok_or_else(|| {
                Error::InvalidArgument("the remote generator needs an endpoint URL".into())
            })?;
            Ok(Box::new(RemoteGenerator::new(url, opts.timeout)?))
        }
        other => Err(Error::UnknownGenerator(other.into())),
    }
}
