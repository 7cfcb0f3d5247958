use crate::error::{Error, Result};

/// Parameters of one edit run.
#[derive(Clone, Debug, PartialEq)]
pub struct EditRequest {
    /// Opaque prompt forwarded to the generator.
    pub prompt: String,
    /// Noise strength of the propagation refinement step, in `[0, 1]`.
    pub t0: f64,
    pub generator: String,
    pub seed: u64,
    pub keyframe_interval: usize,
    /// Explicit key-frame indices; overrides `keyframe_interval` when set.
    pub keyframes: Option<Vec<usize>>,
    /// Layer to edit: 0 is the background, `1..` the foregrounds.
    pub layer: usize,
    /// Also edit the background atlas with this prompt.
    pub background_prompt: Option<String>,
}

impl EditRequest {
    pub const DEFAULT_T0: f64 = 0.8;
    pub const DEFAULT_INTERVAL: usize = 20;

    pub fn new(prompt: impl Into<String>, generator: impl Into<String>) -> Self {
        EditRequest {
            prompt: prompt.into(),
            t0: Self::DEFAULT_T0,
            generator: generator.into(),
            seed: 0,
            keyframe_interval: Self::DEFAULT_INTERVAL,
            keyframes: None,
            layer: 1,
            background_prompt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t0) {
            return Err(Error::InvalidArgument(format!(
                "t0 = {} is outside [0, 1]",
                self.t0
            )));
        }
        if self.keyframe_interval < 1 {
            return Err(Error::InvalidArgument(
                "key-frame interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
