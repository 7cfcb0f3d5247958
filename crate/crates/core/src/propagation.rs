//! Key-frame editing with propagation through atlas space, and the full
//! edit pipeline built on it.
//!
//! The first key frame is edited from its own foreground view. Every later
//! key frame starts from the previous edit carried over through the layer's
//! atlas ([`warp_keyframe`]), optionally noised, and lets the generator
//! refine it and fill what the carried-over appearance does not cover.

use crate::aggregation::{aggregate, TrainConfig};
use crate::compositor::reconstruct_video;
use crate::error::{Error, Result};
use crate::generators::{GenInput, GenMode, Generator, NoiseHandling};
use crate::guidance::{canny_default, EdgeMap};
use crate::mapping::warp_keyframe;
use crate::scene::{AlphaMap, Atlas, EditRequest, Frame, Scene, UvMap};
use crate::schedule::{perturb, ScheduleParams};

/// Grey level the foreground is blended over before it reaches a generator.
pub const MID_GRAY: f64 = 0.5;

/// `{0, interval, 2 interval, ...}` below `frame_count`.
pub fn select_keyframes(frame_count: usize, interval: usize) -> Result<Vec<usize>> {
    if interval < 1 {
        return Err(Error::InvalidArgument(
            "key-frame interval must be at least 1".into(),
        ));
    }
    if frame_count < 1 {
        return Err(Error::InvalidArgument("scene has no frames".into()));
    }
    Ok((0..frame_count).step_by(interval).collect())
}

/// Checks an explicit key-frame list: starts at 0, strictly increasing, all
/// below `frame_count`.
pub fn check_keyframes(indices: &[usize], frame_count: usize) -> Result<Vec<usize>> {
    if indices.first() != Some(&0) {
        return Err(Error::InvalidArgument(
            "key frames must start at frame 0".into(),
        ));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "key frames must be strictly increasing".into(),
        ));
    }
    if let Some(&last) = indices.last() {
        if last >= frame_count {
            return Err(Error::InvalidArgument(format!(
                "key frame {last} is past the last frame ({})",
                frame_count - 1
            )));
        }
    }
    Ok(indices.to_vec())
}

pub fn resolve_keyframes(req: &EditRequest, frame_count: usize) -> Result<Vec<usize>> {
    match &req.keyframes {
        Some(list) => check_keyframes(list, frame_count),
        None => select_keyframes(frame_count, req.keyframe_interval),
    }
}

/// Frame `i` of layer `layer` as the generator sees it, blended over mid
/// grey by the layer's opacity, plus its edge condition.
pub fn foreground_view(scene: &Scene, layer: usize, i: usize) -> Result<(Frame, EdgeMap)> {
    let l = scene.layer(layer)?;
    if i >= scene.frame_count {
        return Err(Error::InvalidArgument(format!("frame {i} out of range")));
    }
    let frame = &scene.frames[i];
    let pixels = frame
        .pixels
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let a = l.alpha_at(i, idx);
            p.map(|c| a * c + (1.0 - a) * MID_GRAY)
        })
        .collect();
    let view = Frame::new(frame.width, frame.height, pixels);
    let edges = canny_default(&view)?;
    Ok((view, edges))
}

fn alpha_of(scene: &Scene, layer: usize, i: usize) -> Result<AlphaMap> {
    Ok(scene.layer(layer)?.alpha_map(i))
}

fn noised(frame: &Frame, t0: f64, seed: u64, params: ScheduleParams) -> Result<Frame> {
    let flat: Vec<f64> = frame.pixels.iter().flatten().copied().collect();
    let noisy = perturb(&flat, t0, seed, params)?;
    Ok(Frame {
        pixels: noisy.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ..frame.clone()
    })
}

/// Restricts a frame's validity to pixels where `alpha > 0`.
fn masked_by_alpha(mut frame: Frame, alpha: &AlphaMap) -> Frame {
    let valid = (0..frame.pixels.len())
        .map(|i| frame.is_valid(i) && alpha.get(i) > 0.0)
        .collect();
    frame.valid = Some(valid);
    frame
}

/// Edits the key frames of `layer` in order. Step `k` uses seed
/// `seed ^ k`. Errors carry the failing key frame's index.
pub fn edit_keyframes(
    scene: &Scene,
    req: &EditRequest,
    keyframes: &[usize],
    generator: &dyn Generator,
    atlas_dims: (usize, usize),
    params: ScheduleParams,
) -> Result<Vec<Frame>> {
    req.validate()?;
    let keyframes = check_keyframes(keyframes, scene.frame_count)?;
    scene.layer(req.layer)?;
    let handling = generator.noise_handling();
    let mut edited: Vec<Frame> = Vec::with_capacity(keyframes.len());

    for (k, &i) in keyframes.iter().enumerate() {
        let step = || -> Result<Frame> {
            let (view, condition) = foreground_view(scene, req.layer, i)?;
            let seed = req.seed ^ k as u64;
            let input = if k == 0 {
                GenInput {
                    init: Some(view),
                    condition,
                    prompt: req.prompt.clone(),
                    t0: if handling == NoiseHandling::Backend {
                        req.t0
                    } else {
                        0.0
                    },
                    seed,
                    mode: GenMode::First,
                }
            } else {
                let carried = carried_edit(scene, req.layer, &keyframes, &edited, k, atlas_dims)?;
                let init = match handling {
                    NoiseHandling::Engine => noised(&carried, req.t0, seed, params)?,
                    NoiseHandling::None | NoiseHandling::Backend => carried,
                };
                GenInput {
                    init: Some(init),
                    condition,
                    prompt: req.prompt.clone(),
                    t0: req.t0,
                    seed,
                    mode: GenMode::Propagate,
                }
            };
            let out = generator.generate(&input)?;
            if out.dims() != (scene.width, scene.height) {
                return Err(Error::Shape(format!(
                    "generator returned {:?} for a {}x{} frame",
                    out.dims(),
                    scene.width,
                    scene.height
                )));
            }
            Ok(out.into_all_valid())
        };
        let out = step().map_err(|e| Error::KeyFrame {
            frame: i,
            source: Box::new(e),
        })?;
        edited.push(out);
    }
    Ok(edited)
}

/// The previous edit carried into key frame `keyframes[k]`, as the
/// propagation step sees it before noising.
pub fn carried_edit(
    scene: &Scene,
    layer: usize,
    keyframes: &[usize],
    edited: &[Frame],
    k: usize,
    atlas_dims: (usize, usize),
) -> Result<Frame> {
    if k == 0 || k >= keyframes.len() || edited.len() < k {
        return Err(Error::InvalidArgument(format!(
            "no carried edit for step {k} of {} key frames ({} edits)",
            keyframes.len(),
            edited.len()
        )));
    }
    let l = scene.layer(layer)?;
    let (p, i) = (keyframes[k - 1], keyframes[k]);
    let prev = masked_by_alpha(edited[k - 1].clone(), &alpha_of(scene, layer, p)?);
    Ok(warp_keyframe(
        &prev,
        &l.uv[p],
        &l.uv[i],
        &alpha_of(scene, layer, i)?,
        atlas_dims,
    ))
}

/// Mean absolute deviation of each edited key frame from the previous edit
/// carried into it, over the pixels the carried edit covers. Steps with no
/// covered pixel are skipped; 0 when none remain.
pub fn keyframe_drift(
    scene: &Scene,
    layer: usize,
    keyframes: &[usize],
    edited: &[Frame],
    atlas_dims: (usize, usize),
) -> Result<f64> {
    if edited.len() != keyframes.len() {
        return Err(Error::Shape(format!(
            "{} edits for {} key frames",
            edited.len(),
            keyframes.len()
        )));
    }
    let mut per_step = Vec::new();
    for k in 1..keyframes.len() {
        let carried = carried_edit(scene, layer, keyframes, edited, k, atlas_dims)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (p, (c, e)) in carried.pixels.iter().zip(&edited[k].pixels).enumerate() {
            if carried.is_valid(p) {
                sum += (0..3).map(|ch| (c[ch] - e[ch]).abs()).sum::<f64>();
                count += 3;
            }
        }
        if count > 0 {
            per_step.push(sum / count as f64);
        }
    }
    Ok(if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().sum::<f64>() / per_step.len() as f64
    })
}

/// Edits an atlas image directly with a single generator call conditioned on
/// its own edges.
pub fn edit_atlas(
    atlas: &Atlas,
    prompt: &str,
    t0: f64,
    seed: u64,
    generator: &dyn Generator,
) -> Result<Atlas> {
    let image = atlas.to_frame();
    let condition = canny_default(&image)?;
    let out = generator.generate(&GenInput {
        init: Some(image),
        condition,
        prompt: prompt.into(),
        t0,
        seed,
        mode: GenMode::First,
    })?;
    if out.dims() != atlas.dims() {
        return Err(Error::Shape(format!(
            "generator returned {:?} for a {:?} atlas",
            out.dims(),
            atlas.dims()
        )));
    }
    Ok(out.to_atlas().clamped())
}

#[derive(Clone, Debug, Default)]
pub struct EditOptions {
    pub train: TrainConfig,
    /// Working resolution of the edited atlas; the layer's own by default.
    pub atlas_dims: Option<(usize, usize)>,
    pub schedule: ScheduleParams,
}

#[derive(Clone, Debug)]
pub struct EditResult {
    pub keyframes: Vec<usize>,
    pub edited_keyframes: Vec<Frame>,
    /// Background first, then foregrounds in scene order.
    pub atlases: Vec<Atlas>,
    pub frames: Vec<Frame>,
    /// Aggregation loss per epoch plus the final loss; empty when no
    /// aggregation ran.
    pub loss_history: Vec<f64>,
}

/// Key-frame editing, aggregation into the layer's atlas, optional
/// background atlas edit, and re-rendering of every frame.
///
/// Editing layer 0 edits the background atlas directly with one generator
/// call.
pub fn run_edit(
    scene: &Scene,
    req: &EditRequest,
    generator: &dyn Generator,
    opts: &EditOptions,
) -> Result<EditResult> {
    req.validate()?;
    opts.train.validate()?;
    let layer = scene.layer(req.layer)?;
    let mut atlases = scene.atlases();

    if req.layer == 0 {
        if req.background_prompt.is_some() {
            return Err(Error::InvalidArgument(
                "a background prompt cannot be combined with editing layer 0".into(),
            ));
        }
        atlases[0] = edit_atlas(
            &scene.background.atlas,
            &req.prompt,
            req.t0,
            req.seed,
            generator,
        )?;
        let frames = reconstruct_video(scene, &atlases)?;
        return Ok(EditResult {
            keyframes: Vec::new(),
            edited_keyframes: Vec::new(),
            atlases,
            frames,
            loss_history: Vec::new(),
        });
    }

    let keyframes = resolve_keyframes(req, scene.frame_count)?;
    let dims = opts.atlas_dims.unwrap_or_else(|| layer.atlas.dims());
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::InvalidArgument(format!(
            "atlas resolution {dims:?} is empty"
        )));
    }
    let edited = edit_keyframes(scene, req, &keyframes, generator, dims, opts.schedule)?;

    let uvs: Vec<&UvMap> = keyframes.iter().map(|&i| &layer.uv[i]).collect();
    let alpha_maps: Vec<AlphaMap> = keyframes.iter().map(|&i| layer.alpha_map(i)).collect();
    let alphas: Vec<&AlphaMap> = alpha_maps.iter().collect();
    let cfg = TrainConfig {
        seed: req.seed,
        ..opts.train
    };
    let agg = aggregate(&edited, &uvs, &alphas, dims, &cfg)?;
    atlases[req.layer] = agg.atlas;

    if let Some(prompt) = &req.background_prompt {
        let seed = req.seed ^ keyframes.len() as u64;
        atlases[0] = edit_atlas(&scene.background.atlas, prompt, req.t0, seed, generator)?;
    }
    let frames = reconstruct_video(scene, &atlases)?;
    Ok(EditResult {
        keyframes,
        edited_keyframes: edited,
        atlases,
        frames,
        loss_history: agg.history,
    })
}
