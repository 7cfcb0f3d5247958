//! Procedural scenes with known atlases, motion and mattes.
//!
//! Motions map atlas texel positions to frame pixel positions; the UV map of
//! a frame is the inverse. Mattes are defined in atlas texel space, so they
//! travel with their layer. Atlas colours are quantized to multiples of
//! 1/255 so that scenes survive the 8-bit atlas format unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositor::reconstruct_video;
use crate::error::{Error, Result};
use crate::scene::{ensure_valid, AlphaMap, Atlas, Layer, LayerKind, Rgb, Scene, UvMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    Checkerboard {
        cell: usize,
        #[serde(default = "default_checker_colors")]
        colors: [Rgb; 2],
    },
    /// Red follows x, green follows y, blue is constant.
    Ramp {
        #[serde(default = "half")]
        blue: f64,
    },
    /// Value noise on a lattice of `scale` texels, smoothstep-interpolated.
    Noise { scale: f64 },
}

fn default_checker_colors() -> [Rgb; 2] {
    [[0.95, 0.76, 0.57], [0.15, 0.12, 0.09]]
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// Frame pixel `p` shows texel `p + offset` in every frame.
    Static {
        #[serde(default)]
        offset: Option<[f64; 2]>,
    },
    /// Content moves by `(dx, dy)` pixels per frame: frame `i` pixel `p`
    /// shows texel `p + offset - i (dx, dy)`.
    Translation {
        dx: f64,
        dy: f64,
        #[serde(default)]
        offset: Option<[f64; 2]>,
    },
    /// Per-frame matrices `[[a, b, c], [d, e, f]]` taking texel positions to
    /// frame positions. A single matrix applies to every frame.
    Affine { matrices: Vec<[[f64; 3]; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Matte {
    Disk {
        center: [f64; 2],
        radius: f64,
        /// Width of a linear opacity ramp inside the rim; 0 gives a binary matte.
        #[serde(default)]
        feather: f64,
    },
    Rectangle {
        min: [f64; 2],
        max: [f64; 2],
    },
}

impl Matte {
    /// Opacity at a texel position.
    pub fn opacity(&self, x: f64, y: f64) -> f32 {
        match *self {
            Matte::Disk {
                center,
                radius,
                feather,
            } => {
                let d = ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt();
                if feather > 0.0 {
                    ((radius - d) / feather).clamp(0.0, 1.0) as f32
                } else if d <= radius {
                    1.0
                } else {
                    0.0
                }
            }
            Matte::Rectangle { min, max } => {
                if x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1] {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub atlas_width: usize,
    pub atlas_height: usize,
    pub pattern: Pattern,
    pub motion: Motion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForegroundConfig {
    #[serde(flatten)]
    pub layer: LayerConfig,
    pub matte: Matte,
    #[serde(default)]
    pub order: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    pub background: LayerConfig,
    pub foregrounds: Vec<ForegroundConfig>,
}

impl Default for SynthConfig {
    /// 96x54 frames, 12 frames, 128x128 atlases: a noise background panning
    /// left and a checkered disk moving right.
    fn default() -> Self {
        SynthConfig {
            frames: 12,
            width: 96,
            height: 54,
            seed: 0,
            background: LayerConfig {
                name: Some("background".into()),
                atlas_width: 128,
                atlas_height: 128,
                pattern: Pattern::Noise { scale: 12.0 },
                motion: Motion::Translation {
                    dx: -1.0,
                    dy: 0.0,
                    offset: Some([20.0, 37.0]),
                },
            },
            foregrounds: vec![ForegroundConfig {
                layer: LayerConfig {
                    name: Some("object".into()),
                    atlas_width: 128,
                    atlas_height: 128,
                    pattern: Pattern::Checkerboard {
                        cell: 6,
                        colors: default_checker_colors(),
                    },
                    motion: Motion::Translation {
                        dx: 2.0,
                        dy: 0.0,
                        offset: Some([36.0, 37.0]),
                    },
                },
                matte: Matte::Disk {
                    center: [64.0, 64.0],
                    radius: 14.0,
                    feather: 0.0,
                },
                order: None,
            }],
        }
    }
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("synth config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(
                "synth config needs at least one frame of at least 1x1".into(),
            ));
        }
        let layers =
            std::iter::once(&self.background).chain(self.foregrounds.iter().map(|f| &f.layer));
        for l in layers {
            if l.atlas_width == 0 || l.atlas_height == 0 {
                return Err(Error::InvalidArgument(
                    "atlas dimensions must be positive".into(),
                ));
            }
            match &l.pattern {
                Pattern::Checkerboard { cell: 0, .. } => {
                    return Err(Error::InvalidArgument(
                        "checkerboard cell must be positive".into(),
                    ))
                }
                Pattern::Noise { scale } if !scale.is_finite() || *scale <= 0.0 => {
                    return Err(Error::InvalidArgument(
                        "noise scale must be positive".into(),
                    ))
                }
                _ => {}
            }
            if let Motion::Affine { matrices } = &l.motion {
                if matrices.len() != 1 && matrices.len() != self.frames {
                    return Err(Error::InvalidArgument(format!(
                        "affine motion needs 1 or {} matrices, got {}",
                        self.frames,
                        matrices.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Renders a pattern into an atlas with 8-bit-exact colours.
pub fn render_pattern(pattern: &Pattern, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Atlas {
    let pixels: Vec<Rgb> = match pattern {
        Pattern::Checkerboard { cell, colors } => (0..w * h)
            .map(|i| colors[((i % w) / cell + (i / w) / cell) % 2])
            .collect(),
        Pattern::Ramp { blue } => (0..w * h)
            .map(|i| {
                let fx = if w > 1 {
                    (i % w) as f64 / (w - 1) as f64
                } else {
                    0.0
                };
                let fy = if h > 1 {
                    (i / w) as f64 / (h - 1) as f64
                } else {
                    0.0
                };
                [fx, fy, *blue]
            })
            .collect(),
        Pattern::Noise { scale } => {
            let gw = (w as f64 / scale).ceil() as usize + 2;
            let gh = (h as f64 / scale).ceil() as usize + 2;
            let lattice: Vec<Rgb> = (0..gw * gh)
                .map(|_| {
                    [
                        rng.random::<f64>(),
                        rng.random::<f64>(),
                        rng.random::<f64>(),
                    ]
                })
                .collect();
            (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64 / scale, (i / w) as f64 / scale);
                    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                    let (tx, ty) = (smoothstep(x.fract()), smoothstep(y.fract()));
                    let g = |gx: usize, gy: usize| lattice[gy * gw + gx];
                    std::array::from_fn(|c| {
                        let top = g(x0, y0)[c] * (1.0 - tx) + g(x0 + 1, y0)[c] * tx;
                        let bottom = g(x0, y0 + 1)[c] * (1.0 - tx) + g(x0 + 1, y0 + 1)[c] * tx;
                        0.15 + 0.7 * (top * (1.0 - ty) + bottom * ty)
                    })
                })
                .collect()
        }
    };
    Atlas {
        width: w,
        height: h,
        pixels: pixels.into_iter().map(|p| p.map(quantize)).collect(),
    }
}

fn centered_offset(frame: (usize, usize), atlas: (usize, usize)) -> [f64; 2] {
    [
        ((atlas.0 as f64 - frame.0 as f64) / 2.0).floor(),
        ((atlas.1 as f64 - frame.1 as f64) / 2.0).floor(),
    ]
}

/// Texel position shown by frame `i` at pixel `(x, y)`, or `None` when the
/// motion's inverse is undefined.
fn texel_position(
    motion: &Motion,
    i: usize,
    x: f64,
    y: f64,
    frame: (usize, usize),
    atlas: (usize, usize),
) -> Result<(f64, f64)> {
    match motion {
        Motion::Static { offset } => {
            let o = offset.unwrap_or_else(|| centered_offset(frame, atlas));
            Ok((x + o[0], y + o[1]))
        }
        Motion::Translation { dx, dy, offset } => {
            let o = offset.unwrap_or_else(|| centered_offset(frame, atlas));
            Ok((x + o[0] - i as f64 * dx, y + o[1] - i as f64 * dy))
        }
        Motion::Affine { matrices } => {
            let m = if matrices.len() == 1 {
                &matrices[0]
            } else {
                &matrices[i]
            };
            let [[a, b, c], [d, e, f]] = *m;
            let det = a * e - b * d;
            if det.abs() < 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "affine matrix of frame {i} is singular"
                )));
            }
            let (px, py) = (x - c, y - f);
            Ok(((e * px - b * py) / det, (-d * px + a * py) / det))
        }
    }
}

/// UV map of frame `i` for a motion; pixels showing positions outside the
/// atlas are UNMAPPED.
pub fn analytic_uv(
    motion: &Motion,
    i: usize,
    frame: (usize, usize),
    atlas: (usize, usize),
) -> Result<UvMap> {
    // Surface the singular-matrix error before building the grid.
    texel_position(motion, i, 0.0, 0.0, frame, atlas)?;
    Ok(UvMap::from_texel_fn(frame.0, frame.1, atlas, |x, y| {
        texel_position(motion, i, x as f64, y as f64, frame, atlas).ok()
    }))
}

/// Builds the scene described by `config`. Frames are rendered from the
/// atlases, so the scene reconstructs itself exactly.
pub fn make_scene(config: &SynthConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let frame = (config.width, config.height);

    let build_layer = |cfg: &LayerConfig, rng: &mut ChaCha8Rng| -> Result<(Atlas, Vec<UvMap>)> {
        let dims = (cfg.atlas_width, cfg.atlas_height);
        let atlas = render_pattern(&cfg.pattern, dims.0, dims.1, rng);
        let uv = (0..config.frames)
            .map(|i| analytic_uv(&cfg.motion, i, frame, dims))
            .collect::<Result<Vec<_>>>()?;
        Ok((atlas, uv))
    };

    let (bg_atlas, bg_uv) = build_layer(&config.background, &mut rng)?;
    if let Some(i) = bg_uv
        .iter()
        .position(|uv| uv.entries.iter().any(|e| e.is_none()))
    {
        return Err(Error::InvalidArgument(format!(
            "frame {i}: background motion leaves its atlas"
        )));
    }
    let background = Layer {
        name: config
            .background
            .name
            .clone()
            .unwrap_or_else(|| "background".into()),
        kind: LayerKind::Background,
        order: 0,
        atlas: bg_atlas,
        uv: bg_uv,
        alpha: None,
    };

    let mut foregrounds = Vec::with_capacity(config.foregrounds.len());
    for (n, fg) in config.foregrounds.iter().enumerate() {
        let (atlas, uv) = build_layer(&fg.layer, &mut rng)?;
        let dims = atlas.dims();
        let alpha = (0..config.frames)
            .map(|i| {
                let values = (0..config.width * config.height)
                    .map(|p| {
                        if uv[i].entries[p].is_none() {
                            return 0.0;
                        }
                        let (x, y) = ((p % config.width) as f64, (p / config.width) as f64);
                        let (tx, ty) =
                            texel_position(&fg.layer.motion, i, x, y, frame, dims).unwrap();
                        fg.matte.opacity(tx, ty)
                    })
                    .collect();
                AlphaMap::new(config.width, config.height, values)
            })
            .collect();
        foregrounds.push(Layer {
            name: fg
                .layer
                .name
                .clone()
                .unwrap_or_else(|| format!("foreground{}", n + 1)),
            kind: LayerKind::Foreground,
            order: fg.order.unwrap_or(n as i32 + 1),
            atlas,
            uv,
            alpha: Some(alpha),
        });
    }

    let mut scene = Scene {
        frame_count: config.frames,
        width: config.width,
        height: config.height,
        frames: Vec::new(),
        background,
        foregrounds,
    };
    let atlases = scene.atlases();
    scene.frames = reconstruct_video(&scene, &atlases)?;
    ensure_valid(&scene)?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::validate_scene;

    fn small() -> SynthConfig {
        SynthConfig {
            frames: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_scene_is_valid_and_self_consistent() {
        let scene = make_scene(&small()).unwrap();
        assert!(validate_scene(&scene).is_empty());
        assert_eq!((scene.width, scene.height, scene.frame_count), (96, 54, 4));
        let again = reconstruct_video(&scene, &scene.atlases()).unwrap();
        assert_eq!(again, scene.frames);
        for p in &scene.foregrounds[0].atlas.pixels {
            for c in p {
                assert_eq!((c * 255.0).round() / 255.0, *c);
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let a = make_scene(&small()).unwrap();
        assert_eq!(a, make_scene(&small()).unwrap());
        let mut other = small();
        other.seed = 1;
        assert_ne!(
            a.background.atlas,
            make_scene(&other).unwrap().background.atlas
        );
    }

    #[test]
    fn static_motion_repeats_uv() {
        let m = Motion::Static { offset: None };
        let a = analytic_uv(&m, 0, (10, 8), (16, 16)).unwrap();
        let b = analytic_uv(&m, 5, (10, 8), (16, 16)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_shifts_uv() {
        let m = Motion::Translation {
            dx: 1.0,
            dy: 0.0,
            offset: Some([8.0, 2.0]),
        };
        let u0 = analytic_uv(&m, 0, (12, 6), (32, 16)).unwrap();
        for i in 1..4 {
            let ui = analytic_uv(&m, i, (12, 6), (32, 16)).unwrap();
            for y in 0..6 {
                for x in i..12 {
                    assert_eq!(ui.entries[y * 12 + x], u0.entries[y * 12 + x - i]);
                }
            }
        }
    }

    #[test]
    fn identity_affine_is_the_identity_grid() {
        let m = Motion::Affine {
            matrices: vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]],
        };
        assert_eq!(
            analytic_uv(&m, 0, (7, 5), (7, 5)).unwrap(),
            UvMap::identity(7, 5)
        );
    }

    #[test]
    fn half_scale_about_the_center_magnifies_uv() {
        // Frame and atlas 9x9 with centre (4, 4): frame = 0.5 (texel - c) + c,
        // so texel = 2 (frame - c) + c.
        let m = Motion::Affine {
            matrices: vec![[[0.5, 0.0, 2.0], [0.0, 0.5, 2.0]]],
        };
        let uv = analytic_uv(&m, 0, (9, 9), (9, 9)).unwrap();
        assert_eq!(uv.entries[2 * 9 + 2], Some([0.0, 0.0]));
        assert_eq!(uv.entries[2 * 9 + 6], Some([1.0, 0.0]));
        assert_eq!(uv.entries[6 * 9 + 2], Some([0.0, 1.0]));
        assert_eq!(uv.entries[6 * 9 + 6], Some([1.0, 1.0]));
        // The frame corners look outside the atlas.
        assert_eq!(uv.entries[0], None);
        assert_eq!(uv.entries[80], None);
    }

    #[test]
    fn translating_by_the_frame_width_unmaps_everything() {
        let m = Motion::Translation {
            dx: 10.0,
            dy: 0.0,
            offset: Some([0.0, 0.0]),
        };
        let uv = analytic_uv(&m, 1, (10, 4), (10, 4)).unwrap();
        assert!(uv.entries.iter().all(|e| e.is_none()));
    }

    #[test]
    fn escaping_background_names_the_frame() {
        let mut c = small();
        c.background.motion = Motion::Translation {
            dx: -20.0,
            dy: 0.0,
            offset: Some([0.0, 0.0]),
        };
        let err = make_scene(&c).unwrap_err();
        assert!(err.to_string().contains("frame 2"), "{err}");
    }

    #[test]
    fn singular_affine_is_rejected() {
        let m = Motion::Affine {
            matrices: vec![[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]],
        };
        assert!(analytic_uv(&m, 0, (4, 4), (4, 4)).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = SynthConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(SynthConfig::from_json(&text).unwrap(), c);
        assert!(SynthConfig::from_json(r#"{"frames": 1}"#).is_err());
    }

    #[test]
    fn feathered_disk_is_soft() {
        let m = Matte::Disk {
            center: [0.0, 0.0],
            radius: 4.0,
            feather: 2.0,
        };
        assert_eq!(m.opacity(0.0, 0.0), 1.0);
        assert_eq!(m.opacity(3.0, 0.0), 0.5);
        assert_eq!(m.opacity(5.0, 0.0), 0.0);
    }
}
