//! Decomposed-video data model.
//!
//! A [`Scene`] holds the original frames plus one background [`Layer`] and
//! any number of foreground layers. Every layer owns an [`Atlas`] and one
//! [`UvMap`] per frame; foreground layers also own one [`AlphaMap`] per
//! frame. UV coordinates are normalized: `(u, v)` addresses the continuous
//! atlas position `(u * (Wa - 1), v * (Ha - 1))`.

mod io;
mod request;

use std::fmt;

pub use io::{load_scene, read_alpha_map, read_uv_map, save_scene, write_alpha_map, write_uv_map};
pub use io::{read_rgb_png, write_rgb_png};
pub use request::EditRequest;

use crate::error::{Error, Result};

/// Linear RGB triple, channels nominally in `[0, 1]`.
pub type Rgb = [f64; 3];

/// Atlas texture of a single layer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Atlas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Atlas {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "atlas must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "atlas {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Atlas {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Atlas {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Clamps every channel into `[0, 1]`; non-finite values become 0.
    pub fn clamped(mut self) -> Self {
        for p in &mut self.pixels {
            for c in p.iter_mut() {
                *c = if c.is_finite() {
                    c.clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        self
    }

    /// Views the atlas as an all-valid frame, e.g. to hand it to a generator.
    pub fn to_frame(&self) -> Frame {
        Frame::new(self.width, self.height, self.pixels.clone())
    }
}

/// A video frame with an optional per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
    /// `None` means every pixel is valid.
    pub valid: Option<Vec<bool>>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        assert_eq!(pixels.len(), width * height, "frame pixel count");
        Frame {
            width,
            height,
            pixels,
            valid: None,
        }
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Frame::new(width, height, vec![color; width * height])
    }

    pub fn with_validity(mut self, valid: Vec<bool>) -> Self {
        assert_eq!(valid.len(), self.pixels.len(), "validity mask size");
        self.valid = Some(valid);
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[idx])
    }

    pub fn valid_count(&self) -> usize {
        match &self.valid {
            None => self.pixels.len(),
            Some(v) => v.iter().filter(|&&b| b).count(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Drops the validity mask, keeping pixel values.
    pub fn into_all_valid(mut self) -> Self {
        self.valid = None;
        self
    }

    pub fn to_atlas(&self) -> Atlas {
        Atlas {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
        }
    }
}

/// Per-pixel normalized atlas coordinates; `None` is the UNMAPPED value.
#[derive(Clone, Debug, PartialEq)]
pub struct UvMap {
    pub width: usize,
    pub height: usize,
    pub entries: Vec<Option<[f32; 2]>>,
}

impl UvMap {
    pub fn new(width: usize, height: usize, entries: Vec<Option<[f32; 2]>>) -> Self {
        assert_eq!(entries.len(), width * height, "uv entry count");
        UvMap {
            width,
            height,
            entries,
        }
    }

    /// UV grid that maps frame pixel `(x, y)` onto texel `(x, y)` of an atlas
    /// with the same dimensions.
    pub fn identity(width: usize, height: usize) -> Self {
        let mut entries = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                entries.push(Some([norm(x, width), norm(y, height)]));
            }
        }
        UvMap::new(width, height, entries)
    }

    /// Builds a map from continuous texel positions, normalized against the
    /// given atlas size. Positions outside the atlas become UNMAPPED.
    pub fn from_texel_fn(
        width: usize,
        height: usize,
        atlas_dims: (usize, usize),
        mut texel: impl FnMut(usize, usize) -> Option<(f64, f64)>,
    ) -> Self {
        let (aw, ah) = atlas_dims;
        let sx = (aw.max(2) - 1) as f64;
        let sy = (ah.max(2) - 1) as f64;
        let mut entries = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let e = texel(x, y).and_then(|(tx, ty)| {
                    let u = if aw == 1 { 0.0 } else { tx / sx };
                    let v = if ah == 1 { 0.0 } else { ty / sy };
                    let (u, v) = (u as f32, v as f32);
                    ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then_some([u, v])
                });
                entries.push(e);
            }
        }
        UvMap::new(width, height, entries)
    }

    #[inline]
    pub fn get(&self, idx: usize) -> Option<[f32; 2]> {
        self.entries[idx]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

fn norm(i: usize, n: usize) -> f32 {
    if n <= 1 {
        0.0
    } else {
        (i as f64 / (n - 1) as f64) as f32
    }
}

/// Foreground opacity per frame pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl AlphaMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "alpha value count");
        AlphaMap {
            width,
            height,
            values,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        AlphaMap::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx] as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Background,
    Foreground,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Background => "background",
            LayerKind::Foreground => "foreground",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Depth order; higher is closer to the camera.
    pub order: i32,
    pub atlas: Atlas,
    pub uv: Vec<UvMap>,
    /// Present exactly on foreground layers.
    pub alpha: Option<Vec<AlphaMap>>,
}

impl Layer {
    /// Opacity of frame `i` at pixel `idx`; background layers are opaque.
    #[inline]
    pub fn alpha_at(&self, i: usize, idx: usize) -> f64 {
        match &self.alpha {
            Some(maps) => maps[i].get(idx),
            None => 1.0,
        }
    }

    /// Alpha map for frame `i`, materializing an all-ones map for the background.
    pub fn alpha_map(&self, i: usize) -> AlphaMap {
        match &self.alpha {
            Some(maps) => maps[i].clone(),
            None => AlphaMap::filled(self.uv[i].width, self.uv[i].height, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Frame>,
    pub background: Layer,
    /// Foreground layers, in any order; compositing sorts them by `order`.
    pub foregrounds: Vec<Layer>,
}

impl Scene {
    /// Number of layers including the background.
    pub fn layer_count(&self) -> usize {
        1 + self.foregrounds.len()
    }

    /// Layer by index: 0 is the background, `1..` are the foregrounds.
    pub fn layer(&self, index: usize) -> Result<&Layer> {
        match index {
            0 => Ok(&self.background),
            i => self.foregrounds.get(i - 1).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "layer index {i} out of range (scene has {} layers)",
                    self.layer_count()
                ))
            }),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        std::iter::once(&self.background).chain(self.foregrounds.iter())
    }

    pub fn atlases(&self) -> Vec<Atlas> {
        self.layers().map(|l| l.atlas.clone()).collect()
    }

    /// Index of the first foreground layer, falling back to the background.
    pub fn default_edit_layer(&self) -> usize {
        if self.foregrounds.is_empty() {
            0
        } else {
            1
        }
    }
}

/// One broken invariant found by [`validate_scene`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub layer: Option<String>,
    pub frame: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(layer) = &self.layer {
            write!(f, "layer `{layer}` ")?;
        }
        if let Some(i) = self.frame {
            write!(f, "frame {i} ")?;
        }
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, layer: Option<&str>, frame: Option<usize>, field: &str, message: String) {
        self.0.push(Violation {
            layer: layer.map(str::to_owned),
            frame,
            field: field.to_owned(),
            message,
        });
    }
}

fn in_unit(c: f64) -> bool {
    (0.0..=1.0).contains(&c)
}

/// Checks every scene invariant. Returns an empty list iff the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Collector(Vec::new());
    let (w, h, n) = (scene.width, scene.height, scene.frame_count);

    if n == 0 {
        out.push(
            None,
            None,
            "frames",
            "frame count must be at least 1".into(),
        );
    }
    if w == 0 || h == 0 {
        out.push(
            None,
            None,
            "width/height",
            format!("frame size {w}x{h} is empty"),
        );
    }
    if scene.frames.len() != n {
        out.push(
            None,
            None,
            "frames",
            format!("expected {n} frames, found {}", scene.frames.len()),
        );
    }
    for (i, frame) in scene.frames.iter().enumerate() {
        check_frame(&mut out, None, i, frame, w, h, "frame");
    }

    if scene.background.kind != LayerKind::Background {
        out.push(
            Some(&scene.background.name),
            None,
            "kind",
            "the background slot holds a foreground layer".into(),
        );
    }
    for layer in scene.layers() {
        check_layer(&mut out, layer, n, w, h);
    }
    for layer in &scene.foregrounds {
        if layer.kind != LayerKind::Foreground {
            out.push(
                Some(&layer.name),
                None,
                "kind",
                "scenes carry exactly one background layer".into(),
            );
        }
    }

    let mut orders: Vec<(i32, &str)> = scene.layers().map(|l| (l.order, l.name.as_str())).collect();
    orders.sort();
    for pair in orders.windows(2) {
        if pair[0].0 == pair[1].0 {
            out.push(
                Some(pair[1].1),
                None,
                "order",
                format!(
                    "depth order {} is shared with layer `{}`",
                    pair[1].0, pair[0].1
                ),
            );
        }
    }
    out.0
}

fn check_frame(
    out: &mut Collector,
    layer: Option<&str>,
    i: usize,
    frame: &Frame,
    w: usize,
    h: usize,
    field: &str,
) {
    if frame.width != w || frame.height != h || frame.pixels.len() != w * h {
        out.push(
            layer,
            Some(i),
            field,
            format!(
                "size {}x{} does not match {w}x{h}",
                frame.width, frame.height
            ),
        );
        return;
    }
    if let Some(valid) = &frame.valid {
        if valid.len() != frame.pixels.len() {
            out.push(
                layer,
                Some(i),
                field,
                "validity mask size differs from the frame".into(),
            );
        }
    }
    if let Some(idx) = frame
        .pixels
        .iter()
        .position(|p| !p.iter().all(|&c| in_unit(c)))
    {
        out.push(
            layer,
            Some(i),
            field,
            format!(
                "pixel ({}, {}) has channel outside [0,1]: {:?}",
                idx % w,
                idx / w,
                frame.pixels[idx]
            ),
        );
    }
}

fn check_layer(out: &mut Collector, layer: &Layer, n: usize, w: usize, h: usize) {
    let name = Some(layer.name.as_str());
    let atlas = &layer.atlas;
    if atlas.width == 0 || atlas.height == 0 || atlas.pixels.len() != atlas.width * atlas.height {
        out.push(
            name,
            None,
            "atlas",
            format!("bad atlas size {}x{}", atlas.width, atlas.height),
        );
    } else if let Some(idx) = atlas
        .pixels
        .iter()
        .position(|p| !p.iter().all(|&c| in_unit(c)))
    {
        out.push(
            name,
            None,
            "atlas",
            format!(
                "texel ({}, {}) has channel outside [0,1]",
                idx % atlas.width,
                idx / atlas.width
            ),
        );
    }

    if layer.uv.len() != n {
        out.push(
            name,
            None,
            "uv",
            format!("expected {n} UV maps, found {}", layer.uv.len()),
        );
    }
    for (i, uv) in layer.uv.iter().enumerate() {
        if uv.width != w || uv.height != h || uv.entries.len() != w * h {
            out.push(
                name,
                Some(i),
                "uv",
                format!("size {}x{} does not match {w}x{h}", uv.width, uv.height),
            );
            continue;
        }
        for (idx, e) in uv.entries.iter().enumerate() {
            if let Some([u, v]) = e {
                if !(in_unit(*u as f64) && in_unit(*v as f64)) {
                    out.push(
                        name,
                        Some(i),
                        "uv",
                        format!(
                            "entry at ({}, {}) = ({u}, {v}) outside [0,1]",
                            idx % w,
                            idx / w
                        ),
                    );
                }
            }
        }
    }

    match (&layer.alpha, layer.kind) {
        (None, LayerKind::Foreground) => out.push(
            name,
            None,
            "alpha",
            "foreground layer has no alpha maps".into(),
        ),
        (Some(_), LayerKind::Background) => out.push(
            name,
            None,
            "alpha",
            "background layer must not carry alpha maps".into(),
        ),
        _ => {}
    }
    if let Some(alpha) = &layer.alpha {
        if alpha.len() != n {
            out.push(
                name,
                None,
                "alpha",
                format!("expected {n} alpha maps, found {}", alpha.len()),
            );
        }
        for (i, a) in alpha.iter().enumerate() {
            if a.width != w || a.height != h || a.values.len() != w * h {
                out.push(
                    name,
                    Some(i),
                    "alpha",
                    format!("size {}x{} does not match {w}x{h}", a.width, a.height),
                );
                continue;
            }
            for (idx, &v) in a.values.iter().enumerate() {
                if !in_unit(v as f64) {
                    out.push(
                        name,
                        Some(i),
                        "alpha",
                        format!("entry at ({}, {}) = {v} outside [0,1]", idx % w, idx / w),
                    );
                }
            }
        }
    }
}

/// Fails with [`Error::InvalidScene`] listing every violation.
pub fn ensure_valid(scene: &Scene) -> Result<()> {
    let violations = validate_scene(scene);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidScene(
            violations.iter().map(ToString::to_string).collect(),
        ))
    }
}
