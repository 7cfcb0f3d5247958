//! On-disk scene directories.
//!
//! ```text
//! manifest.json
//! frames/0000.png ...                 8-bit RGB
//! layers/00/atlas.png                 8-bit RGB
//! layers/00/uv_0000.uvm ...           "UVM1" | w u32 | h u32 | (u f32, v f32) * w*h
//! layers/01/alpha_0000.alp ...        "ALP1" | w u32 | h u32 | a f32 * w*h
//! ```
//!
//! All integers and floats are little-endian. UNMAPPED UV entries are stored
//! as `(-1, -1)`.

use std::fs;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ensure_valid, AlphaMap, Atlas, Frame, Layer, LayerKind, Rgb, Scene, UvMap};
use crate::error::{Error, Result};

const UV_MAGIC: &[u8; 4] = b"UVM1";
const ALPHA_MAGIC: &[u8; 4] = b"ALP1";
const UNMAPPED: f32 = -1.0;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    frames: usize,
    width: usize,
    height: usize,
    layers: Vec<LayerEntry>,
    frame_pattern: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    kind: String,
    order: i32,
    atlas: String,
    atlas_width: usize,
    atlas_height: usize,
    uv_pattern: String,
    alpha_pattern: Option<String>,
}

fn expand(pattern: &str, i: usize) -> String {
    pattern.replace("%04d", &format!("{i:04}"))
}

fn require_pattern(manifest: &Path, field: &str, pattern: &str) -> Result<()> {
    if pattern.contains("%04d") {
        Ok(())
    } else {
        Err(Error::format(
            manifest,
            field,
            format!("pattern `{pattern}` lacks `%04d`"),
        ))
    }
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<Scene> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, "manifest", e.to_string()))?;

    let (w, h, n) = (manifest.width, manifest.height, manifest.frames);
    if n == 0 {
        return Err(Error::format(
            &manifest_path,
            "frames",
            "must be at least 1",
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(
            &manifest_path,
            "width",
            "frame size must be non-empty",
        ));
    }
    require_pattern(&manifest_path, "frame_pattern", &manifest.frame_pattern)?;

    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let path = dir.join(expand(&manifest.frame_pattern, i));
        let (fw, fh, pixels) = read_rgb_png(&path)?;
        if (fw, fh) != (w, h) {
            return Err(Error::format(
                &path,
                "frame_pattern",
                format!("image is {fw}x{fh}, manifest declares {w}x{h}"),
            ));
        }
        frames.push(Frame::new(w, h, pixels));
    }

    let mut background = None;
    let mut foregrounds = Vec::new();
    for (li, entry) in manifest.layers.iter().enumerate() {
        let layer = load_layer(dir, &manifest_path, li, entry, n, w, h)?;
        match layer.kind {
            LayerKind::Background if background.is_some() => {
                return Err(Error::format(
                    &manifest_path,
                    format!("layers[{li}].kind"),
                    "more than one background layer",
                ))
            }
            LayerKind::Background => background = Some(layer),
            LayerKind::Foreground => foregrounds.push(layer),
        }
    }
    let background =
        background.ok_or_else(|| Error::format(&manifest_path, "layers", "no background layer"))?;

    let scene = Scene {
        frame_count: n,
        width: w,
        height: h,
        frames,
        background,
        foregrounds,
    };
    ensure_valid(&scene)?;
    Ok(scene)
}

fn load_layer(
    dir: &Path,
    manifest_path: &Path,
    li: usize,
    entry: &LayerEntry,
    n: usize,
    w: usize,
    h: usize,
) -> Result<Layer> {
    let field = |f: &str| format!("layers[{li}].{f}");
    let kind = match entry.kind.as_str() {
        "background" => LayerKind::Background,
        "foreground" => LayerKind::Foreground,
        other => {
            return Err(Error::format(
                manifest_path,
                field("kind"),
                format!("expected \"background\" or \"foreground\", got {other:?}"),
            ))
        }
    };
    require_pattern(manifest_path, &field("uv_pattern"), &entry.uv_pattern)?;

    let atlas_path = dir.join(&entry.atlas);
    let (aw, ah, pixels) = read_rgb_png(&atlas_path)?;
    if (aw, ah) != (entry.atlas_width, entry.atlas_height) {
        return Err(Error::format(
            &atlas_path,
            field("atlas_width"),
            format!(
                "image is {aw}x{ah}, manifest declares {}x{}",
                entry.atlas_width, entry.atlas_height
            ),
        ));
    }
    let atlas = Atlas::new(aw, ah, pixels)?;

    let mut uv = Vec::with_capacity(n);
    for i in 0..n {
        let path = dir.join(expand(&entry.uv_pattern, i));
        let map = read_uv_map(&path)?;
        if map.dims() != (w, h) {
            return Err(Error::format(
                &path,
                "width/height",
                format!("UV map is {}x{}, frames are {w}x{h}", map.width, map.height),
            ));
        }
        uv.push(map);
    }

    let alpha = match (&entry.alpha_pattern, kind) {
        (None, LayerKind::Foreground) => {
            return Err(Error::format(
                manifest_path,
                field("alpha_pattern"),
                "foreground layers need an alpha pattern",
            ))
        }
        (Some(_), LayerKind::Background) => {
            return Err(Error::format(
                manifest_path,
                field("alpha_pattern"),
                "background layers must use null",
            ))
        }
        (None, LayerKind::Background) => None,
        (Some(pattern), LayerKind::Foreground) => {
            require_pattern(manifest_path, &field("alpha_pattern"), pattern)?;
            let mut maps = Vec::with_capacity(n);
            for i in 0..n {
                let path = dir.join(expand(pattern, i));
                let map = read_alpha_map(&path)?;
                if map.dims() != (w, h) {
                    return Err(Error::format(
                        &path,
                        "width/height",
                        format!(
                            "alpha map is {}x{}, frames are {w}x{h}",
                            map.width, map.height
                        ),
                    ));
                }
                maps.push(map);
            }
            Some(maps)
        }
    };

    Ok(Layer {
        name: entry.name.clone(),
        kind,
        order: entry.order,
        atlas,
        uv,
        alpha,
    })
}

/// Writes `scene` into `dir`, creating it if needed.
pub fn save_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    ensure_valid(scene)?;
    let dir = dir.as_ref();
    mkdir(&dir.join("frames"))?;

    let frame_pattern = "frames/%04d.png".to_owned();
    for (i, frame) in scene.frames.iter().enumerate() {
        write_rgb_png(
            dir.join(expand(&frame_pattern, i)),
            frame.width,
            frame.height,
            &frame.pixels,
        )?;
    }

    let mut entries = Vec::new();
    for (li, layer) in scene.layers().enumerate() {
        let sub = format!("layers/{li:02}");
        mkdir(&dir.join(&sub))?;
        let atlas = format!("{sub}/atlas.png");
        write_rgb_png(
            dir.join(&atlas),
            layer.atlas.width,
            layer.atlas.height,
            &layer.atlas.pixels,
        )?;

        let uv_pattern = format!("{sub}/uv_%04d.uvm");
        for (i, map) in layer.uv.iter().enumerate() {
            write_uv_map(dir.join(expand(&uv_pattern, i)), map)?;
        }
        let alpha_pattern = match &layer.alpha {
            None => None,
            Some(maps) => {
                let pattern = format!("{sub}/alpha_%04d.alp");
                for (i, map) in maps.iter().enumerate() {
                    write_alpha_map(dir.join(expand(&pattern, i)), map)?;
                }
                Some(pattern)
            }
        };
        entries.push(LayerEntry {
            name: layer.name.clone(),
            kind: layer.kind.as_str().to_owned(),
            order: layer.order,
            atlas,
            atlas_width: layer.atlas.width,
            atlas_height: layer.atlas.height,
            uv_pattern,
            alpha_pattern,
        });
    }

    let manifest = Manifest {
        frames: scene.frame_count,
        width: scene.width,
        height: scene.height,
        layers: entries,
        frame_pattern,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn quantize(c: f64) -> u8 {
    if c.is_finite() {
        (c.clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

/// Writes RGB pixels as an 8-bit PNG, rounding each channel to the nearest level.
pub fn write_rgb_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    pixels: &[Rgb],
) -> Result<()> {
    let path = path.as_ref();
    let mut img = RgbImage::new(width as u32, height as u32);
    for (dst, src) in img.pixels_mut().zip(pixels) {
        dst.0 = [quantize(src[0]), quantize(src[1]), quantize(src[2])];
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_owned(),
                source: other,
            },
        })
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Rgb>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_owned(),
            source: e,
        })?
        .to_rgb8();
    let pixels = img
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Ok((img.width() as usize, img.height() as usize, pixels))
}

fn header(magic: &[u8; 4], width: usize, height: usize, payload: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + payload);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    buf
}

pub fn write_uv_map(path: impl AsRef<Path>, map: &UvMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = header(UV_MAGIC, map.width, map.height, map.entries.len() * 8);
    for e in &map.entries {
        let [u, v] = e.unwrap_or([UNMAPPED, UNMAPPED]);
        buf.extend_from_slice(&u.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_alpha_map(path: impl AsRef<Path>, map: &AlphaMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = header(ALPHA_MAGIC, map.width, map.height, map.values.len() * 4);
    for a in &map.values {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses the common 12-byte header and returns `(width, height, payload)`.
fn read_binary<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8; 4],
    bytes_per_entry: usize,
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 12 {
        return Err(Error::format(
            path,
            "header",
            format!("file is {} bytes, header needs 12", bytes.len()),
        ));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            "magic",
            format!(
                "expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..4])
            ),
        ));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bytes_per_entry))
        .ok_or_else(|| Error::format(path, "width/height", "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            "payload",
            format!(
                "{width}x{height} needs {expected} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    Ok((width, height, payload))
}

fn f32_at(chunk: &[u8]) -> f32 {
    f32::from_le_bytes(chunk.try_into().unwrap())
}

pub fn read_uv_map(path: impl AsRef<Path>) -> Result<UvMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, payload) = read_binary(path, &bytes, UV_MAGIC, 8)?;
    let mut entries = Vec::with_capacity(width * height);
    for (idx, pair) in payload.chunks_exact(8).enumerate() {
        let (u, v) = (f32_at(&pair[..4]), f32_at(&pair[4..]));
        if u == UNMAPPED && v == UNMAPPED {
            entries.push(None);
        } else if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
            entries.push(Some([u, v]));
        } else {
            return Err(Error::format(
                path,
                "uv",
                format!(
                    "entry at ({}, {}) = ({u}, {v}) outside [0,1]",
                    idx % width,
                    idx / width
                ),
            ));
        }
    }
    Ok(UvMap::new(width, height, entries))
}

pub fn read_alpha_map(path: impl AsRef<Path>) -> Result<AlphaMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, payload) = read_binary(path, &bytes, ALPHA_MAGIC, 4)?;
    let mut values = Vec::with_capacity(width * height);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let a = f32_at(chunk);
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::format(
                path,
                "alpha",
                format!(
                    "entry at ({}, {}) = {a} outside [0,1]",
                    idx % width,
                    idx / width
                ),
            ));
        }
        values.push(a);
    }
    Ok(AlphaMap::new(width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::tiny_scene;

    #[test]
    fn minimal_scene_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(loaded.frame_count, 1);
        assert_eq!(loaded, scene);
    }

    #[test]
    fn unmapped_entries_use_the_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = UvMap::identity(3, 2);
        map.entries[4] = None;
        let path = dir.path().join("m.uvm");
        write_uv_map(&path, &map).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"UVM1");
        assert_eq!(bytes.len(), 12 + 6 * 8);
        let off = 12 + 4 * 8;
        assert_eq!(f32_at(&bytes[off..off + 4]), -1.0);
        assert_eq!(f32_at(&bytes[off + 4..off + 8]), -1.0);
        assert_eq!(read_uv_map(&path).unwrap(), map);
    }

    #[test]
    fn missing_uv_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        // Claim three frames while only one of each file exists.
        let mpath = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"frames\": 1", "\"frames\": 3");
        fs::write(&mpath, text).unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("0001"), "{err}");
    }

    #[test]
    fn truncated_alpha_reports_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.alp");
        write_alpha_map(&path, &AlphaMap::filled(2, 2, 0.5)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&path, bytes).unwrap();
        match read_alpha_map(&path).unwrap_err() {
            Error::Format { field, path: p, .. } => {
                assert_eq!(field, "payload");
                assert_eq!(p, path);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_and_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.alp");
        let mut map = AlphaMap::filled(2, 1, 0.5);
        write_alpha_map(&path, &map).unwrap();
        assert!(
            matches!(read_uv_map(&path), Err(Error::Format { ref field, .. }) if field == "magic")
        );

        map.values[1] = 1.5;
        write_alpha_map(&path, &map).unwrap();
        assert!(
            matches!(read_alpha_map(&path), Err(Error::Format { ref field, .. }) if field == "alpha")
        );
    }

    #[test]
    fn malformed_manifest_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "{\"frames\": 1").unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref field, .. } if field == "manifest"),
            "{err}"
        );
    }

    #[test]
    fn frame_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        write_rgb_png(dir.path().join("frames/0000.png"), 3, 2, &[[0.0; 3]; 6]).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref field, .. } if field == "frame_pattern"),
            "{err}"
        );
    }

    #[test]
    fn unwritable_destination_fails_with_io() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, b"not a directory").unwrap();
        let err = save_scene(&tiny_scene(), blocker.join("scene")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
