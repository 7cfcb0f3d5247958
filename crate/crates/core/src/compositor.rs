//! Back-to-front over-compositing of sampled layers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mapping::forward_sample;
use crate::scene::{AlphaMap, Atlas, Frame, Scene};

/// Composites foregrounds over `bg` in the given (back-to-front) order:
/// `out = a * fg + (1 - a) * out` per pixel and channel.
///
/// Invalid foreground pixels are treated as fully transparent.
pub fn composite_frame(bg: &Frame, fgs: &[(&Frame, &AlphaMap)]) -> Frame {
    let mut out = bg.pixels.clone();
    for (fg, alpha) in fgs {
        assert_eq!(
            fg.dims(),
            bg.dims(),
            "foreground size differs from background"
        );
        assert_eq!(
            alpha.dims(),
            bg.dims(),
            "alpha size differs from background"
        );
        for (idx, o) in out.iter_mut().enumerate() {
            if !fg.is_valid(idx) {
                continue;
            }
            let a = alpha.get(idx);
            let f = fg.pixels[idx];
            for c in 0..3 {
                o[c] = a * f[c] + (1.0 - a) * o[c];
            }
        }
    }
    Frame::new(bg.width, bg.height, out)
}

/// Reconstructs frame `i` from one atlas per layer (background first, then
/// foregrounds in scene order).
pub fn reconstruct_frame(scene: &Scene, atlases: &[Atlas], i: usize) -> Result<Frame> {
    if i >= scene.frame_count {
        return Err(Error::InvalidArgument(format!(
            "frame index {i} out of range (scene has {} frames)",
            scene.frame_count
        )));
    }
    if atlases.len() != scene.layer_count() {
        return Err(Error::Shape(format!(
            "{} atlases given for {} layers",
            atlases.len(),
            scene.layer_count()
        )));
    }
    let bg = forward_sample(&atlases[0], &scene.background.uv[i]);

    let mut order: Vec<usize> = (0..scene.foregrounds.len()).collect();
    order.sort_by_key(|&k| scene.foregrounds[k].order);
    let samples: Vec<(Frame, &AlphaMap)> = order
        .iter()
        .map(|&k| {
            let layer = &scene.foregrounds[k];
            let alpha = &layer.alpha.as_ref().expect("foreground alpha")[i];
            (forward_sample(&atlases[k + 1], &layer.uv[i]), alpha)
        })
        .collect();
    let refs: Vec<(&Frame, &AlphaMap)> = samples.iter().map(|(f, a)| (f, *a)).collect();
    // Unmapped background pixels sample as black; the result is a full frame.
    Ok(composite_frame(&bg.into_all_valid(), &refs))
}

pub fn reconstruct_video(scene: &Scene, atlases: &[Atlas]) -> Result<Vec<Frame>> {
    (0..scene.frame_count)
        .into_par_iter()
        .map(|i| reconstruct_frame(scene, atlases, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Layer, LayerKind, UvMap};
    use proptest::prelude::*;

    fn solid(w: usize, h: usize, c: f64) -> Frame {
        Frame::filled(w, h, [c; 3])
    }

    #[test]
    fn opaque_foreground_wins() {
        let fg = Frame::filled(3, 2, [0.1, 0.2, 0.3]);
        let out = composite_frame(&solid(3, 2, 0.9), &[(&fg, &AlphaMap::filled(3, 2, 1.0))]);
        assert_eq!(out.pixels, fg.pixels);
    }

    #[test]
    fn transparent_foreground_shows_background() {
        let bg = Frame::filled(3, 2, [0.4, 0.5, 0.6]);
        let out = composite_frame(&bg, &[(&solid(3, 2, 0.1), &AlphaMap::filled(3, 2, 0.0))]);
        assert_eq!(out.pixels, bg.pixels);
    }

    #[test]
    fn half_alpha_white_over_black() {
        let out = composite_frame(
            &solid(2, 2, 0.0),
            &[(&solid(2, 2, 1.0), &AlphaMap::filled(2, 2, 0.5))],
        );
        assert!(out.pixels.iter().all(|p| *p == [0.5; 3]));
    }

    #[test]
    fn invalid_foreground_pixels_are_transparent() {
        let fg = solid(2, 1, 1.0).with_validity(vec![true, false]);
        let out = composite_frame(&solid(2, 1, 0.0), &[(&fg, &AlphaMap::filled(2, 1, 1.0))]);
        assert_eq!(out.pixels, vec![[1.0; 3], [0.0; 3]]);
    }

    fn layer(name: &str, order: i32, atlas: Atlas, alpha: Option<AlphaMap>) -> Layer {
        let (w, h) = (4, 3);
        Layer {
            name: name.into(),
            kind: if alpha.is_some() {
                LayerKind::Foreground
            } else {
                LayerKind::Background
            },
            order,
            atlas,
            uv: vec![UvMap::identity(w, h)],
            alpha: alpha.map(|a| vec![a]),
        }
    }

    fn scene_with(fgs: Vec<Layer>, bg: Atlas) -> Scene {
        Scene {
            frame_count: 1,
            width: 4,
            height: 3,
            frames: vec![solid(4, 3, 0.0)],
            background: layer("bg", 0, bg, None),
            foregrounds: fgs,
        }
    }

    #[test]
    fn background_only_scene_is_the_background_sample() {
        let bg = Atlas::new(4, 3, (0..12).map(|i| [i as f64 / 12.0; 3]).collect()).unwrap();
        let scene = scene_with(vec![], bg.clone());
        let out = reconstruct_frame(&scene, &scene.atlases(), 0).unwrap();
        assert_eq!(out.pixels, bg.pixels);
        assert!(reconstruct_frame(&scene, &scene.atlases(), 1).is_err());
    }

    #[test]
    fn disjoint_foregrounds_each_own_their_region() {
        let left = AlphaMap::new(
            4,
            3,
            (0..12).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect(),
        );
        let right = AlphaMap::new(
            4,
            3,
            (0..12)
                .map(|i| if i % 4 >= 2 { 1.0 } else { 0.0 })
                .collect(),
        );
        let a = Atlas::filled(4, 3, [1.0, 0.0, 0.0]);
        let b = Atlas::filled(4, 3, [0.0, 1.0, 0.0]);
        // Listed front-to-back on purpose; order indices decide.
        let scene = scene_with(
            vec![layer("b", 2, b, Some(right)), layer("a", 1, a, Some(left))],
            Atlas::filled(4, 3, [0.0, 0.0, 1.0]),
        );
        let out = reconstruct_frame(&scene, &scene.atlases(), 0).unwrap();
        for (i, p) in out.pixels.iter().enumerate() {
            let expected = if i % 4 < 2 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            assert_eq!(*p, expected);
        }
    }

    #[test]
    fn layer_order_decides_overlap() {
        let full = AlphaMap::filled(4, 3, 1.0);
        let red = Atlas::filled(4, 3, [1.0, 0.0, 0.0]);
        let green = Atlas::filled(4, 3, [0.0, 1.0, 0.0]);
        let scene = scene_with(
            vec![
                layer("near", 5, red, Some(full.clone())),
                layer("far", 1, green, Some(full)),
            ],
            Atlas::filled(4, 3, [0.0; 3]),
        );
        let out = reconstruct_video(&scene, &scene.atlases()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].pixels.iter().all(|p| *p == [1.0, 0.0, 0.0]));
    }

    proptest! {
        #[test]
        fn compositing_stays_in_unit_range(
            bg in prop::collection::vec(0.0f64..=1.0, 6),
            fg in prop::collection::vec(0.0f64..=1.0, 6),
            a in prop::collection::vec(0.0f32..=1.0, 2),
        ) {
            let bgf = Frame::new(2, 1, vec![[bg[0], bg[1], bg[2]], [bg[3], bg[4], bg[5]]]);
            let fgf = Frame::new(2, 1, vec![[fg[0], fg[1], fg[2]], [fg[3], fg[4], fg[5]]]);
            let out = composite_frame(&bgf, &[(&fgf, &AlphaMap::new(2, 1, a))]);
            for p in out.pixels {
                for c in p {
                    prop_assert!((0.0..=1.0).contains(&c));
                }
            }
        }

        #[test]
        fn monotone_in_alpha_when_foreground_is_brighter(
            bgv in 0.0f64..=1.0,
            delta in 0.0f64..=1.0,
            a1 in 0.0f32..=1.0,
            a2 in 0.0f32..=1.0,
        ) {
            let fgv = (bgv + delta).min(1.0);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let bg = solid(1, 1, bgv);
            let fg = solid(1, 1, fgv);
            let out_lo = composite_frame(&bg, &[(&fg, &AlphaMap::filled(1, 1, lo))]);
            let out_hi = composite_frame(&bg, &[(&fg, &AlphaMap::filled(1, 1, hi))]);
            prop_assert!(out_lo.pixels[0][0] <= out_hi.pixels[0][0] + 1e-15);
        }
    }
}
