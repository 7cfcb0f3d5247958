use atlasforge::compositor::reconstruct_video;
use atlasforge::generators::Passthrough;
use atlasforge::guidance::{canny_default, edge_iou, EdgeMap};
use atlasforge::metrics::positional_deviation;
use atlasforge::propagation::{foreground_view, run_edit, EditOptions};
use atlasforge::scene::{load_scene, save_scene, EditRequest};
use atlasforge::synth::{make_scene, Matte, Motion, Pattern, SynthConfig};

fn max_abs(a: &[atlasforge::scene::Frame], b: &[atlasforge::scene::Frame]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.pixels.iter().zip(&y.pixels))
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn saved_scenes_reconstruct_their_in_memory_frames() {
    for seed in 0..3 {
        let cfg = SynthConfig {
            seed,
            frames: 5,
            ..SynthConfig::default()
        };
        let scene = make_scene(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(loaded.atlases(), scene.atlases());
        let rebuilt = reconstruct_video(&loaded, &loaded.atlases()).unwrap();
        assert!(max_abs(&rebuilt, &scene.frames) <= 1e-5);
        // Stored frames are 8-bit, so they match only to half a level.
        assert!(max_abs(&loaded.frames, &scene.frames) <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn affine_scene_with_rotation_is_valid() {
    let mut cfg = SynthConfig {
        frames: 3,
        ..SynthConfig::default()
    };
    cfg.foregrounds[0].layer.motion = Motion::Affine {
        matrices: (0..3)
            .map(|i| {
                // Rotation about texel (64, 64), which lands on frame (48, 27).
                let (ct, st) = ((0.1 + 0.05 * i as f64).cos(), (0.1 + 0.05 * i as f64).sin());
                [
                    [ct, -st, 48.0 - 64.0 * ct + 64.0 * st],
                    [st, ct, 27.0 - 64.0 * st - 64.0 * ct],
                ]
            })
            .collect(),
    };
    let scene = make_scene(&cfg).unwrap();
    // The disk centre lands on the frame centre in every frame.
    for i in 0..3 {
        assert_eq!(scene.foregrounds[0].alpha_at(i, 27 * 96 + 48), 1.0);
        assert_eq!(scene.foregrounds[0].alpha_at(i, 0), 0.0);
    }
}

#[test]
fn disk_matte_edges_follow_the_circle() {
    let mut cfg = SynthConfig {
        frames: 2,
        ..SynthConfig::default()
    };
    let fg = &mut cfg.foregrounds[0];
    fg.layer.pattern = Pattern::Checkerboard {
        cell: 4,
        colors: [[0.0, 0.0, 0.0]; 2],
    };
    fg.layer.motion = Motion::Static {
        offset: Some([16.0, 37.0]),
    };
    fg.matte = Matte::Disk {
        center: [64.0, 64.0],
        radius: 14.0,
        feather: 0.0,
    };
    let scene = make_scene(&cfg).unwrap();
    let (view, edges) = foreground_view(&scene, 1, 1).unwrap();
    assert_eq!(edges, canny_default(&view).unwrap());
    // Frame position of the disk centre is (48, 27).
    let (w, h) = (scene.width, scene.height);
    let ring = EdgeMap {
        width: w,
        height: h,
        edges: (0..w * h)
            .map(|i| {
                let d = (((i % w) as f64 - 48.0).powi(2) + ((i / w) as f64 - 27.0).powi(2)).sqrt();
                (d - 14.0).abs() <= 0.75
            })
            .collect(),
    };
    let iou = edge_iou(&edges, &ring, 1).unwrap();
    assert!(iou >= 0.6, "iou {iou}");
}

#[test]
fn identity_edit_preserves_the_video() {
    let cfg = SynthConfig {
        frames: 12,
        ..SynthConfig::default()
    };
    let scene = make_scene(&cfg).unwrap();
    let mut req = EditRequest::new("", "passthrough");
    req.t0 = 0.0;
    req.keyframe_interval = 4;
    let result = run_edit(&scene, &req, &Passthrough, &EditOptions::default()).unwrap();
    assert_eq!(result.keyframes, vec![0, 4, 8]);
    let dev = positional_deviation(&scene.frames, &result.frames).unwrap();
    assert!(dev <= 0.01, "positional deviation {dev}");
}
