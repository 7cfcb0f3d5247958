use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use atlasforge::aggregation::{aggregate, TrainConfig};
use atlasforge::generators::{create_generator, GeneratorOptions, GENERATOR_IDS};
use atlasforge::metrics::evaluate;
use atlasforge::propagation::{keyframe_drift, run_edit, EditOptions, EditResult};
use atlasforge::scene::{
    load_scene, read_rgb_png, save_scene, write_rgb_png, EditRequest, Frame, Scene,
};
use atlasforge::synth::{make_scene, SynthConfig};
use atlasforge::{Error, Result};
use clap::{Args, Parser, Subcommand};

const THREADS_VAR: &str = "ATLASFORGE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "atlasforge", version, about = "Layered-atlas video editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Re-render every frame from the scene's own atlases.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit one layer from a prompt and re-render the video.
    Edit(EditArgs),
    /// Fuse a directory of edited key frames into one layer atlas.
    Aggregate(AggregateArgs),
    /// Compare an edited scene directory against the original.
    Metrics {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        edited: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural scene with known atlases and motion.
    Synth {
        /// JSON scene description; the built-in default scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the edit once per noise strength and lay the key frames out in a grid.
    T0Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct GeneratorArgs {
    #[arg(long, default_value = "passthrough", value_parser = clap::builder::PossibleValuesParser::new(GENERATOR_IDS))]
    generator: String,
    #[arg(long, required_if_eq("generator", "remote"))]
    remote_url: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 120.0, value_parser = positive_seconds)]
    timeout: f64,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Working atlas resolution as WxH; the layer's own when omitted.
    #[arg(long, value_parser = parse_dims)]
    atlas_res: Option<(usize, usize)>,
}

#[derive(Args, Debug, Clone)]
struct EditCommon {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Layer to edit: 0 is the background. Defaults to the first foreground.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, default_value_t = EditRequest::DEFAULT_INTERVAL)]
    keyframe_interval: usize,
    /// Comma-separated key-frame indices; overrides the interval.
    #[arg(long, value_delimiter = ',')]
    keyframes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[command(flatten)]
    common: EditCommon,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = EditRequest::DEFAULT_T0, value_parser = unit_interval)]
    t0: f64,
    /// Also edit the background atlas with this prompt.
    #[arg(long)]
    background_prompt: Option<String>,
    /// Write report.json with metrics against the input scene.
    #[arg(long)]
    metrics: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: EditCommon,
    #[arg(long, default_value = "stochastic", value_parser = clap::builder::PossibleValuesParser::new(GENERATOR_IDS))]
    generator: String,
    #[arg(long)]
    remote_url: Option<String>,
    #[arg(long, default_value_t = 120.0, value_parser = positive_seconds)]
    timeout: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.8,0.9", value_parser = unit_interval)]
    values: Vec<f64>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory of edited key frames named by frame index (0004.png).
    #[arg(long)]
    keyframes_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive_seconds(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be a positive number of seconds".into())
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: usize = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_VAR}=`{raw}` is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot configure the thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Reconstruct { scene, out } => reconstruct(&scene, &out),
        Command::Edit(args) => edit(&args),
        Command::Aggregate(args) => aggregate_cmd(&args),
        Command::Metrics {
            original,
            edited,
            out,
        } => metrics(&original, &edited, &out),
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed),
        Command::T0Sweep(args) => sweep(&args),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fails unless `out` is absent or an empty directory.
fn check_output_dir(out: &Path) -> Result<()> {
    if !out.exists() {
        return Ok(());
    }
    let empty = out.is_dir() && fs::read_dir(out).map_err(io_err(out))?.next().is_none();
    if empty {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "output {} already exists and is not an empty directory",
            out.display()
        )))
    }
}

fn staging_path(out: &Path) -> Result<PathBuf> {
    let name = out.file_name().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "output path {} has no final component",
            out.display()
        ))
    })?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    Ok(parent.join(format!(
        ".{}.partial-{}",
        name.to_string_lossy(),
        std::process::id()
    )))
}

/// Builds the output directory under a staging name and moves it into place
/// only once `fill` succeeds.
fn write_output_dir(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    check_output_dir(out)?;
    let tmp = staging_path(out)?;
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;
    let filled = fill(&tmp).and_then(|()| {
        if out.exists() {
            fs::remove_dir(out).map_err(io_err(out))?;
        }
        fs::rename(&tmp, out).map_err(io_err(out))
    });
    if filled.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    filled
}

fn write_output_file(out: &Path, bytes: &[u8]) -> Result<()> {
    if out.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "output {} is a directory",
            out.display()
        )));
    }
    let tmp = staging_path(out)?;
    let written = fs::write(&tmp, bytes)
        .map_err(io_err(&tmp))
        .and_then(|()| fs::rename(&tmp, out).map_err(io_err(out)));
    if written.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    written
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_frames(
    dir: &Path,
    names: impl IntoIterator<Item = usize>,
    frames: &[Frame],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in names.into_iter().zip(frames) {
        write_rgb_png(
            dir.join(format!("{i:04}.png")),
            f.width,
            f.height,
            &f.pixels,
        )?;
    }
    Ok(())
}

fn loss_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{e},{l}");
    }
    s
}

fn with_atlases_and_frames(scene: &Scene, result: &EditResult) -> Scene {
    let mut out = scene.clone();
    out.background.atlas = result.atlases[0].clone();
    for (l, a) in out.foregrounds.iter_mut().zip(&result.atlases[1..]) {
        l.atlas = a.clone();
    }
    out.frames = result.frames.clone();
    out
}

fn train_config(args: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        momentum: args.momentum,
        seed,
    }
}

fn edit_request(common: &EditCommon, scene: &Scene, generator: &str, t0: f64) -> EditRequest {
    EditRequest {
        prompt: common.prompt.clone(),
        t0,
        generator: generator.to_owned(),
        seed: common.seed,
        keyframe_interval: common.keyframe_interval,
        keyframes: common.keyframes.clone(),
        layer: common.layer.unwrap_or_else(|| scene.default_edit_layer()),
        background_prompt: None,
    }
}

fn edit_options(common: &EditCommon) -> EditOptions {
    EditOptions {
        train: train_config(&common.train, common.seed),
        atlas_dims: common.train.atlas_res,
        ..EditOptions::default()
    }
}

fn reconstruct(scene_dir: &Path, out: &Path) -> Result<()> {
    check_output_dir(out)?;
    let mut scene = load_scene(scene_dir)?;
    scene.frames = atlasforge::compositor::reconstruct_video(&scene, &scene.atlases())?;
    write_output_dir(out, |dir| save_scene(&scene, dir))
}

fn edit(args: &EditArgs) -> Result<()> {
    let c = &args.common;
    check_output_dir(&c.out)?;
    let scene = load_scene(&c.scene)?;
    let mut req = edit_request(c, &scene, &args.generator.generator, args.t0);
    req.background_prompt = args.background_prompt.clone();
    let generator = create_generator(
        &args.generator.generator,
        &GeneratorOptions {
            remote_url: args.generator.remote_url.clone(),
            timeout: Duration::from_secs_f64(args.generator.timeout),
        },
    )?;
    let result = run_edit(&scene, &req, generator.as_ref(), &edit_options(c))?;
    let report = if args.metrics {
        Some(evaluate(&scene, &result.frames)?)
    } else {
        None
    };
    let edited = with_atlases_and_frames(&scene, &result);
    write_output_dir(&c.out, |dir| {
        save_scene(&edited, dir)?;
        if !result.keyframes.is_empty() {
            write_frames(
                &dir.join("keyframes"),
                result.keyframes.iter().copied(),
                &result.edited_keyframes,
            )?;
        }
        if !result.loss_history.is_empty() {
            write_text(&dir.join("loss.csv"), &loss_csv(&result.loss_history))?;
        }
        if let Some(r) = report {
            write_text(&dir.join("report.json"), &r.to_json())?;
        }
        Ok(())
    })
}

/// Key frames in `dir`, named `NNNN.png` by frame index, in index order.
fn read_keyframes(dir: &Path, scene: &Scene) -> Result<(Vec<usize>, Vec<Frame>)> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|_| path.extension().is_some_and(|e| e == "png"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(i) = index {
            found.push((i, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no key frames (NNNN.png) in {}",
            dir.display()
        )));
    }
    let mut indices = Vec::new();
    let mut frames = Vec::new();
    for (i, path) in found {
        if i >= scene.frame_count {
            return Err(Error::InvalidArgument(format!(
                "{}: frame {i} is beyond the scene's {} frames",
                path.display(),
                scene.frame_count
            )));
        }
        let (w, h, pixels) = read_rgb_png(&path)?;
        if (w, h) != (scene.width, scene.height) {
            return Err(Error::Shape(format!(
                "{}: {w}x{h} key frame for a {}x{} scene",
                path.display(),
                scene.width,
                scene.height
            )));
        }
        indices.push(i);
        frames.push(Frame::new(w, h, pixels));
    }
    Ok((indices, frames))
}

fn aggregate_cmd(args: &AggregateArgs) -> Result<()> {
    check_output_dir(&args.out)?;
    let scene = load_scene(&args.scene)?;
    let layer_index = args.layer.unwrap_or_else(|| scene.default_edit_layer());
    let layer = scene.layer(layer_index)?;
    let (indices, frames) = read_keyframes(&args.keyframes_dir, &scene)?;
    let uvs: Vec<_> = indices.iter().map(|&i| &layer.uv[i]).collect();
    let alpha_maps: Vec<_> = indices.iter().map(|&i| layer.alpha_map(i)).collect();
    let alphas: Vec<_> = alpha_maps.iter().collect();
    let dims = args.train.atlas_res.unwrap_or_else(|| layer.atlas.dims());
    let agg = aggregate(
        &frames,
        &uvs,
        &alphas,
        dims,
        &train_config(&args.train, args.seed),
    )?;
    write_output_dir(&args.out, |dir| {
        write_rgb_png(
            dir.join("atlas.png"),
            agg.atlas.width,
            agg.atlas.height,
            &agg.atlas.pixels,
        )?;
        write_text(&dir.join("loss.csv"), &loss_csv(&agg.history))
    })
}

fn metrics(original: &Path, edited: &Path, out: &Path) -> Result<()> {
    let scene = load_scene(original)?;
    let edited = load_scene(edited)?;
    let report = evaluate(&scene, &edited.frames)?;
    write_output_file(out, report.to_json().as_bytes())
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    check_output_dir(out)?;
    let mut cfg = match config {
        Some(path) => SynthConfig::from_json(&fs::read_to_string(path).map_err(io_err(path))?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scene = make_scene(&cfg)?;
    write_output_dir(out, |dir| save_scene(&scene, dir))
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let c = &args.common;
    check_output_dir(&c.out)?;
    let scene = load_scene(&c.scene)?;
    let generator = create_generator(
        &args.generator,
        &GeneratorOptions {
            remote_url: args.remote_url.clone(),
            timeout: Duration::from_secs_f64(args.timeout),
        },
    )?;
    let opts = edit_options(c);
    let mut runs = Vec::with_capacity(args.values.len());
    for &t0 in &args.values {
        let req = edit_request(c, &scene, &args.generator, t0);
        if req.layer == 0 {
            return Err(Error::InvalidArgument(
                "t0-sweep edits a foreground layer".into(),
            ));
        }
        let result = run_edit(&scene, &req, generator.as_ref(), &opts)?;
        let dims = opts
            .atlas_dims
            .unwrap_or(scene.layer(req.layer)?.atlas.dims());
        let drift = keyframe_drift(
            &scene,
            req.layer,
            &result.keyframes,
            &result.edited_keyframes,
            dims,
        )?;
        let report = evaluate(&scene, &result.frames)?;
        runs.push((t0, result, drift, report));
    }

    let mut summary = String::from(
        "t0,keyframe_drift,flow_consistency,positional_deviation,temporal_deviation\n",
    );
    for (t0, _, drift, r) in &runs {
        let _ = writeln!(
            summary,
            "{t0},{drift},{},{},{}",
            r.flow_consistency, r.positional_deviation, r.temporal_deviation
        );
    }
    let grid = key_frame_grid(&runs.iter().map(|(_, r, _, _)| r).collect::<Vec<_>>());
    write_output_dir(&c.out, |dir| {
        for (t0, result, _, _) in &runs {
            let sub = dir.join(format!("t0_{t0:.2}"));
            write_frames(&sub.join("frames"), 0..result.frames.len(), &result.frames)?;
            write_frames(
                &sub.join("keyframes"),
                result.keyframes.iter().copied(),
                &result.edited_keyframes,
            )?;
        }
        write_rgb_png(dir.join("grid.png"), grid.width, grid.height, &grid.pixels)?;
        write_text(&dir.join("sweep.csv"), &summary)
    })
}

/// One row per run, one column per key frame, separated by 2-pixel white gutters.
fn key_frame_grid(runs: &[&EditResult]) -> Frame {
    const GUTTER: usize = 2;
    let cols = runs
        .iter()
        .map(|r| r.edited_keyframes.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let (fw, fh) = runs
        .iter()
        .find_map(|r| r.edited_keyframes.first())
        .map(|f| f.dims())
        .unwrap_or((1, 1));
    let width = cols * fw + (cols - 1) * GUTTER;
    let rows = runs.len().max(1);
    let height = rows * fh + (rows - 1) * GUTTER;
    let mut pixels = vec![[1.0; 3]; width * height];
    for (r, run) in runs.iter().enumerate() {
        for (k, f) in run.edited_keyframes.iter().enumerate() {
            let (x0, y0) = (k * (fw + GUTTER), r * (fh + GUTTER));
            for y in 0..fh {
                let row = &f.pixels[y * fw..(y + 1) * fw];
                let start = (y0 + y) * width + x0;
                pixels[start..start + fw].copy_from_slice(row);
            }
        }
    }
    Frame::new(width, height, pixels)
}
