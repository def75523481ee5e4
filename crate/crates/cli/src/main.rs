mod poses;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use splatloop::completion::{complete_depth_with, inpaint_color, HarmonicOptions};
use splatloop::gaussians::read_ply;
use splatloop::imaging::{read_depth, read_image, read_mask, write_depth, write_image};
use splatloop::pipeline::{load_session, reference_timing, save_session, write_timing_csv};
use splatloop::renderer::render_view;
use splatloop::testkit::{build_synthetic_scene, render_ground_truth, standard_trajectories, SceneKind, TrajectoryKind};
use splatloop::{
    CompletionInput, DepthMap, Intrinsics, Pipeline, PipelineConfig, Pose, RenderOutput, SessionState, StepOutput, StepTiming,
};
use splatloop_service::ServiceConfig;

use crate::poses::{format_pose_list, parse_pose, read_pose_list};

#[derive(Parser)]
#[command(name = "splatloop", version, about = "Incremental Gaussian scene engine")]
struct Cli {
    /// Worker threads for rendering and depth inference (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a session from one RGB view and its depth; writes a session directory.
    Init(InitArgs),
    /// One interaction at a new pose; updates the session directory in place.
    Step(StepArgs),
    /// Sequential steps over a pose list; writes frames and a timing CSV.
    RunTrajectory(TrajectoryArgs),
    /// Render a PLY scene (or a session) at a list of poses.
    Render(RenderArgs),
    /// Fill holes of an RGB + depth pair given a known-pixel mask.
    Complete(CompleteArgs),
    /// Time pipeline steps on a synthetic scene.
    Bench(BenchArgs),
    /// Write ground-truth views of a synthetic scene.
    GenGt(GenGtArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

/// Pipeline parameters; flags override the config file, which overrides defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with any subset of the pipeline parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_d: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_scale: Option<f64>,
    #[arg(long)]
    bootstrap_depth: Option<f64>,
    #[arg(long)]
    rotation_weight: Option<f64>,
    #[arg(long)]
    decode_holes_only: bool,
    #[arg(long)]
    max_memory_entries: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                PipelineConfig::from_toml(&text)?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(n_d, a, n_v, temperature, delta, tau, k_scale, bootstrap_depth, rotation_weight);
        if self.decode_holes_only {
            cfg.decode_holes_only = true;
        }
        if self.max_memory_entries.is_some() {
            cfg.max_memory_entries = self.max_memory_entries;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IntrinsicsArgs {
    /// Horizontal field of view in degrees, used when --fx is absent.
    #[arg(long, default_value_t = 90.0)]
    hfov: f64,
    #[arg(long)]
    fx: Option<f64>,
    /// Defaults to fx.
    #[arg(long)]
    fy: Option<f64>,
    /// Defaults to width / 2.
    #[arg(long)]
    cx: Option<f64>,
    /// Defaults to height / 2.
    #[arg(long)]
    cy: Option<f64>,
}

impl IntrinsicsArgs {
    fn build(&self, width: u32, height: u32) -> Result<Intrinsics> {
        let base = Intrinsics::from_fov(self.hfov, width, height)?;
        let fx = self.fx.unwrap_or(base.fx);
        let fy = self.fy.or(self.fx).unwrap_or(base.fy);
        Ok(Intrinsics::new(fx, fy, self.cx.unwrap_or(base.cx), self.cy.unwrap_or(base.cy), width, height)?)
    }
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    image: PathBuf,
    /// Depth map (PFM) of the image.
    #[arg(long, conflicts_with = "constant_depth", required_unless_present = "constant_depth")]
    depth: Option<PathBuf>,
    /// Use this depth everywhere instead of a depth map.
    #[arg(long)]
    constant_depth: Option<f32>,
    /// 12 row-major numbers; identity when absent.
    #[arg(long, allow_hyphen_values = true)]
    pose: Option<String>,
    #[command(flatten)]
    intrinsics: IntrinsicsArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Session directory to create.
    #[arg(long)]
    session: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for frames, depth maps and the timing CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write each step's cost volume as PFM slices under `<out>/cost_volume/`.
    #[arg(long, requires = "out")]
    dump_cost_volume: bool,
}

#[derive(Args)]
struct StepArgs {
    #[arg(long)]
    session: PathBuf,
    /// 12 row-major numbers.
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    #[arg(long, default_value = "")]
    prompt: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long)]
    session: PathBuf,
    /// Pose list file, one pose per line.
    #[arg(long, conflicts_with = "trajectory", required_unless_present = "trajectory")]
    poses: Option<PathBuf>,
    /// Built-in path: panorama, walk_forward or orbit.
    #[arg(long)]
    trajectory: Option<TrajectoryKind>,
    /// Pose count of the built-in path.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Prompt file, one line per pose; empty prompts when absent.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
    /// Leave the session directory unchanged.
    #[arg(long)]
    no_save: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Gaussian scene; needs --width and --height.
    #[arg(long, conflicts_with = "session", required_unless_present = "session")]
    ply: Option<PathBuf>,
    /// Session directory; its intrinsics and tau are used.
    #[arg(long)]
    session: Option<PathBuf>,
    #[arg(long, conflicts_with = "pose", required_unless_present = "pose")]
    poses: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pose: Option<String>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[command(flatten)]
    intrinsics: IntrinsicsArgs,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    /// Grayscale PNG; nonzero marks known pixels, zero marks holes.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out_image: PathBuf,
    #[arg(long)]
    out_depth: PathBuf,
    /// Fill depth when no pixel is known.
    #[arg(long, default_value_t = 2.0)]
    bootstrap_depth: f64,
}

#[derive(Args)]
struct SceneArgs {
    /// room, corridor or plane_field.
    #[arg(long, default_value = "room")]
    scene: SceneKind,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: u32,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Steps after the initial view, along a panorama.
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    timing_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenGtArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value = "panorama")]
    trajectory: TrajectoryKind,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Overrides SPLATLOOP_BIND.
    #[arg(long)]
    bind: Option<String>,
    /// Overrides SPLATLOOP_MAX_SESSIONS.
    #[arg(long)]
    max_sessions: Option<usize>,
    /// Overrides SPLATLOOP_MAX_IMAGE_PIXELS.
    #[arg(long)]
    max_image_pixels: Option<u64>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Init(a) => init(a),
        Command::Step(a) => step(a),
        Command::RunTrajectory(a) => run_trajectory(a),
        Command::Render(a) => render(a),
        Command::Complete(a) => complete(a),
        Command::Bench(a) => bench(a),
        Command::GenGt(a) => gen_gt(a),
        Command::Serve(a) => serve(a),
    }
}

fn frame_name(kind: &str, i: usize, ext: &str) -> String {
    format!("{kind}_{i:04}.{ext}")
}

fn write_render(dir: &Path, i: usize, out: &RenderOutput) -> Result<()> {
    write_image(dir.join(frame_name("frame", i, "png")), &out.color)?;
    write_depth(dir.join(frame_name("depth", i, "pfm")), &out.depth)?;
    Ok(())
}

fn init(a: InitArgs) -> Result<()> {
    let rgb = read_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let depth = match (&a.depth, a.constant_depth) {
        (Some(path), _) => read_depth(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(d)) => DepthMap::filled(rgb.width(), rgb.height(), d),
        (None, None) => unreachable!("clap requires one of --depth and --constant-depth"),
    };
    let pose = a.pose.as_deref().map(parse_pose).transpose()?.unwrap_or_else(Pose::identity);
    let intr = a.intrinsics.build(rgb.width(), rgb.height())?;
    let state = Pipeline::default().init_session(&rgb, &depth, &pose, &intr, a.config.build()?)?;
    save_session(&a.session, &state)?;
    println!("session {} initialized with {} Gaussians", a.session.display(), state.global.len());
    Ok(())
}

/// Runs the steps, writes frames, cost volumes and the timing CSV.
fn run_steps(state: &mut SessionState, poses: &[Pose], prompts: &[String], output: &OutputArgs) -> Result<Vec<StepTiming>> {
    let pipeline = Pipeline::default();
    if let Some(dir) = &output.out {
        fs::create_dir_all(dir)?;
    }
    let mut timings = Vec::with_capacity(poses.len());
    for (i, (pose, prompt)) in poses.iter().zip(prompts).enumerate() {
        let out: StepOutput = pipeline.step(state, pose, prompt).with_context(|| format!("step {}", i + 1))?;
        println!(
            "step {:>3}: +{:>6} Gaussians ({} total), {} hole px, {:.1} ms",
            i + 1,
            out.added,
            state.global.len(),
            out.hole_pixels,
            out.timing.total_ms
        );
        if let Some(dir) = &output.out {
            write_render(dir, i + 1, &out.render)?;
            if output.dump_cost_volume {
                if let Some(cv) = &out.cost_volume {
                    cv.write_pfm_slices(dir.join("cost_volume").join(format!("step_{:04}", i + 1)))?;
                }
            }
        }
        timings.push(out.timing);
    }
    if let Some(dir) = &output.out {
        write_timing_csv(fs::File::create(dir.join("timing.csv"))?, &timings)?;
    }
    Ok(timings)
}

fn step(a: StepArgs) -> Result<()> {
    let mut state = load_session(&a.session)?;
    let pose = parse_pose(&a.pose)?;
    let timings = run_steps(&mut state, &[pose], &[a.prompt], &a.output)?;
    save_session(&a.session, &state)?;
    println!("{}", serde_json::to_string(&timings[0])?);
    Ok(())
}

fn run_trajectory(a: TrajectoryArgs) -> Result<()> {
    let mut state = load_session(&a.session)?;
    let poses = match (&a.poses, a.trajectory) {
        (Some(path), _) => read_pose_list(path)?,
        (None, Some(kind)) => standard_trajectories(kind, a.n),
        (None, None) => unreachable!("clap requires one of --poses and --trajectory"),
    };
    let prompts: Vec<String> = match &a.prompts {
        Some(path) => fs::read_to_string(path)?.lines().map(str::to_string).collect(),
        None => vec![String::new(); poses.len()],
    };
    if prompts.len() != poses.len() {
        bail!("{} poses but {} prompts", poses.len(), prompts.len());
    }
    let timings = run_steps(&mut state, &poses, &prompts, &a.output)?;
    if !a.no_save {
        save_session(&a.session, &state)?;
    }
    print_timing_summary(&timings);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let poses = match (&a.poses, &a.pose) {
        (Some(path), _) => read_pose_list(path)?,
        (None, Some(text)) => vec![parse_pose(text)?],
        (None, None) => unreachable!("clap requires one of --poses and --pose"),
    };
    let (global, intr, tau) = match (&a.ply, &a.session) {
        (Some(path), _) => {
            let (Some(w), Some(h)) = (a.width, a.height) else { bail!("--ply needs --width and --height") };
            (read_ply(path)?, a.intrinsics.build(w, h)?, a.tau)
        }
        (None, Some(dir)) => {
            let state = load_session(dir)?;
            (state.global, state.intrinsics, state.config.tau)
        }
        (None, None) => unreachable!("clap requires one of --ply and --session"),
    };
    fs::create_dir_all(&a.out)?;
    for (i, pose) in poses.iter().enumerate() {
        write_render(&a.out, i, &render_view(&global, pose, &intr, tau))?;
    }
    println!("rendered {} frames of {} Gaussians into {}", poses.len(), global.len(), a.out.display());
    Ok(())
}

fn complete(a: CompleteArgs) -> Result<()> {
    let rgb = read_image(&a.image)?;
    let depth = read_depth(&a.depth)?;
    let mask = read_mask(&a.mask)?;
    let holes = mask.data().iter().filter(|&&k| !k).count();
    let input = CompletionInput::new(rgb, depth, mask)?;
    let opts = HarmonicOptions { bootstrap_depth: a.bootstrap_depth, ..HarmonicOptions::default() };
    let filled = complete_depth_with(&input, &opts);
    write_image(&a.out_image, &inpaint_color(&input))?;
    write_depth(&a.out_depth, &filled.depth)?;
    println!("filled {holes} hole pixels ({} sweeps)", filled.sweeps);
    Ok(())
}

fn synthetic_view(s: &SceneArgs) -> Result<(splatloop::testkit::SyntheticScene, Intrinsics)> {
    Ok((build_synthetic_scene(s.seed, s.scene), Intrinsics::centered(s.size as f64 / 2.0, s.size, s.size)?))
}

fn bench(a: BenchArgs) -> Result<()> {
    let (scene, intr) = synthetic_view(&a.scene)?;
    let (rgb, depth) = render_ground_truth(&scene, &Pose::identity(), &intr);
    let pipeline = Pipeline::default();
    let mut state = pipeline.init_session(&rgb, &depth, &Pose::identity(), &intr, a.config.build()?)?;
    let poses: Vec<Pose> = standard_trajectories(TrajectoryKind::Panorama, 8).into_iter().cycle().skip(1).take(a.steps).collect();
    let mut timings = Vec::with_capacity(a.steps);
    for pose in &poses {
        timings.push(pipeline.step(&mut state, pose, "")?.timing);
    }
    if let Some(path) = &a.timing_csv {
        write_timing_csv(fs::File::create(path)?, &timings)?;
    }
    print_timing_summary(&timings);
    Ok(())
}

fn print_timing_summary(timings: &[StepTiming]) {
    if timings.is_empty() {
        return;
    }
    let n = timings.len() as f64;
    let mean = |f: fn(&StepTiming) -> f64| timings.iter().map(f).sum::<f64>() / n;
    println!("mean over {} steps (ms):", timings.len());
    println!(
        "  render {:.1}  inpaint {:.1}  depth {:.1}  splat {:.1}  fuse {:.1}  total {:.1}",
        mean(|t| t.render_ms),
        mean(|t| t.inpaint_ms),
        mean(|t| t.depth_ms),
        mean(|t| t.stepsplat_ms),
        mean(|t| t.fuse_ms),
        mean(|t| t.total_ms)
    );
    println!(
        "  geometry {:.1}  appearance {:.1}  (reference GPU: geometry {:.0}, appearance {:.0}, total {:.0})",
        mean(StepTiming::geometry_ms),
        mean(StepTiming::appearance_ms),
        reference_timing::GEOMETRY_S * 1e3,
        reference_timing::APPEARANCE_S * 1e3,
        reference_timing::TOTAL_S * 1e3
    );
}

fn gen_gt(a: GenGtArgs) -> Result<()> {
    let (scene, intr) = synthetic_view(&a.scene)?;
    let poses = standard_trajectories(a.trajectory, a.n);
    fs::create_dir_all(&a.out)?;
    for (i, pose) in poses.iter().enumerate() {
        let (rgb, depth) = render_ground_truth(&scene, pose, &intr);
        write_image(a.out.join(frame_name("frame", i, "png")), &rgb)?;
        write_depth(a.out.join(frame_name("depth", i, "pfm")), &depth)?;
    }
    fs::write(a.out.join("poses.txt"), format_pose_list(&poses))?;
    fs::write(a.out.join("intrinsics.json"), serde_json::to_string_pretty(&intr)?)?;
    println!("wrote {} views to {}", poses.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::from_env().map_err(anyhow::Error::msg)?;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(n) = a.max_sessions {
        cfg.max_sessions = n;
    }
    if let Some(n) = a.max_image_pixels {
        cfg.max_image_pixels = n;
    }
    eprintln!("listening on {}", cfg.bind);
    tokio::runtime::Runtime::new()?.block_on(splatloop_service::serve(cfg))?;
    Ok(())
}
