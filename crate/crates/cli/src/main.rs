//! splatsim: load Gaussian scenes, edit them, run the MPM pipeline,
//! render splats, export point clouds and extract ground planes.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Deserialize;

use splatsim_core::demo::{synth_demo_scene, DemoParams};
use splatsim_core::edit::{apply_edits, EditCommand};
use splatsim_core::ground::{
    filter_near_projection, make_halfspace_collider, ransac_plane, Aabb,
};
use splatsim_core::io::{
    load_scene, ply, ppm, run_pipeline, save_scene, write_atomic, CameraSpec, ColliderSpec,
    RunOptions,
};
use splatsim_core::render::{export_point_cloud, render_primitives};
use splatsim_core::scene::Scene;

#[derive(Parser)]
#[command(
    name = "splatsim",
    about = "Physics-aware Gaussian-splat scene simulator",
    version
)]
struct Cli {
    /// Seed for randomized operations (demo generation, RANSAC).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for rendering; 0 is the serial reference mode.
    /// Defaults to the SPLATSIM_THREADS environment variable, else 0.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the built-in synthetic scene (box vehicles on a ground patch).
    SynthDemo(SynthDemoArgs),
    /// Render a scene at one time instant to PPM images.
    Render(RenderArgs),
    /// Apply an edit script to a scene file.
    Edit(EditArgs),
    /// Run the full pipeline: edit, simulate, render, export, manifest.
    Simulate(SimulateArgs),
    /// Export the composed scene as a colored PLY point cloud.
    ExportPc(ExportPcArgs),
    /// Fit a ground plane to a PLY cloud with RANSAC.
    ExtractGround(ExtractGroundArgs),
}

#[derive(Args)]
struct SynthDemoArgs {
    /// Output scene path (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    vehicles: usize,
    #[arg(long, default_value_t = 1000)]
    per_vehicle: usize,
    /// Ground patch side count (background splats = side^2).
    #[arg(long, default_value_t = 24)]
    background: usize,
    /// Row spacing along x in meters.
    #[arg(long, default_value_t = 8.0)]
    gap: f64,
    /// Lane half-offset along y in meters.
    #[arg(long, default_value_t = 2.5)]
    lane_offset: f64,
    /// Collapse each vehicle onto a single z plane.
    #[arg(long, default_value_t = false)]
    flat: bool,
    /// Attach a time-varying appearance series to the first vehicle.
    #[arg(long, default_value_t = false)]
    fourier: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Scene time to compose at (seconds).
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    /// JSON camera list; a framing default is used when omitted.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 320)]
    width: u32,
    #[arg(long, default_value_t = 240)]
    height: u32,
    /// Output directory for cam{i}_frame0.ppm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON array of edit commands.
    #[arg(long)]
    edits: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for frames, point clouds and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportPcArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractGroundArgs {
    /// Input point cloud (ascii PLY).
    #[arg(long)]
    input: PathBuf,
    /// JSON array of {"min": [..], "max": [..]} boxes; all points are
    /// used when omitted.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Footprint expansion around each box (meters).
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    /// Inlier distance threshold (meters).
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Output plane (a scenario collider block plus inlier count).
    #[arg(long)]
    out: PathBuf,
    /// Optional copy of the cloud with inliers colored red.
    #[arg(long)]
    colored: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn thread_count(cli_threads: Option<usize>) -> usize {
    cli_threads.unwrap_or_else(|| {
        std::env::var("SPLATSIM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    })
}

fn run(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads);
    match cli.command {
        Command::SynthDemo(args) => synth_demo(&args, cli.seed),
        Command::Render(args) => render(&args, threads, cli.verbose),
        Command::Edit(args) => edit(&args),
        Command::Simulate(args) => simulate(&args, threads, cli.verbose),
        Command::ExportPc(args) => export_pc(&args),
        Command::ExtractGround(args) => extract_ground(&args, cli.seed, cli.verbose),
    }
}

fn synth_demo(args: &SynthDemoArgs, seed: u64) -> Result<()> {
    let scene = synth_demo_scene(&DemoParams {
        vehicles: args.vehicles,
        per_vehicle: args.per_vehicle,
        background: args.background,
        gap: args.gap,
        lane_offset: args.lane_offset,
        flat: args.flat,
        fourier_on_first: args.fourier,
        seed,
        ..DemoParams::default()
    });
    save_scene(&scene, &args.out).context("write scene")?;
    println!(
        "wrote {} ({} objects, {} background splats)",
        args.out.display(),
        scene.objects.len(),
        scene.background.len()
    );
    Ok(())
}

/// Framing camera: looks at the composed cloud's center from an oblique
/// southwest position scaled to the cloud extent.
fn default_camera(scene: &Scene, time: f64, width: u32, height: u32) -> CameraSpec {
    let cloud = scene.compose_at(time);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &cloud {
        lo = lo.inf(&p.mean);
        hi = hi.sup(&p.mean);
    }
    if !lo.x.is_finite() {
        lo = Vector3::zeros();
        hi = Vector3::zeros();
    }
    let center = (lo + hi) * 0.5;
    let diag = (hi - lo).norm().max(1.0);
    let position = center + Vector3::new(-0.45, -0.8, 0.35) * diag;
    CameraSpec {
        position: position.into(),
        look_at: center.into(),
        up: [0.0, 0.0, 1.0],
        fov_y_deg: 50.0,
        resolution: [width, height],
        near_clip: 0.05,
    }
}

fn render(args: &RenderArgs, threads: usize, verbose: bool) -> Result<()> {
    let scene = load_scene(&args.scene).context("load scene")?;
    let cameras: Vec<CameraSpec> = match &args.cameras {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("read {}", path.display()))?;
            serde_json::from_str(&text).context("parse camera list")?
        }
        None => vec![default_camera(&scene, args.time, args.width, args.height)],
    };
    std::fs::create_dir_all(&args.out).context("create output directory")?;
    let composed = scene.compose_at(args.time);
    for (ci, spec) in cameras.iter().enumerate() {
        let fb = render_primitives(&composed, &spec.to_camera(), threads);
        let bytes = ppm::encode(fb.width, fb.height, &fb.to_rgb8());
        let path = args.out.join(format!("cam{ci}_frame0.ppm"));
        write_atomic(&path, &bytes).context("write frame")?;
        if verbose {
            eprintln!("wrote {}", path.display());
        }
    }
    println!("rendered {} camera(s) at t = {}", cameras.len(), args.time);
    Ok(())
}

fn edit(args: &EditArgs) -> Result<()> {
    let scene = load_scene(&args.scene).context("load scene")?;
    let text = std::fs::read_to_string(&args.edits)
        .with_context(|| format!("read {}", args.edits.display()))?;
    let commands: Vec<EditCommand> = serde_json::from_str(&text).context("parse edit script")?;
    let edited = apply_edits(&scene, &commands).context("apply edits")?;
    save_scene(&edited, &args.out).context("write scene")?;
    println!(
        "applied {} edit(s); scene now has {} object(s)",
        commands.len(),
        edited.objects.len()
    );
    Ok(())
}

fn simulate(args: &SimulateArgs, threads: usize, verbose: bool) -> Result<()> {
    let options = RunOptions { threads, verbose };
    let manifest = run_pipeline(&args.scene, &args.scenario, &args.out, &options)?;
    println!(
        "wrote {} artifact(s) over {} frame(s) to {}",
        manifest.artifacts.len(),
        manifest.frames.len(),
        args.out.display()
    );
    Ok(())
}

fn export_pc(args: &ExportPcArgs) -> Result<()> {
    let scene = load_scene(&args.scene).context("load scene")?;
    let cloud = export_point_cloud(&scene.compose_at(args.time));
    let points: Vec<ply::PlyPoint> = cloud
        .iter()
        .map(|p| ply::PlyPoint {
            position: p.position,
            color: Some(p.color),
        })
        .collect();
    write_atomic(&args.out, ply::write_points(&points).as_bytes()).context("write ply")?;
    println!("wrote {} points to {}", points.len(), args.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct BoxSpec {
    min: [f64; 3],
    max: [f64; 3],
}

fn extract_ground(args: &ExtractGroundArgs, seed: u64, verbose: bool) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("read {}", args.input.display()))?;
    let cloud = ply::parse_points(&text).context("parse ply")?;
    let positions: Vec<Vector3<f64>> = cloud.iter().map(|p| p.position).collect();

    let (candidates, candidate_points): (Vec<usize>, Vec<Vector3<f64>>) = match &args.boxes {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("read {}", path.display()))?;
            let boxes: Vec<BoxSpec> = serde_json::from_str(&text).context("parse boxes")?;
            let aabbs: Vec<Aabb> = boxes
                .iter()
                .map(|b| Aabb {
                    min: Vector3::from(b.min),
                    max: Vector3::from(b.max),
                })
                .collect();
            let idx = filter_near_projection(&positions, &aabbs, args.margin);
            let pts = idx.iter().map(|&i| positions[i]).collect();
            (idx, pts)
        }
        None => ((0..positions.len()).collect(), positions.clone()),
    };
    if verbose {
        eprintln!(
            "{} of {} points inside projected footprints",
            candidates.len(),
            positions.len()
        );
    }
    if candidate_points.len() < 3 {
        bail!(
            "only {} candidate point(s) after footprint filtering",
            candidate_points.len()
        );
    }

    let plane = ransac_plane(&candidate_points, args.threshold, args.iterations, seed)
        .context("ransac")?;
    let collider = make_halfspace_collider(&plane, &Vector3::z()).context("orient plane")?;
    let spec = ColliderSpec::from_collider(&collider);
    let payload = serde_json::json!({
        "normal": spec.normal,
        "offset": spec.offset,
        "mode": spec.mode,
        "friction": spec.friction,
        "inlier_count": plane.inliers.len(),
    });
    write_atomic(
        &args.out,
        serde_json::to_string_pretty(&payload)
            .expect("plane serializes")
            .as_bytes(),
    )
    .context("write plane")?;
    println!(
        "plane n = [{:.6}, {:.6}, {:.6}], offset = {:.6}, {} inliers",
        spec.normal[0],
        spec.normal[1],
        spec.normal[2],
        spec.offset,
        plane.inliers.len()
    );

    if let Some(colored_path) = &args.colored {
        // inlier indices refer to the filtered subset; map them back
        let mut is_inlier = vec![false; positions.len()];
        for &local in &plane.inliers {
            is_inlier[candidates[local]] = true;
        }
        let points: Vec<ply::PlyPoint> = cloud
            .iter()
            .enumerate()
            .map(|(i, p)| ply::PlyPoint {
                position: p.position,
                color: Some(if is_inlier[i] {
                    [255, 0, 0]
                } else {
                    p.color.unwrap_or([160, 160, 160])
                }),
            })
            .collect();
        write_atomic(colored_path, ply::write_points(&points).as_bytes())
            .context("write colored ply")?;
        if verbose {
            eprintln!("wrote {}", colored_path.display());
        }
    }
    Ok(())
}
