//! `toolkin`: train push policies, evaluate them, and move their averaged
//! trajectories onto a tool of a different length.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod config;
mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use toolkin_core::env::{EnvSpec, EnvVariant};
use toolkin_core::rl::{evaluate, train, Algo, Checkpoint};
use toolkin_core::toolvision::{
    average_length, measure_length, parse_ppm, DetectionSettings, EdgeMode, HsvThresholds,
};
use toolkin_core::trajectory::{
    average_trajectory_with, export_csv, import_csv, record_rollouts, replay, retarget, smooth_filter, AverageMode,
    Trajectory,
};
use toolkin_core::IkSettings;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "toolkin", version, about = "Tool-aware pushing: training, evaluation and trajectory transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write a checkpoint plus its reward curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint over noise-free episodes.
    Eval(EvalArgs),
    /// Record rollouts, average them and export the trajectory as CSV.
    ExportTraj(ExportArgs),
    /// Re-express a trajectory for a tool of another length.
    Retarget(RetargetArgs),
    /// Drive the simulator through a trajectory's waypoints.
    Replay(ReplayArgs),
    /// Measure the tool length from three marker images.
    DetectLength(DetectArgs),
    /// Render a CSV as an SVG plot.
    Plot(PlotArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_from_str::<Algo>)]
    algo: Algo,
    #[arg(long, value_parser = parse_from_str::<EnvVariant>)]
    env: EnvVariant,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    seed: u64,
    /// JSON with optional `env`, `algo` and `chain` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to fine-tune from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reward curve CSV; defaults to the checkpoint path with a `.curve.csv` extension.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Evaluate on another variant instead of the checkpoint's own environment.
    #[arg(long, value_parser = parse_from_str::<EnvVariant>)]
    env: Option<EnvVariant>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Average only episodes that reach the goal.
    #[arg(long)]
    complete_only: bool,
    /// Episode alignment before averaging: `phase` (100 samples) or `timestep`.
    #[arg(long, value_parser = parse_from_str::<AverageMode>, default_value = "phase")]
    average: AverageMode,
    /// Keep every k-th waypoint and drop unreachable ones.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    smooth_k: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct RetargetArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, value_parser = non_negative, allow_negative_numbers = true)]
    real_tool_length: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReplayArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, value_parser = parse_from_str::<EnvVariant>, default_value = "env1")]
    env: EnvVariant,
    /// JSON whose `env` section overrides the environment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeArg {
    Centroid,
    Outer,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long, num_args = 3, required = true)]
    images: Vec<PathBuf>,
    /// Meters per pixel.
    #[arg(long)]
    mpp: f64,
    #[arg(long, default_value_t = HsvThresholds::default().hue_lo)]
    hue_lo: f64,
    #[arg(long, default_value_t = HsvThresholds::default().hue_hi)]
    hue_hi: f64,
    #[arg(long, default_value_t = HsvThresholds::default().sat_min)]
    sat_min: f64,
    #[arg(long, default_value_t = HsvThresholds::default().val_min)]
    val_min: f64,
    #[arg(long, default_value_t = DetectionSettings::default().min_area)]
    min_area: usize,
    #[arg(long, value_enum, default_value_t = EdgeArg::Centroid)]
    edge_mode: EdgeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Curve,
    Traj3d,
    Box,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Input CSV; repeat to overlay several files.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    out: PathBuf,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("tool length must be non-negative, got {s}"))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&read(path)?).with_context(|| format!("parsing checkpoint {}", path.display()))
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    import_csv(&read(path)?).with_context(|| format!("parsing trajectory {}", path.display()))
}

fn curve_csv(ckpt: &Checkpoint) -> String {
    let mut s = String::from("steps,mean_return\n");
    for (step, r) in &ckpt.curve {
        let _ = writeln!(s, "{step},{r}");
    }
    s
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let run = RunConfig::load(a.config.as_deref())?;
    let spec = EnvSpec { variant: a.env, ..run.env };
    let cfg = toolkin_core::rl::AlgoConfig { total_steps: a.steps, seed: a.seed, ..run.algo };
    let init = a.init.as_deref().map(load_checkpoint).transpose()?;
    let ckpt = train(a.algo, &spec, &cfg, init.as_ref())?;
    write(&a.out, ckpt.to_json())?;
    let curve = a.curve.unwrap_or_else(|| a.out.with_extension("curve.csv"));
    write(&curve, curve_csv(&ckpt))?;
    println!("wrote {} ({} steps) and {}", a.out.display(), ckpt.steps_trained, curve.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let spec = match a.env {
        Some(v) => EnvSpec { variant: v, ..ckpt.env.clone() },
        None => ckpt.env.clone(),
    };
    let r = evaluate(&ckpt, &spec, a.episodes as usize)?;
    let csv = format!(
        "episodes,mean_final_distance_m,mean_travel_m,success_rate\n{},{},{},{}\n",
        r.episodes, r.mean_final_distance, r.mean_travel, r.success_rate
    );
    write(&a.out, csv)?;
    println!(
        "episodes {}  final distance {:.4} m  travel {:.4} m  success {:.2}  mean return {:.3}",
        r.episodes, r.mean_final_distance, r.mean_travel, r.success_rate, r.mean_return
    );
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let spec = ckpt.env.clone();
    let runs = record_rollouts(&ckpt, &spec, a.episodes as usize, a.complete_only)?;
    let mut traj = average_trajectory_with(&runs, a.average)?;
    if let Some(k) = a.smooth_k {
        traj = smooth_filter(&traj, k as usize, &spec.chain, spec.tool_length_sim, &IkSettings::default())?;
    }
    write(&a.out, export_csv(&traj))?;
    println!("wrote {} waypoints from {} episodes to {}", traj.len(), runs.len(), a.out.display());
    Ok(())
}

fn cmd_retarget(a: RetargetArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let out = retarget(&traj, a.real_tool_length)?;
    write(&a.out, export_csv(&out))?;
    println!("retargeted {} waypoints from L={} to L={}", out.len(), traj.tool_length, out.tool_length);
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let run = RunConfig::load(a.config.as_deref())?;
    let spec = EnvSpec { variant: a.env, tool_length_sim: traj.tool_length, ..run.env };
    let report = replay(&traj, &spec)?;
    write(&a.report, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "box travel {:.4} m  final box-goal distance {:.4} m  reached {}/{}",
        report.box_travel, report.final_box_goal_distance, report.waypoints_reached, report.waypoints_attempted
    );
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let settings = DetectionSettings {
        thresholds: HsvThresholds { hue_lo: a.hue_lo, hue_hi: a.hue_hi, sat_min: a.sat_min, val_min: a.val_min },
        min_area: a.min_area,
        edge_mode: match a.edge_mode {
            EdgeArg::Centroid => EdgeMode::Centroid,
            EdgeArg::Outer => EdgeMode::Outer,
        },
    };
    let mut lengths = Vec::with_capacity(3);
    for path in &a.images {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let img = parse_ppm(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        let l = measure_length(&img, &settings, a.mpp).with_context(|| format!("measuring {}", path.display()))?;
        println!("{}\t{l:.6}", path.display());
        lengths.push(l);
    }
    let m = average_length(&lengths)?;
    println!("mean\t{:.6}", m.length);
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let svg = match a.kind {
        PlotKind::Traj3d => {
            let trajs = a.inputs.iter().map(|p| load_trajectory(p)).collect::<Result<Vec<_>>>()?;
            plot::traj_svg(&trajs)?
        }
        kind => {
            let tables = a
                .inputs
                .iter()
                .map(|p| plot::read_table(&read(p)?).with_context(|| format!("parsing {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            match kind {
                PlotKind::Curve => plot::curve_svg(&tables)?,
                _ => plot::box_svg(&tables)?,
            }
        }
    };
    write(&a.out, svg)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TOOLKIN_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("TOOLKIN_THREADS='{v}' is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportTraj(a) => cmd_export(a),
        Command::Retarget(a) => cmd_retarget(a),
        Command::Replay(a) => cmd_replay(a),
        Command::DetectLength(a) => cmd_detect(a),
        Command::Plot(a) => cmd_plot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
