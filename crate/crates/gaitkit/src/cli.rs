//! The `gaitkit` command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 the robot fell.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gaitkit_core::actuator_map::{apply_aliases, fit_torque_model, gear_pitch_diameter, GearSpec};
use gaitkit_core::bayes_opt::{optimize, AcquisitionKind, GainObjective, OptBudget, OptimizerConfig};
use gaitkit_core::perception::{calibrate_extrinsics, detect_blobs, BlobConfig, CalibrationConfig, CameraPose, Intrinsics};
use gaitkit_core::surrogate_sim::{phase_plot_series, run_scenario, standard_test_sequence, RealityGap, Scenario, Segment};
use nalgebra::{UnitQuaternion, Vector3};

use crate::config::{self, ExperimentConfig};
use crate::formats::{self, OptimizationSummary};
use crate::heatmap_io;
use crate::parallel::Parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FELL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gaitkit", version, about = "Gait stabilization experiments on a surrogate humanoid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-loop walking and gain optimization.
    #[command(subcommand)]
    Gait(GaitCommand),
    /// Actuator and camera calibration.
    #[command(subcommand)]
    Calib(CalibCommand),
    /// Detects blobs in PGM or CSV heatmaps.
    Blob(BlobArgs),
    /// Prints the pitch diameter of a helical gear.
    Gear(GearArgs),
    /// Resolves derived joints from alias rules.
    Alias(AliasArgs),
}

#[derive(Debug, Subcommand)]
enum GaitCommand {
    /// Walks a command sequence and writes trace.csv and phase.csv.
    Run(RunArgs),
    /// Tunes the sagittal arm gains against the sim/real plant pair.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Subcommand)]
enum CalibCommand {
    /// Fits torque = K_T * current + offset to a `current_A,torque_Nm` CSV.
    Torque { file: PathBuf },
    /// Estimates camera extrinsics from an `x,y,z,u,v` CSV.
    Camera(CameraArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gains file, applied after --config.
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Added to the plant seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `standard` or a `vx,vy,wz,duration` CSV.
    #[arg(long, default_value = "standard")]
    seq: String,
    /// Impulse push, `IMPULSE@TIMEs:front|back|left|right`. Repeatable.
    #[arg(long, value_parser = formats::parse_disturbance)]
    disturb: Vec<gaitkit_core::surrogate_sim::Disturbance>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AcquisitionArg {
    Entropy,
    Ei,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = OptBudget::default().max_real)]
    max_real: usize,
    #[arg(long, default_value_t = OptBudget::default().max_total)]
    max_total: usize,
    /// Seeds averaged per simulation evaluation.
    #[arg(long, default_value_t = OptBudget::default().sim_average_n)]
    sim_average: usize,
    /// Weight w in the rule "go real iff real score > w * sim score".
    #[arg(long, default_value_t = OptBudget::default().sim_bias_weight)]
    sim_bias: f64,
    #[arg(long, value_enum, default_value_t = AcquisitionArg::Entropy)]
    acquisition: AcquisitionArg,
}

#[derive(Debug, Args)]
struct CameraArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    focal: f64,
    #[arg(long)]
    cx: f64,
    #[arg(long)]
    cy: f64,
    /// Initial camera position and rotation vector, `px,py,pz,rx,ry,rz`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    guess: Vec<f64>,
}

#[derive(Debug, Args)]
struct BlobArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = BlobConfig::default().threshold)]
    threshold: f64,
    /// Skips the 3x3 opening.
    #[arg(long)]
    no_opening: bool,
    #[arg(long, default_value_t = BlobConfig::default().min_pixels)]
    min_pixels: usize,
    /// Detection CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GearArgs {
    #[arg(long)]
    teeth: u32,
    /// mm
    #[arg(long)]
    module: f64,
    #[arg(long, allow_negative_numbers = true)]
    helix_deg: f64,
}

#[derive(Debug, Args)]
struct AliasArgs {
    #[arg(long)]
    rules: PathBuf,
    /// `joint = radians` file.
    #[arg(long)]
    joints: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cmd {
        Command::Gait(GaitCommand::Run(a)) => gait_run(&a, out),
        Command::Gait(GaitCommand::Optimize(a)) => gait_optimize(&a, out),
        Command::Calib(CalibCommand::Torque { file }) => calib_torque(&file, out),
        Command::Calib(CalibCommand::Camera(a)) => calib_camera(&a, out),
        Command::Blob(a) => blob(&a, out),
        Command::Gear(a) => gear(&a, out),
        Command::Alias(a) => alias(&a, out),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_experiment(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for path in [&common.config, &common.gains].into_iter().flatten() {
        config::apply(&read(path)?, &mut cfg).with_context(|| format!("in {}", path.display()))?;
    }
    cfg.plant.seed = cfg.plant.seed.wrapping_add(common.seed);
    Ok(cfg)
}

fn output_file(dir: &Path, name: &str) -> anyhow::Result<fs::File> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))
}

fn load_sequence(spec: &str) -> anyhow::Result<Vec<Segment>> {
    if spec == "standard" {
        return Ok(standard_test_sequence());
    }
    let path = Path::new(spec);
    Ok(formats::parse_sequence_csv(&read(path)?).with_context(|| format!("in {}", path.display()))?)
}

fn gait_run(a: &RunArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_experiment(&a.common)?;
    let seq = load_sequence(&a.seq)?;
    let scenario = Scenario {
        controller: cfg.controller,
        plant: cfg.plant,
        disturbances: a.disturb.clone(),
        ..Default::default()
    };
    let trace = run_scenario(&scenario, &seq)?;
    formats::write_trace_csv(&trace, output_file(&a.common.out, "trace.csv")?)?;
    formats::write_phase_csv(&phase_plot_series(&trace)?, output_file(&a.common.out, "phase.csv")?)?;
    let t_end = trace.samples.last().map_or(0.0, |s| s.t);
    if trace.fallen {
        writeln!(out, "fell at t = {t_end:.2} s")?;
        Ok(EXIT_FELL)
    } else {
        writeln!(out, "completed {t_end:.2} s without a fall")?;
        Ok(EXIT_OK)
    }
}

fn gait_optimize(a: &OptimizeArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_experiment(&a.common)?;
    let mut objective = GainObjective::sagittal_arm(cfg.plant, &RealityGap::standard());
    objective.base_gains = cfg.controller.gains;
    objective.cpg = cfg.controller.cpg;
    let bounds = GainObjective::sagittal_arm_bounds();
    let x_init: Vec<f64> = bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .zip(objective.initial_x())
        .map(|((lo, hi), x)| x.clamp(*lo, *hi))
        .collect();
    let opt = OptimizerConfig {
        budget: OptBudget {
            max_real: a.max_real,
            max_total: a.max_total,
            sim_average_n: a.sim_average,
            sim_bias_weight: a.sim_bias,
        },
        acquisition: match a.acquisition {
            AcquisitionArg::Entropy => AcquisitionKind::default(),
            AcquisitionArg::Ei => AcquisitionKind::ExpectedImprovement,
        },
        ..Default::default()
    };
    let params = objective.params.clone();
    let objective = Parallel(objective);
    let result = optimize(&objective, &opt, &bounds, &x_init, a.common.seed)?;
    let best_gains = objective.0.gains(&result.best.point.x)?;

    formats::write_history_csv(&result.history, &params, output_file(&a.common.out, "history.csv")?)?;
    output_file(&a.common.out, "best_gains.cfg")?.write_all(config::gains_to_string(&best_gains).as_bytes())?;
    let real = result.real_count();
    let summary = OptimizationSummary {
        seed: a.common.seed,
        real_evaluations: real,
        sim_evaluations: result.history.len() - real,
        best_fidelity: result.best.point.fidelity.as_str(),
        best_gains: params.iter().zip(&result.best.point.x).map(|(p, x)| (p.key().to_string(), *x)).collect(),
        j_alpha: result.best.cost.alpha,
        j_beta: result.best.cost.beta,
    };
    serde_json::to_writer_pretty(output_file(&a.common.out, "summary.json")?, &summary)?;
    writeln!(out, "real evaluations: {real}")?;
    writeln!(out, "sim evaluations: {}", summary.sim_evaluations)?;
    for (k, v) in &summary.best_gains {
        writeln!(out, "{k} = {v:.6}")?;
    }
    writeln!(out, "J_alpha = {:.6}", summary.j_alpha)?;
    Ok(EXIT_OK)
}

fn calib_torque(file: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let samples = formats::parse_torque_csv(&read(file)?).with_context(|| format!("in {}", file.display()))?;
    let m = fit_torque_model(&samples)?;
    writeln!(out, "K_T = {:.4} Nm/A", m.torque_constant)?;
    writeln!(out, "offset = {:.4} Nm", m.offset)?;
    Ok(EXIT_OK)
}

fn calib_camera(a: &CameraArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let obs = formats::parse_observations_csv(&read(&a.observations)?).with_context(|| format!("in {}", a.observations.display()))?;
    if a.guess.len() != 6 {
        bail!("--guess needs six values px,py,pz,rx,ry,rz");
    }
    let intrinsics = Intrinsics {
        focal: a.focal,
        cx: a.cx,
        cy: a.cy,
    };
    let guess = CameraPose {
        position: Vector3::new(a.guess[0], a.guess[1], a.guess[2]),
        orientation: UnitQuaternion::from_scaled_axis(Vector3::new(a.guess[3], a.guess[4], a.guess[5])),
        intrinsics,
    };
    let c = calibrate_extrinsics(&obs, intrinsics, &guess, &CalibrationConfig::default())?;
    let p = c.pose.position;
    let r = c.pose.orientation.scaled_axis();
    writeln!(out, "position = {:.6},{:.6},{:.6}", p.x, p.y, p.z)?;
    writeln!(out, "rotation = {:.6},{:.6},{:.6}", r.x, r.y, r.z)?;
    writeln!(out, "rms_error = {:.6} px", c.rms_error)?;
    if !c.converged {
        writeln!(out, "warning: simplex did not converge in {} iterations", c.iterations)?;
    }
    Ok(EXIT_OK)
}

fn blob(a: &BlobArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = BlobConfig {
        threshold: a.threshold,
        opening: !a.no_opening,
        min_pixels: a.min_pixels,
    };
    let mut detections = Vec::new();
    for (channel, path) in a.files.iter().enumerate() {
        let h = heatmap_io::load(path).with_context(|| format!("in {}", path.display()))?;
        detections.extend(detect_blobs(&h, &cfg)?.into_iter().map(|d| (channel, d)));
    }
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
            formats::write_detections_csv(&detections, f)?;
            writeln!(out, "{} detections", detections.len())?;
        }
        None => formats::write_detections_csv(&detections, out)?,
    }
    Ok(EXIT_OK)
}

fn gear(a: &GearArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let g = GearSpec::new(a.teeth, a.module, a.helix_deg.to_radians())?;
    writeln!(out, "{:.3} mm", gear_pitch_diameter(&g))?;
    Ok(EXIT_OK)
}

fn alias(a: &AliasArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let rules = formats::parse_alias_rules(&read(&a.rules)?).with_context(|| format!("in {}", a.rules.display()))?;
    let joints: BTreeMap<String, f64> = formats::parse_joint_values(&read(&a.joints)?).with_context(|| format!("in {}", a.joints.display()))?;
    for (k, v) in apply_aliases(&rules, &joints)? {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(EXIT_OK)
}
