//! Desk-scale closed loop around a surrogate torso.
//!
//! The plant is NOT a physics model of a humanoid. Each plane (sagittal
//! pitch, lateral roll) is an inverted pendulum held up by a linear
//! restoring stiffness that stands in for the stepping of a semi-stable
//! open-loop gait:
//!
//! ```text
//! angle'' = w0² sin(angle) - k angle - c rate + excitation + bias
//!           + sum(effectiveness * activation) + noise
//! ```
//!
//! integrated with semi-implicit Euler. It exists so the feedback and
//! optimization layers run against a closed loop with the right interfaces
//! and signs. A second parameter set derived with [`make_real_plant`] plays
//! the part of the real robot.
//!
//! Measurements go through the same path as on hardware: the true attitude
//! is turned into IMU samples, fused by the complementary filter and
//! converted to fused angles before the deviation filters see it.

use alloc::vec::Vec;

use nalgebra::UnitQuaternion;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corrective::{apply_actions, compute_activations, update_filters, Activations, DeviationFilters, FeedbackGains, FilterConfig, PlaneFeedback, Saturation, DEFAULT_MIN_TIMING_FACTOR};
use crate::cpg_gait::{evaluate_cpg, step_phase, CpgParams, GaitCommand, GaitPhase};
use crate::orientation::{fused_deviation, fused_to_quat, FilterState, FusedAngles, ImuSample, GRAVITY};
use crate::pose_space::{abstract_to_joint, AbstractPose, JointPose, LegGeometry};
use crate::{Error, Result};

/// Control and simulation period, s.
pub const DEFAULT_DT: f64 = 0.01;
/// Largest accepted plant step, s.
pub const MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorsoState {
    /// rad
    pub pitch: f64,
    /// rad
    pub roll: f64,
    /// rad/s
    pub pitch_rate: f64,
    /// rad/s
    pub roll_rate: f64,
    /// Latched once either angle exceeds the fall threshold.
    pub fallen: bool,
}

impl TorsoState {
    pub fn attitude(&self) -> UnitQuaternion<f64> {
        fused_to_quat(&FusedAngles::tilt(self.pitch, self.roll)).unwrap_or_else(|_| UnitQuaternion::identity())
    }
}

/// Angular acceleration per unit activation, rad/s². Negative values oppose
/// a positive tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionEffectiveness {
    pub arm_angle_x: f64,
    pub arm_angle_y: f64,
    pub supp_foot_angle_x: f64,
    pub cont_foot_angle_x: f64,
    pub com_shift_x: f64,
    pub com_shift_y: f64,
}

impl Default for ActionEffectiveness {
    fn default() -> Self {
        ActionEffectiveness {
            arm_angle_x: -6.0,
            arm_angle_y: -8.0,
            supp_foot_angle_x: -10.0,
            cont_foot_angle_x: -8.0,
            com_shift_x: -60.0,
            com_shift_y: -60.0,
        }
    }
}

impl ActionEffectiveness {
    fn scaled(&self, k: f64) -> Self {
        ActionEffectiveness {
            arm_angle_x: self.arm_angle_x * k,
            arm_angle_y: self.arm_angle_y * k,
            supp_foot_angle_x: self.supp_foot_angle_x * k,
            cont_foot_angle_x: self.cont_foot_angle_x * k,
            com_shift_x: self.com_shift_x * k,
            com_shift_y: self.com_shift_y * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Inverted pendulum frequency `w0`, rad/s.
    pub natural_freq: f64,
    /// Passive restoring stiffness of the stepping gait, 1/s².
    pub support_stiffness: f64,
    /// 1/s
    pub damping: f64,
    /// Scale of the phase-locked gait excitation, rad/s².
    pub gait_coupling: f64,
    /// Sagittal acceleration per unit forward command, rad/s².
    pub command_lean: f64,
    /// Constant sagittal and lateral disturbance, rad/s².
    pub bias: [f64; 2],
    pub action_effectiveness: ActionEffectiveness,
    /// Standard deviation of the white acceleration noise, rad/s².
    pub noise_std: f64,
    pub seed: u64,
    /// rad
    pub fall_threshold: f64,
    /// Mass and height used to turn impulses into rate changes, kg and m.
    pub effective_mass: f64,
    pub com_height: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            natural_freq: 3.0,
            support_stiffness: 14.0,
            damping: 1.0,
            gait_coupling: 0.6,
            command_lean: 0.5,
            bias: [0.1, -0.05],
            action_effectiveness: ActionEffectiveness::default(),
            noise_std: 1.0,
            seed: 0,
            fall_threshold: 0.7,
            effective_mass: 19.0,
            com_height: 0.6,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.natural_freq,
            self.support_stiffness,
            self.damping,
            self.gait_coupling,
            self.command_lean,
            self.bias[0],
            self.bias[1],
            self.noise_std,
            self.fall_threshold,
            self.effective_mass,
            self.com_height,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("plant parameters must be finite"));
        }
        if self.damping < 0.0 || self.noise_std < 0.0 {
            return Err(Error::invalid("damping and noise must be non-negative"));
        }
        if !(self.fall_threshold > 0.0 && self.effective_mass > 0.0 && self.com_height > 0.0) {
            return Err(Error::invalid("fall threshold, mass and CoM height must be positive"));
        }
        Ok(())
    }

    /// Mechanical energy of the unforced plant, summed over both planes.
    /// Non-increasing under zero excitation, bias and noise whenever
    /// `support_stiffness >= natural_freq²`.
    pub fn energy(&self, s: &TorsoState) -> f64 {
        let w2 = self.natural_freq * self.natural_freq;
        let potential = |x: f64| 0.5 * self.support_stiffness * x * x - w2 * (1.0 - x.cos());
        0.5 * (s.pitch_rate * s.pitch_rate + s.roll_rate * s.roll_rate) + potential(s.pitch) + potential(s.roll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushDirection {
    /// Push arriving from the front, tipping the robot backwards.
    Front,
    Back,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    /// s
    pub time: f64,
    /// kg·m/s
    pub impulse: f64,
    pub direction: PushDirection,
}

impl Disturbance {
    /// Instantaneous `(pitch_rate, roll_rate)` change caused by the push.
    pub fn rate_change(&self, p: &PlantParams) -> (f64, f64) {
        let dv = self.impulse / (p.effective_mass * p.com_height);
        match self.direction {
            PushDirection::Front => (-dv, 0.0),
            PushDirection::Back => (dv, 0.0),
            // Positive roll leans right.
            PushDirection::Left => (0.0, dv),
            PushDirection::Right => (0.0, -dv),
        }
    }
}

/// Phase-locked gait excitation, rad/s².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Excitation {
    pub sagittal: f64,
    pub lateral: f64,
}

/// Excitation produced by walking with `cmd` at phase `mu`.
pub fn gait_excitation(mu: GaitPhase, cmd: &GaitCommand, p: &PlantParams) -> Excitation {
    let m = mu.value();
    Excitation {
        sagittal: p.gait_coupling * (0.3 + cmd.vx.abs()) * (2.0 * m).sin() + p.command_lean * cmd.vx,
        lateral: p.gait_coupling * (1.0 + 0.5 * cmd.vy.abs() + 0.3 * cmd.wz.abs()) * m.sin(),
    }
}

fn action_torque(a: &Activations, e: &ActionEffectiveness) -> (f64, f64) {
    let sagittal = e.arm_angle_y * a.arm_angle_y + e.com_shift_x * a.com_shift_x;
    let lateral = e.arm_angle_x * a.arm_angle_x
        + e.supp_foot_angle_x * a.supp_foot_angle_x
        + e.cont_foot_angle_x * a.cont_foot_angle_x
        + e.com_shift_y * a.com_shift_y;
    (sagittal, lateral)
}

/// One semi-implicit Euler step with an explicit noise sample
/// `(sagittal, lateral)` in rad/s².
pub fn step_plant(
    s: &TorsoState,
    excitation: &Excitation,
    activations: &Activations,
    disturbance: Option<&Disturbance>,
    p: &PlantParams,
    noise: [f64; 2],
    dt: f64,
) -> Result<TorsoState> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::invalid(alloc::format!("plant step {dt} s is outside (0, {MAX_DT}]")));
    }
    if s.fallen {
        return Ok(*s);
    }
    let w2 = p.natural_freq * p.natural_freq;
    let (act_sag, act_lat) = action_torque(activations, &p.action_effectiveness);
    let (kick_sag, kick_lat) = disturbance.map(|d| d.rate_change(p)).unwrap_or((0.0, 0.0));

    let accel = |angle: f64, rate: f64, exc: f64, bias: f64, act: f64, n: f64| {
        w2 * angle.sin() - p.support_stiffness * angle - p.damping * rate + exc + bias + act + n
    };
    let pitch_rate = s.pitch_rate + kick_sag + dt * accel(s.pitch, s.pitch_rate + kick_sag, excitation.sagittal, p.bias[0], act_sag, noise[0]);
    let roll_rate = s.roll_rate + kick_lat + dt * accel(s.roll, s.roll_rate + kick_lat, excitation.lateral, p.bias[1], act_lat, noise[1]);
    let mut next = TorsoState {
        pitch: s.pitch + dt * pitch_rate,
        roll: s.roll + dt * roll_rate,
        pitch_rate,
        roll_rate,
        fallen: false,
    };
    if next.pitch.abs() > p.fall_threshold || next.roll.abs() > p.fall_threshold {
        next.fallen = true;
    }
    Ok(next)
}

/// Plant with its own seeded noise stream.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Plant {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
        })
    }

    pub fn step(&mut self, s: &TorsoState, excitation: &Excitation, activations: &Activations, disturbance: Option<&Disturbance>, dt: f64) -> Result<TorsoState> {
        let sigma = self.params.noise_std;
        let mut draw = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            sigma * z
        };
        let noise = [draw(), draw()];
        step_plant(s, excitation, activations, disturbance, &self.params, noise, dt)
    }
}

/// Fields shared by every run of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub cpg: CpgParams,
    pub gains: FeedbackGains,
    pub filter: FilterConfig,
    pub geometry: LegGeometry,
    /// Nominal fused pitch and roll the deviations are taken against.
    pub expected: FusedAngles,
    pub min_timing_factor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            cpg: CpgParams::default(),
            gains: FeedbackGains::tuned_default(),
            filter: FilterConfig::default(),
            geometry: LegGeometry::default(),
            expected: FusedAngles::IDENTITY,
            min_timing_factor: DEFAULT_MIN_TIMING_FACTOR,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.cpg.validate()?;
        self.gains.validate()?;
        self.filter.validate()?;
        if !(self.min_timing_factor > 0.0 && self.min_timing_factor.is_finite()) {
            return Err(Error::invalid("minimum timing factor must be positive"));
        }
        Ok(())
    }
}

/// Everything one control tick produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Phase the pose was evaluated at.
    pub phase: GaitPhase,
    pub d_theta: f64,
    pub d_phi: f64,
    pub feedback: PlaneFeedback,
    pub activations: Activations,
    pub pose: AbstractPose,
    pub joints: JointPose,
    pub saturation: Saturation,
}

/// Closed-loop gait: CPG, deviation filters and corrective actions.
#[derive(Debug, Clone)]
pub struct GaitController {
    pub config: ControllerConfig,
    phase: GaitPhase,
    filters: DeviationFilters,
}

impl GaitController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(GaitController {
            phase: GaitPhase::ZERO,
            filters: DeviationFilters::new(config.filter),
            config,
        })
    }

    pub fn phase(&self) -> GaitPhase {
        self.phase
    }

    /// Computes the command for this tick and advances the gait phase.
    pub fn step(&mut self, cmd: &GaitCommand, measured: &FusedAngles, dt: f64) -> Result<ControlOutput> {
        let cfg = &self.config;
        let (d_theta, d_phi) = fused_deviation(measured, &cfg.expected);
        let feedback = update_filters(&mut self.filters, d_theta, d_phi, dt)?;
        let support = self.phase.support_leg();
        let activations = compute_activations(&feedback, &cfg.gains, support.outward_sign(), cfg.min_timing_factor);
        let open_loop = evaluate_cpg(self.phase, cmd, &cfg.cpg);
        let (pose, saturation) = apply_actions(&open_loop, &activations, support, &cfg.geometry)?;
        let joints = abstract_to_joint(&pose)?;
        let out = ControlOutput {
            phase: self.phase,
            d_theta,
            d_phi,
            feedback,
            activations,
            pose,
            joints,
            saturation,
        };
        self.phase = step_phase(self.phase, dt, cfg.cpg.nominal_frequency, activations.timing_factor)?;
        Ok(out)
    }
}

/// One leg of a command schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub command: GaitCommand,
    /// s
    pub duration: f64,
}

impl Segment {
    pub fn new(vx: f64, vy: f64, wz: f64, duration: f64) -> Self {
        Segment {
            command: GaitCommand::new(vx, vy, wz),
            duration,
        }
    }
}

/// Forwards, turning left and right while walking, sideways, turning on the
/// spot and finally backwards.
pub fn standard_test_sequence() -> Vec<Segment> {
    alloc::vec![
        Segment::new(0.6, 0.0, 0.0, 4.0),
        Segment::new(0.4, 0.0, 0.5, 2.0),
        Segment::new(0.4, 0.0, -0.5, 2.0),
        Segment::new(0.0, 0.5, 0.0, 3.0),
        Segment::new(0.0, 0.0, 0.6, 2.0),
        Segment::new(-0.4, 0.0, 0.0, 3.0),
    ]
}

pub fn sequence_duration(seq: &[Segment]) -> f64 {
    seq.iter().map(|s| s.duration).sum()
}

fn command_at(seq: &[Segment], t: f64) -> GaitCommand {
    let mut end = 0.0;
    for s in seq {
        end += s.duration;
        if t < end {
            return s.command;
        }
    }
    seq.last().map(|s| s.command).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// s
    pub t: f64,
    pub mu: f64,
    pub state: TorsoState,
    pub d_theta: f64,
    pub d_phi: f64,
    pub activations: Activations,
    /// Proportional fused feedback of the sagittal plane.
    pub e_p_alpha: f64,
    /// Proportional fused feedback of the lateral plane.
    pub e_p_beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Uniformly spaced by `dt`, starting at `t = 0`.
    pub samples: Vec<TraceSample>,
    pub dt: f64,
    /// Set when the run was cut short by a fall; the last sample is the
    /// first fallen state.
    pub fallen: bool,
}

impl RunTrace {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }
}

/// A complete closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub controller: ControllerConfig,
    pub plant: PlantParams,
    pub disturbances: Vec<Disturbance>,
    pub initial_state: TorsoState,
    pub dt: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            controller: ControllerConfig::default(),
            plant: PlantParams::default(),
            disturbances: Vec::new(),
            initial_state: TorsoState::default(),
            dt: DEFAULT_DT,
        }
    }
}

/// Runs the closed loop with default filter, geometry and no disturbances.
pub fn run_sequence(gains: &FeedbackGains, cpg: &CpgParams, seq: &[Segment], plant: &PlantParams) -> Result<RunTrace> {
    let scenario = Scenario {
        controller: ControllerConfig {
            cpg: *cpg,
            gains: *gains,
            ..Default::default()
        },
        plant: *plant,
        ..Default::default()
    };
    run_scenario(&scenario, seq)
}

pub fn run_scenario(scenario: &Scenario, seq: &[Segment]) -> Result<RunTrace> {
    let total = sequence_duration(seq);
    if !(total.is_finite() && total > 0.0) || seq.iter().any(|s| !(s.duration >= 0.0)) {
        return Err(Error::invalid("sequence duration must be positive"));
    }
    let dt = scenario.dt;
    let steps = (total / dt).round() as usize;
    let mut controller = GaitController::new(scenario.controller)?;
    let mut plant = Plant::new(scenario.plant)?;
    let mut imu = FilterState::default();
    let mut state = scenario.initial_state;
    let mut attitude = state.attitude();
    imu.attitude = attitude;

    let mut pending: Vec<Disturbance> = scenario.disturbances.clone();
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_push = 0;

    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let cmd = command_at(seq, t);
        let measured = imu.fused();
        let out = controller.step(&cmd, &measured, dt)?;
        samples.push(TraceSample {
            t,
            mu: out.phase.value(),
            state,
            d_theta: out.d_theta,
            d_phi: out.d_phi,
            activations: out.activations,
            e_p_alpha: out.feedback.sagittal.p,
            e_p_beta: out.feedback.lateral.p,
        });
        if state.fallen || k == steps {
            break;
        }

        let push = if next_push < pending.len() && pending[next_push].time <= t + 0.5 * dt {
            next_push += 1;
            Some(&pending[next_push - 1])
        } else {
            None
        };
        let excitation = gait_excitation(out.phase, &cmd, &plant.params);
        state = plant.step(&state, &excitation, &out.activations, push, dt)?;

        // IMU sample of the motion over this step.
        let next_attitude = state.attitude();
        let gyro = (attitude.inverse() * next_attitude).scaled_axis() / dt;
        let accel = next_attitude.inverse_transform_vector(&nalgebra::Vector3::z()) * GRAVITY;
        imu = imu.update(&ImuSample { gyro, accel, dt })?;
        attitude = next_attitude;
    }

    let fallen = state.fallen;
    if fallen {
        // The fallen sample carries the last feedback values forward.
        if let Some(last) = samples.last_mut() {
            last.state = state;
        }
    }
    Ok(RunTrace { samples, dt, fallen })
}

/// `(fused pitch, fused pitch rate)` pairs of the plant state.
pub fn phase_plot_series(trace: &RunTrace) -> Result<Vec<(f64, f64)>> {
    if trace.samples.is_empty() {
        return Err(Error::invalid("trace is empty"));
    }
    Ok(trace.samples.iter().map(|s| (s.state.pitch, s.state.pitch_rate)).collect())
}

/// Fractional differences between the simulator and the "real" plant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RealityGap {
    /// Relative change of the pendulum frequency.
    pub natural_freq: f64,
    /// Relative change of every action effectiveness.
    pub action_effectiveness: f64,
    /// Added to the constant bias, rad/s².
    pub bias: [f64; 2],
    /// Added to the noise seed.
    pub seed_offset: u64,
}

impl RealityGap {
    /// Gap used by the optimizer experiments.
    pub fn standard() -> Self {
        RealityGap {
            natural_freq: 0.10,
            action_effectiveness: -0.20,
            bias: [0.6, 0.03],
            seed_offset: 0x5EED_0000,
        }
    }
}

/// Deterministically perturbs a simulator parameter set into the "real" one.
pub fn make_real_plant(p: &PlantParams, gap: &RealityGap) -> PlantParams {
    if *gap == RealityGap::default() {
        return *p;
    }
    PlantParams {
        natural_freq: p.natural_freq * (1.0 + gap.natural_freq),
        action_effectiveness: p.action_effectiveness.scaled(1.0 + gap.action_effectiveness),
        bias: [p.bias[0] + gap.bias[0], p.bias[1] + gap.bias[1]],
        seed: p.seed.wrapping_add(gap.seed_offset),
        ..*p
    }
}
