//! Fused-angle feedback: deviation filtering, corrective-action activations
//! and their superposition on the open-loop gait.
//!
//! Sagittal deviations (`d_theta`) drive the arm angle Y and CoM shift X
//! actions, lateral deviations (`d_phi`) drive arm angle X, both foot angle
//! actions, CoM shift Y and the timing adjustment. Every activation is a
//! non-negative gain times its feedback term, so a positive deviation always
//! produces a positive activation; the pose offsets are oriented so that a
//! positive activation pushes the torso back towards upright.

use core::ops::Add;

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;

use crate::pose_space::{abstract_to_leg, foot_fk, foot_ik, leg_to_abstract, AbstractLeg, AbstractPose, LegAngles, LegGeometry, LegJoints, Side};
use crate::{Error, Result};

/// Proportional, derivative and integral gains of one action.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pid {
    pub p: f64,
    pub d: f64,
    pub i: f64,
}

impl Pid {
    pub const fn pd(p: f64, d: f64) -> Self {
        Pid { p, d, i: 0.0 }
    }

    pub const fn integral(i: f64) -> Self {
        Pid { p: 0.0, d: 0.0, i }
    }
}

/// Gains of every corrective action. The arm and support-foot actions use
/// P and D, the continuous foot angle and CoM shift use I.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackGains {
    pub arm_angle_x: Pid,
    pub arm_angle_y: Pid,
    pub supp_foot_angle_x: Pid,
    pub cont_foot_angle_x: Pid,
    pub com_shift_x: Pid,
    pub com_shift_y: Pid,
    pub timing_speed_up: f64,
    pub timing_slow_down: f64,
}

impl FeedbackGains {
    pub const ZERO: FeedbackGains = FeedbackGains {
        arm_angle_x: Pid::pd(0.0, 0.0),
        arm_angle_y: Pid::pd(0.0, 0.0),
        supp_foot_angle_x: Pid::pd(0.0, 0.0),
        cont_foot_angle_x: Pid::integral(0.0),
        com_shift_x: Pid::integral(0.0),
        com_shift_y: Pid::integral(0.0),
        timing_speed_up: 0.0,
        timing_slow_down: 0.0,
    };

    /// Hand-tuned starting point for the surrogate plant.
    pub fn tuned_default() -> Self {
        FeedbackGains {
            arm_angle_x: Pid::pd(0.6, 0.02),
            arm_angle_y: Pid::pd(1.0, 0.03),
            supp_foot_angle_x: Pid::pd(0.4, 0.01),
            cont_foot_angle_x: Pid::integral(0.05),
            com_shift_x: Pid::integral(0.01),
            com_shift_y: Pid::integral(0.01),
            timing_speed_up: 0.6,
            timing_slow_down: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pids = [
            self.arm_angle_x,
            self.arm_angle_y,
            self.supp_foot_angle_x,
            self.cont_foot_angle_x,
            self.com_shift_x,
            self.com_shift_y,
        ];
        let ok = pids
            .iter()
            .flat_map(|g| [g.p, g.d, g.i])
            .chain([self.timing_speed_up, self.timing_slow_down])
            .all(|v| v.is_finite() && v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("feedback gains must be finite and non-negative"))
        }
    }
}

/// Shared filter settings for both deviation planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Time constant of the exponential smoothing, s. Zero disables it.
    pub smoothing_time: f64,
    /// Soft deadband applied to the smoothed deviation, rad.
    pub deadband: f64,
    /// Decay rate of the leaky integrator, 1/s.
    pub leak_rate: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            smoothing_time: 0.05,
            deadband: 0.02,
            leak_rate: 0.2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_time.is_finite() && self.smoothing_time >= 0.0) {
            return Err(Error::invalid("smoothing time must be non-negative"));
        }
        if !(self.deadband.is_finite() && self.deadband >= 0.0) {
            return Err(Error::invalid("deadband must be non-negative"));
        }
        if !(self.leak_rate.is_finite() && self.leak_rate > 0.0) {
            return Err(Error::invalid("leak rate must be positive"));
        }
        Ok(())
    }
}

/// Proportional, derivative and integral feedback terms of one plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackTerms {
    pub p: f64,
    pub d: f64,
    pub i: f64,
}

/// Soft deadband: zero inside `[-width, width]`, shifted towards zero outside.
pub fn deadband(value: f64, width: f64) -> f64 {
    if value > width {
        value - width
    } else if value < -width {
        value + width
    } else {
        0.0
    }
}

/// Smoothed, deadbanded and integrated view of one deviation signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationFilter {
    pub config: FilterConfig,
    smoothed: f64,
    derivative: f64,
    integral: f64,
}

impl DeviationFilter {
    pub fn new(config: FilterConfig) -> Self {
        DeviationFilter {
            config,
            smoothed: 0.0,
            derivative: 0.0,
            integral: 0.0,
        }
    }

    pub fn reset(&mut self) {
        *self = DeviationFilter::new(self.config);
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn update(&mut self, deviation: f64, dt: f64) -> FeedbackTerms {
        let cfg = &self.config;
        let alpha = if cfg.smoothing_time > 0.0 {
            1.0 - (-dt / cfg.smoothing_time).exp()
        } else {
            1.0
        };
        let previous = self.smoothed;
        self.smoothed += alpha * (deviation - self.smoothed);
        let raw_rate = (self.smoothed - previous) / dt;
        self.derivative += alpha * (raw_rate - self.derivative);

        let p = deadband(self.smoothed, cfg.deadband);
        // Exact solution of dI/dt = -leak I + P with P held over the step,
        // which keeps |I| <= sup|P| / leak.
        let decay = (-cfg.leak_rate * dt).exp();
        self.integral = self.integral * decay + p * (1.0 - decay) / cfg.leak_rate;

        FeedbackTerms {
            p,
            d: self.derivative,
            i: self.integral,
        }
    }
}

/// Feedback terms of both planes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlaneFeedback {
    /// From `d_theta` (fused pitch).
    pub sagittal: FeedbackTerms,
    /// From `d_phi` (fused roll).
    pub lateral: FeedbackTerms,
}

/// The pair of deviation filters driven by the control loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationFilters {
    pub sagittal: DeviationFilter,
    pub lateral: DeviationFilter,
}

impl DeviationFilters {
    pub fn new(config: FilterConfig) -> Self {
        DeviationFilters {
            sagittal: DeviationFilter::new(config),
            lateral: DeviationFilter::new(config),
        }
    }
}

/// Feeds one pair of deviations through the filters.
pub fn update_filters(filters: &mut DeviationFilters, d_theta: f64, d_phi: f64, dt: f64) -> Result<PlaneFeedback> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("filter step needs dt > 0"));
    }
    if !(d_theta.is_finite() && d_phi.is_finite()) {
        return Err(Error::invalid("deviations must be finite"));
    }
    Ok(PlaneFeedback {
        sagittal: filters.sagittal.update(d_theta, dt),
        lateral: filters.lateral.update(d_phi, dt),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activations {
    /// rad
    pub arm_angle_x: f64,
    /// rad
    pub arm_angle_y: f64,
    /// rad
    pub supp_foot_angle_x: f64,
    /// rad
    pub cont_foot_angle_x: f64,
    /// m
    pub com_shift_x: f64,
    /// m
    pub com_shift_y: f64,
    /// Multiplier on the gait phase increment.
    pub timing_factor: f64,
}

impl Activations {
    pub const NONE: Activations = Activations {
        arm_angle_x: 0.0,
        arm_angle_y: 0.0,
        supp_foot_angle_x: 0.0,
        cont_foot_angle_x: 0.0,
        com_shift_x: 0.0,
        com_shift_y: 0.0,
        timing_factor: 1.0,
    };
}

impl Default for Activations {
    fn default() -> Self {
        Activations::NONE
    }
}

/// Sums the pose offsets; timing factors multiply.
impl Add for Activations {
    type Output = Activations;

    fn add(self, o: Activations) -> Activations {
        Activations {
            arm_angle_x: self.arm_angle_x + o.arm_angle_x,
            arm_angle_y: self.arm_angle_y + o.arm_angle_y,
            supp_foot_angle_x: self.supp_foot_angle_x + o.supp_foot_angle_x,
            cont_foot_angle_x: self.cont_foot_angle_x + o.cont_foot_angle_x,
            com_shift_x: self.com_shift_x + o.com_shift_x,
            com_shift_y: self.com_shift_y + o.com_shift_y,
            timing_factor: self.timing_factor * o.timing_factor,
        }
    }
}

/// Smallest timing factor the speed law may produce.
pub const DEFAULT_MIN_TIMING_FACTOR: f64 = 0.1;

/// Activations from the filtered feedback.
///
/// `outward_sign` is `Side::outward_sign()` of the current support leg:
/// `P_phi * outward_sign > 0` means the robot tips outwards and the gait is
/// slowed down, a negative product (tipping inwards) speeds it up.
pub fn compute_activations(fb: &PlaneFeedback, g: &FeedbackGains, outward_sign: f64, min_timing_factor: f64) -> Activations {
    let pd = |gain: &Pid, t: &FeedbackTerms| gain.p * t.p + gain.d * t.d;
    let (sag, lat) = (&fb.sagittal, &fb.lateral);

    let tilt = lat.p * outward_sign;
    let timing = 1.0 + g.timing_speed_up * (-tilt).max(0.0) - g.timing_slow_down * tilt.max(0.0);

    Activations {
        arm_angle_x: pd(&g.arm_angle_x, lat),
        arm_angle_y: pd(&g.arm_angle_y, sag),
        supp_foot_angle_x: pd(&g.supp_foot_angle_x, lat),
        cont_foot_angle_x: g.cont_foot_angle_x.i * lat.i,
        com_shift_x: g.com_shift_x.i * sag.i,
        com_shift_y: g.com_shift_y.i * lat.i,
        timing_factor: timing.max(min_timing_factor),
    }
}

/// Which pose components were clamped by [`apply_actions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Saturation {
    pub retraction: bool,
    pub reach: bool,
}

impl Saturation {
    pub fn any(&self) -> bool {
        self.retraction || self.reach
    }
}

fn leg_angles(leg: &LegJoints) -> LegAngles {
    LegAngles {
        hip_pitch: leg.hip_pitch,
        hip_roll: leg.hip_roll,
        knee_pitch: leg.knee_pitch,
    }
}

/// Moves the ankle by `offset` (torso frame) and re-expresses the leg with
/// unchanged foot angles.
fn shift_foot(leg: &AbstractLeg, offset: &Vector3<f64>, geom: &LegGeometry, sat: &mut Saturation) -> Result<AbstractLeg> {
    let joints = abstract_to_leg(leg)?;
    let mut target = foot_fk(&leg_angles(&joints), geom) + offset;
    let reach = target.norm();
    let (lo, hi) = (geom.min_reach() + 1e-6, geom.max_reach() - 1e-6);
    if reach > hi || reach < lo {
        target *= reach.clamp(lo, hi) / reach;
        sat.reach = true;
    }
    let ik = foot_ik(&target, geom)?;
    let moved = leg_to_abstract(&LegJoints {
        hip_pitch: ik.hip_pitch,
        hip_roll: ik.hip_roll,
        knee_pitch: ik.knee_pitch,
        ..joints
    });
    Ok(AbstractLeg {
        foot_angle_x: leg.foot_angle_x,
        foot_angle_y: leg.foot_angle_y,
        ..moved
    })
}

/// Superimposes the activations on an open-loop pose.
///
/// Arm offsets apply to both arms, the continuous foot angle to both feet and
/// the support foot angle to `support` only. A CoM shift moves both feet the
/// opposite way through the leg kinematics. Retraction is clamped to
/// `[0, 1]` and the clamp is reported. Timing is not a pose offset; see
/// [`crate::cpg_gait::step_phase`].
pub fn apply_actions(open_loop: &AbstractPose, a: &Activations, support: Side, geom: &LegGeometry) -> Result<(AbstractPose, Saturation)> {
    let mut pose = *open_loop;
    let mut sat = Saturation::default();

    for arm in [&mut pose.left_arm, &mut pose.right_arm] {
        if a.arm_angle_x != 0.0 {
            arm.angle_x += a.arm_angle_x;
        }
        if a.arm_angle_y != 0.0 {
            arm.angle_y += a.arm_angle_y;
        }
    }
    if a.cont_foot_angle_x != 0.0 {
        pose.left_leg.foot_angle_x += a.cont_foot_angle_x;
        pose.right_leg.foot_angle_x += a.cont_foot_angle_x;
    }
    if a.supp_foot_angle_x != 0.0 {
        pose.leg_mut(support).foot_angle_x += a.supp_foot_angle_x;
    }

    for leg in [&mut pose.left_leg, &mut pose.right_leg] {
        if !(0.0..=1.0).contains(&leg.retraction) {
            leg.retraction = leg.retraction.clamp(0.0, 1.0);
            sat.retraction = true;
        }
    }
    for arm in [&mut pose.left_arm, &mut pose.right_arm] {
        if !(0.0..=1.0).contains(&arm.retraction) {
            arm.retraction = arm.retraction.clamp(0.0, 1.0);
            sat.retraction = true;
        }
    }

    if a.com_shift_x != 0.0 || a.com_shift_y != 0.0 {
        let offset = Vector3::new(-a.com_shift_x, -a.com_shift_y, 0.0);
        pose.left_leg = shift_foot(&pose.left_leg, &offset, geom, &mut sat)?;
        pose.right_leg = shift_foot(&pose.right_leg, &offset, geom, &mut sat)?;
    }
    Ok((pose, sat))
}
