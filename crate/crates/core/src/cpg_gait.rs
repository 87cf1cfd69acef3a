//! Open-loop central pattern generator.
//!
//! The gait phase advances at a constant rate and wraps from `pi` to `-pi`.
//! Each evaluation superimposes periodic waveforms on a halt pose in the
//! abstract space. The left leg swings while its phase `mu` lies in
//! `[0, pi)`, the right leg half a cycle later.

use core::f64::consts::{PI, TAU};

#[allow(unused_imports)]
use num_traits::Float;

use crate::pose_space::{AbstractArm, AbstractLeg, AbstractPose, Side};
use crate::{wrap_angle, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct GaitPhase(f64);

impl GaitPhase {
    pub const ZERO: GaitPhase = GaitPhase(0.0);

    pub fn new(mu: f64) -> Self {
        GaitPhase(wrap_angle(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Phase of one leg within its own cycle, in `[0, 2pi)`.
    pub fn leg_phase(self, side: Side) -> f64 {
        let offset = match side {
            Side::Left => 0.0,
            Side::Right => PI,
        };
        let mut p = (self.0 + offset) % TAU;
        if p < 0.0 {
            p += TAU;
        }
        p
    }

    /// The leg currently carrying the robot: the one outside its swing half.
    pub fn support_leg(self) -> Side {
        if self.leg_phase(Side::Left) < PI {
            Side::Right
        } else {
            Side::Left
        }
    }
}

/// Normalized velocity command; each component is clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaitCommand {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl GaitCommand {
    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        GaitCommand {
            vx: c(vx),
            vy: c(vy),
            wz: c(wz),
        }
    }
}

/// Waveform parameters. Amplitudes are rad unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpgParams {
    pub halt_pose: AbstractPose,
    /// Peak retraction added to a swinging leg, in retraction units.
    pub lift_amplitude: f64,
    /// Sagittal leg swing per unit `vx`.
    pub swing_amplitude: f64,
    /// Lateral hip sway at the gait frequency.
    pub lateral_sway_amplitude: f64,
    /// Lateral leg swing per unit `vy`.
    pub lateral_step_amplitude: f64,
    /// Leg yaw swing per unit `wz`.
    pub turn_amplitude: f64,
    /// Sagittal arm counter-swing per unit `vx`.
    pub arm_swing_amplitude: f64,
    /// Share of each leg's swing half-cycle spent with both feet down, at
    /// each end. Must lie in `[0, 0.5)`.
    pub double_support_fraction: f64,
    /// Hz.
    pub nominal_frequency: f64,
}

impl Default for CpgParams {
    fn default() -> Self {
        let leg = AbstractLeg {
            retraction: 0.1,
            ..Default::default()
        };
        let arm = AbstractArm {
            angle_x: 0.0,
            angle_y: 0.0,
            retraction: 0.2,
        };
        CpgParams {
            halt_pose: AbstractPose {
                left_leg: leg,
                right_leg: leg,
                left_arm: arm,
                right_arm: arm,
            },
            lift_amplitude: 0.08,
            swing_amplitude: 0.15,
            lateral_sway_amplitude: 0.03,
            lateral_step_amplitude: 0.08,
            turn_amplitude: 0.15,
            arm_swing_amplitude: 0.2,
            double_support_fraction: 0.15,
            nominal_frequency: 1.8,
        }
    }
}

impl CpgParams {
    pub fn validate(&self) -> Result<()> {
        let amplitudes = [
            self.lift_amplitude,
            self.swing_amplitude,
            self.lateral_sway_amplitude,
            self.lateral_step_amplitude,
            self.turn_amplitude,
            self.arm_swing_amplitude,
        ];
        if !amplitudes.iter().all(|a| a.is_finite() && *a >= 0.0) {
            return Err(Error::invalid("gait amplitudes must be finite and non-negative"));
        }
        if !(0.0..0.5).contains(&self.double_support_fraction) {
            return Err(Error::invalid("double support fraction must lie in [0, 0.5)"));
        }
        if !(self.nominal_frequency.is_finite() && self.nominal_frequency > 0.0) {
            return Err(Error::invalid("gait frequency must be positive"));
        }
        if !self.halt_pose.components().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("halt pose must be finite"));
        }
        Ok(())
    }

    pub fn max_amplitude(&self) -> f64 {
        [
            self.lift_amplitude,
            self.swing_amplitude,
            self.lateral_sway_amplitude,
            self.lateral_step_amplitude,
            self.turn_amplitude,
            self.arm_swing_amplitude,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Whether the leg's foot is off the ground at this phase.
    pub fn in_swing(&self, mu: GaitPhase, side: Side) -> bool {
        let p = mu.leg_phase(side);
        let margin = self.double_support_fraction * PI;
        p > margin && p < PI - margin
    }
}

/// Advances the gait phase by `2 pi f k dt` and wraps into `(-pi, pi]`.
pub fn step_phase(mu: GaitPhase, dt: f64, frequency: f64, timing_factor: f64) -> Result<GaitPhase> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("phase step needs dt > 0"));
    }
    if !(timing_factor.is_finite() && timing_factor > 0.0) {
        return Err(Error::invalid("timing factor must be positive"));
    }
    Ok(GaitPhase::new(mu.0 + TAU * frequency * timing_factor * dt))
}

fn lift_pulse(leg_phase: f64, double_support_fraction: f64) -> f64 {
    let margin = double_support_fraction * PI;
    if leg_phase <= margin || leg_phase >= PI - margin {
        return 0.0;
    }
    (PI * (leg_phase - margin) / (PI - 2.0 * margin)).sin()
}

/// Open-loop abstract pose at gait phase `mu`.
pub fn evaluate_cpg(mu: GaitPhase, cmd: &GaitCommand, p: &CpgParams) -> AbstractPose {
    let mut pose = p.halt_pose;
    // Torso sway towards the support side, shared by both legs.
    let sway = p.lateral_sway_amplitude * mu.0.sin();

    for side in [Side::Left, Side::Right] {
        let phase = mu.leg_phase(side);
        let c = phase.cos();
        let leg = pose.leg_mut(side);
        leg.retraction += p.lift_amplitude * lift_pulse(phase, p.double_support_fraction);
        // Back to front during swing, front to back during support.
        leg.angle_y += p.swing_amplitude * cmd.vx * c;
        leg.angle_x += sway - p.lateral_step_amplitude * cmd.vy * c;
        leg.angle_z -= p.turn_amplitude * cmd.wz * c;

        let arm = match side {
            Side::Left => &mut pose.left_arm,
            Side::Right => &mut pose.right_arm,
        };
        arm.angle_y -= p.arm_swing_amplitude * cmd.vx * c;
    }
    pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_amplitudes() -> CpgParams {
        CpgParams {
            lift_amplitude: 0.0,
            swing_amplitude: 0.0,
            lateral_sway_amplitude: 0.0,
            lateral_step_amplitude: 0.0,
            turn_amplitude: 0.0,
            arm_swing_amplitude: 0.0,
            ..Default::default()
        }
    }

    fn grid(n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| -PI + TAU * (i as f64 + 0.5) / n as f64)
    }

    #[test]
    fn step_phase_examples() {
        let f = 1.0 / TAU;
        let mu = step_phase(GaitPhase::ZERO, 0.01, f, 2.0).unwrap();
        assert_abs_diff_eq!(mu.value(), 0.02, epsilon = 1e-15);

        let mu = step_phase(GaitPhase::new(PI - 0.01), 0.01, f, 2.0).unwrap();
        assert_abs_diff_eq!(mu.value(), -PI + 0.01, epsilon = 1e-12);

        let single = step_phase(GaitPhase::ZERO, 0.01, 1.0, 1.0).unwrap().value();
        let double = step_phase(GaitPhase::ZERO, 0.01, 1.0, 2.0).unwrap().value();
        assert_abs_diff_eq!(double, 2.0 * single, epsilon = 1e-15);

        assert!(step_phase(GaitPhase::ZERO, 0.01, 1.0, 0.0).is_err());
        assert!(step_phase(GaitPhase::ZERO, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn phase_is_wrapped_into_half_open_interval() {
        assert_eq!(GaitPhase::new(PI).value(), PI);
        assert_abs_diff_eq!(GaitPhase::new(-PI).value(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(GaitPhase::new(3.0 * PI + 0.5).value(), -PI + 0.5, epsilon = 1e-12);
    }

    #[test]
    fn command_is_clamped() {
        assert_eq!(GaitCommand::new(2.0, -3.0, 0.5), GaitCommand { vx: 1.0, vy: -1.0, wz: 0.5 });
    }

    #[test]
    fn zero_amplitudes_give_halt_pose() {
        let p = zero_amplitudes();
        for mu in grid(100) {
            let pose = evaluate_cpg(GaitPhase::new(mu), &GaitCommand::new(0.7, -0.3, 0.4), &p);
            assert_eq!(pose, p.halt_pose);
        }
        let pose = evaluate_cpg(GaitPhase::new(0.3), &GaitCommand::default(), &zero_amplitudes());
        assert_eq!(pose, zero_amplitudes().halt_pose);
    }

    #[test]
    fn lift_waveforms_are_half_cycle_shifted() {
        let p = CpgParams::default();
        for mu in grid(500) {
            let now = evaluate_cpg(GaitPhase::new(mu), &GaitCommand::default(), &p);
            let later = evaluate_cpg(GaitPhase::new(mu + PI), &GaitCommand::default(), &p);
            assert_abs_diff_eq!(now.left_leg.retraction, later.right_leg.retraction, epsilon = 1e-12);
        }
    }

    #[test]
    fn swing_peak_to_peak_matches_command() {
        let p = CpgParams::default();
        let cmd = GaitCommand::new(0.5, 0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for mu in grid(100_000) {
            let y = evaluate_cpg(GaitPhase::new(mu), &cmd, &p).left_leg.angle_y;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        assert_abs_diff_eq!(hi - lo, 2.0 * p.swing_amplitude * 0.5, epsilon = 1e-8);
    }

    #[test]
    fn periodic_in_phase() {
        let p = CpgParams::default();
        let cmd = GaitCommand::new(0.4, 0.3, -0.2);
        for mu in grid(360) {
            let a = evaluate_cpg(GaitPhase::new(mu), &cmd, &p).components();
            let b = evaluate_cpg(GaitPhase::new(mu + TAU), &cmd, &p).components();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn half_cycle_shift_mirrors_pose() {
        let p = CpgParams::default();
        let cmd = GaitCommand::new(0.6, 0.0, 0.0);
        for mu in grid(360) {
            let shifted = evaluate_cpg(GaitPhase::new(mu + PI), &cmd, &p).components();
            let mirrored = evaluate_cpg(GaitPhase::new(mu), &cmd, &p).mirrored().components();
            for (x, y) in shifted.iter().zip(&mirrored) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn waveforms_are_continuous() {
        let p = CpgParams::default();
        let cmd = GaitCommand::new(1.0, 1.0, 1.0);
        let h = 1e-3;
        let bound = 10.0 * p.max_amplitude() * h;
        let mut prev = evaluate_cpg(GaitPhase::new(-PI), &cmd, &p).components();
        let steps = (TAU / h) as usize + 1;
        for i in 1..=steps {
            let next = evaluate_cpg(GaitPhase::new(-PI + i as f64 * h), &cmd, &p).components();
            for (a, b) in prev.iter().zip(&next) {
                assert!((a - b).abs() <= bound, "jump {} at step {i}", (a - b).abs());
            }
            prev = next;
        }
    }

    #[test]
    fn retraction_stays_in_unit_interval() {
        let mut p = CpgParams::default();
        p.lift_amplitude = 1.0 - p.halt_pose.left_leg.retraction;
        for mu in grid(10_000) {
            let pose = evaluate_cpg(GaitPhase::new(mu), &GaitCommand::default(), &p);
            for eta in [pose.left_leg.retraction, pose.right_leg.retraction] {
                assert!((0.0..=1.0).contains(&eta));
            }
        }
    }

    #[test]
    fn support_leg_alternates() {
        assert_eq!(GaitPhase::new(0.5).support_leg(), Side::Right);
        assert_eq!(GaitPhase::new(-0.5).support_leg(), Side::Left);
        let p = CpgParams::default();
        assert!(p.in_swing(GaitPhase::new(1.5), Side::Left));
        assert!(!p.in_swing(GaitPhase::new(1.5), Side::Right));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = CpgParams::default();
        assert!(p.validate().is_ok());
        p.double_support_fraction = 0.5;
        assert!(p.validate().is_err());
        p = CpgParams::default();
        p.swing_amplitude = -0.1;
        assert!(p.validate().is_err());
    }
}
