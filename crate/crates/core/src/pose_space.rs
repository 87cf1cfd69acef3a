//! Joint space, abstract pose space and leg inverse kinematics.
//!
//! Per leg the abstract space uses three leg angles, two foot angles relative
//! to the torso and a retraction `eta` in `[0, 1]`:
//!
//! ```text
//! eta  = 1 - cos(knee / 2)       leg_z = hip_yaw
//! leg_y = hip_pitch + knee / 2   leg_x = hip_roll
//! foot_y = leg_y + ankle_pitch + knee / 2
//! foot_x = leg_x + ankle_roll
//! ```
//!
//! Arms use the same leg-angle and retraction equations with the elbow in the
//! role of the knee. Rotations are right handed about the torso axes (x
//! forwards, y left, z up), so a positive pitch angle swings a limb backwards
//! and a positive roll angle swings it to the left.

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Sign `s` such that `d_phi * s > 0` means the torso is tilting outwards
    /// over a support foot on this side. Positive fused roll leans right.
    pub fn outward_sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegJoints {
    pub hip_yaw: f64,
    pub hip_roll: f64,
    pub hip_pitch: f64,
    pub knee_pitch: f64,
    pub ankle_pitch: f64,
    pub ankle_roll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmJoints {
    pub shoulder_pitch: f64,
    pub shoulder_roll: f64,
    pub elbow_pitch: f64,
}

/// Joint angles of the whole robot, rad.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointPose {
    pub left_leg: LegJoints,
    pub right_leg: LegJoints,
    pub left_arm: ArmJoints,
    pub right_arm: ArmJoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbstractLeg {
    pub angle_x: f64,
    pub angle_y: f64,
    pub angle_z: f64,
    pub foot_angle_x: f64,
    pub foot_angle_y: f64,
    pub retraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbstractArm {
    pub angle_x: f64,
    pub angle_y: f64,
    pub retraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbstractPose {
    pub left_leg: AbstractLeg,
    pub right_leg: AbstractLeg,
    pub left_arm: AbstractArm,
    pub right_arm: AbstractArm,
}

impl AbstractPose {
    pub fn leg(&self, side: Side) -> &AbstractLeg {
        match side {
            Side::Left => &self.left_leg,
            Side::Right => &self.right_leg,
        }
    }

    pub fn leg_mut(&mut self, side: Side) -> &mut AbstractLeg {
        match side {
            Side::Left => &mut self.left_leg,
            Side::Right => &mut self.right_leg,
        }
    }

    /// Left/right mirror image: limbs swap and lateral components flip sign.
    pub fn mirrored(&self) -> AbstractPose {
        let leg = |l: &AbstractLeg| AbstractLeg {
            angle_x: -l.angle_x,
            angle_z: -l.angle_z,
            foot_angle_x: -l.foot_angle_x,
            ..*l
        };
        let arm = |a: &AbstractArm| AbstractArm {
            angle_x: -a.angle_x,
            ..*a
        };
        AbstractPose {
            left_leg: leg(&self.right_leg),
            right_leg: leg(&self.left_leg),
            left_arm: arm(&self.right_arm),
            right_arm: arm(&self.left_arm),
        }
    }

    /// Every component, legs first, in a fixed order.
    pub fn components(&self) -> [f64; 18] {
        let (l, r, la, ra) = (&self.left_leg, &self.right_leg, &self.left_arm, &self.right_arm);
        [
            l.angle_x,
            l.angle_y,
            l.angle_z,
            l.foot_angle_x,
            l.foot_angle_y,
            l.retraction,
            r.angle_x,
            r.angle_y,
            r.angle_z,
            r.foot_angle_x,
            r.foot_angle_y,
            r.retraction,
            la.angle_x,
            la.angle_y,
            la.retraction,
            ra.angle_x,
            ra.angle_y,
            ra.retraction,
        ]
    }
}

impl JointPose {
    pub fn mirrored(&self) -> JointPose {
        let leg = |l: &LegJoints| LegJoints {
            hip_yaw: -l.hip_yaw,
            hip_roll: -l.hip_roll,
            ankle_roll: -l.ankle_roll,
            ..*l
        };
        let arm = |a: &ArmJoints| ArmJoints {
            shoulder_roll: -a.shoulder_roll,
            ..*a
        };
        JointPose {
            left_leg: leg(&self.right_leg),
            right_leg: leg(&self.left_leg),
            left_arm: arm(&self.right_arm),
            right_arm: arm(&self.left_arm),
        }
    }
}

// 1 - cos(a/2) == 2 sin²(a/4); the sine form keeps full relative precision
// for nearly straight limbs.
fn retraction_of(bend: f64) -> f64 {
    let s = (0.25 * bend).sin();
    2.0 * s * s
}

fn bend_of(retraction: f64) -> f64 {
    4.0 * (0.5 * retraction).sqrt().asin()
}

fn check_retraction(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("retraction {eta} is outside [0, 1]")))
    }
}

pub fn leg_to_abstract(j: &LegJoints) -> AbstractLeg {
    let half_knee = 0.5 * j.knee_pitch;
    let angle_y = j.hip_pitch + half_knee;
    AbstractLeg {
        angle_x: j.hip_roll,
        angle_y,
        angle_z: j.hip_yaw,
        foot_angle_x: j.hip_roll + j.ankle_roll,
        foot_angle_y: angle_y + j.ankle_pitch + half_knee,
        retraction: retraction_of(j.knee_pitch),
    }
}

pub fn abstract_to_leg(a: &AbstractLeg) -> Result<LegJoints> {
    check_retraction(a.retraction)?;
    let knee = bend_of(a.retraction);
    let half_knee = 0.5 * knee;
    Ok(LegJoints {
        hip_yaw: a.angle_z,
        hip_roll: a.angle_x,
        hip_pitch: a.angle_y - half_knee,
        knee_pitch: knee,
        ankle_pitch: a.foot_angle_y - a.angle_y - half_knee,
        ankle_roll: a.foot_angle_x - a.angle_x,
    })
}

pub fn arm_to_abstract(j: &ArmJoints) -> AbstractArm {
    AbstractArm {
        angle_x: j.shoulder_roll,
        angle_y: j.shoulder_pitch + 0.5 * j.elbow_pitch,
        retraction: retraction_of(j.elbow_pitch),
    }
}

pub fn abstract_to_arm(a: &AbstractArm) -> Result<ArmJoints> {
    check_retraction(a.retraction)?;
    let elbow = bend_of(a.retraction);
    Ok(ArmJoints {
        shoulder_pitch: a.angle_y - 0.5 * elbow,
        shoulder_roll: a.angle_x,
        elbow_pitch: elbow,
    })
}

pub fn joint_to_abstract(j: &JointPose) -> AbstractPose {
    AbstractPose {
        left_leg: leg_to_abstract(&j.left_leg),
        right_leg: leg_to_abstract(&j.right_leg),
        left_arm: arm_to_abstract(&j.left_arm),
        right_arm: arm_to_abstract(&j.right_arm),
    }
}

pub fn abstract_to_joint(a: &AbstractPose) -> Result<JointPose> {
    Ok(JointPose {
        left_leg: abstract_to_leg(&a.left_leg)?,
        right_leg: abstract_to_leg(&a.right_leg)?,
        left_arm: abstract_to_arm(&a.left_arm)?,
        right_arm: abstract_to_arm(&a.right_arm)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    /// Hip to knee, m.
    pub thigh_length: f64,
    /// Knee to ankle, m.
    pub shank_length: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        LegGeometry {
            thigh_length: 0.30,
            shank_length: 0.30,
        }
    }
}

impl LegGeometry {
    pub fn new(thigh_length: f64, shank_length: f64) -> Result<Self> {
        if thigh_length > 0.0 && shank_length > 0.0 {
            Ok(LegGeometry {
                thigh_length,
                shank_length,
            })
        } else {
            Err(Error::invalid("link lengths must be positive"))
        }
    }

    pub fn max_reach(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    pub fn min_reach(&self) -> f64 {
        (self.thigh_length - self.shank_length).abs()
    }
}

/// Hip pitch, hip roll and knee pitch that place the ankle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegAngles {
    pub hip_pitch: f64,
    pub hip_roll: f64,
    pub knee_pitch: f64,
}

const REACH_MARGIN: f64 = 1e-9;

/// Ankle position relative to the hip for the given angles.
pub fn foot_fk(angles: &LegAngles, geom: &LegGeometry) -> Vector3<f64> {
    let shank_angle = angles.hip_pitch + angles.knee_pitch;
    let forward = -geom.thigh_length * angles.hip_pitch.sin() - geom.shank_length * shank_angle.sin();
    let down = geom.thigh_length * angles.hip_pitch.cos() + geom.shank_length * shank_angle.cos();
    let (sr, cr) = angles.hip_roll.sin_cos();
    Vector3::new(forward, sr * down, -cr * down)
}

/// Inverse kinematics of the ankle point, hip roll first and then a planar
/// two-link solution in the rolled leg plane.
pub fn foot_ik(target: &Vector3<f64>, geom: &LegGeometry) -> Result<LegAngles> {
    if !target.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("target must be finite"));
    }
    let reach = target.norm();
    let max = geom.max_reach() - REACH_MARGIN;
    let min = geom.min_reach() + REACH_MARGIN;
    if reach > max {
        return Err(Error::OutOfReach(alloc::format!(
            "distance {reach} m exceeds maximum reach {max} m"
        )));
    }
    if reach < min {
        return Err(Error::OutOfReach(alloc::format!(
            "distance {reach} m is below minimum reach {min} m"
        )));
    }
    let (a, b) = (geom.thigh_length, geom.shank_length);
    let hip_roll = target.y.atan2(-target.z);
    let down = target.y.hypot(target.z);
    // Direction of the hip-ankle line from straight down, positive backwards.
    let line = (-target.x).atan2(down);
    let cos_inner = ((a * a + b * b - reach * reach) / (2.0 * a * b)).clamp(-1.0, 1.0);
    let knee_pitch = core::f64::consts::PI - cos_inner.acos();
    let cos_hip = ((a * a + reach * reach - b * b) / (2.0 * a * reach)).clamp(-1.0, 1.0);
    Ok(LegAngles {
        hip_pitch: line - cos_hip.acos(),
        hip_roll,
        knee_pitch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_leg(rng: &mut ChaCha8Rng) -> LegJoints {
        LegJoints {
            hip_yaw: rng.random_range(-1.0..1.0),
            hip_roll: rng.random_range(-1.0..1.0),
            hip_pitch: rng.random_range(-1.5..1.5),
            knee_pitch: rng.random_range(0.0..PI),
            ankle_pitch: rng.random_range(-1.5..1.5),
            ankle_roll: rng.random_range(-1.0..1.0),
        }
    }

    #[test]
    fn zero_joints_map_to_zero_abstract_pose() {
        let a = joint_to_abstract(&JointPose::default());
        assert!(a.components().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn right_angle_knee() {
        let j = JointPose {
            left_leg: LegJoints {
                knee_pitch: FRAC_PI_2,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = joint_to_abstract(&j);
        assert_abs_diff_eq!(a.left_leg.retraction, 1.0 - FRAC_PI_4.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.left_leg.retraction, 0.29289, epsilon = 1e-5);
        assert_abs_diff_eq!(a.left_leg.angle_y, FRAC_PI_4, epsilon = 1e-15);

        let back = abstract_to_leg(&AbstractLeg {
            retraction: 1.0 - FRAC_PI_4.cos(),
            ..Default::default()
        })
        .unwrap();
        assert_abs_diff_eq!(back.knee_pitch, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn foot_angle_arithmetic() {
        let a = leg_to_abstract(&LegJoints {
            hip_pitch: 0.1,
            knee_pitch: 0.2,
            ankle_pitch: -0.3,
            ..Default::default()
        });
        assert_abs_diff_eq!(a.angle_y, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(a.foot_angle_y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_abstract_pose_gives_zero_joints() {
        let j = abstract_to_joint(&AbstractPose::default()).unwrap();
        assert_eq!(j, JointPose::default());
    }

    #[test]
    fn retraction_out_of_range_is_rejected() {
        for eta in [-0.01, 1.01, f64::NAN] {
            let a = AbstractPose {
                right_arm: AbstractArm {
                    retraction: eta,
                    ..Default::default()
                },
                ..Default::default()
            };
            assert!(matches!(abstract_to_joint(&a), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn abstract_round_trip_on_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = AbstractLeg {
                angle_x: rng.random_range(-1.0..1.0),
                angle_y: rng.random_range(-1.0..1.0),
                angle_z: rng.random_range(-1.0..1.0),
                foot_angle_x: rng.random_range(-1.0..1.0),
                foot_angle_y: rng.random_range(-1.0..1.0),
                retraction: rng.random_range(0.0..=1.0),
            };
            let back = leg_to_abstract(&abstract_to_leg(&a).unwrap());
            for (x, y) in [
                (a.angle_x, back.angle_x),
                (a.angle_y, back.angle_y),
                (a.angle_z, back.angle_z),
                (a.foot_angle_x, back.foot_angle_x),
                (a.foot_angle_y, back.foot_angle_y),
                (a.retraction, back.retraction),
            ] {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn joint_round_trip_on_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let leg = random_leg(&mut rng);
            let back = abstract_to_leg(&leg_to_abstract(&leg)).unwrap();
            assert_abs_diff_eq!(back.knee_pitch, leg.knee_pitch, epsilon = 1e-9);
            assert_abs_diff_eq!(back.hip_pitch, leg.hip_pitch, epsilon = 1e-9);
            assert_abs_diff_eq!(back.ankle_pitch, leg.ankle_pitch, epsilon = 1e-9);
        }
    }

    #[test]
    fn retraction_is_monotone_in_knee() {
        let mut prev = -1.0;
        for i in 0..10_000 {
            let knee = PI * i as f64 / 10_000.0;
            let eta = retraction_of(knee);
            assert!(eta > prev);
            prev = eta;
        }
    }

    #[test]
    fn mirror_commutes_with_abstraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let j = JointPose {
                left_leg: random_leg(&mut rng),
                right_leg: random_leg(&mut rng),
                left_arm: ArmJoints {
                    shoulder_pitch: rng.random_range(-1.0..1.0),
                    shoulder_roll: rng.random_range(-1.0..1.0),
                    elbow_pitch: rng.random_range(0.0..PI),
                },
                right_arm: ArmJoints {
                    shoulder_pitch: rng.random_range(-1.0..1.0),
                    shoulder_roll: rng.random_range(-1.0..1.0),
                    elbow_pitch: rng.random_range(0.0..PI),
                },
            };
            assert_eq!(joint_to_abstract(&j.mirrored()), joint_to_abstract(&j).mirrored());
        }
    }

    #[test]
    fn extended_leg_straight_down() {
        let g = LegGeometry::default();
        let target = Vector3::new(0.0, 0.0, -(g.max_reach() - 1e-6));
        let s = foot_ik(&target, &g).unwrap();
        assert_abs_diff_eq!(s.knee_pitch, 0.0, epsilon = 1e-2);
        assert_abs_diff_eq!(s.hip_pitch, 0.0, epsilon = 1e-2);
        assert_abs_diff_eq!(s.hip_roll, 0.0, epsilon = 1e-12);
        assert!((foot_fk(&s, &g) - target).norm() < 1e-9);
    }

    #[test]
    fn equal_links_at_one_link_length_fold_to_two_thirds_pi() {
        let g = LegGeometry::default();
        // Law of cosines: r² = a² + b² - 2ab cos(inner); r = a = b gives
        // inner = pi/3, so the knee bends by pi - pi/3.
        let target = Vector3::new(0.0, 0.0, -g.thigh_length);
        let s = foot_ik(&target, &g).unwrap();
        assert_abs_diff_eq!(s.knee_pitch, 2.0 * PI / 3.0, epsilon = 1e-12);
        assert!((foot_fk(&s, &g) - target).norm() < 1e-12);
    }

    #[test]
    fn lateral_offset_sets_hip_roll() {
        let g = LegGeometry::default();
        let target = Vector3::new(0.0, 0.05, -0.5);
        let s = foot_ik(&target, &g).unwrap();
        assert_abs_diff_eq!(s.hip_roll, 0.05f64.atan2(0.5), epsilon = 1e-15);
        assert!((foot_fk(&s, &g) - target).norm() < 1e-12);
    }

    #[test]
    fn unreachable_targets_name_the_bound() {
        let g = LegGeometry::new(0.3, 0.2).unwrap();
        match foot_ik(&Vector3::new(0.0, 0.0, -0.6), &g) {
            Err(Error::OutOfReach(msg)) => assert!(msg.contains("maximum")),
            other => panic!("unexpected {other:?}"),
        }
        match foot_ik(&Vector3::new(0.0, 0.0, -0.05), &g) {
            Err(Error::OutOfReach(msg)) => assert!(msg.contains("minimum")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ik_matches_fk_on_random_reachable_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = LegGeometry::new(0.32, 0.28).unwrap();
        let mut checked = 0;
        while checked < 1000 {
            let target = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.6..-0.05),
            );
            let r = target.norm();
            if r > g.max_reach() - 1e-6 || r < g.min_reach() + 1e-6 {
                continue;
            }
            checked += 1;
            let s = foot_ik(&target, &g).unwrap();
            assert!(s.knee_pitch >= 0.0 && s.knee_pitch < PI);
            assert!((foot_fk(&s, &g) - target).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn arm_round_trip(
            pitch in -2.0f64..2.0, roll in -2.0f64..2.0, elbow in 0.0f64..3.14,
        ) {
            let j = ArmJoints { shoulder_pitch: pitch, shoulder_roll: roll, elbow_pitch: elbow };
            let back = abstract_to_arm(&arm_to_abstract(&j)).unwrap();
            prop_assert!((back.shoulder_pitch - pitch).abs() < 1e-9);
            prop_assert!((back.shoulder_roll - roll).abs() < 1e-9);
            prop_assert!((back.elbow_pitch - elbow).abs() < 1e-9);
        }
    }
}
