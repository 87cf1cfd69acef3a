//! Fused angles and attitude estimation.
//!
//! Rotations map body coordinates to global coordinates. The fused pitch and
//! roll are read off the global z-axis expressed in the body frame,
//! `z_B = R^T e_z`: `sin(pitch) = -z_B.x`, `sin(roll) = z_B.y` and the
//! hemisphere is the sign of `z_B.z`. Positive pitch leans the torso
//! forwards (about +y), positive roll leans it to the right (about +x).
//! The fused yaw is `2 atan2(q.z, q.w)`, the heading of the rotation once the
//! tilt about a horizontal axis is removed.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{wrap_angle, Error, Result};

/// Tolerance on `|q| - 1` accepted by the conversions.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Accelerometer readings below this norm (m/s²) carry no usable gravity
/// direction and are ignored by the filter.
pub const MIN_ACCEL_NORM: f64 = 1.0;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    Positive,
    Negative,
}

impl Hemisphere {
    pub fn sign(self) -> f64 {
        match self {
            Hemisphere::Positive => 1.0,
            Hemisphere::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedAngles {
    /// Fused yaw, rad in `(-pi, pi]`.
    pub yaw: f64,
    /// Fused pitch, rad in `[-pi/2, pi/2]`.
    pub pitch: f64,
    /// Fused roll, rad in `[-pi/2, pi/2]`.
    pub roll: f64,
    pub hemisphere: Hemisphere,
}

impl FusedAngles {
    pub const IDENTITY: FusedAngles = FusedAngles {
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
        hemisphere: Hemisphere::Positive,
    };

    /// Tilt-only fused angles in the upper hemisphere.
    pub fn tilt(pitch: f64, roll: f64) -> Self {
        FusedAngles {
            yaw: 0.0,
            pitch,
            roll,
            hemisphere: Hemisphere::Positive,
        }
    }
}

impl Default for FusedAngles {
    fn default() -> Self {
        Self::IDENTITY
    }
}

fn check_unit(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::invalid(alloc::format!(
            "quaternion norm {norm} is not within {UNIT_NORM_TOLERANCE} of 1"
        )));
    }
    Ok(UnitQuaternion::new_normalize(*q))
}

/// Fused-angles decomposition of a rotation given as a (near) unit quaternion.
pub fn quat_to_fused(q: &Quaternion<f64>) -> Result<FusedAngles> {
    let q = check_unit(q)?;
    Ok(unit_quat_to_fused(&q))
}

pub fn unit_quat_to_fused(q: &UnitQuaternion<f64>) -> FusedAngles {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);

    // Third row of the rotation matrix is z_B. The cosines come from the
    // matching columns so that atan2 stays well conditioned near +-pi/2.
    let r31 = 2.0 * (x * z - w * y);
    let r32 = 2.0 * (y * z + w * x);
    let r33 = 1.0 - 2.0 * (x * x + y * y);
    let r11 = 1.0 - 2.0 * (y * y + z * z);
    let r21 = 2.0 * (x * y + w * z);
    let r12 = 2.0 * (x * y - w * z);
    let r22 = 1.0 - 2.0 * (x * x + z * z);

    let pitch = (-r31).atan2(r11.hypot(r21));
    let roll = r32.atan2(r12.hypot(r22));
    let hemisphere = if r33 >= 0.0 {
        Hemisphere::Positive
    } else {
        Hemisphere::Negative
    };
    let yaw = wrap_angle(2.0 * z.atan2(w));

    FusedAngles {
        yaw,
        pitch,
        roll,
        hemisphere,
    }
}

/// Rotation with the given fused angles.
///
/// Fails when `sin²(pitch) + sin²(roll) > 1`, which no rotation satisfies.
pub fn fused_to_quat(f: &FusedAngles) -> Result<UnitQuaternion<f64>> {
    if !(f.yaw.is_finite() && f.pitch.is_finite() && f.roll.is_finite()) {
        return Err(Error::invalid("fused angles must be finite"));
    }
    let sp = f.pitch.sin();
    let sr = f.roll.sin();
    let crit = sp * sp + sr * sr;
    if crit > 1.0 + 1e-9 {
        return Err(Error::invalid(alloc::format!(
            "sin²(pitch) + sin²(roll) = {crit} exceeds 1"
        )));
    }
    let sin_tilt = crit.min(1.0).sqrt();
    let cos_tilt = f.hemisphere.sign() * (1.0 - crit).max(0.0).sqrt();
    let tilt = sin_tilt.atan2(cos_tilt);

    // Tilt axis (ux, uy, 0): z_B = (-sin a * uy, sin a * ux, cos a).
    let (ux, uy) = if sin_tilt > 0.0 {
        (sr / sin_tilt, sp / sin_tilt)
    } else {
        (1.0, 0.0)
    };
    let (sh, ch) = (0.5 * tilt).sin_cos();
    let tilt_q = Quaternion::new(ch, sh * ux, sh * uy, 0.0);
    let (sy, cy) = (0.5 * f.yaw).sin_cos();
    let yaw_q = Quaternion::new(cy, 0.0, 0.0, sy);
    Ok(UnitQuaternion::new_normalize(yaw_q * tilt_q))
}

/// Deviation of measured fused pitch and roll from their expected values.
pub fn fused_deviation(measured: &FusedAngles, expected: &FusedAngles) -> (f64, f64) {
    (
        measured.pitch - expected.pitch,
        measured.roll - expected.roll,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Body angular velocity, rad/s.
    pub gyro: Vector3<f64>,
    /// Specific force in the body frame, m/s². At rest this points up.
    pub accel: Vector3<f64>,
    /// Sample period, s.
    pub dt: f64,
}

impl ImuSample {
    /// Noise-free sample of a body at rest with the given attitude.
    pub fn static_at(attitude: &UnitQuaternion<f64>, dt: f64) -> Self {
        ImuSample {
            gyro: Vector3::zeros(),
            accel: attitude.inverse_transform_vector(&Vector3::z()) * GRAVITY,
            dt,
        }
    }
}

/// State of the nonlinear complementary filter.
///
/// The filter integrates the bias-corrected gyro and rotates the estimate
/// towards the gravity direction seen by the accelerometer with a
/// proportional gain. Yaw is unobservable without a magnetometer and is
/// gyro-integrated only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub attitude: UnitQuaternion<f64>,
    /// Proportional correction gain, 1/s.
    pub correction_gain: f64,
    /// Constant gyro bias estimate, rad/s.
    pub gyro_bias: Vector3<f64>,
}

impl Default for FilterState {
    fn default() -> Self {
        FilterState {
            attitude: UnitQuaternion::identity(),
            correction_gain: 2.0,
            gyro_bias: Vector3::zeros(),
        }
    }
}

impl FilterState {
    pub fn with_attitude(attitude: UnitQuaternion<f64>) -> Self {
        FilterState {
            attitude,
            ..Default::default()
        }
    }

    pub fn fused(&self) -> FusedAngles {
        unit_quat_to_fused(&self.attitude)
    }

    pub fn update(&self, m: &ImuSample) -> Result<FilterState> {
        filter_update(self, m)
    }
}

/// Advances the filter by one IMU sample.
pub fn filter_update(s: &FilterState, m: &ImuSample) -> Result<FilterState> {
    if !(m.dt.is_finite() && m.dt > 0.0) {
        return Err(Error::invalid("IMU sample period must be finite and positive"));
    }
    if !(s.correction_gain.is_finite() && s.correction_gain >= 0.0) {
        return Err(Error::invalid("correction gain must be finite and non-negative"));
    }
    if !(m.gyro.iter().all(|v| v.is_finite()) && m.accel.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("IMU sample contains non-finite values"));
    }

    let mut omega = m.gyro - s.gyro_bias;
    let accel_norm = m.accel.norm();
    if accel_norm >= MIN_ACCEL_NORM {
        let measured_up = m.accel / accel_norm;
        let estimated_up = s.attitude.inverse_transform_vector(&Vector3::z());
        omega += measured_up.cross(&estimated_up) * s.correction_gain;
    }

    let delta = UnitQuaternion::from_scaled_axis(omega * m.dt);
    let attitude = UnitQuaternion::new_normalize((s.attitude * delta).into_inner());
    Ok(FilterState { attitude, ..*s })
}
