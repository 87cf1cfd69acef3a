//! Control mathematics for a fused-angle stabilized bipedal gait.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! - [`orientation`]: fused angles, quaternion conversions and a nonlinear
//!   complementary attitude filter.
//! - [`pose_space`]: the abstract pose space of a humanoid and two-link leg
//!   inverse kinematics.
//! - [`actuator_map`]: encoder ticks, torque-from-current, joint aliasing and
//!   helical gear geometry.
//! - [`cpg_gait`] and [`corrective`]: the open-loop central pattern generator
//!   and the fused-angle corrective actions layered on top of it.
//! - [`surrogate_sim`]: a seeded torso-attitude surrogate that closes the loop
//!   at desk scale. It is a test plant, not a physics model.
//! - [`bayes_opt`]: Gaussian-process optimization of feedback gains over a
//!   simulation/real pair with a composite kernel.
//! - [`numopt`]: least squares and Nelder-Mead.
//! - [`perception`]: heatmap blob extraction and camera extrinsic calibration.
//!
//! File formats, parallel evaluation and the command-line front end live in
//! the companion `gaitkit` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actuator_map;
pub mod bayes_opt;
pub mod corrective;
pub mod cpg_gait;
mod error;
pub mod numopt;
pub mod orientation;
pub mod perception;
pub mod pose_space;
pub mod surrogate_sim;

pub use error::{Error, Result};

pub(crate) mod math {
    use core::f64::consts::{PI, TAU};

    /// Wraps an angle into `(-pi, pi]`.
    pub fn wrap_angle(angle: f64) -> f64 {
        let mut r = angle % TAU;
        if r < 0.0 {
            r += TAU;
        }
        if r > PI {
            r - TAU
        } else {
            r
        }
    }
}

pub use math::wrap_angle;
