//! `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys are dotted paths such as
//! `gains.arm_angle_y.p` or `plant.natural_freq`; every key not given keeps
//! its default. See `docs/formats.md` for the full list and units.

use std::fmt::Write as _;
use std::path::Path;

use gaitkit_core::bayes_opt::GainParam;
use gaitkit_core::corrective::FeedbackGains;
use gaitkit_core::surrogate_sim::{ControllerConfig, PlantParams};

use crate::error::{FormatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based.
    pub line: usize,
}

/// Splits a `key = value` file into entries.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| FormatError::syntax(line, format!("expected `key = value`, found `{content}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(FormatError::syntax(line, "empty key"));
        }
        if out.iter().any(|e: &Entry| e.key == key) {
            return Err(FormatError::syntax(line, format!("duplicate key `{key}`")));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Everything a closed-loop run needs besides the command sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExperimentConfig {
    pub controller: ControllerConfig,
    pub plant: PlantParams,
}

fn slot<'a>(cfg: &'a mut ExperimentConfig, key: &str) -> Option<&'a mut f64> {
    if let Some(rest) = key.strip_prefix("gains.") {
        let param = GainParam::from_key(rest)?;
        return Some(param.value_mut(&mut cfg.controller.gains));
    }
    let c = &mut cfg.controller;
    let p = &mut cfg.plant;
    let e = &mut p.action_effectiveness;
    Some(match key {
        "gait.lift_amplitude" => &mut c.cpg.lift_amplitude,
        "gait.swing_amplitude" => &mut c.cpg.swing_amplitude,
        "gait.lateral_sway_amplitude" => &mut c.cpg.lateral_sway_amplitude,
        "gait.lateral_step_amplitude" => &mut c.cpg.lateral_step_amplitude,
        "gait.turn_amplitude" => &mut c.cpg.turn_amplitude,
        "gait.arm_swing_amplitude" => &mut c.cpg.arm_swing_amplitude,
        "gait.double_support_fraction" => &mut c.cpg.double_support_fraction,
        "gait.frequency" => &mut c.cpg.nominal_frequency,
        "filter.smoothing_time" => &mut c.filter.smoothing_time,
        "filter.deadband" => &mut c.filter.deadband,
        "filter.leak_rate" => &mut c.filter.leak_rate,
        "timing.min_factor" => &mut c.min_timing_factor,
        "geometry.thigh_length" => &mut c.geometry.thigh_length,
        "geometry.shank_length" => &mut c.geometry.shank_length,
        "plant.natural_freq" => &mut p.natural_freq,
        "plant.support_stiffness" => &mut p.support_stiffness,
        "plant.damping" => &mut p.damping,
        "plant.gait_coupling" => &mut p.gait_coupling,
        "plant.command_lean" => &mut p.command_lean,
        "plant.bias_sagittal" => &mut p.bias[0],
        "plant.bias_lateral" => &mut p.bias[1],
        "plant.noise_std" => &mut p.noise_std,
        "plant.fall_threshold" => &mut p.fall_threshold,
        "plant.effective_mass" => &mut p.effective_mass,
        "plant.com_height" => &mut p.com_height,
        "plant.effectiveness.arm_angle_x" => &mut e.arm_angle_x,
        "plant.effectiveness.arm_angle_y" => &mut e.arm_angle_y,
        "plant.effectiveness.supp_foot_angle_x" => &mut e.supp_foot_angle_x,
        "plant.effectiveness.cont_foot_angle_x" => &mut e.cont_foot_angle_x,
        "plant.effectiveness.com_shift_x" => &mut e.com_shift_x,
        "plant.effectiveness.com_shift_y" => &mut e.com_shift_y,
        _ => return None,
    })
}

/// Overrides fields of `cfg` with the entries of `text` and validates the
/// result.
pub fn apply(text: &str, cfg: &mut ExperimentConfig) -> Result<()> {
    for entry in parse_entries(text)? {
        if entry.key == "plant.seed" {
            cfg.plant.seed = entry.value.parse().map_err(|_| bad_value(&entry))?;
            continue;
        }
        let value: f64 = entry.value.parse().map_err(|_| bad_value(&entry))?;
        if !value.is_finite() {
            return Err(bad_value(&entry));
        }
        let target = slot(cfg, &entry.key).ok_or_else(|| FormatError::UnknownKey {
            line: entry.line,
            key: entry.key.clone(),
        })?;
        *target = value;
    }
    cfg.controller.validate()?;
    cfg.controller.geometry = gaitkit_core::pose_space::LegGeometry::new(cfg.controller.geometry.thigh_length, cfg.controller.geometry.shank_length)?;
    cfg.plant.validate()?;
    Ok(())
}

fn bad_value(e: &Entry) -> FormatError {
    FormatError::BadValue {
        line: e.line,
        key: e.key.clone(),
        value: e.value.clone(),
    }
}

pub fn load(path: &Path, cfg: &mut ExperimentConfig) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    apply(&text, cfg)
}

/// All gains as `gains.*` lines, readable by [`apply`].
pub fn gains_to_string(g: &FeedbackGains) -> String {
    let mut out = String::new();
    for p in GainParam::ALL {
        let _ = writeln!(out, "gains.{} = {}", p.key(), p.get(g));
    }
    out
}
