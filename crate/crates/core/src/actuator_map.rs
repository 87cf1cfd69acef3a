//! Actuator-side conversions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;

use crate::numopt::least_squares_line;
use crate::{Error, Result};

/// Encoder resolution, ticks per revolution.
pub const TICKS_PER_REV: u32 = 4096;
/// Tick reading of the zero joint position.
pub const CENTER_TICK: u32 = 2048;

pub fn ticks_to_rad(ticks: u32) -> Result<f64> {
    if ticks >= TICKS_PER_REV {
        return Err(Error::invalid(format!(
            "tick value {ticks} is outside 0..{TICKS_PER_REV}"
        )));
    }
    Ok((ticks as f64 - CENTER_TICK as f64) * TAU / TICKS_PER_REV as f64)
}

/// Nearest tick for an angle in `[-pi, pi)`.
pub fn rad_to_ticks(rad: f64) -> Result<u32> {
    let t = (rad * TICKS_PER_REV as f64 / TAU).round() + CENTER_TICK as f64;
    if !(0.0..TICKS_PER_REV as f64).contains(&t) {
        return Err(Error::invalid(format!("angle {rad} rad is outside the encoder range")));
    }
    Ok(t as u32)
}

/// Linear current-to-torque model `torque = torque_constant * current + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueModel {
    /// Nm/A.
    pub torque_constant: f64,
    /// Nm.
    pub offset: f64,
}

impl TorqueModel {
    /// Identified on the XH540 actuators.
    pub const XH540: TorqueModel = TorqueModel {
        torque_constant: 3.8511,
        offset: -0.0821,
    };
}

pub fn current_to_torque(current: f64, model: &TorqueModel) -> f64 {
    model.torque_constant * current + model.offset
}

/// Fits a torque model to `(current A, torque Nm)` samples by regressing
/// torque on current.
pub fn fit_torque_model(samples: &[(f64, f64)]) -> Result<TorqueModel> {
    let (currents, torques): (Vec<f64>, Vec<f64>) = samples.iter().copied().unzip();
    let distinct = currents.iter().any(|c| *c != currents[0]);
    if samples.len() < 2 || !distinct {
        return Err(Error::DegenerateData(
            "torque fit needs at least two distinct currents".into(),
        ));
    }
    let (slope, intercept) = least_squares_line(&currents, &torques)?;
    if !(slope > 0.0) {
        return Err(Error::DegenerateData(format!(
            "fitted torque constant {slope} Nm/A is not positive"
        )));
    }
    Ok(TorqueModel {
        torque_constant: slope,
        offset: intercept,
    })
}

/// How an alias target is derived from other joints.
#[derive(Debug, Clone, PartialEq)]
pub enum AliasKind {
    Copy { source: String },
    Negate { source: String },
    Scale { source: String, factor: f64 },
    Sum { source: String, operand: String },
    Subtract { source: String, operand: String },
}

impl AliasKind {
    fn inputs(&self) -> impl Iterator<Item = &str> {
        let (a, b) = match self {
            AliasKind::Copy { source } | AliasKind::Negate { source } | AliasKind::Scale { source, .. } => {
                (source.as_str(), None)
            }
            AliasKind::Sum { source, operand } | AliasKind::Subtract { source, operand } => {
                (source.as_str(), Some(operand.as_str()))
            }
        };
        core::iter::once(a).chain(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasRule {
    pub target: String,
    pub kind: AliasKind,
}

impl AliasRule {
    pub fn new(target: impl Into<String>, kind: AliasKind) -> Self {
        AliasRule {
            target: target.into(),
            kind,
        }
    }
}

/// Orders rules so every target is computed after the rules it reads from.
fn topological_order(rules: &[AliasRule]) -> Result<Vec<usize>> {
    let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in rules.iter().enumerate() {
        if producer.insert(r.target.as_str(), i).is_some() {
            return Err(Error::Config(format!("joint '{}' is aliased more than once", r.target)));
        }
    }

    // Depth-first search with an explicit on-stack set to find cycles.
    fn visit<'a>(
        i: usize,
        rules: &'a [AliasRule],
        producer: &BTreeMap<&'a str, usize>,
        done: &mut BTreeSet<usize>,
        active: &mut Vec<usize>,
        order: &mut Vec<usize>,
    ) -> Result<()> {
        if done.contains(&i) {
            return Ok(());
        }
        if let Some(pos) = active.iter().position(|&a| a == i) {
            let cycle: Vec<&str> = active[pos..].iter().map(|&k| rules[k].target.as_str()).collect();
            return Err(Error::Config(format!("alias cycle through {}", cycle.join(" -> "))));
        }
        active.push(i);
        for input in rules[i].kind.inputs() {
            if let Some(&dep) = producer.get(input) {
                visit(dep, rules, producer, done, active, order)?;
            }
        }
        active.pop();
        done.insert(i);
        order.push(i);
        Ok(())
    }

    let mut done = BTreeSet::new();
    let mut order = Vec::with_capacity(rules.len());
    for i in 0..rules.len() {
        visit(i, rules, &producer, &mut done, &mut Vec::new(), &mut order)?;
    }
    Ok(order)
}

/// Evaluates alias rules over a joint position map. Entries that are not
/// alias targets pass through unchanged.
pub fn apply_aliases(rules: &[AliasRule], positions: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let order = topological_order(rules)?;
    let mut out = positions.clone();
    for i in order {
        let rule = &rules[i];
        let get = |name: &str| {
            out.get(name).copied().ok_or_else(|| {
                Error::Config(format!("alias '{}' reads missing joint '{name}'", rule.target))
            })
        };
        let value = match &rule.kind {
            AliasKind::Copy { source } => get(source)?,
            AliasKind::Negate { source } => -get(source)?,
            AliasKind::Scale { source, factor } => factor * get(source)?,
            AliasKind::Sum { source, operand } => get(source)? + get(operand)?,
            AliasKind::Subtract { source, operand } => get(source)? - get(operand)?,
        };
        out.insert(rule.target.clone(), value);
    }
    Ok(out)
}

/// Helical gear: tooth count, normal module (mm) and helix angle (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GearSpec {
    pub teeth: u32,
    pub module: f64,
    pub helix_angle: f64,
}

impl GearSpec {
    pub fn new(teeth: u32, module: f64, helix_angle: f64) -> Result<Self> {
        if teeth < 4 {
            return Err(Error::invalid(format!("a gear needs at least 4 teeth, got {teeth}")));
        }
        if !(module > 0.0 && module.is_finite()) {
            return Err(Error::invalid("gear module must be positive"));
        }
        if !(0.0..=core::f64::consts::FRAC_PI_4).contains(&helix_angle) {
            return Err(Error::invalid("helix angle must lie in [0, pi/4]"));
        }
        Ok(GearSpec {
            teeth,
            module,
            helix_angle,
        })
    }
}

/// Pitch diameter `d = Z m / cos(psi)`, mm.
pub fn gear_pitch_diameter(g: &GearSpec) -> f64 {
    g.teeth as f64 * g.module / g.helix_angle.cos()
}
