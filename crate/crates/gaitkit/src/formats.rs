//! CSV and text formats read and written by the command-line tools.

use std::collections::BTreeMap;
use std::io::{self, Write};

use gaitkit_core::actuator_map::{AliasKind, AliasRule};
use gaitkit_core::bayes_opt::{EvalRecord, GainParam};
use gaitkit_core::cpg_gait::GaitCommand;
use gaitkit_core::perception::{Detection, Observation};
use gaitkit_core::surrogate_sim::{Disturbance, PushDirection, RunTrace, Segment};
use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use crate::error::{FormatError, Result};

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses numeric CSV rows of exactly `width` columns. A first line that
/// equals `header` is skipped.
fn numeric_rows(text: &str, header: &str, width: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (n, (line, content)) in content_lines(text).enumerate() {
        if n == 0 && content.replace(' ', "") == header {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(FormatError::syntax(line, format!("expected {width} columns, found {}", fields.len())));
        }
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| FormatError::syntax(line, format!("non-numeric field in `{content}`")))?;
        rows.push((line, values));
    }
    Ok(rows)
}

pub const TORQUE_HEADER: &str = "current_A,torque_Nm";

pub fn parse_torque_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    Ok(numeric_rows(text, TORQUE_HEADER, 2)?.into_iter().map(|(_, v)| (v[0], v[1])).collect())
}

pub fn write_torque_csv(samples: &[(f64, f64)], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{TORQUE_HEADER}")?;
    for (i, t) in samples {
        writeln!(w, "{i},{t}")?;
    }
    Ok(())
}

pub const SEQUENCE_HEADER: &str = "vx,vy,wz,duration";

pub fn parse_sequence_csv(text: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (line, v) in numeric_rows(text, SEQUENCE_HEADER, 4)? {
        if v[3] < 0.0 {
            return Err(FormatError::syntax(line, "segment duration must be non-negative"));
        }
        out.push(Segment {
            command: GaitCommand::new(v[0], v[1], v[2]),
            duration: v[3],
        });
    }
    Ok(out)
}

pub const OBSERVATION_HEADER: &str = "x,y,z,u,v";

pub fn parse_observations_csv(text: &str) -> Result<Vec<Observation>> {
    Ok(numeric_rows(text, OBSERVATION_HEADER, 5)?
        .into_iter()
        .map(|(_, v)| Observation {
            world: Vector3::new(v[0], v[1], v[2]),
            pixel: Vector2::new(v[3], v[4]),
        })
        .collect())
}

pub fn write_observations_csv(obs: &[Observation], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{OBSERVATION_HEADER}")?;
    for o in obs {
        writeln!(w, "{},{},{},{},{}", o.world.x, o.world.y, o.world.z, o.pixel.x, o.pixel.y)?;
    }
    Ok(())
}

/// `IMPULSE@TIME[s]:DIRECTION`, e.g. `9.51@5s:front`.
pub fn parse_disturbance(spec: &str) -> std::result::Result<Disturbance, String> {
    let (impulse, rest) = spec.split_once('@').ok_or_else(|| format!("`{spec}`: expected IMPULSE@TIME:DIRECTION"))?;
    let (time, direction) = rest.split_once(':').ok_or_else(|| format!("`{spec}`: expected IMPULSE@TIME:DIRECTION"))?;
    let impulse: f64 = impulse.trim().parse().map_err(|_| format!("`{spec}`: bad impulse `{impulse}`"))?;
    let time: f64 = time
        .trim()
        .trim_end_matches('s')
        .parse()
        .map_err(|_| format!("`{spec}`: bad time `{time}`"))?;
    let direction = match direction.trim().to_ascii_lowercase().as_str() {
        "front" => PushDirection::Front,
        "back" => PushDirection::Back,
        "left" => PushDirection::Left,
        "right" => PushDirection::Right,
        other => return Err(format!("`{spec}`: unknown direction `{other}`")),
    };
    if !(impulse.is_finite() && impulse >= 0.0 && time.is_finite() && time >= 0.0) {
        return Err(format!("`{spec}`: impulse and time must be non-negative"));
    }
    Ok(Disturbance { time, impulse, direction })
}

/// One rule per line: `target = kind(source[, factor|operand])` with kind
/// one of `copy`, `negate`, `scale`, `sum`, `subtract`.
pub fn parse_alias_rules(text: &str) -> Result<Vec<AliasRule>> {
    let mut rules = Vec::new();
    for (line, content) in content_lines(text) {
        let err = |m: String| FormatError::syntax(line, m);
        let (target, expr) = content.split_once('=').ok_or_else(|| err(format!("expected `target = kind(...)`, found `{content}`")))?;
        let expr = expr.trim();
        let open = expr.find('(').ok_or_else(|| err(format!("missing `(` in `{expr}`")))?;
        let args = expr[open + 1..].strip_suffix(')').ok_or_else(|| err(format!("missing `)` in `{expr}`")))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let name = |s: &str| -> Result<String> {
            if s.is_empty() || s.contains(char::is_whitespace) {
                Err(FormatError::syntax(line, format!("bad joint name `{s}`")))
            } else {
                Ok(s.to_string())
            }
        };
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(FormatError::syntax(line, format!("`{}` takes {n} argument(s)", expr[..open].trim())))
            }
        };
        let kind = match expr[..open].trim() {
            "copy" => {
                arity(1)?;
                AliasKind::Copy { source: name(args[0])? }
            }
            "negate" => {
                arity(1)?;
                AliasKind::Negate { source: name(args[0])? }
            }
            "scale" => {
                arity(2)?;
                let factor = parse_factor(args[1]).ok_or_else(|| err(format!("bad factor `{}`", args[1])))?;
                AliasKind::Scale {
                    source: name(args[0])?,
                    factor,
                }
            }
            "sum" => {
                arity(2)?;
                AliasKind::Sum {
                    source: name(args[0])?,
                    operand: name(args[1])?,
                }
            }
            "subtract" => {
                arity(2)?;
                AliasKind::Subtract {
                    source: name(args[0])?,
                    operand: name(args[1])?,
                }
            }
            other => return Err(err(format!("unknown alias kind `{other}`"))),
        };
        rules.push(AliasRule::new(name(target.trim())?, kind));
    }
    Ok(rules)
}

/// A number or a `p/q` ratio such as `16/30`.
fn parse_factor(s: &str) -> Option<f64> {
    let v = match s.split_once('/') {
        Some((p, q)) => p.trim().parse::<f64>().ok()? / q.trim().parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    v.is_finite().then_some(v)
}

/// `joint = radians` lines.
pub fn parse_joint_values(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for e in crate::config::parse_entries(text)? {
        let v: f64 = e.value.parse().ok().filter(|v: &f64| v.is_finite()).ok_or(FormatError::BadValue {
            line: e.line,
            key: e.key.clone(),
            value: e.value.clone(),
        })?;
        out.insert(e.key, v);
    }
    Ok(out)
}

pub const TRACE_HEADER: &str = "t,mu,pitch,roll,pitch_rate,roll_rate,d_theta,d_phi,fall";

pub fn write_trace_csv(trace: &RunTrace, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for s in &trace.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.t,
            s.mu,
            s.state.pitch,
            s.state.roll,
            s.state.pitch_rate,
            s.state.roll_rate,
            s.d_theta,
            s.d_phi,
            u8::from(s.state.fallen)
        )?;
    }
    Ok(())
}

pub const PHASE_HEADER: &str = "pitch,pitch_rate";

pub fn write_phase_csv(series: &[(f64, f64)], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{PHASE_HEADER}")?;
    for (x, v) in series {
        writeln!(w, "{x},{v}")?;
    }
    Ok(())
}

pub fn write_history_csv(history: &[EvalRecord], params: &[GainParam], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{}", gaitkit_core::bayes_opt::history_header(params))?;
    for (i, r) in history.iter().enumerate() {
        write!(w, "{i},{}", r.point.fidelity.as_str())?;
        for x in &r.point.x {
            write!(w, ",{x}")?;
        }
        writeln!(w, ",{},{}", r.cost.alpha, r.cost.beta)?;
    }
    Ok(())
}

pub const DETECTION_HEADER: &str = "channel,cx,cy,mass,pixels";

pub fn write_detections_csv(detections: &[(usize, Detection)], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{DETECTION_HEADER}")?;
    for (channel, d) in detections {
        writeln!(w, "{channel},{},{},{},{}", d.cx, d.cy, d.mass, d.pixel_count)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationSummary {
    pub seed: u64,
    pub real_evaluations: usize,
    pub sim_evaluations: usize,
    pub best_fidelity: &'static str,
    pub best_gains: BTreeMap<String, f64>,
    #[serde(rename = "J_alpha")]
    pub j_alpha: f64,
    #[serde(rename = "J_beta")]
    pub j_beta: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torque_csv_reads_with_and_without_header() {
        assert_eq!(parse_torque_csv("current_A,torque_Nm\n0.5,1.8\n1,3.7\n").unwrap(), vec![(0.5, 1.8), (1.0, 3.7)]);
        assert_eq!(parse_torque_csv("0.5, 1.8\n").unwrap(), vec![(0.5, 1.8)]);
        let err = parse_torque_csv("current_A,torque_Nm\n0.5,1.8\n1,x\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        let err = parse_torque_csv("1,2,3\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn torque_csv_round_trip() {
        let samples = vec![(0.1, 0.3030), (2.5, 9.5456)];
        let mut buf = Vec::new();
        write_torque_csv(&samples, &mut buf).unwrap();
        assert_eq!(parse_torque_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), samples);
    }

    #[test]
    fn disturbance_flag() {
        let d = parse_disturbance("9.51@5s:front").unwrap();
        assert_eq!((d.impulse, d.time, d.direction), (9.51, 5.0, PushDirection::Front));
        assert_eq!(parse_disturbance("2@0.5:Left").unwrap().direction, PushDirection::Left);
        assert!(parse_disturbance("9.51@5s").is_err());
        assert!(parse_disturbance("9.51@5s:up").is_err());
        assert!(parse_disturbance("-1@5s:back").is_err());
    }

    #[test]
    fn alias_rules_parse() {
        let text = "# knee chain\nknee_a = copy(knee)\nknee_b = negate(knee)\nhip_gear = scale(hip_roll, 16/30)\nsum_j = sum(a, b)\ndiff = subtract(a, b)\n";
        let rules = parse_alias_rules(text).unwrap();
        assert_eq!(rules.len(), 5);
        assert_eq!(rules[0], AliasRule::new("knee_a", AliasKind::Copy { source: "knee".into() }));
        match &rules[2].kind {
            AliasKind::Scale { source, factor } => {
                assert_eq!(source, "hip_roll");
                assert_eq!(*factor, 16.0 / 30.0);
            }
            other => panic!("{other:?}"),
        }
        let err = parse_alias_rules("a = copy(b)\nc = twist(d)\n").unwrap_err();
        assert_eq!(err.to_string(), "line 2: unknown alias kind `twist`");
        assert!(parse_alias_rules("a = scale(b)\n").is_err());
        assert!(parse_alias_rules("a = copy(b\n").is_err());
    }

    #[test]
    fn sequence_csv() {
        let s = parse_sequence_csv("vx,vy,wz,duration\n0.5,0,0,2\n0,0,0.3,1.5\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].duration, 1.5);
        assert!(parse_sequence_csv("0,0,0,-1\n").is_err());
    }

    #[test]
    fn history_columns() {
        use gaitkit_core::bayes_opt::{AugmentedPoint, CostPair, Fidelity};
        let h = vec![EvalRecord {
            point: AugmentedPoint::new(vec![1.0, 0.25], Fidelity::Real),
            cost: CostPair { alpha: 0.5, beta: 0.75 },
            runs: 1,
        }];
        let mut buf = Vec::new();
        write_history_csv(&h, &[GainParam::ArmAngleYP, GainParam::ArmAngleYD], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,delta,arm_angle_y.p,arm_angle_y.d,J_alpha,J_beta\n0,real,1,0.25,0.5,0.75\n");
    }
}
