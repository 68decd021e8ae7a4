//! Line grammar shared by mission files and the console.
//!
//! ```text
//! [@N|@all] verb args [timeout=<s>]
//! takeoff <alt> [heading_deg]
//! orbit <x> <y> <alt> <radius> <speed>
//! land [heading_deg]
//! offboard <mode> [args for <s>]
//! reposition <x> <y> <z>
//! cancel | wait | sleep <s> | assert <field> <op> <value>
//! ```
//!
//! Positions are NED metres, so a reposition 30 m up has z = -30.

use std::fmt;

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::action::{ActionGoal, TimedSetpoint};
use crate::firmware::{FlightMode, Setpoint, SetpointMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    One(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Goal(ActionGoal),
    Reposition(Vector3<f64>),
    Cancel,
    Wait,
    Sleep(f64),
    Assert(Assertion),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Alt,
    X,
    Y,
    Z,
    Vx,
    Vy,
    Vz,
    Speed,
    Mode,
    Armed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Mode(FlightMode),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub field: Field,
    pub op: Op,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub target: Target,
    pub command: Command,
    pub timeout_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub const USAGE: &str = "usage: [@N|@all] takeoff <alt> [heading_deg] | orbit <x> <y> <alt> <radius> <speed> | \
land [heading_deg] | offboard <mode> [args for <s>] | reposition <x> <y> <z> | cancel | wait | sleep <s> | \
assert <field> <op> <value>  [timeout=<s>]";

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::Alt => "alt",
            Field::X => "x",
            Field::Y => "y",
            Field::Z => "z",
            Field::Vx => "vx",
            Field::Vy => "vy",
            Field::Vz => "vz",
            Field::Speed => "speed",
            Field::Mode => "mode",
            Field::Armed => "armed",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "==",
            Op::Ne => "!=",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Mode(m) => write!(f, "{m:?}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl Op {
    fn holds<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            Op::Ge => a >= b,
            Op::Eq => a == b,
            Op::Ne => a != b,
        }
    }
}

/// Values an assertion can be checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mode: FlightMode,
    pub armed: bool,
}

impl Assertion {
    pub fn check(&self, o: &Observed) -> Result<(), String> {
        let ok = match (&self.field, &self.value) {
            (Field::Mode, Value::Mode(m)) => match self.op {
                Op::Eq => o.mode == *m,
                Op::Ne => o.mode != *m,
                _ => return Err(format!("operator {} does not apply to mode", self.op)),
            },
            (Field::Armed, Value::Bool(b)) => match self.op {
                Op::Eq => o.armed == *b,
                Op::Ne => o.armed != *b,
                _ => return Err(format!("operator {} does not apply to armed", self.op)),
            },
            (field, Value::Number(v)) => {
                let x = match field {
                    Field::Alt => -o.position.z,
                    Field::X => o.position.x,
                    Field::Y => o.position.y,
                    Field::Z => o.position.z,
                    Field::Vx => o.velocity.x,
                    Field::Vy => o.velocity.y,
                    Field::Vz => o.velocity.z,
                    Field::Speed => o.velocity.norm(),
                    Field::Mode | Field::Armed => unreachable!("typed at parse time"),
                };
                if self.op.holds(x, *v) {
                    return Ok(());
                }
                return Err(format!("{} = {x:.3}, expected {} {v}", self.field, self.op));
            }
            _ => return Err("value type does not match field".into()),
        };
        if ok {
            Ok(())
        } else {
            let actual = match self.field {
                Field::Mode => format!("{:?}", o.mode),
                _ => o.armed.to_string(),
            };
            Err(format!("{} = {actual}, expected {} {}", self.field, self.op, self.value))
        }
    }
}

fn num(tok: &str, what: &str) -> Result<f64, String> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("{what}: expected a number, got '{tok}'"))
}

fn nums<const N: usize>(args: &[&str], what: &str) -> Result<[f64; N], String> {
    if args.len() != N {
        return Err(format!("{what} takes {N} numbers"));
    }
    let mut out = [0.0; N];
    for (o, a) in out.iter_mut().zip(args) {
        *o = num(a, what)?;
    }
    Ok(out)
}

fn heading(args: &[&str], verb: &str) -> Result<Option<f64>, String> {
    match args {
        [] => Ok(None),
        [h] => Ok(Some(num(h, verb)?.to_radians())),
        _ => Err(format!("{verb} takes at most one heading")),
    }
}

fn offboard(args: &[&str]) -> Result<ActionGoal, String> {
    let (mode_tok, rest) = args.split_first().ok_or("offboard needs a mode")?;
    let mode = SetpointMode::parse(mode_tok).ok_or_else(|| format!("unknown setpoint mode '{mode_tok}'"))?;
    if rest.is_empty() {
        return Ok(ActionGoal::Offboard {
            mode,
            setpoints: Vec::new(),
            duration_s: 0.0,
        });
    }
    let for_at = rest
        .iter()
        .position(|t| *t == "for")
        .ok_or("offboard setpoint needs 'for <seconds>'")?;
    let duration = match &rest[for_at + 1..] {
        [d] => num(d, "offboard duration")?,
        _ => return Err("offboard: 'for' takes one duration".into()),
    };
    let a = &rest[..for_at];
    let setpoint = match mode {
        SetpointMode::Trajectory => {
            let [x, y, z] = nums::<3>(a, "trajectory x y z")?;
            Setpoint::Trajectory {
                pos: Vector3::new(x, y, z),
                vel: Vector3::zeros(),
                yaw: 0.0,
            }
        }
        SetpointMode::Velocity => {
            let [vx, vy, vz] = nums::<3>(a, "velocity vx vy vz")?;
            Setpoint::Velocity {
                vel: Vector3::new(vx, vy, vz),
                yaw_rate: 0.0,
            }
        }
        SetpointMode::Acceleration => {
            let [ax, ay, az] = nums::<3>(a, "acceleration ax ay az")?;
            Setpoint::Acceleration {
                accel: Vector3::new(ax, ay, az),
            }
        }
        SetpointMode::Attitude => {
            let [r, p, y, t] = nums::<4>(a, "attitude roll pitch yaw thrust")?;
            let q = UnitQuaternion::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians());
            Setpoint::Attitude {
                quat: [q.w, q.i, q.j, q.k],
                thrust_norm: t,
            }
        }
        SetpointMode::Rates => {
            let [p, q, r, t] = nums::<4>(a, "rates p q r thrust")?;
            Setpoint::Rates {
                body_rates: Vector3::new(p, q, r).map(f64::to_radians),
                thrust_norm: t,
            }
        }
    };
    Ok(ActionGoal::Offboard {
        mode,
        setpoints: vec![TimedSetpoint { at_s: 0.0, setpoint }],
        duration_s: duration,
    })
}

fn assertion(args: &[&str]) -> Result<Assertion, String> {
    let [field, op, value] = args else {
        return Err("assert takes <field> <op> <value>".into());
    };
    let field = match field.to_ascii_lowercase().as_str() {
        "alt" | "altitude" => Field::Alt,
        "x" => Field::X,
        "y" => Field::Y,
        "z" => Field::Z,
        "vx" => Field::Vx,
        "vy" => Field::Vy,
        "vz" => Field::Vz,
        "speed" => Field::Speed,
        "mode" => Field::Mode,
        "armed" => Field::Armed,
        other => return Err(format!("unknown field '{other}'")),
    };
    let op = match *op {
        "<" => Op::Lt,
        "<=" => Op::Le,
        ">" => Op::Gt,
        ">=" => Op::Ge,
        "==" | "=" => Op::Eq,
        "!=" => Op::Ne,
        other => return Err(format!("unknown operator '{other}'")),
    };
    let value = match field {
        Field::Mode => Value::Mode(FlightMode::parse(value).ok_or_else(|| format!("unknown mode '{value}'"))?),
        Field::Armed => Value::Bool(value.parse().map_err(|_| format!("armed compares to true/false, got '{value}'"))?),
        _ => Value::Number(num(value, "assert")?),
    };
    if matches!(field, Field::Mode | Field::Armed) && !matches!(op, Op::Eq | Op::Ne) {
        return Err(format!("{field} only supports == and !="));
    }
    Ok(Assertion { field, op, value })
}

/// Parses one non-empty, non-comment line.
pub fn parse_line(line_no: usize, text: &str) -> Result<Step, ParseError> {
    let err = |message: String| ParseError { line: line_no, message };
    let mut toks: Vec<&str> = text.split_whitespace().collect();
    let mut timeout_s = None;
    if let Some(pos) = toks.iter().position(|t| t.starts_with("timeout=")) {
        let v = num(&toks[pos]["timeout=".len()..], "timeout").map_err(err)?;
        if v <= 0.0 {
            return Err(err("timeout must be positive".into()));
        }
        timeout_s = Some(v);
        toks.remove(pos);
    }
    let mut target = Target::All;
    if let Some(first) = toks.first() {
        if let Some(t) = first.strip_prefix('@') {
            target = if t == "all" {
                Target::All
            } else {
                match t.parse::<u16>() {
                    Ok(n) if n > 0 => Target::One(n),
                    _ => return Err(err(format!("bad vehicle selector '{first}'"))),
                }
            };
            toks.remove(0);
        }
    }
    let (verb, args) = toks.split_first().ok_or_else(|| err("missing verb".into()))?;
    let command = match verb.to_ascii_lowercase().as_str() {
        "takeoff" => {
            let (alt, rest) = args.split_first().ok_or_else(|| err("takeoff needs an altitude".into()))?;
            Command::Goal(ActionGoal::Takeoff {
                target_alt_m: num(alt, "takeoff").map_err(err)?,
                transition_heading_rad: heading(rest, "takeoff").map_err(err)?,
            })
        }
        "orbit" => {
            let [x, y, alt, radius, speed] = nums::<5>(args, "orbit x y alt radius speed").map_err(err)?;
            Command::Goal(ActionGoal::Orbit {
                center: Vector3::new(x, y, 0.0),
                radius_m: radius,
                alt_m: alt,
                speed_mps: speed,
            })
        }
        "land" => Command::Goal(ActionGoal::Land {
            transition_heading_rad: heading(args, "land").map_err(err)?,
        }),
        "offboard" => Command::Goal(offboard(args).map_err(err)?),
        "reposition" => {
            let [x, y, z] = nums::<3>(args, "reposition x y z").map_err(err)?;
            Command::Reposition(Vector3::new(x, y, z))
        }
        "cancel" if args.is_empty() => Command::Cancel,
        "wait" if args.is_empty() => Command::Wait,
        "sleep" => {
            let [s] = nums::<1>(args, "sleep").map_err(err)?;
            if s < 0.0 {
                return Err(err("sleep must be non-negative".into()));
            }
            Command::Sleep(s)
        }
        "assert" => Command::Assert(assertion(args).map_err(err)?),
        other => return Err(err(format!("unknown command '{other}'; {USAGE}"))),
    };
    if let Command::Goal(g) = &command {
        g.validate().map_err(err)?;
    }
    Ok(Step {
        line: line_no,
        text: text.trim().to_string(),
        target,
        command,
        timeout_s,
    })
}

/// Parses a whole script; `#` starts a comment.
pub fn parse_script(text: &str) -> Result<Vec<Step>, ParseError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        steps.push(parse_line(i + 1, line)?);
    }
    Ok(steps)
}
