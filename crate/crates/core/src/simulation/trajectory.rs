//! Setpoint generators for the sweep maneuvers.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{quat_from_axis_angle, UnitQuaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSetpoint {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Feedforward acceleration, world frame.
    pub acceleration: Vec3,
    pub q: UnitQuaternion,
    /// World frame.
    pub angular_velocity: Vec3,
}

impl PoseSetpoint {
    pub fn origin() -> PoseSetpoint {
        PoseSetpoint {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            q: UnitQuaternion::identity(),
            angular_velocity: Vec3::zeros(),
        }
    }
}

/// A signed body axis, parsed from labels such as `+yaw`, `-x` or `pitch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedAxis {
    pub axis: Vec3,
    pub sign: f64,
}

impl FromStr for SignedAxis {
    type Err = Error;

    fn from_str(label: &str) -> Result<SignedAxis> {
        let (sign, name) = match label.as_bytes().first() {
            Some(b'+') => (1.0, &label[1..]),
            Some(b'-') => (-1.0, &label[1..]),
            _ => (1.0, label),
        };
        let axis = match name {
            "x" | "roll" => Vec3::x(),
            "y" | "pitch" => Vec3::y(),
            "z" | "yaw" => Vec3::z(),
            _ => return Err(Error::invalid(format!("unknown axis label `{label}`"))),
        };
        Ok(SignedAxis { axis, sign })
    }
}

fn default_order() -> Vec<String> {
    ["+yaw", "+pitch", "+roll", "-yaw", "-pitch", "-roll"].map(String::from).to_vec()
}

fn default_position_order() -> Vec<String> {
    ["+x", "+y", "+z", "-x", "-y", "-z"].map(String::from).to_vec()
}

fn default_roll_axis() -> String {
    "roll".into()
}

fn default_step() -> f64 {
    6.0
}

fn default_amplitude_deg() -> f64 {
    180.0
}

fn default_amplitude_m() -> f64 {
    0.5
}

fn default_revolutions() -> f64 {
    10.0
}

fn default_period() -> f64 {
    8.0
}

/// Every sweep starts from the origin pose. Each label in `order` produces
/// two steps: out to the signed amplitude and back to the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    Hover {},
    Orientation {
        #[serde(default = "default_amplitude_deg")]
        amplitude_deg: f64,
        #[serde(default = "default_step")]
        step_duration: f64,
        #[serde(default = "default_order")]
        order: Vec<String>,
    },
    Position {
        #[serde(default = "default_amplitude_m")]
        amplitude: f64,
        #[serde(default = "default_step")]
        step_duration: f64,
        #[serde(default = "default_position_order")]
        order: Vec<String>,
    },
    /// Constant-rate rotation, `period` seconds per revolution.
    ContinuousRoll {
        #[serde(default = "default_revolutions")]
        revolutions: f64,
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_roll_axis")]
        axis: String,
    },
    /// Attitude setpoint jumps to `angle_deg` about `axis` at t = 0.
    AttitudeStep { axis: String, angle_deg: f64 },
}

impl SweepSpec {
    pub fn orientation() -> SweepSpec {
        SweepSpec::Orientation {
            amplitude_deg: default_amplitude_deg(),
            step_duration: default_step(),
            order: default_order(),
        }
    }

    pub fn position() -> SweepSpec {
        SweepSpec::Position {
            amplitude: default_amplitude_m(),
            step_duration: default_step(),
            order: default_position_order(),
        }
    }

    pub fn continuous_roll() -> SweepSpec {
        SweepSpec::ContinuousRoll {
            revolutions: default_revolutions(),
            period: default_period(),
            axis: default_roll_axis(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let labels = |order: &[String]| -> Result<()> {
            if order.is_empty() {
                return Err(Error::invalid("sweep order is empty"));
            }
            order.iter().try_for_each(|l| l.parse::<SignedAxis>().map(|_| ()))
        };
        match self {
            SweepSpec::Hover {} => Ok(()),
            SweepSpec::Orientation {
                amplitude_deg,
                step_duration,
                order,
            } => {
                if !amplitude_deg.is_finite() {
                    return Err(Error::invalid("amplitude must be finite"));
                }
                positive("step duration", *step_duration)?;
                labels(order)
            }
            SweepSpec::Position {
                amplitude,
                step_duration,
                order,
            } => {
                if !amplitude.is_finite() {
                    return Err(Error::invalid("amplitude must be finite"));
                }
                positive("step duration", *step_duration)?;
                labels(order)
            }
            SweepSpec::ContinuousRoll {
                revolutions,
                period,
                axis,
            } => {
                positive("revolutions", *revolutions)?;
                positive("period", *period)?;
                axis.parse::<SignedAxis>().map(|_| ())
            }
            SweepSpec::AttitudeStep { axis, angle_deg } => {
                if !angle_deg.is_finite() {
                    return Err(Error::invalid("step angle must be finite"));
                }
                axis.parse::<SignedAxis>().map(|_| ())
            }
        }
    }

    /// Length of the maneuver, if it has one.
    pub fn natural_duration(&self) -> Option<f64> {
        match self {
            SweepSpec::Orientation {
                step_duration, order, ..
            }
            | SweepSpec::Position {
                step_duration, order, ..
            } => Some(2.0 * order.len() as f64 * step_duration),
            SweepSpec::ContinuousRoll {
                revolutions, period, ..
            } => Some(revolutions * period),
            SweepSpec::Hover {} | SweepSpec::AttitudeStep { .. } => None,
        }
    }
}

/// Normalized trapezoid on τ ∈ [0, 1]: thirds of acceleration, cruise and
/// deceleration. Returns (s, ds/dτ, d²s/dτ²).
pub fn trapezoid(tau: f64) -> (f64, f64, f64) {
    let tau = tau.clamp(0.0, 1.0);
    const A: f64 = 4.5;
    if tau < 1.0 / 3.0 {
        (0.5 * A * tau * tau, A * tau, A)
    } else if tau <= 2.0 / 3.0 {
        (0.25 + 1.5 * (tau - 1.0 / 3.0), 1.5, 0.0)
    } else {
        let r = 1.0 - tau;
        (1.0 - 0.5 * A * r * r, A * r, -A)
    }
}

/// Fraction of the way from the origin to the current step's target, with
/// its time derivatives, plus the signed axis of the current step.
fn step_profile(t: f64, step: f64, order: &[String]) -> Result<(f64, f64, f64, SignedAxis)> {
    let total = 2 * order.len();
    let k = ((t / step).floor() as usize).min(total);
    if k >= total {
        let last = order.last().ok_or_else(|| Error::invalid("sweep order is empty"))?;
        return Ok((0.0, 0.0, 0.0, last.parse()?));
    }
    let axis: SignedAxis = order[k / 2].parse()?;
    let (s, ds, dds) = trapezoid((t - k as f64 * step) / step);
    let (ds, dds) = (ds / step, dds / (step * step));
    Ok(if k % 2 == 0 {
        (s, ds, dds, axis)
    } else {
        (1.0 - s, -ds, -dds, axis)
    })
}

pub fn sweep_setpoint(t: f64, spec: &SweepSpec) -> Result<PoseSetpoint> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    let mut sp = PoseSetpoint::origin();
    match spec {
        SweepSpec::Hover {} => {}
        SweepSpec::Orientation {
            amplitude_deg,
            step_duration,
            order,
        } => {
            let (s, ds, _, ax) = step_profile(t, *step_duration, order)?;
            let amp = amplitude_deg.to_radians() * ax.sign;
            sp.q = quat_from_axis_angle(&ax.axis, amp * s)?;
            sp.angular_velocity = ax.axis * (amp * ds);
        }
        SweepSpec::Position {
            amplitude,
            step_duration,
            order,
        } => {
            let (s, ds, dds, ax) = step_profile(t, *step_duration, order)?;
            let d = ax.axis * (amplitude * ax.sign);
            sp.position = d * s;
            sp.velocity = d * ds;
            sp.acceleration = d * dds;
        }
        SweepSpec::ContinuousRoll {
            revolutions,
            period,
            axis,
        } => {
            let ax: SignedAxis = axis.parse()?;
            let rate = 2.0 * PI / period * ax.sign;
            let end = revolutions * period;
            sp.q = quat_from_axis_angle(&ax.axis, rate * t.min(end))?;
            if t < end {
                sp.angular_velocity = ax.axis * rate;
            }
        }
        SweepSpec::AttitudeStep { axis, angle_deg } => {
            let ax: SignedAxis = axis.parse()?;
            sp.q = quat_from_axis_angle(&ax.axis, angle_deg.to_radians() * ax.sign)?;
        }
    }
    Ok(sp)
}
