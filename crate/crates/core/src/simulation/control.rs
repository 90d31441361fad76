//! Pose PID producing a world-frame force and torque demand.
//!
//! Position and attitude are separate axis groups with isotropic gains. The
//! integrators store the integral term itself (already multiplied by `ki`)
//! so the anti-windup clamp is in output units. In proportional-on-measurement
//! mode the P term accumulates `-kp·Δy` from the measured rates and the
//! D term acts on the measured rate; the integrator alone pulls towards the
//! setpoint, which removes the kick of setpoint steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidAxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on each component of the integral term, in output units.
    pub i_limit: f64,
}

impl PidAxisGains {
    fn validate(&self, group: &str) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd), ("i_limit", self.i_limit)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{group}.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub position: PidAxisGains,
    pub attitude: PidAxisGains,
    pub proportional_on_measurement: bool,
}

impl Default for PidGains {
    /// Triple closed-loop poles at 3 rad/s for both groups, for 2.4 kg and
    /// 0.02 kg·m². Faster attitude poles go unstable with the 36 ms servo delay.
    fn default() -> Self {
        PidGains {
            position: PidAxisGains {
                kp: 64.8,
                ki: 64.8,
                kd: 21.6,
                i_limit: 10.0,
            },
            attitude: PidAxisGains {
                kp: 0.54,
                ki: 0.54,
                kd: 0.18,
                i_limit: 1.0,
            },
            proportional_on_measurement: false,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        self.position.validate("position")?;
        self.attitude.validate("attitude")
    }
}

/// Errors are setpoint minus measurement, all in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseError {
    pub position: Vec3,
    /// Rotation vector taking the current attitude to the setpoint.
    pub orientation: Vec3,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

/// Measured world-frame rates (used by the proportional-on-measurement mode).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rates {
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub i_position: Vec3,
    pub i_attitude: Vec3,
    pub p_position: Vec3,
    pub p_attitude: Vec3,
}

fn clamp(v: Vec3, limit: f64) -> Vec3 {
    v.map(|c| c.clamp(-limit, limit))
}

/// One controller tick. `weight` is m·g; `feedforward` is m times the
/// setpoint acceleration. Returns (F, M) in the world frame.
pub fn pid_update(
    state: &mut PidState,
    err: &PoseError,
    rates: &Rates,
    gains: &PidGains,
    weight: f64,
    feedforward: &Vec3,
    dt: f64,
) -> (Vec3, Vec3) {
    debug_assert!(dt > 0.0);
    let (gp, ga) = (&gains.position, &gains.attitude);
    state.i_position = clamp(state.i_position + err.position * (gp.ki * dt), gp.i_limit);
    state.i_attitude = clamp(state.i_attitude + err.orientation * (ga.ki * dt), ga.i_limit);

    let (pf, df, pm, dm) = if gains.proportional_on_measurement {
        state.p_position -= rates.velocity * (gp.kp * dt);
        state.p_attitude -= rates.angular_velocity * (ga.kp * dt);
        (
            state.p_position,
            -rates.velocity * gp.kd,
            state.p_attitude,
            -rates.angular_velocity * ga.kd,
        )
    } else {
        (
            err.position * gp.kp,
            err.velocity * gp.kd,
            err.orientation * ga.kp,
            err.angular_velocity * ga.kd,
        )
    };

    let force = pf + state.i_position + df + feedforward + Vec3::new(0.0, 0.0, weight);
    let torque = pm + state.i_attitude + dm;
    (force, torque)
}
