//! Arm servo: a pure transport delay followed by a slew-rate limit.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on queue release times so a delay that is a whole number of
/// ticks releases on the expected tick despite rounding.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoParams {
    /// Transport delay, s.
    pub delay: f64,
    /// Slew-rate limit, rad/s.
    pub rate_limit: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        ServoParams {
            delay: 0.036,
            rate_limit: 2.4 * 2.0 * PI,
        }
    }
}

impl ServoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            return Err(Error::invalid(format!("servo delay must be >= 0, got {}", self.delay)));
        }
        if !(self.rate_limit > 0.0) || !self.rate_limit.is_finite() {
            return Err(Error::invalid(format!(
                "servo rate limit must be positive, got {}",
                self.rate_limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServoState {
    /// Actual arm angle, rad (unwrapped).
    pub angle: f64,
    /// Setpoints waiting out the delay, with their release times.
    pub command_queue: VecDeque<(f64, f64)>,
    /// Latest setpoint that has left the queue.
    pub target: f64,
    pub rate_limit: f64,
    pub delay: f64,
    clock: f64,
}

impl ServoState {
    /// Servo at rest at `angle`.
    pub fn new(angle: f64, params: &ServoParams) -> ServoState {
        ServoState {
            angle,
            command_queue: VecDeque::new(),
            target: angle,
            rate_limit: params.rate_limit,
            delay: params.delay,
            clock: 0.0,
        }
    }
}

/// Advances the servo by `dt` with `setpoint` entering the delay line now.
pub fn servo_update(s: &ServoState, setpoint: f64, dt: f64) -> ServoState {
    let mut next = s.clone();
    next.step(setpoint, dt);
    next
}

impl ServoState {
    pub fn step(&mut self, setpoint: f64, dt: f64) {
        debug_assert!(dt > 0.0);
        self.command_queue.push_back((self.clock + self.delay, setpoint));
        while let Some(&(release, value)) = self.command_queue.front() {
            if release > self.clock + CLOCK_EPS {
                break;
            }
            self.target = value;
            self.command_queue.pop_front();
        }
        self.clock += dt;
        let max_step = self.rate_limit * dt;
        let err = self.target - self.angle;
        self.angle = if err.abs() <= max_step {
            self.target
        } else {
            self.angle + max_step * err.signum()
        };
    }
}
