//! Control allocation: turning a desired wrench into per-arm throttles and
//! arm angles.
//!
//! The optimizing allocator ([`sqp`]) minimizes a convex penalty on
//! throttles and arm-angle rates subject to the exact nonlinear wrench
//! constraint, solving the first-order optimality conditions with Newton's
//! method on the KKT system. The [`pinv`] allocator is the classic linear
//! baseline over per-arm vectored-thrust coordinates.

pub mod kkt;
pub mod model;
pub mod penalty;
pub mod pinv;
pub mod sqp;

use nalgebra::{Matrix3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DroneGeometry;
use crate::spatial::{is_finite, UnitQuaternion, Vec3};

pub use kkt::{assemble_kkt, newton_step, step_scale, KktSystem, NewtonStep};
pub use model::{arm_wrench, constraint_residual, thrust_direction, ArmWrench, ThrustDirection};
pub use penalty::{objective, objective_derivatives, penalty_arm_rate, penalty_throttle, Penalty};
pub use pinv::{pinv_allocate, PinvAllocator};
pub use sqp::{sqp_allocate, SqpAllocator};

/// Physical constants the allocator and the simulator share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Thrust at full throttle, N.
    pub thrust_constant: f64,
    /// Propeller drag torque at full throttle, N·m.
    pub torque_constant: f64,
    /// Control period, s.
    pub dt: f64,
    pub mass: f64,
    pub gravity: f64,
    /// Principal moments of inertia, kg·m².
    pub inertia: [f64; 3],
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            thrust_constant: 15.0,
            torque_constant: 0.18,
            dt: 0.005,
            mass: 2.4,
            gravity: 9.81,
            inertia: [0.02, 0.02, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroneModel {
    pub geometry: DroneGeometry,
    pub thrust_constant: f64,
    pub torque_constant: f64,
    pub dt: f64,
    pub mass: f64,
    pub gravity: f64,
    pub inertia: Matrix3<f64>,
}

impl DroneModel {
    pub fn new(geometry: DroneGeometry, params: &ModelParams) -> Result<DroneModel> {
        let model = DroneModel {
            geometry,
            thrust_constant: params.thrust_constant,
            torque_constant: params.torque_constant,
            dt: params.dt,
            mass: params.mass,
            gravity: params.gravity,
            inertia: Matrix3::from_diagonal(&Vec3::from(params.inertia)),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("thrust constant", self.thrust_constant)?;
        positive("control period", self.dt)?;
        positive("mass", self.mass)?;
        positive("gravity", self.gravity)?;
        if !(self.torque_constant >= 0.0) || !self.torque_constant.is_finite() {
            return Err(Error::invalid("torque constant must be non-negative"));
        }
        let eig = self.inertia.symmetric_eigenvalues();
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid("inertia must be positive definite"));
        }
        if self.geometry.n_arms() == 0 {
            return Err(Error::invalid("geometry has no arms"));
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.geometry.n_arms()
    }

    /// Throttle at which the arms would lift the weight by equal shares.
    pub fn hover_share(&self) -> f64 {
        self.mass * self.gravity / (self.thrust_constant * self.n_arms() as f64)
    }
}

/// Wrench demand in the world frame plus the current attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocatorInput {
    /// Body-to-world orientation.
    pub q: UnitQuaternion,
    /// Desired force, world frame, N.
    pub force: Vec3,
    /// Desired torque, world frame, N·m.
    pub torque: Vec3,
}

impl AllocatorInput {
    pub fn validate(&self) -> Result<()> {
        if !is_finite(&self.force) {
            return Err(Error::invalid("force contains a non-finite component"));
        }
        if !is_finite(&self.torque) {
            return Err(Error::invalid("torque contains a non-finite component"));
        }
        if !self.q.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("orientation contains a non-finite component"));
        }
        Ok(())
    }
}

/// Warm-start data carried from one allocation to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorState {
    pub u: Vec<f64>,
    /// Arm angles, unwrapped (continuous rotation).
    pub a: Vec<f64>,
    pub lambda: Vector6<f64>,
    /// Angles the rate penalty is measured against.
    pub a_prev: Vec<f64>,
}

impl AllocatorState {
    /// Equal hover share on every arm, zero angles and multipliers.
    pub fn cold(model: &DroneModel) -> AllocatorState {
        let n = model.n_arms();
        AllocatorState {
            u: vec![model.hover_share(); n],
            a: vec![0.0; n],
            lambda: Vector6::zeros(),
            a_prev: vec![0.0; n],
        }
    }

    pub fn validate(&self, n_arms: usize) -> Result<()> {
        if self.u.len() != n_arms || self.a.len() != n_arms || self.a_prev.len() != n_arms {
            return Err(Error::invalid(format!(
                "warm state lengths (u {}, a {}, a_prev {}) do not match {n_arms} arms",
                self.u.len(),
                self.a.len(),
                self.a_prev.len()
            )));
        }
        let finite = self
            .u
            .iter()
            .chain(&self.a)
            .chain(&self.a_prev)
            .chain(self.lambda.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("warm state contains a non-finite value"));
        }
        Ok(())
    }

    /// State to warm-start the next call from a solution.
    pub fn from_solution(s: &AllocatorSolution) -> AllocatorState {
        AllocatorState {
            u: s.u.clone(),
            a: s.a.clone(),
            lambda: s.lambda,
            a_prev: s.a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorSolution {
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub lambda: Vector6<f64>,
    pub iterations: usize,
    /// Norm of the wrench constraint (torque rows weighted by the torque scale).
    pub residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Penalty shapes of the allocation objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyWeights {
    /// Quadratic throttle weight.
    pub w_u: f64,
    /// Quadratic arm-rate weight, s².
    pub w_a: f64,
    /// Weight of the quadratic bound-violation terms.
    pub w_lim: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    /// Arm-rate bound, rad/s.
    pub v_lim: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            w_u: 1.0,
            w_a: 0.01,
            w_lim: 100.0,
            u_lo: 0.0,
            u_hi: 1.0,
            v_lim: 2.0 * std::f64::consts::PI,
        }
    }
}

impl PenaltyWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_u", self.w_u), ("w_a", self.w_a), ("w_lim", self.w_lim)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("penalty weight {name} must be positive")));
            }
        }
        if !(self.u_hi > self.u_lo) || !(self.v_lim > 0.0) {
            return Err(Error::invalid("penalty bounds must be ordered and positive"));
        }
        Ok(())
    }
}

/// Step caps and termination tolerances of the SQP loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Largest throttle change per iteration.
    pub du_lim: f64,
    /// Largest arm-angle change per iteration, rad.
    pub da_lim: f64,
    /// Relative objective change below which the objective counts as settled.
    pub tol_objective: f64,
    /// Constraint norm below which the wrench counts as met.
    pub tol_constraint: f64,
    /// Floor of the objective in the relative-change test.
    pub objective_floor: f64,
    /// Factor applied to the torque rows of the constraint norm.
    pub torque_scale: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            du_lim: 0.1,
            da_lim: 0.2,
            tol_objective: 1e-4,
            tol_constraint: 1e-5,
            objective_floor: 1e-8,
            torque_scale: 1.0,
            max_iter: 50,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.du_lim,
            self.da_lim,
            self.tol_objective,
            self.tol_constraint,
            self.objective_floor,
            self.torque_scale,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !ok || self.max_iter == 0 {
            return Err(Error::invalid(
                "solver limits and tolerances must be positive and max_iter at least 1",
            ));
        }
        Ok(())
    }

    /// Constraint norm with the torque rows scaled.
    pub fn weighted_norm(&self, g: &Vector6<f64>) -> f64 {
        let f = g.fixed_rows::<3>(0).norm_squared();
        let m = g.fixed_rows::<3>(3).norm_squared();
        (f + self.torque_scale * self.torque_scale * m).sqrt()
    }
}
