//! Newton–Euler plant for the airframe.

use nalgebra::Matrix3;

use crate::allocation::{thrust_direction, DroneModel};
use crate::spatial::{integrate_orientation, rotate, UnitQuaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    /// World frame, m.
    pub position: Vec3,
    /// World frame, m/s.
    pub velocity: Vec3,
    /// Body-to-world.
    pub q: UnitQuaternion,
    /// Body frame, rad/s.
    pub omega: Vec3,
}

impl RigidBodyState {
    pub fn at_rest(position: Vec3, q: UnitQuaternion) -> RigidBodyState {
        RigidBodyState {
            position,
            velocity: Vec3::zeros(),
            q,
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.omega.iter()).all(|v| v.is_finite())
            && self.q.coords.iter().all(|v| v.is_finite())
    }
}

/// Body-frame force and moment of every arm for actual throttles and angles.
pub fn arm_loads(model: &DroneModel, u: &[f64], a: &[f64]) -> (Vec<Vec3>, Vec<Vec3>) {
    model
        .geometry
        .arms
        .iter()
        .zip(u)
        .zip(a)
        .map(|((arm, &ui), &ai)| {
            let n = thrust_direction(arm, ai).n;
            let f = n * (model.thrust_constant * ui);
            let m = arm.r.cross(&f) + n * (model.torque_constant * arm.spin * ui);
            (f, m)
        })
        .unzip()
}

fn euler_rate(inertia: &Matrix3<f64>, inv: &Matrix3<f64>, moment: &Vec3, w: &Vec3) -> Vec3 {
    inv * (moment - w.cross(&(inertia * w)))
}

/// One step: semi-implicit Euler for translation, RK4 for Euler's equations,
/// then the orientation advanced with the new body rate.
pub fn rigid_body_step(
    state: &RigidBodyState,
    forces: &[Vec3],
    torques: &[Vec3],
    model: &DroneModel,
    dt: f64,
) -> RigidBodyState {
    let f_body: Vec3 = forces.iter().sum();
    let m_body: Vec3 = torques.iter().sum();
    let accel = rotate(&state.q, &f_body) / model.mass - Vec3::new(0.0, 0.0, model.gravity);
    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;

    let i = &model.inertia;
    let inv = i.try_inverse().unwrap_or_else(Matrix3::zeros);
    let w = state.omega;
    let k1 = euler_rate(i, &inv, &m_body, &w);
    let k2 = euler_rate(i, &inv, &m_body, &(w + k1 * (dt / 2.0)));
    let k3 = euler_rate(i, &inv, &m_body, &(w + k2 * (dt / 2.0)));
    let k4 = euler_rate(i, &inv, &m_body, &(w + k3 * dt));
    let omega = w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

    RigidBodyState {
        position,
        velocity,
        q: integrate_orientation(&state.q, &omega, dt),
        omega,
    }
}
