//! Thrust and torque produced by one arm, and the wrench constraint.

use nalgebra::Vector6;

use crate::allocation::{AllocatorInput, DroneModel};
use crate::error::{Error, Result};
use crate::geometry::Arm;
use crate::spatial::{rotate, Vec3};

/// Thrust direction of an arm and its first two angle derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustDirection {
    pub n: Vec3,
    pub dn: Vec3,
    pub ddn: Vec3,
}

/// `n(a)`: the zero-angle direction rotated by `a` about the arm axis, with
/// `dn/da = x × n` and `d²n/da² = x × (x × n)`. Fixed arms return their
/// axis and zero derivatives.
pub fn thrust_direction(arm: &Arm, a: f64) -> ThrustDirection {
    if !arm.is_rotating() {
        return ThrustDirection {
            n: arm.z0,
            dn: Vec3::zeros(),
            ddn: Vec3::zeros(),
        };
    }
    // Rodrigues on z0 ⊥ x reduces to a rotation inside the thrust plane.
    let (s, c) = a.sin_cos();
    let b2 = arm.x.cross(&arm.z0);
    let n = arm.z0 * c + b2 * s;
    let dn = arm.x.cross(&n);
    let ddn = arm.x.cross(&dn);
    ThrustDirection { n, dn, ddn }
}

/// Force and moment of one arm with every partial derivative with respect
/// to its throttle `u` and angle `a`. Mixed second derivatives across arms
/// vanish, so nothing else is needed to assemble the KKT system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmWrench {
    pub f: Vec3,
    pub m: Vec3,
    pub df_du: Vec3,
    pub df_da: Vec3,
    pub d2f_du2: Vec3,
    pub d2f_da2: Vec3,
    pub d2f_duda: Vec3,
    pub dm_du: Vec3,
    pub dm_da: Vec3,
    pub d2m_du2: Vec3,
    pub d2m_da2: Vec3,
    pub d2m_duda: Vec3,
}

impl ArmWrench {
    pub fn dg_du(&self) -> Vector6<f64> {
        stack(&self.df_du, &self.dm_du)
    }

    pub fn dg_da(&self) -> Vector6<f64> {
        stack(&self.df_da, &self.dm_da)
    }

    pub fn d2g_da2(&self) -> Vector6<f64> {
        stack(&self.d2f_da2, &self.d2m_da2)
    }

    pub fn d2g_duda(&self) -> Vector6<f64> {
        stack(&self.d2f_duda, &self.d2m_duda)
    }
}

pub(crate) fn stack(top: &Vec3, bottom: &Vec3) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// `f = μ·u·n`, `m = μ·u·(r × n) + τ·s·u·n`.
pub fn arm_wrench(arm: &Arm, u: f64, a: f64, mu: f64, tau: f64) -> ArmWrench {
    let ThrustDirection { n, dn, ddn } = thrust_direction(arm, a);
    let moment_dir = |d: &Vec3| arm.r.cross(d) * mu + d * (tau * arm.spin);
    let dm_du = moment_dir(&n);
    let d2m_duda = moment_dir(&dn);
    let d2m_da2_unit = moment_dir(&ddn);
    ArmWrench {
        f: n * (mu * u),
        m: dm_du * u,
        df_du: n * mu,
        df_da: dn * (mu * u),
        d2f_du2: Vec3::zeros(),
        d2f_da2: ddn * (mu * u),
        d2f_duda: dn * mu,
        dm_du,
        dm_da: d2m_duda * u,
        d2m_du2: Vec3::zeros(),
        d2m_da2: d2m_da2_unit * u,
        d2m_duda,
    }
}

/// `G = [Σf − q⁻¹F; Σm − q⁻¹M]` in the body frame.
pub fn constraint_residual(
    u: &[f64],
    a: &[f64],
    input: &AllocatorInput,
    model: &DroneModel,
) -> Result<Vector6<f64>> {
    let n = model.n_arms();
    if u.len() != n || a.len() != n {
        return Err(Error::invalid(format!(
            "expected {n} throttles and angles, got {} and {}",
            u.len(),
            a.len()
        )));
    }
    Ok(residual_unchecked(u, a, input, model))
}

pub(crate) fn residual_unchecked(
    u: &[f64],
    a: &[f64],
    input: &AllocatorInput,
    model: &DroneModel,
) -> Vector6<f64> {
    let q_inv = input.q.inverse();
    let mut f = -rotate(&q_inv, &input.force);
    let mut m = -rotate(&q_inv, &input.torque);
    for ((arm, &ui), &ai) in model.geometry.arms.iter().zip(u).zip(a) {
        let n = thrust_direction(arm, ai).n;
        f += n * (model.thrust_constant * ui);
        m += (arm.r.cross(&n) * model.thrust_constant + n * (model.torque_constant * arm.spin)) * ui;
    }
    stack(&f, &m)
}
