//! Moore-Penrose baseline over per-arm thrust-plane coordinates.
//!
//! With `v_i = u_i·(cos a_i, sin a_i)` the arm wrench is linear in `v_i`,
//! so the whole wrench is `B·v` for a constant 6×2N matrix `B`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::allocation::model::{residual_unchecked, stack};
use crate::allocation::penalty::objective;
use crate::allocation::{AllocatorInput, AllocatorSolution, DroneModel, PenaltyWeights};
use crate::error::{Error, Result};
use crate::geometry::{numerical_rank, thrust_plane_basis};
use crate::spatial::rotate;

/// Throttle below which an arm keeps its previous angle.
const IDLE_THROTTLE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PinvAllocator {
    pub model: DroneModel,
    pinv: DMatrix<f64>,
    prev_a: Vec<f64>,
}

fn wrench_matrix(model: &DroneModel) -> Result<DMatrix<f64>> {
    let n = model.n_arms();
    let mut b = DMatrix::zeros(6, 2 * n);
    for (i, arm) in model.geometry.arms.iter().enumerate() {
        if !arm.is_rotating() {
            return Err(Error::invalid(format!(
                "pseudoinverse allocation needs rotating arms; arm {i} is fixed"
            )));
        }
        let (b1, b2) = thrust_plane_basis(arm)?;
        for (j, d) in [b1, b2].iter().enumerate() {
            let m = arm.r.cross(d) * model.thrust_constant + d * (model.torque_constant * arm.spin);
            b.set_column(2 * i + j, &stack(&(d * model.thrust_constant), &m));
        }
    }
    Ok(b)
}

/// `a` shifted by whole turns to lie within π of `reference`.
fn unwrap_near(a: f64, reference: f64) -> f64 {
    let d = a - reference;
    reference + (d - 2.0 * PI * (d / (2.0 * PI)).round())
}

impl PinvAllocator {
    pub fn new(model: DroneModel) -> Result<Self> {
        model.validate()?;
        let b = wrench_matrix(&model)?;
        let rank = numerical_rank(&b);
        if rank < 6 {
            return Err(Error::Infeasible(format!(
                "wrench map has rank {rank}, pseudoinverse allocation needs 6"
            )));
        }
        let pinv = b
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let prev_a = vec![0.0; model.n_arms()];
        Ok(PinvAllocator { model, pinv, prev_a })
    }

    pub fn previous_angles(&self) -> &[f64] {
        &self.prev_a
    }

    pub fn set_previous_angles(&mut self, a: Vec<f64>) -> Result<()> {
        if a.len() != self.model.n_arms() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("previous angles must be finite, one per arm"));
        }
        self.prev_a = a;
        Ok(())
    }

    pub fn allocate(&mut self, input: &AllocatorInput) -> Result<AllocatorSolution> {
        input.validate()?;
        let q_inv = input.q.inverse();
        let w = stack(&rotate(&q_inv, &input.force), &rotate(&q_inv, &input.torque));
        let v: DVector<f64> = &self.pinv * DVector::from_column_slice(w.as_slice());
        let n = self.model.n_arms();
        let mut u = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            let (c, s) = (v[2 * i], v[2 * i + 1]);
            let ui = c.hypot(s);
            u.push(ui);
            a.push(if ui < IDLE_THROTTLE {
                self.prev_a[i]
            } else {
                unwrap_near(s.atan2(c), self.prev_a[i])
            });
        }
        let g = residual_unchecked(&u, &a, input, &self.model);
        let sol = AllocatorSolution {
            objective: objective(&u, &a, &self.prev_a, self.model.dt, &PenaltyWeights::default()),
            u,
            a,
            lambda: Default::default(),
            iterations: 1,
            residual: g.norm(),
            converged: true,
        };
        self.prev_a = sol.a.clone();
        Ok(sol)
    }
}

/// One-shot pseudoinverse allocation; `prev_a` supplies the angles kept by
/// idle arms and the branch each angle is unwrapped onto.
pub fn pinv_allocate(
    input: &AllocatorInput,
    model: &DroneModel,
    prev_a: &[f64],
) -> Result<AllocatorSolution> {
    let mut alloc = PinvAllocator::new(model.clone())?;
    alloc.set_previous_angles(prev_a.to_vec())?;
    alloc.allocate(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{ModelParams, SqpAllocator, SolverSettings};
    use crate::geometry::{build_catalog, CatalogId};
    use crate::spatial::{quat_from_axis_angle, UnitQuaternion, Vec3};

    fn model(id: CatalogId) -> DroneModel {
        DroneModel::new(build_catalog(id, 0.206).unwrap(), &ModelParams::default()).unwrap()
    }

    fn hover_at(m: &DroneModel, q: UnitQuaternion) -> AllocatorInput {
        AllocatorInput {
            q,
            force: Vec3::new(0.0, 0.0, m.mass * m.gravity),
            torque: Vec3::zeros(),
        }
    }

    #[test]
    fn hover_is_met_exactly() {
        let m = model(CatalogId::OctahedronRot);
        let sol = pinv_allocate(&hover_at(&m, UnitQuaternion::identity()), &m, &[0.0; 6]).unwrap();
        assert!(sol.residual < 1e-8);
        assert!(sol.u.iter().all(|u| *u >= 0.0));
    }

    #[test]
    fn zero_demand_gives_zero_throttle_and_keeps_angles() {
        let m = model(CatalogId::CubeRot);
        let prev = [0.1, -0.2, 3.0, 7.0, 0.0, 1.0, 2.0, -9.0];
        let input = AllocatorInput {
            q: UnitQuaternion::identity(),
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
        };
        let sol = pinv_allocate(&input, &m, &prev).unwrap();
        assert!(sol.u.iter().all(|u| *u == 0.0));
        assert_eq!(sol.a, prev.to_vec());
    }

    #[test]
    fn rejects_fixed_and_rank_deficient_layouts() {
        assert!(PinvAllocator::new(model(CatalogId::HexagonTilt30Fixed)).is_err());
        assert!(PinvAllocator::new(model(CatalogId::OctahedronRot)).is_ok());
    }

    #[test]
    fn unwrap_stays_within_half_turn() {
        assert!((unwrap_near(0.1, 4.0 * PI) - (4.0 * PI + 0.1)).abs() < 1e-12);
        assert!((unwrap_near(-3.0, 3.0) - (2.0 * PI - 3.0)).abs() < 1e-12);
    }

    /// Pitching through 90° brings the +x arm to vertical, after which its
    /// thrust has to point to the other side of its plane.
    #[test]
    fn vertical_arm_flips_under_pinv_but_not_under_sqp() {
        let m = model(CatalogId::OctahedronRot);
        let mut pinv = PinvAllocator::new(m.clone()).unwrap();
        let mut sqp =
            SqpAllocator::new(m.clone(), PenaltyWeights::default(), SolverSettings::default()).unwrap();
        let axis = Vec3::new(0.0, 1.0, 0.0);
        let steps = 600;
        let mut prev_p: Option<Vec<f64>> = None;
        let mut prev_s: Option<Vec<f64>> = None;
        let (mut max_p, mut max_s) = (0.0_f64, 0.0_f64);
        for k in 0..=steps {
            let angle = PI * k as f64 / steps as f64;
            let input = hover_at(&m, quat_from_axis_angle(&axis, angle).unwrap());
            let sp = pinv.allocate(&input).unwrap();
            let ss = sqp.allocate(&input).unwrap();
            if let (Some(pp), Some(ps)) = (&prev_p, &prev_s) {
                for i in 0..6 {
                    max_p = max_p.max((sp.a[i] - pp[i]).abs());
                    max_s = max_s.max((ss.a[i] - ps[i]).abs());
                }
            }
            prev_p = Some(sp.a);
            prev_s = Some(ss.a);
        }
        assert!(max_p > PI / 2.0, "pinv max step {max_p}");
        let slack = 0.2;
        assert!(max_s <= 2.0 * PI * m.dt + slack, "sqp max step {max_s}");
    }
}
