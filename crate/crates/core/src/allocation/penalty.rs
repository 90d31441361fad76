//! Piecewise-quadratic penalties and the allocation objective.
//!
//! Both penalties are C¹ and have a second derivative bounded below by the
//! quadratic weight, so the objective is strictly convex in `(u, a)`.

use crate::allocation::PenaltyWeights;

/// Value and first two derivatives of a scalar penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `w_u·u² + w_lim·(max(0, u − u_hi)² + max(0, u_lo − u)²)`
pub fn penalty_throttle(u: f64, w: &PenaltyWeights) -> Penalty {
    let over = (u - w.u_hi).max(0.0);
    let under = (w.u_lo - u).max(0.0);
    let mut d2 = 2.0 * w.w_u;
    if u > w.u_hi {
        d2 += 2.0 * w.w_lim;
    }
    if u < w.u_lo {
        d2 += 2.0 * w.w_lim;
    }
    Penalty {
        value: w.w_u * u * u + w.w_lim * (over * over + under * under),
        d1: 2.0 * w.w_u * u + 2.0 * w.w_lim * (over - under),
        d2,
    }
}

/// `w_a·v² + w_lim·max(0, |v| − v_lim)²` for an arm rate `v` in rad/s.
pub fn penalty_arm_rate(v: f64, w: &PenaltyWeights) -> Penalty {
    let excess = (v.abs() - w.v_lim).max(0.0);
    Penalty {
        value: w.w_a * v * v + w.w_lim * excess * excess,
        d1: 2.0 * w.w_a * v + 2.0 * w.w_lim * excess * v.signum(),
        d2: 2.0 * w.w_a + if excess > 0.0 { 2.0 * w.w_lim } else { 0.0 },
    }
}

/// `Σ p_u(u_i) + Σ p_ȧ((a_i − a_prev,i)/Δt)`
pub fn objective(u: &[f64], a: &[f64], a_prev: &[f64], dt: f64, w: &PenaltyWeights) -> f64 {
    let throttle: f64 = u.iter().map(|&ui| penalty_throttle(ui, w).value).sum();
    let rate: f64 = a
        .iter()
        .zip(a_prev)
        .map(|(&ai, &pi)| penalty_arm_rate((ai - pi) / dt, w).value)
        .sum();
    throttle + rate
}

/// Gradient and (diagonal) Hessian of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveDerivatives {
    pub grad_u: Vec<f64>,
    pub grad_a: Vec<f64>,
    pub hess_u: Vec<f64>,
    pub hess_a: Vec<f64>,
}

pub fn objective_derivatives(
    u: &[f64],
    a: &[f64],
    a_prev: &[f64],
    dt: f64,
    w: &PenaltyWeights,
) -> ObjectiveDerivatives {
    let (grad_u, hess_u) = u
        .iter()
        .map(|&ui| {
            let p = penalty_throttle(ui, w);
            (p.d1, p.d2)
        })
        .unzip();
    let (grad_a, hess_a) = a
        .iter()
        .zip(a_prev)
        .map(|(&ai, &pi)| {
            let p = penalty_arm_rate((ai - pi) / dt, w);
            (p.d1 / dt, p.d2 / (dt * dt))
        })
        .unzip();
    ObjectiveDerivatives {
        grad_u,
        grad_a,
        hess_u,
        hess_a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
        let (p, m, c) = (f(x + h), f(x - h), f(x));
        ((p - m) / (2.0 * h), (p - 2.0 * c + m) / (h * h))
    }

    #[test]
    fn throttle_penalty_basics() {
        let w = PenaltyWeights::default();
        let p0 = penalty_throttle(0.0, &w);
        assert_eq!((p0.value, p0.d1), (0.0, 0.0));
        let jump = penalty_throttle(1.1, &w).value - penalty_throttle(0.9, &w).value;
        assert!(jump > w.w_lim * 0.01 * 0.99);
    }

    #[test]
    fn derivatives_match_differences_near_kinks() {
        let w = PenaltyWeights::default();
        let h = 1e-6;
        for base in [0.0, 1.0] {
            for off in [-1e-3, 1e-3] {
                let u = base + off;
                let p = penalty_throttle(u, &w);
                let (d1, _) = central(|x| penalty_throttle(x, &w).value, u, h);
                assert!((d1 - p.d1).abs() <= 1e-6 * p.d1.abs().max(1.0));
                let (dd, _) = central(|x| penalty_throttle(x, &w).d1, u, h);
                assert!((dd - p.d2).abs() <= 1e-6 * p.d2.abs());
            }
        }
        for base in [w.v_lim, -w.v_lim] {
            for off in [-1e-3, 1e-3] {
                let v = base + off;
                let p = penalty_arm_rate(v, &w);
                let (d1, _) = central(|x| penalty_arm_rate(x, &w).value, v, h);
                assert!((d1 - p.d1).abs() <= 1e-6 * p.d1.abs().max(1.0));
                let (dd, _) = central(|x| penalty_arm_rate(x, &w).d1, v, h);
                assert!((dd - p.d2).abs() <= 1e-6 * p.d2.abs());
            }
        }
    }

    #[test]
    fn objective_examples() {
        let w = PenaltyWeights::default();
        let a = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(objective(&[0.0; 4], &a, &a, 0.005, &w), 0.0);
        let u = [0.1, 0.2, 0.5, 0.7];
        let u2: Vec<f64> = u.iter().map(|x| x * 1.2).collect();
        let o1 = objective(&u, &a, &a, 0.005, &w);
        let o2 = objective(&u2, &a, &a, 0.005, &w);
        assert!((o2 - 1.44 * o1).abs() < 1e-12);
        let half: Vec<f64> = u.iter().map(|x| x * 0.5).collect();
        let oh = objective(&half, &a, &a, 0.005, &w);
        assert!((o1 - 4.0 * oh).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let w = PenaltyWeights::default();
        let dt = 0.005;
        let u = [0.2, 1.05, -0.03, 0.6];
        let a = [0.01, -0.02, 0.5, 0.0];
        let a_prev = [0.0, 0.0, 0.45, -0.04];
        let d = objective_derivatives(&u, &a, &a_prev, dt, &w);
        let h = 1e-7;
        for i in 0..4 {
            let mut up = u;
            let mut um = u;
            up[i] += h;
            um[i] -= h;
            let fd = (objective(&up, &a, &a_prev, dt, &w) - objective(&um, &a, &a_prev, dt, &w)) / (2.0 * h);
            assert!((fd - d.grad_u[i]).abs() <= 1e-6 * d.grad_u[i].abs().max(1.0));
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let fd = (objective(&u, &ap, &a_prev, dt, &w) - objective(&u, &am, &a_prev, dt, &w)) / (2.0 * h);
            assert!((fd - d.grad_a[i]).abs() <= 1e-6 * d.grad_a[i].abs().max(1.0));
            let hd = (objective_derivatives(&u, &ap, &a_prev, dt, &w).grad_a[i]
                - objective_derivatives(&u, &am, &a_prev, dt, &w).grad_a[i])
                / (2.0 * h);
            assert!((hd - d.hess_a[i]).abs() <= 1e-6 * d.hess_a[i]);
        }
    }

    proptest! {
        #[test]
        fn penalties_are_convex(u in -3.0f64..3.0, v in -30.0f64..30.0) {
            let w = PenaltyWeights::default();
            prop_assert!(penalty_throttle(u, &w).d2 >= 2.0 * w.w_u);
            prop_assert!(penalty_arm_rate(v, &w).d2 >= 2.0 * w.w_a);
            prop_assert!(penalty_throttle(u, &w).value >= 0.0);
        }

        #[test]
        fn penalty_first_derivative_is_continuous(u in -2.0f64..2.0) {
            let w = PenaltyWeights::default();
            let e = 1e-9;
            let jump = (penalty_throttle(u + e, &w).d1 - penalty_throttle(u - e, &w).d1).abs();
            prop_assert!(jump < 1e-5);
        }
    }
}
