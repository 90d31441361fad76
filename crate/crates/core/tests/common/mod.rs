//! Oracles written independently of the library's own formulas. Shared by
//! the integration tests and by the acceptance target.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
use rand::Rng;

use omnirotor::allocation::{DroneModel, PenaltyWeights};
use omnirotor::geometry::Arm;

pub type V3 = Vector3<f64>;

/// Thrust direction by rotating `z0` about the arm axis with a quaternion.
pub fn direction(arm: &Arm, a: f64) -> V3 {
    if arm.x.cross(&arm.z0).norm() < 1e-12 || !arm.is_rotating() {
        return arm.z0;
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(arm.x), a) * arm.z0
}

/// Body force and moment of one arm.
pub fn arm_force_moment(arm: &Arm, u: f64, a: f64, mu: f64, tau: f64) -> (V3, V3) {
    let n = direction(arm, a);
    let f = n * (mu * u);
    (f, arm.r.cross(&f) + n * (tau * arm.spin * u))
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn throttle_cost(u: f64, w: &PenaltyWeights) -> f64 {
    w.w_u * u * u + w.w_lim * (sq((u - w.u_hi).max(0.0)) + sq((w.u_lo - u).max(0.0)))
}

pub fn rate_cost(v: f64, w: &PenaltyWeights) -> f64 {
    w.w_a * v * v + w.w_lim * sq((v.abs() - w.v_lim).max(0.0))
}

/// One arm's share of the Lagrangian, split into its throttle penalty,
/// rate penalty and `λ·[f; m]` parts.
pub fn arm_lagrangian_parts(
    model: &DroneModel,
    i: usize,
    u: f64,
    a: f64,
    a_prev: f64,
    lambda: &[f64; 6],
    w: &PenaltyWeights,
) -> [f64; 3] {
    let arm = &model.geometry.arms[i];
    let (f, m) = arm_force_moment(arm, u, a, model.thrust_constant, model.torque_constant);
    let g = [f.x, f.y, f.z, m.x, m.y, m.z];
    [
        throttle_cost(u, w),
        rate_cost((a - a_prev) / model.dt, w),
        (0..6).map(|r| lambda[r] * g[r]).sum::<f64>(),
    ]
}

/// Gradient `[∂L/∂u; ∂L/∂a; G]` by central differences of the per-arm
/// parts; the λ rows difference `λ·[f; m]` summed over arms minus `λ·t`.
pub fn fd_gradient_by_arm(
    model: &DroneModel,
    u: &[f64],
    a: &[f64],
    a_prev: &[f64],
    lambda: &[f64; 6],
    target: &[f64; 6],
    w: &PenaltyWeights,
    h: f64,
) -> DVector<f64> {
    let n = model.n_arms();
    let mut g = DVector::zeros(2 * n + 6);
    let diff = |p: [f64; 3], m: [f64; 3]| (0..3).map(|k| (p[k] - m[k]) / (2.0 * h)).sum::<f64>();
    for i in 0..n {
        let l = |du: f64, da: f64, lam: &[f64; 6]| arm_lagrangian_parts(model, i, u[i] + du, a[i] + da, a_prev[i], lam, w);
        g[i] = diff(l(h, 0.0, lambda), l(-h, 0.0, lambda));
        g[n + i] = diff(l(0.0, h, lambda), l(0.0, -h, lambda));
        for r in 0..6 {
            let mut lp = *lambda;
            let mut lm = *lambda;
            lp[r] += h;
            lm[r] -= h;
            g[2 * n + r] += diff(l(0.0, 0.0, &lp), l(0.0, 0.0, &lm));
        }
    }
    for r in 0..6 {
        g[2 * n + r] -= target[r];
    }
    g
}

/// Lagrangian Hessian by second differences. The Lagrangian is a sum of
/// per-arm terms, each a sum of three parts; every part is differenced on
/// its own so the small entries are not lost in the rounding of the large
/// penalty values.
pub fn fd_hessian_by_arm(
    model: &DroneModel,
    u: &[f64],
    a: &[f64],
    a_prev: &[f64],
    lambda: &[f64; 6],
    w: &PenaltyWeights,
    h: f64,
) -> DMatrix<f64> {
    let n = model.n_arms();
    let mut hm = DMatrix::zeros(2 * n + 6, 2 * n + 6);
    for i in 0..n {
        let l = |du: f64, da: f64, lam: &[f64; 6]| arm_lagrangian_parts(model, i, u[i] + du, a[i] + da, a_prev[i], lam, w);
        // Σ_parts Σ_k c_k · part(point_k)
        let stencil = |pts: &[(f64, [f64; 3])]| -> f64 {
            (0..3).map(|p| pts.iter().map(|(c, v)| c * v[p]).sum::<f64>()).sum::<f64>()
        };
        let c = l(0.0, 0.0, lambda);
        let hh = h * h;
        hm[(i, i)] = stencil(&[(1.0, l(h, 0.0, lambda)), (-2.0, c), (1.0, l(-h, 0.0, lambda))]) / hh;
        hm[(n + i, n + i)] = stencil(&[(1.0, l(0.0, h, lambda)), (-2.0, c), (1.0, l(0.0, -h, lambda))]) / hh;
        let ua = stencil(&[
            (1.0, l(h, h, lambda)),
            (-1.0, l(h, -h, lambda)),
            (-1.0, l(-h, h, lambda)),
            (1.0, l(-h, -h, lambda)),
        ]) / (4.0 * hh);
        hm[(i, n + i)] = ua;
        hm[(n + i, i)] = ua;
        for r in 0..6 {
            let mut lp = *lambda;
            let mut lm = *lambda;
            lp[r] += h;
            lm[r] -= h;
            let mixed = |du: f64, da: f64| {
                stencil(&[
                    (1.0, l(du, da, &lp)),
                    (-1.0, l(-du, -da, &lp)),
                    (-1.0, l(du, da, &lm)),
                    (1.0, l(-du, -da, &lm)),
                ]) / (4.0 * hh)
            };
            let (gu, ga) = (mixed(h, 0.0), mixed(0.0, h));
            hm[(i, 2 * n + r)] = gu;
            hm[(2 * n + r, i)] = gu;
            hm[(n + i, 2 * n + r)] = ga;
            hm[(2 * n + r, n + i)] = ga;
        }
    }
    hm
}

/// Entry-wise relative error; entries below 1 in magnitude are compared
/// absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// A random allocator state away from the penalty kinks, where the
/// second differences are meaningful. Returns `(u, a, a_prev, λ)`.
pub fn random_state(
    rng: &mut impl Rng,
    n: usize,
    dt: f64,
    w: &PenaltyWeights,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, [f64; 6]) {
    let margin_u = 1e-2;
    let margin_v = 0.2;
    let mut u = Vec::with_capacity(n);
    while u.len() < n {
        let x: f64 = rng.random_range(-0.3..1.3);
        if (x - w.u_lo).abs() > margin_u && (x - w.u_hi).abs() > margin_u {
            u.push(x);
        }
    }
    let a_prev: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let a: Vec<f64> = a_prev
        .iter()
        .map(|p| loop {
            let v: f64 = rng.random_range(-1.5 * w.v_lim..1.5 * w.v_lim);
            if (v.abs() - w.v_lim).abs() > margin_v {
                break p + v * dt;
            }
        })
        .collect();
    let mut lambda = [0.0; 6];
    for l in &mut lambda {
        *l = rng.random_range(-5.0..5.0);
    }
    (u, a, a_prev, lambda)
}

/// Per-arm vectored-thrust basis for a layout of rotating arms: column pair
/// `(2i, 2i+1)` is the wrench of unit thrust along `z0` and along `x × z0`.
pub fn planar_wrench_map(model: &DroneModel) -> DMatrix<f64> {
    let n = model.n_arms();
    let mut w = DMatrix::zeros(6, 2 * n);
    for (i, arm) in model.geometry.arms.iter().enumerate() {
        let e1 = arm.z0;
        let e2 = arm.x.cross(&arm.z0);
        for (k, e) in [e1, e2].iter().enumerate() {
            let f = e * model.thrust_constant;
            let m = arm.r.cross(&f) + e * (model.torque_constant * arm.spin);
            for r in 0..3 {
                w[(r, 2 * i + k)] = f[r];
                w[(3 + r, 2 * i + k)] = m[r];
            }
        }
    }
    w
}

fn wrap(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    x - two_pi * (x / two_pi).round()
}

/// Cheapest way for one arm to produce the planar thrust `(c, s)`: either
/// forward thrust at the polar angle or reverse thrust half a turn away,
/// each unwrapped to the nearest copy of `a_prev`.
pub fn arm_cost(c: f64, s: f64, a_prev: f64, dt: f64, w: &PenaltyWeights) -> (f64, f64, f64) {
    let r = c.hypot(s);
    let theta = s.atan2(c);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (u, ang) in [(r, theta), (-r, theta + std::f64::consts::PI)] {
        let a = a_prev + wrap(ang - a_prev);
        let cost = throttle_cost(u, w) + rate_cost((a - a_prev) / dt, w);
        if cost < best.0 {
            best = (cost, u, a);
        }
    }
    best
}

/// Global minimum of the allocation objective by zooming grid search over
/// the 2-D null space of the planar wrench map. `target` is the body-frame
/// wrench.
pub fn null_space_grid_search(model: &DroneModel, target: &[f64; 6], a_prev: &[f64], w: &PenaltyWeights) -> f64 {
    null_space_argmin(model, target, a_prev, w).0
}

/// Grid-search optimum with its throttles and angles.
pub fn null_space_argmin(
    model: &DroneModel,
    target: &[f64; 6],
    a_prev: &[f64],
    w: &PenaltyWeights,
) -> (f64, Vec<f64>, Vec<f64>) {
    let map = planar_wrench_map(model);
    assert_eq!(map.ncols() - 6, 2, "grid search needs a 2-D null space");
    let pinv = map.clone().pseudo_inverse(1e-12).expect("pseudoinverse");
    let z0 = &pinv * DVector::from_row_slice(target);
    let (n1, n2) = null_basis(&map, &pinv);
    let cost = |al: f64, be: f64| -> f64 {
        let z = &z0 + &n1 * al + &n2 * be;
        (0..model.n_arms())
            .map(|i| arm_cost(z[2 * i], z[2 * i + 1], a_prev[i], model.dt, w).0)
            .sum()
    };
    let mut center = (0.0, 0.0);
    let mut half = 4.0 * z0.norm().max(1.0);
    let steps = 120;
    let mut best = cost(0.0, 0.0);
    for _ in 0..8 {
        let mut local = (best, center);
        for i in 0..=steps {
            for j in 0..=steps {
                let al = center.0 - half + 2.0 * half * i as f64 / steps as f64;
                let be = center.1 - half + 2.0 * half * j as f64 / steps as f64;
                let c = cost(al, be);
                if c < local.0 {
                    local = (c, (al, be));
                }
            }
        }
        best = local.0;
        center = local.1;
        // Keep four grid cells on either side of the best point.
        half *= 8.0 / steps as f64;
    }
    let z = &z0 + &n1 * center.0 + &n2 * center.1;
    let (u, a) = (0..model.n_arms())
        .map(|i| {
            let (_, u, a) = arm_cost(z[2 * i], z[2 * i + 1], a_prev[i], model.dt, w);
            (u, a)
        })
        .unzip();
    (best, u, a)
}

/// Orthonormal basis of the null space of a 6×8 map: coordinate vectors
/// projected onto it, then Gram–Schmidt.
fn null_basis(map: &DMatrix<f64>, pinv: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let proj = DMatrix::identity(map.ncols(), map.ncols()) - pinv * map;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for k in 0..map.ncols() {
        let mut v = proj.column(k).into_owned();
        for b in &basis {
            let d = v.dot(b);
            v -= b * d;
        }
        if v.norm() > 1e-6 {
            basis.push(v.normalize());
        }
        if basis.len() == 2 {
            break;
        }
    }
    (basis[0].clone(), basis[1].clone())
}

use omnirotor::allocation::{
    arm_wrench, assemble_kkt, objective_derivatives, sqp_allocate, AllocatorInput, AllocatorState,
    SolverSettings, SqpAllocator,
};
use omnirotor::spatial::{rotate, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut impl Rng) -> V3 {
    loop {
        let v = V3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

pub fn random_attitude(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(random_unit(rng)), rng.random_range(0.0..std::f64::consts::PI))
}

/// Worst relative error of each derivative group over `n_states` random
/// states: (arm wrench partials, objective gradient and curvature, KKT
/// gradient K, Lagrangian Hessian H).
pub fn derivative_suite(model: &DroneModel, w: &PenaltyWeights, n_states: usize, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_arms();
    let (mu, tau) = (model.thrust_constant, model.torque_constant);
    let mut worst = [0.0f64; 4];
    for _ in 0..n_states {
        let (u, a, a_prev, lambda) = random_state(&mut rng, n, model.dt, w);

        let h1 = 1e-6;
        let h2 = 1e-4;
        for (i, arm) in model.geometry.arms.iter().enumerate() {
            let aw = arm_wrench(arm, u[i], a[i], mu, tau);
            let fm = |uu: f64, aa: f64| {
                let (f, m) = arm_force_moment(arm, uu, aa, mu, tau);
                [f.x, f.y, f.z, m.x, m.y, m.z]
            };
            let d = |p: [f64; 6], m: [f64; 6], s: f64| -> Vec<f64> { (0..6).map(|k| (p[k] - m[k]) / s).collect() };
            let c = fm(u[i], a[i]);
            let du = d(fm(u[i] + h1, a[i]), fm(u[i] - h1, a[i]), 2.0 * h1);
            let da = d(fm(u[i], a[i] + h1), fm(u[i], a[i] - h1), 2.0 * h1);
            let second = |p: [f64; 6], m: [f64; 6]| -> Vec<f64> { (0..6).map(|k| (p[k] - 2.0 * c[k] + m[k]) / (h2 * h2)).collect() };
            let daa = second(fm(u[i], a[i] + h2), fm(u[i], a[i] - h2));
            let duu = second(fm(u[i] + h2, a[i]), fm(u[i] - h2, a[i]));
            let cross: Vec<f64> = {
                let (pp, pm, mp, mm) = (
                    fm(u[i] + h2, a[i] + h2),
                    fm(u[i] + h2, a[i] - h2),
                    fm(u[i] - h2, a[i] + h2),
                    fm(u[i] - h2, a[i] - h2),
                );
                (0..6).map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h2 * h2)).collect()
            };
            let cat = |f: &Vec3, m: &Vec3| vec![f.x, f.y, f.z, m.x, m.y, m.z];
            let checks = [
                (cat(&aw.f, &aw.m), c.to_vec()),
                (cat(&aw.df_du, &aw.dm_du), du),
                (cat(&aw.df_da, &aw.dm_da), da),
                (cat(&aw.d2f_du2, &aw.d2m_du2), duu),
                (cat(&aw.d2f_da2, &aw.d2m_da2), daa),
                (cat(&aw.d2f_duda, &aw.d2m_duda), cross),
            ];
            for (x, y) in &checks {
                worst[0] = worst[0].max(max_rel_err(x, y));
            }
        }

        let od = objective_derivatives(&u, &a, &a_prev, model.dt, w);
        for i in 0..n {
            let fu = |x: f64| throttle_cost(x, w);
            let fa = |x: f64| rate_cost((x - a_prev[i]) / model.dt, w);
            let g_u = (fu(u[i] + h1) - fu(u[i] - h1)) / (2.0 * h1);
            let g_a = (fa(a[i] + h1) - fa(a[i] - h1)) / (2.0 * h1);
            let c_u = (fu(u[i] + h2) - 2.0 * fu(u[i]) + fu(u[i] - h2)) / (h2 * h2);
            let c_a = (fa(a[i] + h2 * 1e-2) - 2.0 * fa(a[i]) + fa(a[i] - h2 * 1e-2)) / (h2 * h2 * 1e-4);
            for (x, y) in [(od.grad_u[i], g_u), (od.grad_a[i], g_a), (od.hess_u[i], c_u), (od.hess_a[i], c_a)] {
                worst[1] = worst[1].max(rel_err(x, y));
            }
        }

        let q = random_attitude(&mut rng);
        let force = random_unit(&mut rng) * rng.random_range(0.0..40.0);
        let torque = random_unit(&mut rng) * rng.random_range(0.0..2.0);
        let input = AllocatorInput { q, force, torque };
        let fb = rotate(&q.inverse(), &force);
        let mb = rotate(&q.inverse(), &torque);
        let target = [fb.x, fb.y, fb.z, mb.x, mb.y, mb.z];
        let state = AllocatorState {
            u: u.clone(),
            a: a.clone(),
            lambda: lambda.into(),
            a_prev: a_prev.clone(),
        };
        let kkt = assemble_kkt(&state, &input, model, w);
        let g = fd_gradient_by_arm(model, &u, &a, &a_prev, &lambda, &target, w, h1);
        worst[2] = worst[2].max(max_rel_err(kkt.k.as_slice(), g.as_slice()));
        let hm = fd_hessian_by_arm(model, &u, &a, &a_prev, &lambda, w, h2);
        worst[3] = worst[3].max(max_rel_err(kkt.h.as_slice(), hm.as_slice()));
    }
    worst
}

/// Outcome of the warm-started convergence run.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub calls: usize,
    pub failures: usize,
    pub worst_residual: f64,
    pub median_iterations: usize,
    pub max_iterations: usize,
}

/// `trajectories` smooth demand paths of `steps` control ticks each. Every
/// path starts from a settled hover solution (the settling calls are not
/// counted). The attitude turns at up to ~1.5 rad/s, the force wanders
/// around the weight and the torque is a slow sum of sinusoids.
pub fn convergence_suite(model: &DroneModel, w: &PenaltyWeights, trajectories: usize, steps: usize, seed: u64) -> ConvergenceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = model.mass * model.gravity;
    let settings = SolverSettings::default();
    let mut iters = Vec::with_capacity(trajectories * steps);
    let mut failures = 0;
    let mut worst_residual = 0.0f64;
    for _ in 0..trajectories {
        let axis_w: Vec<(V3, f64, f64)> = (0..3)
            .map(|_| (random_unit(&mut rng), rng.random_range(0.2..0.8), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let force_w: Vec<(V3, f64, f64)> = (0..3)
            .map(|_| (random_unit(&mut rng) * rng.random_range(0.0..4.0), rng.random_range(0.1..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let torque_w: Vec<(V3, f64, f64)> = (0..3)
            .map(|_| (random_unit(&mut rng) * rng.random_range(0.0..0.3), rng.random_range(0.1..1.5), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let sum = |terms: &[(V3, f64, f64)], t: f64| -> V3 { terms.iter().map(|(v, f, p)| v * (f * t + p).sin()).sum() };
        let mut q = random_attitude(&mut rng);
        let demand = |q: UnitQuaternion<f64>, t: f64| AllocatorInput {
            q,
            force: V3::new(0.0, 0.0, weight) + sum(&force_w, t),
            torque: sum(&torque_w, t),
        };

        let mut alloc = SqpAllocator::new(model.clone(), *w, settings).expect("allocator");
        for _ in 0..500 {
            if alloc.allocate(&demand(q, 0.0)).expect("allocate").converged {
                let again = alloc.allocate(&demand(q, 0.0)).expect("allocate");
                if again.converged && again.iterations <= 1 {
                    break;
                }
            }
        }
        for k in 1..=steps {
            let t = k as f64 * model.dt;
            let omega = sum(&axis_w, t);
            q = UnitQuaternion::from_scaled_axis(omega * model.dt) * q;
            let sol = alloc.allocate(&demand(q, t)).expect("allocate");
            iters.push(sol.iterations);
            worst_residual = worst_residual.max(sol.residual);
            if !(sol.converged && sol.residual < 1e-5) {
                failures += 1;
            }
        }
    }
    iters.sort_unstable();
    ConvergenceReport {
        calls: iters.len(),
        failures,
        worst_residual,
        median_iterations: iters[iters.len() / 2],
        max_iterations: *iters.last().unwrap_or(&0),
    }
}

/// Minimum-norm planar solution angles for a body-frame wrench.
pub fn min_norm_angles(model: &DroneModel, target: &[f64; 6]) -> Vec<f64> {
    let map = planar_wrench_map(model);
    let z = map.pseudo_inverse(1e-12).expect("pseudoinverse") * DVector::from_row_slice(target);
    (0..model.n_arms()).map(|i| z[2 * i + 1].atan2(z[2 * i])).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct OracleCase {
    pub sqp: f64,
    pub grid: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl OracleCase {
    /// Relative excess of the SQP objective over the grid optimum.
    pub fn gap(&self) -> f64 {
        (self.sqp - self.grid) / self.grid
    }
}

/// SQP objective and grid-search optimum for `n_wrenches` random demands
/// on a four-arm layout, as in a tracking tick: the previous angles are the
/// minimum-norm angles of a nearby demand (a 2% perturbation). Each demand
/// is solved from those angles at the equal hover share.
pub fn square_oracle_suite(model: &DroneModel, w: &PenaltyWeights, n_wrenches: usize, seed: u64) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_arms();
    let settings = SolverSettings {
        max_iter: 500,
        ..SolverSettings::default()
    };
    let weight = model.mass * model.gravity;
    (0..n_wrenches)
        .map(|_| {
            let force = V3::new(0.0, 0.0, weight) + random_unit(&mut rng) * rng.random_range(0.0..0.5 * weight);
            let torque = random_unit(&mut rng) * rng.random_range(0.0..0.5);
            let target = [force.x, force.y, force.z, torque.x, torque.y, torque.z];
            let mut nearby = target;
            for (k, v) in nearby.iter_mut().enumerate() {
                let scale = if k < 3 { weight } else { 0.5 };
                *v += 0.02 * scale * rng.random_range(-1.0..1.0);
            }
            let a_prev = min_norm_angles(model, &nearby);
            let input = AllocatorInput {
                q: UnitQuaternion::identity(),
                force,
                torque,
            };
            let mut warm = AllocatorState::cold(model);
            warm.a = a_prev.clone();
            warm.a_prev = a_prev.clone();
            let sol = sqp_allocate(&input, &warm, model, w, &settings).expect("allocate");
            let grid = null_space_grid_search(model, &target, &a_prev, w);
            let sqp: f64 = (0..n)
                .map(|i| throttle_cost(sol.u[i], w) + rate_cost((sol.a[i] - a_prev[i]) / model.dt, w))
                .sum();
            OracleCase {
                sqp,
                grid,
                converged: sol.converged,
                iterations: sol.iterations,
                residual: sol.residual,
            }
        })
        .collect()
}
