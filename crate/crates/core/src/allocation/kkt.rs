//! KKT system of the allocation problem and its Newton step.
//!
//! Unknowns are ordered `[u_1..u_N, a_1..a_N, λ_1..λ_6]`.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::allocation::model::{arm_wrench, residual_unchecked};
use crate::allocation::penalty::objective_derivatives;
use crate::allocation::{AllocatorInput, AllocatorState, DroneModel, PenaltyWeights};
use crate::error::{Error, Result};

/// Hessian of the Lagrangian and its gradient `K = ∇L`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    pub h: DMatrix<f64>,
    pub k: DVector<f64>,
}

/// Gradient of the Lagrangian `O + λᵀG`, stacked as `[∂/∂u; ∂/∂a; G]`.
pub(crate) fn lagrangian_gradient(
    state: &AllocatorState,
    input: &AllocatorInput,
    model: &DroneModel,
    weights: &PenaltyWeights,
) -> DVector<f64> {
    let n = model.n_arms();
    let d = objective_derivatives(&state.u, &state.a, &state.a_prev, model.dt, weights);
    let g = residual_unchecked(&state.u, &state.a, input, model);
    let mut k = DVector::zeros(2 * n + 6);
    for (i, arm) in model.geometry.arms.iter().enumerate() {
        let w = arm_wrench(arm, state.u[i], state.a[i], model.thrust_constant, model.torque_constant);
        k[i] = d.grad_u[i] + w.dg_du().dot(&state.lambda);
        k[n + i] = d.grad_a[i] + w.dg_da().dot(&state.lambda);
    }
    k.rows_mut(2 * n, 6).copy_from(&g);
    k
}

pub fn assemble_kkt(
    state: &AllocatorState,
    input: &AllocatorInput,
    model: &DroneModel,
    weights: &PenaltyWeights,
) -> KktSystem {
    let n = model.n_arms();
    let dim = 2 * n + 6;
    let d = objective_derivatives(&state.u, &state.a, &state.a_prev, model.dt, weights);
    let lambda: &Vector6<f64> = &state.lambda;
    let mut h = DMatrix::zeros(dim, dim);
    for (i, arm) in model.geometry.arms.iter().enumerate() {
        let w = arm_wrench(arm, state.u[i], state.a[i], model.thrust_constant, model.torque_constant);
        // G is linear in u, so the uu block holds the penalty curvature only.
        h[(i, i)] = d.hess_u[i];
        let ua = w.d2g_duda().dot(lambda);
        h[(i, n + i)] = ua;
        h[(n + i, i)] = ua;
        h[(n + i, n + i)] = d.hess_a[i] + w.d2g_da2().dot(lambda);
        let gu = w.dg_du();
        let ga = w.dg_da();
        for r in 0..6 {
            h[(i, 2 * n + r)] = gu[r];
            h[(2 * n + r, i)] = gu[r];
            h[(n + i, 2 * n + r)] = ga[r];
            h[(2 * n + r, n + i)] = ga[r];
        }
    }
    KktSystem {
        h,
        k: lagrangian_gradient(state, input, model, weights),
    }
}

/// Newton step split into its blocks, with the diagonal shift that was
/// needed to obtain it (0 when the plain system was used).
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStep {
    pub du: DVector<f64>,
    pub da: DVector<f64>,
    pub dlambda: Vector6<f64>,
    pub regularization: f64,
}

const GAMMA_START: f64 = 1e-8;
const GAMMA_MAX: f64 = 1e-2;
/// Largest shift tried when only the inertia is wrong.
const GAMMA_INERTIA_MAX: f64 = 1e6;

/// True when `m` has exactly `n_primal` positive and `dim − n_primal`
/// negative eigenvalues, i.e. the Lagrangian Hessian is positive definite
/// on the tangent space of the constraint.
fn has_min_inertia(m: &DMatrix<f64>, n_primal: usize) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    let neg = eig.iter().filter(|e| **e < 0.0).count();
    let pos = eig.iter().filter(|e| **e > 0.0).count();
    pos == n_primal && neg == m.nrows() - n_primal
}

/// Solves `H·δ = −K`. The primal block is shifted by `γ·I`
/// (`γ = 1e-8, 1e-7, …`) while the factorization fails or the step does not
/// decrease the merit `‖K‖²` (up to `γ = 1e-2`), and while the shifted matrix
/// has the wrong inertia for a minimum (up to `γ = 1e6`). Returns the
/// unshifted step if no shift satisfies every test.
pub fn newton_step(h: &DMatrix<f64>, k: &DVector<f64>, n_primal: usize) -> Result<NewtonStep> {
    let dim = h.nrows();
    if h.ncols() != dim || k.len() != dim || dim != n_primal + 6 || !n_primal.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "KKT shapes do not agree: H {}x{}, K {}, {n_primal} primal unknowns",
            h.nrows(),
            h.ncols(),
            k.len()
        )));
    }
    let n = n_primal / 2;
    let rhs = -k;
    if k.iter().all(|v| *v == 0.0) {
        return Ok(split(DVector::zeros(dim), n, 0.0));
    }
    let merit_grad = h * k;
    let mut fallback = None;
    let mut gamma = 0.0;
    while gamma <= GAMMA_INERTIA_MAX * (1.0 + 1e-9) {
        let mut m = h.clone();
        for i in 0..n_primal {
            m[(i, i)] += gamma;
        }
        if let Some(delta) = m.clone().lu().solve(&rhs) {
            if delta.iter().all(|v| v.is_finite()) {
                let descent = merit_grad.dot(&delta) < 0.0;
                if gamma == 0.0 && descent {
                    fallback = Some(delta.clone());
                }
                if has_min_inertia(&m, n_primal) && (descent || gamma > GAMMA_MAX) {
                    return Ok(split(delta, n, gamma));
                }
            }
        }
        gamma = if gamma == 0.0 { GAMMA_START } else { gamma * 10.0 };
    }
    fallback.map(|d| split(d, n, 0.0)).ok_or_else(|| {
        Error::Numerical(format!(
            "KKT system of size {dim} stayed singular or non-descending up to a shift of {GAMMA_MAX}; |K| = {:.3e}",
            k.norm()
        ))
    })
}

fn split(delta: DVector<f64>, n: usize, regularization: f64) -> NewtonStep {
    NewtonStep {
        du: delta.rows(0, n).into_owned(),
        da: delta.rows(n, n).into_owned(),
        dlambda: Vector6::from_iterator(delta.rows(2 * n, 6).iter().copied()),
        regularization,
    }
}

/// `α = min(1, δa_lim / max|δa|, δu_lim / max|δu|)`.
pub fn step_scale(du: &[f64], da: &[f64], du_lim: f64, da_lim: f64) -> f64 {
    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let (mu, ma) = (max_abs(du), max_abs(da));
    let mut alpha = 1.0_f64;
    if ma > 0.0 {
        alpha = alpha.min(da_lim / ma);
    }
    if mu > 0.0 {
        alpha = alpha.min(du_lim / mu);
    }
    alpha
}
