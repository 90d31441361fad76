//! SQP allocator: Newton iterations on the KKT conditions with a per-step
//! component cap in place of a line search.

use crate::allocation::kkt::{assemble_kkt, newton_step, step_scale, NewtonStep};
use crate::allocation::model::residual_unchecked;
use crate::allocation::penalty::objective;
use crate::allocation::{
    AllocatorInput, AllocatorSolution, AllocatorState, DroneModel, PenaltyWeights, SolverSettings,
};
use crate::error::Result;

/// Runs the SQP loop from `warm`. Returns `converged = false` when the
/// iteration budget runs out or the KKT system cannot be solved; the last
/// iterate is returned in both cases.
pub fn sqp_allocate(
    input: &AllocatorInput,
    warm: &AllocatorState,
    model: &DroneModel,
    weights: &PenaltyWeights,
    settings: &SolverSettings,
) -> Result<AllocatorSolution> {
    input.validate()?;
    warm.validate(model.n_arms())?;
    weights.validate()?;
    settings.validate()?;

    let n = model.n_arms();
    let mut state = warm.clone();
    let mut o_prev = objective(&state.u, &state.a, &state.a_prev, model.dt, weights);
    let mut iterations = 0;
    let mut converged = false;
    let mut o = o_prev;
    let mut g = residual_unchecked(&state.u, &state.a, input, model);

    while iterations < settings.max_iter {
        let kkt = assemble_kkt(&state, input, model, weights);
        let step = match newton_step(&kkt.h, &kkt.k, 2 * n) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("allocation stopped after {iterations} iterations: {e}");
                break;
            }
        };
        iterations += 1;
        let alpha = step_scale(
            step.du.as_slice(),
            step.da.as_slice(),
            settings.du_lim,
            settings.da_lim,
        );
        state = advance(&state, &step, alpha);

        o = objective(&state.u, &state.a, &state.a_prev, model.dt, weights);
        g = residual_unchecked(&state.u, &state.a, input, model);
        let settled = (o - o_prev).abs() / o.max(settings.objective_floor) < settings.tol_objective;
        if settled && settings.weighted_norm(&g) < settings.tol_constraint {
            converged = true;
            break;
        }
        o_prev = o;
    }

    Ok(AllocatorSolution {
        u: state.u,
        a: state.a,
        lambda: state.lambda,
        iterations,
        residual: settings.weighted_norm(&g),
        objective: o,
        converged,
    })
}

fn advance(state: &AllocatorState, step: &NewtonStep, alpha: f64) -> AllocatorState {
    let mut next = state.clone();
    for i in 0..next.u.len() {
        next.u[i] += alpha * step.du[i];
        next.a[i] += alpha * step.da[i];
    }
    next.lambda += step.dlambda * alpha;
    next
}

/// Allocator that keeps its own warm start between calls.
#[derive(Debug, Clone)]
pub struct SqpAllocator {
    pub model: DroneModel,
    pub weights: PenaltyWeights,
    pub settings: SolverSettings,
    state: AllocatorState,
}

impl SqpAllocator {
    pub fn new(model: DroneModel, weights: PenaltyWeights, settings: SolverSettings) -> Result<Self> {
        model.validate()?;
        weights.validate()?;
        settings.validate()?;
        let state = AllocatorState::cold(&model);
        Ok(SqpAllocator {
            model,
            weights,
            settings,
            state,
        })
    }

    pub fn state(&self) -> &AllocatorState {
        &self.state
    }

    pub fn set_state(&mut self, state: AllocatorState) -> Result<()> {
        state.validate(self.model.n_arms())?;
        self.state = state;
        Ok(())
    }

    /// Solves for `input` and carries the result into the next call.
    pub fn allocate(&mut self, input: &AllocatorInput) -> Result<AllocatorSolution> {
        let sol = sqp_allocate(input, &self.state, &self.model, &self.weights, &self.settings)?;
        let finite = sol.u.iter().chain(&sol.a).chain(sol.lambda.iter()).all(|v| v.is_finite());
        if finite {
            self.state = AllocatorState::from_solution(&sol);
        }
        Ok(sol)
    }
}
