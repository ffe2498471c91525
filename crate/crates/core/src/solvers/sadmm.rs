use super::record::Recorder;
use super::schedule::{eta_at, resolve_eta, rho_bound_holds, RhoState};
use super::steps::{dual_update, y_update, z_update_identity, z_update_linearized, GramEigen, StepParams, GAMMA_SLACK};
use super::vr::fixed_gamma;
use super::{Algorithm, IterateState, QMode, SolveResult, SolveStatus, SolverConfig, DIVERGENCE_NORM};
use crate::error::{Error, Result};
use crate::estimators::{sgd_gradient, IndexSampler};
use crate::problem::ConstrainedProblem;
use crate::theory::TheoryParams;

/// Stochastic ADMM: one exact proximal x-step per sample, no snapshot and no
/// momentum; the dual step uses the new `x`. With `fixed_step` the step size
/// is held at its `t = 0` value.
pub fn run_sadmm(p: &ConstrainedProblem, cfg: &SolverConfig, init: &IterateState, fixed_step: bool) -> Result<SolveResult> {
    if !matches!(cfg.algorithm, Algorithm::Sadmm | Algorithm::SadmmF) {
        return Err(Error::InvalidConfig(format!(
            "run_sadmm called with algorithm {}",
            cfg.algorithm.name()
        )));
    }
    cfg.validate()?;
    init.check(p)?;
    let m = cfg.inner_len(p);
    let n = p.n();
    let eta_s = resolve_eta(p, cfg, m)?;
    let eta0 = eta_at(eta_s, 0)?;
    let gamma_fixed = fixed_gamma(cfg);
    let holds = |r: f64| {
        TheoryParams::for_problem(p, r, eta0, 1.0, m, cfg.q_mode, gamma_fixed)
            .map(|tp| rho_bound_holds(&tp))
            .unwrap_or(false)
    };
    let mut rho_state = RhoState::new(cfg.rho, &holds);
    let gram = match cfg.q_mode {
        QMode::Identity => Some(GramEigen::new(p.a())?),
        QMode::Uzawa => None,
    };
    let ata_norm = p.spectrum_a()?.op_norm_gram;
    let sampler = IndexSampler::new(cfg.seed);
    let mut rec = Recorder::new(p, cfg, m, None);

    let mut state = init.clone();
    state.z = state.x.clone();
    state.x_tilde = state.x.clone();
    state.s = 0;
    state.t = 0;
    rec.start(&state, None, 1.0, rho_state.rho)?;

    let mut status = SolveStatus::Completed;
    'outer: for s in 0..cfg.epochs {
        for t in 0..m {
            let k = s * m + t;
            let rho = rho_state.rho;
            let eta = if fixed_step { eta0 } else { eta_at(eta_s, k)? };
            let i = sampler.index(s as u64, t as u64, n);

            let y = y_update(p, &state, rho)?;
            let g = sgd_gradient(p, &state.x, i)?;
            let x = match &gram {
                Some(ge) => z_update_identity(p, ge, &state.x, &y, &state.lambda, 1.0 / eta, rho, &g),
                // Q = γI − ηρAᵀA collapses the system to (γ/η)I
                None => {
                    let gamma = gamma_fixed.unwrap_or(1.0 + eta * rho * ata_norm + GAMMA_SLACK);
                    let params = StepParams { eta, theta: 1.0, rho, gamma };
                    z_update_linearized(p, &state.x, &y, &state.lambda, &params, &g)?
                }
            };
            let lambda = dual_update(p, &x, &y, &state.lambda, rho)?;
            let x_prev = std::mem::replace(&mut state.x, x);
            state.z = state.x.clone();
            state.x_tilde = state.x.clone();
            state.y = y;
            state.lambda = lambda;
            state.s = s + 1;
            state.t = t + 1;

            let norm = state.max_norm();
            if norm > DIVERGENCE_NORM {
                status = SolveStatus::Diverged(norm);
                break 'outer;
            }
            rec.step(&state, k + 1, &x_prev, None, 1.0, rho)?;
            rho_state.advance(&holds);
        }
    }
    Ok(rec.finish(state, status, rho_state.rho, rho_state.ceiling_hit))
}
