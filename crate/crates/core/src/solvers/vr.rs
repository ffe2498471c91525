use super::record::Recorder;
use super::schedule::{eta_at, resolve_eta, resolve_theta, rho_bound_holds, theta_schedule, RhoState};
use super::steps::{dual_update, gamma_auto, momentum_update, y_update, z_update_identity, z_update_linearized, GramEigen, StepParams};
use super::{GammaMode, IterateState, QMode, SolveResult, SolveStatus, SolverConfig, ThetaMode, DIVERGENCE_NORM};
use crate::error::Result;
use crate::estimators::{svrg_gradient, IndexSampler, SnapshotGradient};
use crate::problem::ConstrainedProblem;
use crate::theory::{ConstantLedger, TheoryParams};

/// ASVRG-ADMM with Katyusha momentum `x = θz + (1−θ)x̃`.
pub fn run_asvrg_admm(p: &ConstrainedProblem, cfg: &SolverConfig, init: &IterateState) -> Result<SolveResult> {
    run_vr(p, cfg, init, true)
}

/// The same loop with `x = z` and `θ = 1`.
pub fn run_svrg_admm(p: &ConstrainedProblem, cfg: &SolverConfig, init: &IterateState) -> Result<SolveResult> {
    run_vr(p, cfg, init, false)
}

pub(super) fn fixed_gamma(cfg: &SolverConfig) -> Option<f64> {
    match cfg.gamma {
        GammaMode::Fixed(g) => Some(g),
        GammaMode::Auto => None,
    }
}

fn run_vr(p: &ConstrainedProblem, cfg: &SolverConfig, init: &IterateState, momentum: bool) -> Result<SolveResult> {
    cfg.validate()?;
    init.check(p)?;
    let m = cfg.inner_len(p);
    let n = p.n();
    let eta_s = resolve_eta(p, cfg, m)?;
    let theta_mode = if momentum {
        resolve_theta(p, cfg, m)?
    } else {
        ThetaMode::Fixed(1.0)
    };
    let eta0 = eta_at(eta_s, 0)?;
    let theta0 = theta_schedule(theta_mode, 0, None);
    let gamma_fixed = fixed_gamma(cfg);
    let holds = |r: f64| {
        TheoryParams::for_problem(p, r, eta0, theta0, m, cfg.q_mode, gamma_fixed)
            .map(|tp| rho_bound_holds(&tp))
            .unwrap_or(false)
    };
    let mut rho_state = RhoState::new(cfg.rho, &holds);
    let ledger = if cfg.lambda_hist {
        TheoryParams::for_problem(p, rho_state.rho, eta0, theta0, m, cfg.q_mode, gamma_fixed)
            .ok()
            .map(|tp| ConstantLedger::new(&tp))
    } else {
        None
    };
    let gram = match cfg.q_mode {
        QMode::Identity => Some(GramEigen::new(p.a())?),
        QMode::Uzawa => None,
    };
    let sampler = IndexSampler::new(cfg.seed);
    let mut rec = Recorder::new(p, cfg, m, ledger);

    let mut state = init.clone();
    state.x_tilde = state.x.clone();
    state.z = state.x.clone();
    state.s = 0;
    state.t = 0;
    let mut snap = SnapshotGradient::new_with(cfg.exec, p, &state.x)?;
    rec.start(&state, Some(&snap), theta0, rho_state.rho)?;

    let mut status = SolveStatus::Completed;
    'epochs: for s in 0..cfg.epochs {
        let theta = theta_schedule(theta_mode, s, None);
        if s > 0 {
            snap = SnapshotGradient::new_with(cfg.exec, p, &state.x)?;
        }
        state.x_tilde = state.x.clone();
        state.z = state.x.clone();
        for t in 0..m {
            let k = s * m + t;
            let rho = rho_state.rho;
            let eta = eta_at(eta_s, k)?;
            let gamma = match gamma_fixed {
                Some(g) => g,
                None => gamma_auto(p, eta, rho, theta)?,
            };
            let params = StepParams { eta, theta, rho, gamma };
            let i = sampler.index(s as u64, t as u64, n);

            let y = y_update(p, &state, rho)?;
            let g = svrg_gradient(p, &state.x, &snap, i)?;
            let z = match &gram {
                Some(ge) => z_update_identity(p, ge, &state.z, &y, &state.lambda, theta / eta, rho, &g),
                None => z_update_linearized(p, &state.z, &y, &state.lambda, &params, &g)?,
            };
            let x = if momentum {
                momentum_update(&z, &state.x_tilde, theta)
            } else {
                z.clone()
            };
            let lambda = dual_update(p, &z, &y, &state.lambda, rho)?;
            let x_prev = std::mem::replace(&mut state.x, x);
            state.z = z;
            state.y = y;
            state.lambda = lambda;
            state.s = s + 1;
            state.t = t + 1;

            let norm = state.max_norm();
            if norm > DIVERGENCE_NORM {
                status = SolveStatus::Diverged(norm);
                break 'epochs;
            }
            rec.step(&state, k + 1, &x_prev, Some(&snap), theta, rho)?;
            rho_state.advance(&holds);
        }
    }
    Ok(rec.finish(state, status, rho_state.rho, rho_state.ceiling_hit))
}
