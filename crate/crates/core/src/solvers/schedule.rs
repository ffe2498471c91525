//! Momentum, step size and dual step schedules.

use super::{EtaSchedule, QMode, RhoMode, SolverConfig, ThetaMode};
use crate::error::{Error, Result};
use crate::problem::ConstrainedProblem;
use crate::theory::{self, TheoryParams};

/// Upper limit for the adaptive dual step.
pub const RHO_CEILING: f64 = 1e8;

/// Momentum at epoch `s` (0-based). `Optimal` needs the analysis parameters
/// and falls back to 1 without them.
pub fn theta_schedule(mode: ThetaMode, s: usize, theory: Option<&TheoryParams>) -> f64 {
    match mode {
        ThetaMode::Fixed(t) => t,
        ThetaMode::Nesterov => (2.0 / (s as f64 + 2.0)).min(1.0),
        ThetaMode::Optimal => theory.map_or(1.0, |tp| theory::optimal_theta(tp).value),
    }
}

/// Step size at global step `t`. `Optimal` must be resolved first.
pub fn eta_at(schedule: EtaSchedule, t: usize) -> Result<f64> {
    let root = (t as f64 + 2.0).sqrt();
    match schedule {
        EtaSchedule::Fixed(e) => Ok(e),
        EtaSchedule::Decaying { c, form: super::DecayForm::Divisor } => Ok(1.0 / (c * root)),
        EtaSchedule::Decaying { c, form: super::DecayForm::Multiplier } => Ok(c * root),
        EtaSchedule::Optimal => Err(Error::InvalidConfig("optimal eta must be resolved against a problem".into())),
    }
}

/// Analysis parameters used by the `Optimal` modes: `Q = I`, `α₁ = 1`,
/// `l₁ = ρ`, `l₂ = 1`.
pub(crate) fn optimal_analysis_params(p: &ConstrainedProblem, rho: f64, m: usize) -> Result<TheoryParams> {
    TheoryParams::for_problem(p, rho, 1.0, 1.0, m, QMode::Identity, None)
}

/// Replaces `Optimal` by the fixed closed-form value.
pub(crate) fn resolve_eta(p: &ConstrainedProblem, cfg: &SolverConfig, m: usize) -> Result<EtaSchedule> {
    match cfg.eta {
        EtaSchedule::Optimal => {
            let tp = optimal_analysis_params(p, cfg.rho.initial(), m)?;
            Ok(EtaSchedule::Fixed(theory::optimal_eta(&tp)))
        }
        other => Ok(other),
    }
}

pub(crate) fn resolve_theta(p: &ConstrainedProblem, cfg: &SolverConfig, m: usize) -> Result<ThetaMode> {
    match cfg.theta {
        ThetaMode::Optimal => {
            let tp = optimal_analysis_params(p, cfg.rho.initial(), m)?;
            Ok(ThetaMode::Fixed(theory::optimal_theta(&tp).value))
        }
        other => Ok(other),
    }
}

/// Ledger inputs of the first inner step of `cfg` on `p`: initial `ρ`,
/// resolved `η₀` and `θ₀` (`θ = 1` without momentum), the solver's `Q`.
/// Not validated.
pub fn analysis_params(p: &ConstrainedProblem, cfg: &SolverConfig) -> Result<TheoryParams> {
    let m = cfg.inner_len(p);
    let eta0 = eta_at(resolve_eta(p, cfg, m)?, 0)?;
    let theta0 = match cfg.algorithm {
        super::Algorithm::Asvrg => theta_schedule(resolve_theta(p, cfg, m)?, 0, None),
        _ => 1.0,
    };
    let gamma = match cfg.gamma {
        super::GammaMode::Fixed(g) => Some(g),
        super::GammaMode::Auto => None,
    };
    TheoryParams::for_problem_unchecked(p, cfg.rho.initial(), eta0, theta0, m, cfg.q_mode, gamma)
}

/// Whether `rho` exceeds the dual step lower bound, using the largest `h_t`.
pub fn rho_bound_holds(tp: &TheoryParams) -> bool {
    let betas = theory::compute_betas(tp);
    let h = theory::h_sequence(tp, &betas);
    let hmax = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    theory::rho_lower_bound(tp, hmax, &betas).satisfied
}

/// Incremental dual step schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct RhoState {
    mode: RhoMode,
    pub rho: f64,
    pub frozen: bool,
    pub ceiling_hit: bool,
}

impl RhoState {
    pub(crate) fn new(mode: RhoMode, holds: &dyn Fn(f64) -> bool) -> Self {
        let rho = mode.initial();
        let frozen = match mode {
            RhoMode::Fixed(_) => true,
            RhoMode::Adaptive { .. } => holds(rho),
        };
        Self {
            mode,
            rho,
            frozen,
            ceiling_hit: false,
        }
    }

    pub(crate) fn advance(&mut self, holds: &dyn Fn(f64) -> bool) {
        if let (RhoMode::Adaptive { kappa, .. }, false) = (self.mode, self.frozen) {
            self.rho *= kappa;
            if self.rho >= RHO_CEILING {
                self.rho = RHO_CEILING;
                self.frozen = true;
                self.ceiling_hit = true;
            } else if holds(self.rho) {
                self.frozen = true;
            }
        }
    }
}

/// Dual step at global step `t`: constant, or `ρ₀κ^t` frozen at the first
/// step where the lower bound (evaluated with `ρ` and `l₁ = ρ` substituted
/// into `theory`) holds. Without `theory` the bound never holds.
pub fn rho_schedule(mode: RhoMode, t: usize, theory: Option<&TheoryParams>) -> f64 {
    let holds = |r: f64| theory.is_some_and(|tp| rho_bound_holds(&TheoryParams { rho: r, l1: r, ..*tp }));
    let mut st = RhoState::new(mode, &holds);
    for _ in 0..t {
        if st.frozen {
            break;
        }
        st.advance(&holds);
    }
    st.rho
}
