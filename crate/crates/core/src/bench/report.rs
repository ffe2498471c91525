//! Numerical evaluation of the convergence constants for one configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ConstrainedProblem;
use crate::solvers::{self, SolveResult, SolverConfig};
use crate::theory::{
    self, AdmissibleConfig, ConstantLedger, OptimalTheta, RateFit, RhoBound, RunDiagnostics, Theorem1Report, TheoryParams,
};

/// Optional trace-based inputs.
#[derive(Clone, Debug, Default)]
pub struct TraceInputs {
    pub runs: Vec<RunDiagnostics>,
    /// `T` of the O(1/T) check.
    pub horizon: usize,
    /// Distances to a reference point for the linear rate fit.
    pub distances: Vec<f64>,
    pub window: usize,
}

/// `(ρ, η)` grid for the admissibility search.
#[derive(Clone, Debug, Default)]
pub struct SearchGrid {
    pub rhos: Vec<f64>,
    pub etas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub label: String,
    pub params: TheoryParams,
    pub ledger: ConstantLedger,
    pub rho_bound: RhoBound,
    pub theta_star: OptimalTheta,
    pub theta_stationary: OptimalTheta,
    pub eta_star: f64,
    pub theorem1: Option<std::result::Result<Theorem1Report, String>>,
    pub rate_fit: Option<std::result::Result<RateFit, String>>,
    pub admissible: Option<Option<AdmissibleConfig>>,
    /// Why the ledger inputs fall outside the analysis (e.g. `σ_min = 0`).
    pub not_applicable: Option<String>,
}

impl TheoryReport {
    pub fn theorem1_applicable(&self) -> bool {
        self.not_applicable.is_none() && self.ledger.gamma.all_positive
    }
}

/// `Ψ` and `R` of one run; `R` needs `keep_history`.
pub fn run_diagnostics(result: &SolveResult) -> RunDiagnostics {
    RunDiagnostics {
        psi: result.trace.iter().filter_map(|r| r.psi).collect(),
        r: result.history.as_deref().map(theory::residual_series).unwrap_or_default(),
    }
}

/// Evaluates the constant ledger of `cfg` on `p` at its initial dual step.
/// The dual step bound uses the largest `h_t`. Inputs outside the analysis
/// still give a report, with `not_applicable` set.
pub fn theory_report(
    p: &ConstrainedProblem,
    cfg: &SolverConfig,
    traces: Option<&TraceInputs>,
    grid: Option<&SearchGrid>,
) -> Result<TheoryReport> {
    let params = solvers::analysis_params(p, cfg)?;
    let not_applicable = params.validate().err().map(|e| e.to_string());
    let ledger = ConstantLedger::new(&params);
    let hmax = ledger.h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho_bound = theory::rho_lower_bound(&params, hmax, &ledger.betas);
    let theorem1 = traces
        .filter(|t| !t.runs.is_empty())
        .map(|t| theory::theorem1_check(&t.runs, &ledger, t.horizon).map_err(|e| e.to_string()));
    let rate_fit = traces
        .filter(|t| !t.distances.is_empty())
        .map(|t| theory::linear_rate_fit(&t.distances, t.window).map_err(|e| e.to_string()));
    let admissible = match grid {
        Some(g) if g.rhos.is_empty() || g.etas.is_empty() => {
            return Err(Error::InvalidConfig("search grid is empty".into()));
        }
        Some(g) => Some(theory::search_admissible(p, params.theta, params.m, cfg.q_mode, &g.rhos, &g.etas)),
        None => None,
    };
    Ok(TheoryReport {
        label: cfg.label(),
        theta_star: theory::optimal_theta(&params),
        theta_stationary: theory::stationary_theta(&params),
        eta_star: theory::optimal_eta(&params),
        params,
        ledger,
        rho_bound,
        theorem1,
        rate_fit,
        admissible,
        not_applicable,
    })
}

fn fmt_theta(t: &OptimalTheta) -> String {
    if t.in_range {
        format!("{:.6}", t.value)
    } else {
        format!("{:.6} (raw {:.6} outside (0, 1], clamped)", t.value, t.raw)
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tp = &self.params;
        let lg = &self.ledger;
        writeln!(f, "configuration: {}", self.label)?;
        writeln!(f, "rho = {}  eta = {}  theta = {}  m = {}", tp.rho, tp.eta, tp.theta, tp.m)?;
        writeln!(f, "L = {:.6e}", tp.l)?;
        writeln!(f, "sigma_min(AAt) = {:.6e}  sigma_max(AAt) = {:.6e}", tp.sigma_min, tp.sigma_max)?;
        writeln!(f, "phi_min(Q) = {:.6e}  phi_max(Q) = {:.6e}", tp.phi_min, tp.phi_max)?;
        for k in 1..=6 {
            writeln!(f, "beta{k} = {:.6e}", lg.betas.b(k))?;
        }
        writeln!(f, "h_1 = {:.6e}  h_m = {:.6e}", lg.h[0], lg.h[lg.h.len() - 1])?;
        writeln!(f, "min Gamma = {:.6e}  all positive: {}", lg.gamma.min, lg.gamma.all_positive)?;
        match &self.not_applicable {
            Some(why) => writeln!(f, "Theorem 1 bound not applicable: {why}")?,
            None if !lg.gamma.all_positive => writeln!(f, "Theorem 1 bound not applicable")?,
            None => {}
        }
        writeln!(f, "tau = {:.6e}  omega = {:.6e}", lg.tau, lg.omega)?;
        writeln!(f, "theta* = {}", fmt_theta(&self.theta_star))?;
        writeln!(f, "theta (stationary point of F) = {}", fmt_theta(&self.theta_stationary))?;
        writeln!(f, "eta* = {:.6e}", self.eta_star)?;
        writeln!(
            f,
            "rho lower bound = {:.6e}  configured rho satisfies it: {}",
            self.rho_bound.bound, self.rho_bound.satisfied
        )?;
        match &self.theorem1 {
            Some(Ok(r)) => writeln!(
                f,
                "O(1/T) check over {} runs, T = {}: min mean R = {:.6e}  bound = {:.6e}  holds: {}  slack = {:.6e}",
                r.runs, r.horizon, r.min_mean_r, r.rhs, r.holds, r.slack
            )?,
            Some(Err(e)) => writeln!(f, "O(1/T) check skipped: {e}")?,
            None => {}
        }
        match &self.rate_fit {
            Some(Ok(r)) => writeln!(
                f,
                "linear rate fit: xi = {:.6}  c = {:.6e}  r^2 = {:.4}  points = {}{}",
                r.xi_hat,
                r.c_hat,
                r.r_squared,
                r.points_used,
                if r.no_linear_decay { "  (no linear decay)" } else { "" }
            )?,
            Some(Err(e)) => writeln!(f, "linear rate fit skipped: {e}")?,
            None => {}
        }
        match &self.admissible {
            Some(Some(a)) => writeln!(
                f,
                "admissible search: rho = {}  eta = {}  min Gamma = {:.6e}  tau = {:.6e}",
                a.rho, a.eta, a.ledger.gamma.min, a.ledger.tau
            )?,
            Some(None) => writeln!(f, "admissible search: no grid point has all Gamma_t > 0")?,
            None => {}
        }
        Ok(())
    }
}
