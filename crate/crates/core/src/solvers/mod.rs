//! ASVRG-ADMM, SVRG-ADMM, SADMM and SADMM-F.
//!
//! Every sub-step is exposed on its own in [`steps`]; the drivers in this
//! module chain them and record a [`TraceRecord`] per inner iteration.

mod record;
mod sadmm;
pub mod schedule;
pub mod steps;
mod vr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::problem::ConstrainedProblem;
use crate::theory::ConstantLedger;

pub use sadmm::run_sadmm;
pub use schedule::{analysis_params, eta_at, rho_schedule, theta_schedule, RHO_CEILING};
pub use steps::{
    dual_update, gamma_auto, momentum_update, q_matrix, y_update, z_update_exact, z_update_linearized, StepParams,
    GAMMA_SLACK,
};
pub use vr::{run_asvrg_admm, run_svrg_admm};

/// Iterate norm beyond which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ASVRG")]
    Asvrg,
    #[serde(rename = "SVRG")]
    Svrg,
    #[serde(rename = "SADMM")]
    Sadmm,
    #[serde(rename = "SADMM_F")]
    SadmmF,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Asvrg => "ASVRG",
            Algorithm::Svrg => "SVRG",
            Algorithm::Sadmm => "SADMM",
            Algorithm::SadmmF => "SADMM_F",
        }
    }
}

/// How the step `η_t` of `Decaying` is derived from `c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayForm {
    /// `η_t = 1/(c√(t+2))`
    #[default]
    Divisor,
    /// `η_t = c√(t+2)`
    Multiplier,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EtaSchedule {
    Fixed(f64),
    Decaying {
        c: f64,
        #[serde(default)]
        form: DecayForm,
    },
    /// Closed-form optimum with `Q = I` in the analysis (`φ = 1`).
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ThetaMode {
    Fixed(f64),
    /// `2/(s+2)` at epoch `s`.
    Nesterov,
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RhoMode {
    Fixed(f64),
    /// `ρ₀κ^t` until the dual step lower bound holds, then frozen.
    Adaptive { rho0: f64, kappa: f64 },
}

impl RhoMode {
    pub fn initial(self) -> f64 {
        match self {
            RhoMode::Fixed(r) => r,
            RhoMode::Adaptive { rho0, .. } => rho0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    /// `1 + ηρ‖AᵀA‖₂/θ + GAMMA_SLACK`
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum QMode {
    /// `γI − (ηρ/θ)AᵀA`
    #[default]
    Uzawa,
    Identity,
}

/// How `variance_estimate` in the trace is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// Exhaustive up to 1000 components, otherwise 256 samples.
    #[default]
    Auto,
    Exhaustive,
    Sampled(usize),
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub eta: EtaSchedule,
    pub theta: ThetaMode,
    pub rho: RhoMode,
    #[serde(default)]
    pub gamma: GammaMode,
    /// Inner iterations per epoch; `None` means `m = n`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(rename = "S")]
    pub epochs: usize,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default)]
    pub seed: u64,
    /// Record the potential energy `Ψ` in the trace.
    #[serde(default)]
    pub lambda_hist: bool,
    /// Record every `trace_stride`-th step (epoch ends are always recorded).
    #[serde(default = "default_one")]
    pub trace_stride: usize,
    #[serde(default)]
    pub variance: VarianceMode,
    /// Keep every iterate in [`SolveResult::history`].
    #[serde(default)]
    pub keep_history: bool,
    /// Fill `elapsed_ns`; off by default so traces are reproducible.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(skip)]
    pub exec: Exec,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, eta: EtaSchedule, theta: ThetaMode, rho: RhoMode, epochs: usize) -> Self {
        Self {
            algorithm,
            eta,
            theta,
            rho,
            gamma: GammaMode::Auto,
            m: None,
            epochs,
            q_mode: QMode::Uzawa,
            seed: 0,
            lambda_hist: false,
            trace_stride: 1,
            variance: VarianceMode::Auto,
            keep_history: false,
            wall_clock: false,
            label: None,
            exec: Exec::default(),
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.name().to_string())
    }

    pub fn inner_len(&self, p: &ConstrainedProblem) -> usize {
        self.m.unwrap_or(p.n())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self.eta {
            EtaSchedule::Fixed(e) if !(e > 0.0 && e.is_finite()) => return bad(format!("eta must be positive, got {e}")),
            EtaSchedule::Decaying { c, .. } if !(c > 0.0 && c.is_finite()) => {
                return bad(format!("eta decay constant must be positive, got {c}"))
            }
            _ => {}
        }
        if let ThetaMode::Fixed(t) = self.theta {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("theta must lie in (0, 1], got {t}"));
            }
        }
        match self.rho {
            RhoMode::Fixed(r) if !(r > 0.0 && r.is_finite()) => return bad(format!("rho must be positive, got {r}")),
            RhoMode::Adaptive { rho0, kappa } => {
                if !(rho0 > 0.0 && rho0.is_finite()) {
                    return bad(format!("rho0 must be positive, got {rho0}"));
                }
                if !(kappa > 1.0 && kappa.is_finite()) {
                    return bad(format!("kappa must exceed 1, got {kappa}"));
                }
            }
            _ => {}
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.m == Some(0) {
            return bad("m must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("S must be at least 1".into());
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be at least 1".into());
        }
        if let VarianceMode::Sampled(0) = self.variance {
            return bad("variance sample count must be at least 1".into());
        }
        Ok(())
    }
}

/// Live variables of a run. `s` is the 1-based epoch of the last completed
/// inner step and `t` its 1-based inner index; both are 0 initially.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub s: usize,
    pub t: usize,
}

impl IterateState {
    pub fn zeros(p: &ConstrainedProblem) -> Self {
        Self::initial(p, vec![0.0; p.d1()], vec![0.0; p.d2()], vec![0.0; p.d()]).expect("dimensions match")
    }

    /// Starts at `x₀` with `z = x̃ = x₀`.
    pub fn initial(p: &ConstrainedProblem, x: Vec<f64>, y: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        p.check_x(&x)?;
        p.check_y(&y)?;
        p.check_dual(&lambda)?;
        Ok(Self {
            z: x.clone(),
            x_tilde: x.clone(),
            x,
            y,
            lambda,
            s: 0,
            t: 0,
        })
    }

    pub(crate) fn check(&self, p: &ConstrainedProblem) -> Result<()> {
        p.check_x(&self.x)?;
        p.check_x(&self.z)?;
        p.check_x(&self.x_tilde)?;
        p.check_y(&self.y)?;
        p.check_dual(&self.lambda)
    }

    /// Largest Euclidean norm among the primal, auxiliary and dual iterates;
    /// infinite when any entry is not finite.
    pub fn max_norm(&self) -> f64 {
        [&self.x, &self.z, &self.y, &self.lambda]
            .iter()
            .map(|v| {
                let n = crate::linalg::vecops::norm(v);
                if n.is_finite() {
                    n
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Observables recorded after an inner step (and once before the first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: u64,
    pub s: usize,
    pub t: usize,
    /// `f(x) + g(y)`
    pub objective: f64,
    pub al_value: f64,
    /// `‖Ax + By − c‖`
    pub constraint_residual: f64,
    /// Mean squared deviation of the run's gradient estimator from `∇f(x)`.
    pub variance_estimate: f64,
    pub psi: Option<f64>,
    pub theta_used: f64,
    pub rho_used: f64,
    pub elapsed_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolveStatus {
    Completed,
    Diverged(f64),
}

/// Full iterate snapshot kept when `keep_history` is set; `x_tilde` is the
/// snapshot in effect when the entry was produced and `rho` the dual step used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub s: usize,
    pub t: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub rho: f64,
}

impl HistoryEntry {
    fn of(state: &IterateState, rho: f64) -> Self {
        Self {
            s: state.s,
            t: state.t,
            x: state.x.clone(),
            z: state.z.clone(),
            y: state.y.clone(),
            lambda: state.lambda.clone(),
            x_tilde: state.x_tilde.clone(),
            rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub final_state: IterateState,
    pub trace: Vec<TraceRecord>,
    pub status: SolveStatus,
    /// `x` at the start and at the end of every completed epoch.
    pub epoch_x: Vec<Vec<f64>>,
    pub history: Option<Vec<HistoryEntry>>,
    /// Ledger used for `Ψ`, when requested and constructible.
    pub ledger: Option<ConstantLedger>,
    pub rho_final: f64,
    /// The adaptive dual step hit [`RHO_CEILING`] before the bound held.
    pub rho_ceiling_hit: bool,
}

impl SolveResult {
    pub fn diverged(&self) -> bool {
        matches!(self.status, SolveStatus::Diverged(_))
    }
}

/// Dispatches on `cfg.algorithm`.
pub fn solve(p: &ConstrainedProblem, cfg: &SolverConfig, init: &IterateState) -> Result<SolveResult> {
    match cfg.algorithm {
        Algorithm::Asvrg => run_asvrg_admm(p, cfg, init),
        Algorithm::Svrg => run_svrg_admm(p, cfg, init),
        Algorithm::Sadmm => run_sadmm(p, cfg, init, false),
        Algorithm::SadmmF => run_sadmm(p, cfg, init, true),
    }
}
