//! Analysis-side quantities: the β constants, the backward `h` recursion,
//! `Γ`, `τ`, `ω`, the potential energy `Ψ`, the residual `R`, optimal
//! momentum/step parameters, the dual step lower bound, KKT residuals, the
//! O(1/T) bound check and an empirical linear-rate fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::full_gradient;
use crate::linalg::vecops;
use crate::problem::{augmented_lagrangian, ConstrainedProblem, Regularizer};
use crate::solvers::{gamma_auto, HistoryEntry, IterateState, QMode};

/// Momentum values produced by the optimal-θ formula are clamped to `[THETA_FLOOR, 1]`.
pub const THETA_FLOOR: f64 = 1e-3;

/// Parameters the analysis is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub l: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub alpha1: f64,
    pub l1: f64,
    pub l2: f64,
    pub rho: f64,
    pub eta: f64,
    pub theta: f64,
    pub m: usize,
}

/// Default free analysis constant `l₂ = max(1, 1 − θ + 0.01)`.
pub fn default_l2(theta: f64) -> f64 {
    1f64.max(1.0 - theta + 0.01)
}

impl TheoryParams {
    pub fn validate(self) -> Result<Self> {
        let positive = [
            ("sigma_min", self.sigma_min),
            ("sigma_max", self.sigma_max),
            ("phi_min", self.phi_min),
            ("phi_max", self.phi_max),
            ("alpha1", self.alpha1),
            ("l1", self.l1),
            ("l2", self.l2),
            ("rho", self.rho),
            ("eta", self.eta),
            ("theta", self.theta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotApplicable(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.l >= 0.0) || !self.l.is_finite() {
            return Err(Error::NotApplicable(format!("L must be nonnegative and finite, got {}", self.l)));
        }
        if self.theta > 1.0 {
            return Err(Error::NotApplicable(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if self.l2 < 1.0 - self.theta {
            return Err(Error::NotApplicable(format!(
                "l2 = {} violates l2 >= 1 - theta = {}",
                self.l2,
                1.0 - self.theta
            )));
        }
        if self.m == 0 {
            return Err(Error::NotApplicable("m must be at least 1".into()));
        }
        Ok(self)
    }

    /// Ledger inputs for a solver run on `p`, with the default `α₁ = 1`,
    /// `l₁ = ρ`, `l₂ = max(1, 1−θ+0.01)`. The `Q` spectrum is taken from the
    /// matrix the solver actually uses.
    pub fn for_problem(
        p: &ConstrainedProblem,
        rho: f64,
        eta: f64,
        theta: f64,
        m: usize,
        q_mode: QMode,
        gamma: Option<f64>,
    ) -> Result<Self> {
        Self::for_problem_unchecked(p, rho, eta, theta, m, q_mode, gamma)?.validate()
    }

    /// [`TheoryParams::for_problem`] without [`TheoryParams::validate`].
    pub fn for_problem_unchecked(
        p: &ConstrainedProblem,
        rho: f64,
        eta: f64,
        theta: f64,
        m: usize,
        q_mode: QMode,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let spec = p.spectrum_a()?;
        let (phi_min, phi_max) = q_spectrum(p, q_mode, rho, eta, theta, gamma)?;
        Ok(TheoryParams {
            l: p.lipschitz().l,
            sigma_min: spec.sigma_min,
            sigma_max: spec.sigma_max,
            phi_min,
            phi_max,
            alpha1: 1.0,
            l1: rho,
            l2: default_l2(theta),
            rho,
            eta,
            theta,
            m,
        })
    }

    /// `1/ρ + 1/(2l₁)`
    fn c(&self) -> f64 {
        1.0 / self.rho + 0.5 / self.l1
    }
}

/// Extreme eigenvalues of `Q`: `I`, or `γI − (ηρ/θ)AᵀA` for the Uzawa choice
/// (with `γ` defaulting to the automatic value).
pub fn q_spectrum(p: &ConstrainedProblem, q_mode: QMode, rho: f64, eta: f64, theta: f64, gamma: Option<f64>) -> Result<(f64, f64)> {
    match q_mode {
        QMode::Identity => Ok((1.0, 1.0)),
        QMode::Uzawa => {
            let ata = p.spectrum_at()?;
            let gamma = match gamma {
                Some(g) => g,
                None => gamma_auto(p, eta, rho, theta)?,
            };
            let k = eta * rho / theta;
            Ok((gamma - k * ata.sigma_max, gamma - k * ata.sigma_min))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Betas(pub [f64; 6]);

impl Betas {
    pub fn b(&self, k: usize) -> f64 {
        self.0[k - 1]
    }
}

/// The six β constants of the sufficient-decrease argument, evaluated literally.
pub fn compute_betas(tp: &TheoryParams) -> Betas {
    let TheoryParams {
        l,
        sigma_min: smin,
        sigma_max: smax,
        phi_min,
        phi_max,
        l1,
        l2,
        rho,
        eta,
        theta,
        ..
    } = *tp;
    let c = tp.c();
    let q = (1.0 - theta) / theta;
    let b1 = 0.5 * (rho + l1) * q * q * smax;
    let b2 = phi_min / eta - l / 2.0 - 5.0 * phi_max * phi_max / (smin * eta * eta) * c
        + rho * smin * (l2 - (1.0 - theta)) / (2.0 * theta * theta * l2);
    let b3 = -0.5 * rho * smin * (q * q - (1.0 - theta) * l2 / (theta * theta)) + c * 5.0 * l * l / smin;
    let b4 = c * 5.0 * l * l / smin;
    let b5 = c * (5.0 * l * l * eta * eta + 5.0 * phi_max * phi_max) / (smin * eta * eta);
    let b6 = phi_min / eta - l / 2.0 - c * 5.0 * phi_max * phi_max / (smin * eta * eta) + smin * rho / (2.0 * theta * theta)
        - smax * 0.5 * (rho + l1) * q * q;
    Betas([b1, b2, b3, b4, b5, b6])
}

/// `h_1 … h_m` (index 0 holds `h_1`), anchored at `h_m` and filled backwards.
pub fn h_sequence(tp: &TheoryParams, betas: &Betas) -> Vec<f64> {
    let m = tp.m.max(1);
    let mut h = vec![0.0; m];
    h[m - 1] = 5.0 * tp.l * tp.l / tp.sigma_min * (2.0 / tp.rho + 0.5 / tp.l1);
    let inc = betas.b(3) + (1.0 + tp.alpha1) * betas.b(1);
    for t in (0..m - 1).rev() {
        h[t] = (2.0 + tp.alpha1) * h[t + 1] + inc;
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSequence {
    /// `Γ_1 … Γ_m`
    pub values: Vec<f64>,
    pub min: f64,
    pub all_positive: bool,
}

pub fn gamma_sequence(tp: &TheoryParams, betas: &Betas, h: &[f64]) -> GammaSequence {
    let m = h.len();
    let k = 1.0 + 1.0 / tp.alpha1;
    let mut values: Vec<f64> = (0..m.saturating_sub(1))
        .map(|t| betas.b(2) - betas.b(5) - (h[t + 1] + betas.b(1)) * k)
        .collect();
    values.push(betas.b(6) - betas.b(5) - h[0]);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    GammaSequence {
        all_positive: values.iter().all(|&g| g > 0.0),
        values,
        min,
    }
}

/// `F(θ)`: the θ-dependent part of `Γ_t`.
pub fn f_theta(tp: &TheoryParams, theta: f64) -> f64 {
    let q = (1.0 - theta) / theta;
    tp.rho * tp.sigma_min * (tp.l2 - (1.0 - theta)) / (2.0 * theta * theta * tp.l2)
        - 0.5 * (tp.rho + tp.l1) * q * q * tp.sigma_max * (1.0 + 1.0 / tp.alpha1)
}

/// `H(η)`: the η-dependent part of `Γ_t`.
pub fn h_eta(tp: &TheoryParams, eta: f64) -> f64 {
    tp.phi_min / eta - 10.0 * tp.phi_max * tp.phi_max / (tp.sigma_min * eta * eta) * tp.c()
}

/// `Γ_t` for `t < m` rebuilt from `F`, `H` and the remaining constant terms.
pub fn gamma_from_parts(tp: &TheoryParams, h_next: f64) -> f64 {
    f_theta(tp, tp.theta) + h_eta(tp, tp.eta) - tp.l / 2.0 - tp.c() * 5.0 * tp.l * tp.l / tp.sigma_min
        - h_next * (1.0 + 1.0 / tp.alpha1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantLedger {
    pub params: TheoryParams,
    pub betas: Betas,
    pub h: Vec<f64>,
    pub gamma: GammaSequence,
    pub tau: f64,
    pub omega: f64,
}

impl ConstantLedger {
    pub fn new(tp: &TheoryParams) -> Self {
        let betas = compute_betas(tp);
        let h = h_sequence(tp, &betas);
        let gamma = gamma_sequence(tp, &betas, &h);
        let omega = 5.0 * tp.l * tp.l / (tp.sigma_min * tp.rho);
        ConstantLedger {
            params: *tp,
            betas,
            tau: gamma.min.min(omega),
            omega,
            h,
            gamma,
        }
    }

    /// `h_t` for 1-based `t`.
    pub fn h_at(&self, t: usize) -> f64 {
        self.h[t - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialValue {
    pub psi: f64,
    pub al_part: f64,
    pub step_part: f64,
    pub snapshot_part: f64,
}

/// `Ψ = L_ρ + β₅‖x_t − x_{t−1}‖² + h_t(‖x_t − x̃‖² + ‖x_{t−1} − x̃‖²)` from its pieces.
pub fn potential_from_parts(al: f64, x_t: &[f64], x_prev: &[f64], x_tilde_prev: &[f64], beta5: f64, h_t: f64) -> PotentialValue {
    let step_part = beta5 * vecops::dist_sq(x_t, x_prev);
    let snapshot_part = h_t * (vecops::dist_sq(x_t, x_tilde_prev) + vecops::dist_sq(x_prev, x_tilde_prev));
    PotentialValue {
        psi: al + step_part + snapshot_part,
        al_part: al,
        step_part,
        snapshot_part,
    }
}

/// Potential energy at inner index `t` (1-based) of the current epoch, where
/// `x_tilde_prev` is the snapshot the epoch started from.
pub fn potential_energy(
    p: &ConstrainedProblem,
    prev: &IterateState,
    cur: &IterateState,
    x_tilde_prev: &[f64],
    tp: &TheoryParams,
    ledger: &ConstantLedger,
    t: usize,
) -> Result<PotentialValue> {
    if t == 0 || t > ledger.h.len() {
        return Err(Error::InvalidConfig(format!("inner index {t} outside 1..={}", ledger.h.len())));
    }
    p.check_x(x_tilde_prev)?;
    let al = augmented_lagrangian(p, &cur.x, &cur.y, &cur.lambda, tp.rho)?;
    Ok(potential_from_parts(al, &cur.x, &prev.x, x_tilde_prev, ledger.betas.b(5), ledger.h_at(t)))
}

/// `‖x_t − x̃‖² + ‖x_{t−1} − x̃‖² + ‖x_{t+1} − x_t‖² + ‖x_t − x_{t−1}‖²`
pub fn residual_r(x_next: &[f64], x_t: &[f64], x_prev: &[f64], x_tilde: &[f64]) -> f64 {
    vecops::dist_sq(x_t, x_tilde) + vecops::dist_sq(x_prev, x_tilde) + vecops::dist_sq(x_next, x_t) + vecops::dist_sq(x_t, x_prev)
}

/// `R` at every recorded step `k ≥ 1` of a history that has a successor.
/// Entry `k` of the history is `x^s_t` with `s`, `t` as stored; the snapshot is
/// the one in effect during that epoch.
pub fn residual_series(history: &[HistoryEntry]) -> Vec<f64> {
    (1..history.len().saturating_sub(1))
        .map(|k| residual_r(&history[k + 1].x, &history[k].x, &history[k - 1].x, &history[k].x_tilde))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalTheta {
    /// Clamped into `[THETA_FLOOR, 1]`.
    pub value: f64,
    pub raw: f64,
    pub in_range: bool,
}

fn clamp_theta(raw: f64) -> OptimalTheta {
    let in_range = raw > 0.0 && raw <= 1.0;
    OptimalTheta {
        value: if raw.is_nan() { 1.0 } else { raw.clamp(THETA_FLOOR, 1.0) },
        raw,
        in_range,
    }
}

/// Closed-form optimal momentum, evaluated as published.
pub fn optimal_theta(tp: &TheoryParams) -> OptimalTheta {
    let TheoryParams {
        sigma_min: smin,
        sigma_max: smax,
        alpha1: a1,
        l1,
        l2,
        rho,
        ..
    } = *tp;
    let lead = 2.0 * l2 * (rho + l1) * (1.0 + a1) * smax;
    let tail = a1 * rho * smin * (l2 + 1.0);
    clamp_theta((lead - 2.0 * tail) / (lead + tail))
}

/// The stationary point of `F(θ)` solved directly from `dF/dθ = 0`.
pub fn stationary_theta(tp: &TheoryParams) -> OptimalTheta {
    let a = tp.rho * tp.sigma_min / (2.0 * tp.l2);
    let k = 0.5 * (tp.rho + tp.l1) * tp.sigma_max * (1.0 + 1.0 / tp.alpha1);
    clamp_theta((2.0 * k - 2.0 * a * (tp.l2 - 1.0)) / (2.0 * k + a))
}

/// `η*` from `1/η* = φ_min σ_min / (20 φ_max² (1/ρ + 1/(2l₁)))`.
pub fn optimal_eta(tp: &TheoryParams) -> f64 {
    20.0 * tp.phi_max * tp.phi_max * tp.c() / (tp.phi_min * tp.sigma_min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoBound {
    pub bound: f64,
    pub satisfied: bool,
}

/// Right side of the dual step lower bound, and whether `tp.rho` exceeds it.
pub fn rho_lower_bound(tp: &TheoryParams, h_next: f64, betas: &Betas) -> RhoBound {
    let TheoryParams {
        l,
        sigma_min: smin,
        phi_min,
        phi_max,
        alpha1,
        l2,
        theta,
        ..
    } = *tp;
    let num = 80.0 * phi_max * phi_max * theta * theta * l2 * (10.0 * l * l + (h_next + betas.b(1)) * (1.0 + 1.0 / alpha1));
    let den = phi_min * phi_min * smin * theta * theta * l2 + 40.0 * smin * (l2 - (1.0 - theta)) * phi_max * phi_max;
    let bound = num / den;
    RhoBound {
        bound,
        satisfied: tp.rho > bound,
    }
}

/// `(‖∇f(x) − Aᵀλ‖, dist(Bᵀλ, ∂g(y)), ‖Ax + By − c‖)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub subgradient: f64,
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.subgradient).max(self.feasibility)
    }
}

pub fn kkt_residual(p: &ConstrainedProblem, x: &[f64], y: &[f64], lambda: &[f64]) -> Result<KktResidual> {
    p.check_x(x)?;
    p.check_y(y)?;
    p.check_dual(lambda)?;
    let mut r1 = full_gradient(p, x)?;
    p.a().tr_mul_add_into(-1.0, lambda, &mut r1);
    let w = p.b().tr_mat_vec(lambda)?;
    let r2 = match *p.regularizer() {
        Regularizer::Zero => vecops::norm(&w),
        Regularizer::L1 { lambda1 } => w
            .iter()
            .zip(y)
            .map(|(&wj, &yj)| {
                let d = if yj == 0.0 {
                    (wj.abs() - lambda1).max(0.0)
                } else {
                    (wj - lambda1 * yj.signum()).abs()
                };
                d * d
            })
            .sum::<f64>()
            .sqrt(),
    };
    Ok(KktResidual {
        stationarity: vecops::norm(&r1),
        subgradient: r2,
        feasibility: vecops::norm(&p.residual(x, y)),
    })
}

/// Per-run inputs of the O(1/T) check: `Ψ` and `R` at every inner step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub psi: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub runs: usize,
    pub horizon: usize,
    /// min over (s, t) of the run-averaged `R`.
    pub min_mean_r: f64,
    pub mean_psi_first: f64,
    pub psi_star: f64,
    pub tau: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
}

/// Minimum runs required by [`theorem1_check`].
pub const THEOREM1_MIN_RUNS: usize = 30;

/// Compares `min_{s,t} R̄` with `(E Ψ₁¹ − Ψ*)/(τT)` where `Ψ*` is the smallest
/// recorded `Ψ` across all runs.
pub fn theorem1_check(runs: &[RunDiagnostics], ledger: &ConstantLedger, horizon: usize) -> Result<Theorem1Report> {
    if !ledger.gamma.all_positive {
        return Err(Error::NotApplicable(format!(
            "min Gamma = {:e} is not positive",
            ledger.gamma.min
        )));
    }
    if runs.len() < THEOREM1_MIN_RUNS {
        return Err(Error::InvalidConfig(format!(
            "need at least {THEOREM1_MIN_RUNS} runs, got {}",
            runs.len()
        )));
    }
    let len_r = runs.iter().map(|r| r.r.len()).min().unwrap_or(0);
    if len_r == 0 || runs.iter().any(|r| r.psi.is_empty()) {
        return Err(Error::InvalidConfig("runs carry no Psi/R samples".into()));
    }
    let k = runs.len() as f64;
    let min_mean_r = (0..len_r)
        .map(|j| runs.iter().map(|r| r.r[j]).sum::<f64>() / k)
        .fold(f64::INFINITY, f64::min);
    let mean_psi_first = runs.iter().map(|r| r.psi[0]).sum::<f64>() / k;
    let psi_star = runs
        .iter()
        .flat_map(|r| r.psi.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let gap = mean_psi_first - psi_star;
    let tau = ledger.tau;
    let rhs = if gap == 0.0 {
        0.0
    } else if tau > 0.0 {
        gap / (tau * horizon as f64)
    } else {
        return Err(Error::NotApplicable(format!("tau = {tau:e} is not positive")));
    };
    Ok(Theorem1Report {
        runs: runs.len(),
        horizon,
        min_mean_r,
        mean_psi_first,
        psi_star,
        tau,
        rhs,
        holds: min_mean_r <= rhs,
        slack: rhs - min_mean_r,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub c_hat: f64,
    pub xi_hat: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// Nonpositive distances were dropped from the window.
    pub window_shrunk: bool,
    pub no_linear_decay: bool,
}

/// Least-squares fit of `log d_t ≈ log ĉ + t log ξ̂` over the trailing
/// `window` entries of `distances`.
pub fn linear_rate_fit(distances: &[f64], window: usize) -> Result<RateFit> {
    let start = distances.len().saturating_sub(window);
    let pts: Vec<(f64, f64)> = distances[start..]
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0 && d.is_finite())
        .map(|(k, d)| ((start + k) as f64, d.ln()))
        .collect();
    let window_shrunk = pts.len() < distances.len() - start;
    if pts.len() < 20 {
        return Err(Error::NotApplicable(format!(
            "rate fit needs at least 20 positive distances, got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot <= f64::EPSILON * k * my.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / ss_tot };
    let xi_hat = slope.exp();
    Ok(RateFit {
        c_hat: intercept.exp(),
        xi_hat,
        r_squared,
        points_used: pts.len(),
        window_shrunk,
        no_linear_decay: xi_hat >= 1.0 - 1e-12,
    })
}

/// Best `(ρ, η)` on a grid by `τ` (then `min Γ`), among those with all `Γ_t > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleConfig {
    pub rho: f64,
    pub eta: f64,
    pub ledger: ConstantLedger,
}

pub fn search_admissible(
    p: &ConstrainedProblem,
    theta: f64,
    m: usize,
    q_mode: QMode,
    rhos: &[f64],
    etas: &[f64],
) -> Option<AdmissibleConfig> {
    let mut best: Option<AdmissibleConfig> = None;
    for &rho in rhos {
        for &eta in etas {
            let Ok(tp) = TheoryParams::for_problem(p, rho, eta, theta, m, q_mode, None) else {
                continue;
            };
            let ledger = ConstantLedger::new(&tp);
            let better = |b: &AdmissibleConfig| {
                (ledger.tau, ledger.gamma.min) > (b.ledger.tau, b.ledger.gamma.min)
            };
            if ledger.gamma.all_positive && best.as_ref().is_none_or(better) {
                best = Some(AdmissibleConfig { rho, eta, ledger });
            }
        }
    }
    best
}
