use std::time::Instant;

use super::{HistoryEntry, IterateState, SolveResult, SolveStatus, SolverConfig, TraceRecord, VarianceMode};
use crate::error::Result;
use crate::estimators::{self, ProbeMode, SnapshotGradient};
use crate::linalg::vecops;
use crate::problem::ConstrainedProblem;
use crate::theory::{self, ConstantLedger};

const AUTO_EXHAUSTIVE_LIMIT: usize = 1000;
const AUTO_SAMPLES: usize = 256;

/// Collects trace records, epoch-end iterates and the optional history.
pub(super) struct Recorder<'a> {
    p: &'a ConstrainedProblem,
    cfg: &'a SolverConfig,
    m: usize,
    start: Instant,
    trace: Vec<TraceRecord>,
    history: Option<Vec<HistoryEntry>>,
    epoch_x: Vec<Vec<f64>>,
    ledger: Option<ConstantLedger>,
}

impl<'a> Recorder<'a> {
    pub(super) fn new(p: &'a ConstrainedProblem, cfg: &'a SolverConfig, m: usize, ledger: Option<ConstantLedger>) -> Self {
        Self {
            p,
            cfg,
            m,
            start: Instant::now(),
            trace: Vec::with_capacity((cfg.epochs * m) / cfg.trace_stride + cfg.epochs + 1),
            history: cfg.keep_history.then(Vec::new),
            epoch_x: Vec::with_capacity(cfg.epochs + 1),
            ledger,
        }
    }

    fn probe_mode(&self, step: usize) -> ProbeMode {
        let sampled = |samples| ProbeMode::Sampled {
            samples,
            seed: self.cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        };
        match self.cfg.variance {
            VarianceMode::Exhaustive => ProbeMode::Exhaustive,
            VarianceMode::Sampled(k) => sampled(k),
            VarianceMode::Auto if self.p.n() <= AUTO_EXHAUSTIVE_LIMIT => ProbeMode::Exhaustive,
            VarianceMode::Auto => sampled(AUTO_SAMPLES),
        }
    }

    /// Called once before the first step.
    pub(super) fn start(&mut self, state: &IterateState, snap: Option<&SnapshotGradient>, theta: f64, rho: f64) -> Result<()> {
        self.epoch_x.push(state.x.clone());
        if let Some(h) = &mut self.history {
            h.push(HistoryEntry::of(state, rho));
        }
        self.push(state, 0, None, snap, theta, rho)
    }

    /// Called after global step `step` (1-based) produced `state`.
    pub(super) fn step(
        &mut self,
        state: &IterateState,
        step: usize,
        x_prev: &[f64],
        snap: Option<&SnapshotGradient>,
        theta: f64,
        rho: f64,
    ) -> Result<()> {
        if let Some(h) = &mut self.history {
            h.push(HistoryEntry::of(state, rho));
        }
        if state.t == self.m {
            self.epoch_x.push(state.x.clone());
        }
        if step % self.cfg.trace_stride == 0 || state.t == self.m {
            self.push(state, step, Some(x_prev), snap, theta, rho)?;
        }
        Ok(())
    }

    fn push(
        &mut self,
        state: &IterateState,
        step: usize,
        x_prev: Option<&[f64]>,
        snap: Option<&SnapshotGradient>,
        theta: f64,
        rho: f64,
    ) -> Result<()> {
        let p = self.p;
        let exec = self.cfg.exec;
        let f = p.smooth_value_with(exec, &state.x);
        let objective = f + p.regularizer().value(&state.y);
        let r = p.residual(&state.x, &state.y);
        let al_value = objective - vecops::dot(&state.lambda, &r) + 0.5 * rho * vecops::norm_sq(&r);
        let mode = self.probe_mode(step);
        let variance_estimate = match snap {
            Some(snap) => estimators::variance_probe_with(exec, p, &state.x, snap, mode)?.mean_sq_error,
            None => estimators::sgd_variance_probe_with(exec, p, &state.x, mode)?.mean_sq_error,
        };
        let psi = match (&self.ledger, x_prev) {
            (Some(ledger), Some(prev)) if state.t >= 1 && state.t <= ledger.h.len() => Some(
                theory::potential_from_parts(al_value, &state.x, prev, &state.x_tilde, ledger.betas.b(5), ledger.h_at(state.t)).psi,
            ),
            _ => None,
        };
        self.trace.push(TraceRecord {
            run_id: 0,
            s: state.s,
            t: state.t,
            objective,
            al_value,
            constraint_residual: vecops::norm(&r),
            variance_estimate,
            psi,
            theta_used: theta,
            rho_used: rho,
            elapsed_ns: if self.cfg.wall_clock {
                self.start.elapsed().as_nanos() as u64
            } else {
                0
            },
        });
        Ok(())
    }

    pub(super) fn finish(self, final_state: IterateState, status: SolveStatus, rho_final: f64, rho_ceiling_hit: bool) -> SolveResult {
        SolveResult {
            final_state,
            trace: self.trace,
            status,
            epoch_x: self.epoch_x,
            history: self.history,
            ledger: self.ledger,
            rho_final,
            rho_ceiling_hit,
        }
    }
}
