//! Seeded Monte-Carlo experiments: problem construction, per-run solves,
//! trace files, aggregation, accuracy and theory reports.

pub mod aggregate;
pub mod plot;
pub mod report;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{self, AMode, Dataset, QuadraticInstance};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg::{DenseMatrix, RealMatrix};
use crate::problem::{ComponentLoss, ConstrainedProblem, Regularizer};
use crate::solvers::{self, IterateState, SolveResult, SolverConfig, TraceRecord};

pub use aggregate::{aggregate_series, Stat, Welford};
pub use plot::{emit_plot_data, PlotKind};
pub use report::{theory_report, TheoryReport};

fn default_lambda1_quadratic() -> f64 {
    1e-4
}

fn default_corr_threshold() -> f64 {
    0.5
}

fn default_train_fraction() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProblemSpec {
    /// Random nonconvex quadratic, rebuilt from every run seed.
    SyntheticQuadratic {
        n: usize,
        d1: usize,
        a_mode: AMode,
        /// Added to every diagonal of `A_i`.
        #[serde(default)]
        shift: f64,
        #[serde(default = "default_lambda1_quadratic")]
        lambda1: f64,
    },
    /// Sigmoid loss on a LIBSVM dataset with `A = [G; I]`.
    FusedLasso {
        dataset: PathBuf,
        lambda1: f64,
        #[serde(default = "default_corr_threshold")]
        corr_threshold: f64,
    },
    /// Sigmoid loss with `λ₁‖x‖₁` on a per-run train split.
    #[serde(rename = "RLR")]
    Rlr {
        dataset: PathBuf,
        lambda1: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// `n` identically zero components, `A = I`, `g = 0`.
    ZeroData { n: usize, d1: usize },
}

/// Starting point of every run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    /// `x = 0`, `y = 0`, `λ = 0`.
    #[default]
    Zero,
    /// `x ~ N(0, scale² I)` drawn from the run seed, `y = Ax` when `B = −I`
    /// and `c = 0` (zero otherwise), `λ = 0`.
    Gaussian { scale: f64 },
}

impl InitSpec {
    pub fn state(self, p: &ConstrainedProblem, seed: u64) -> Result<IterateState> {
        match self {
            InitSpec::Zero => Ok(IterateState::zeros(p)),
            InitSpec::Gaussian { scale } => {
                if !(scale >= 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidConfig(format!("init scale must be nonnegative, got {scale}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(INIT_STREAM);
                let x: Vec<f64> = (0..p.d1()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let y = if p.b_is_neg_identity() && p.c().iter().all(|&v| v == 0.0) {
                    let mut y = vec![0.0; p.d2()];
                    p.a().mul_add_into(1.0, &x, &mut y);
                    y
                } else {
                    vec![0.0; p.d2()]
                };
                IterateState::initial(p, x, y, vec![0.0; p.d()])
            }
        }
    }
}

const INIT_STREAM: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverConfig>,
    pub monte_carlo: usize,
    /// Overrides every solver's `S` when set.
    #[serde(default)]
    pub epochs: Option<usize>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(default)]
    pub init: InitSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.monte_carlo == 0 {
            return Err(Error::InvalidConfig("monte_carlo must be at least 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidConfig("solver list is empty".into()));
        }
        if self.epochs == Some(0) {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.solvers {
            s.validate()?;
            let label = s.label();
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return Err(Error::InvalidConfig(format!("solver label `{label}` must be ASCII alphanumeric, '-', '_' or '.'")));
            }
            if !seen.insert(label.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate solver label `{label}`")));
            }
        }
        Ok(())
    }

    fn solver_for_run(&self, base: &SolverConfig, seed: u64) -> SolverConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

/// Seed of run `run` derived from the master seed.
pub fn run_seed(master: u64, run: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run as u64);
    rng.next_u64()
}

/// Data loaded once per experiment.
enum Prepared {
    Quadratic(QuadraticInstance),
    Fixed(ConstrainedProblem),
    Split { ds: Dataset, lambda1: f64, fraction: f64 },
}

/// A problem instance for one run, with the held-out set when there is one.
pub struct RunProblem {
    pub problem: ConstrainedProblem,
    pub test: Option<Dataset>,
}

fn prepare(spec: &ProblemSpec) -> Result<Prepared> {
    match spec {
        ProblemSpec::SyntheticQuadratic { n, d1, a_mode, shift, lambda1 } => Ok(Prepared::Quadratic(QuadraticInstance {
            n: *n,
            d1: *d1,
            a_mode: *a_mode,
            shift: *shift,
            lambda1: *lambda1,
        })),
        ProblemSpec::FusedLasso { dataset, lambda1, corr_threshold } => {
            let ds = data::read_libsvm(dataset, None)?;
            let graph = data::build_graph_matrix(&ds, *corr_threshold)?;
            Ok(Prepared::Fixed(data::fused_lasso_problem(&ds, *lambda1, &graph)?))
        }
        ProblemSpec::Rlr { dataset, lambda1, train_fraction } => Ok(Prepared::Split {
            ds: data::read_libsvm(dataset, None)?,
            lambda1: *lambda1,
            fraction: *train_fraction,
        }),
        ProblemSpec::ZeroData { n, d1 } => Ok(Prepared::Fixed(zero_problem(*n, *d1)?)),
    }
}

/// `n` zero quadratics in dimension `d1` with `y = x` and `g = 0`.
pub fn zero_problem(n: usize, d1: usize) -> Result<ConstrainedProblem> {
    if n == 0 || d1 == 0 {
        return Err(Error::InvalidConfig("n and d1 must be at least 1".into()));
    }
    let losses = (0..n)
        .map(|_| ComponentLoss::quadratic(DenseMatrix::zeros(d1, d1)))
        .collect::<Result<Vec<_>>>()?;
    ConstrainedProblem::consensus(losses, Regularizer::Zero, RealMatrix::identity(d1))
}

fn instantiate(prep: &Prepared, seed: u64) -> Result<RunProblem> {
    match prep {
        Prepared::Quadratic(q) => Ok(RunProblem { problem: q.build(seed)?, test: None }),
        Prepared::Fixed(p) => Ok(RunProblem { problem: p.clone(), test: None }),
        Prepared::Split { ds, lambda1, fraction } => {
            let (train, test) = data::split_train_test(ds, *fraction, seed)?;
            Ok(RunProblem {
                problem: data::rlr_problem(&train, *lambda1)?,
                test: Some(test),
            })
        }
    }
}

/// Builds the problem of run seed `seed` for `spec`.
pub fn build_problem(spec: &ProblemSpec, seed: u64) -> Result<RunProblem> {
    instantiate(&prepare(spec)?, seed)
}

/// Fraction of samples with `sign(aᵀx) = b`, where `sign(0) = +1`.
pub fn evaluate_accuracy(x: &[f64], test: &Dataset) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::InvalidProblem("accuracy of an empty test set".into()));
    }
    crate::error::check_len("model dimension", test.d1, x.len())?;
    let hits = test
        .samples
        .iter()
        .zip(&test.labels)
        .filter(|(a, &b)| {
            let pred = if a.dot(x) >= 0.0 { 1.0 } else { -1.0 };
            pred == b
        })
        .count();
    Ok(hits as f64 / test.n() as f64)
}

/// One solver's runs summarized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub label: String,
    pub runs_total: usize,
    pub runs_used: usize,
    pub runs_diverged: usize,
    pub diverged_runs: Vec<usize>,
    /// Per epoch, `0..=S`.
    pub loss_gap: Vec<Stat>,
    pub objective: Vec<Stat>,
    pub variance: Vec<Stat>,
    pub accuracy: Option<Vec<Stat>>,
    /// Per recorded step carrying `Ψ`.
    pub psi: Option<Vec<Stat>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub best_objective: f64,
    pub solvers: Vec<SolverReport>,
}

impl ExperimentReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn solver(&self, label: &str) -> Option<&SolverReport> {
        self.solvers.iter().find(|s| s.label == label)
    }
}

/// Everything one run of one solver produced.
pub struct RunOutcome {
    pub result: SolveResult,
    pub accuracy: Option<Vec<f64>>,
}

/// Raw results indexed `[solver][run]`, plus the aggregate report.
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runs: Vec<Vec<RunOutcome>>,
}

fn epoch_records(trace: &[TraceRecord]) -> impl Iterator<Item = &TraceRecord> {
    let m = trace.iter().map(|r| r.t).max().unwrap_or(0);
    trace.iter().filter(move |r| r.t == 0 || r.t == m)
}

/// Runs every solver on every seed without touching the file system.
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let prep = prepare(&cfg.problem)?;
    let runs = cfg.monte_carlo;
    let threads = exec::threads_from_env();
    let per_run: Vec<Result<Vec<RunOutcome>>> = exec::with_threads(threads, || {
        exec::map_indexed(Exec::Parallel, runs, |r| {
            let seed = run_seed(cfg.master_seed, r);
            let inst = instantiate(&prep, seed)?;
            let init = cfg.init.state(&inst.problem, seed)?;
            cfg.solvers
                .iter()
                .map(|base| {
                    let scfg = cfg.solver_for_run(base, seed);
                    let mut result = solvers::solve(&inst.problem, &scfg, &init)?;
                    result.trace.iter_mut().for_each(|rec| rec.run_id = r as u64);
                    let accuracy = match &inst.test {
                        Some(test) => Some(
                            result
                                .epoch_x
                                .iter()
                                .map(|x| evaluate_accuracy(x, test))
                                .collect::<Result<Vec<_>>>()?,
                        ),
                        None => None,
                    };
                    Ok(RunOutcome { result, accuracy })
                })
                .collect()
        })
    });
    let per_run = per_run.into_iter().collect::<Result<Vec<_>>>()?;
    // transpose to [solver][run]
    let mut by_solver: Vec<Vec<RunOutcome>> = (0..cfg.solvers.len()).map(|_| Vec::with_capacity(runs)).collect();
    for run in per_run {
        for (k, outcome) in run.into_iter().enumerate() {
            by_solver[k].push(outcome);
        }
    }
    let report = summarize(cfg, &by_solver);
    Ok(ExperimentOutput { report, runs: by_solver })
}

fn summarize(cfg: &ExperimentConfig, by_solver: &[Vec<RunOutcome>]) -> ExperimentReport {
    let best_objective = by_solver
        .iter()
        .flatten()
        .filter(|o| !o.result.diverged())
        .flat_map(|o| o.result.trace.iter().map(|r| r.objective))
        .fold(f64::INFINITY, f64::min);
    let solvers = cfg
        .solvers
        .iter()
        .zip(by_solver)
        .map(|(scfg, outcomes)| {
            let used: Vec<&RunOutcome> = outcomes.iter().filter(|o| !o.result.diverged()).collect();
            let diverged_runs: Vec<usize> = outcomes
                .iter()
                .enumerate()
                .filter(|(_, o)| o.result.diverged())
                .map(|(r, _)| r)
                .collect();
            let per_epoch = |f: &dyn Fn(&TraceRecord) -> f64| -> Vec<Stat> {
                let series: Vec<Vec<f64>> = used.iter().map(|o| epoch_records(&o.result.trace).map(f).collect()).collect();
                aggregate_series(&series)
            };
            let accuracy = used
                .iter()
                .map(|o| o.accuracy.clone())
                .collect::<Option<Vec<_>>>()
                .filter(|v| !v.is_empty())
                .map(|series| aggregate_series(&series));
            let psi_series: Vec<Vec<f64>> = used
                .iter()
                .map(|o| o.result.trace.iter().filter_map(|r| r.psi).collect::<Vec<_>>())
                .filter(|s| !s.is_empty())
                .collect();
            SolverReport {
                label: scfg.label(),
                runs_total: outcomes.len(),
                runs_used: used.len(),
                runs_diverged: diverged_runs.len(),
                diverged_runs,
                loss_gap: per_epoch(&|r| r.objective - best_objective),
                objective: per_epoch(&|r| r.objective),
                variance: per_epoch(&|r| r.variance_estimate),
                accuracy,
                psi: (!psi_series.is_empty()).then(|| aggregate_series(&psi_series)),
            }
        })
        .collect();
    ExperimentReport { best_objective, solvers }
}

/// Writes one JSONL line per trace record of every run of `outcomes`.
pub fn write_trace_jsonl(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut out = Vec::new();
    for o in outcomes {
        for rec in &o.result.trace {
            serde_json::to_writer(&mut out, rec).map_err(|e| Error::Serde(e.to_string()))?;
            out.push(b'\n');
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes `trace_<label>.jsonl`, `report.json` and
/// the plot CSVs into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let output = run_experiment_in_memory(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (scfg, outcomes) in cfg.solvers.iter().zip(&output.runs) {
        write_trace_jsonl(&dir.join(format!("trace_{}.jsonl", scfg.label())), outcomes)?;
    }
    write_report(&dir.join("report.json"), &output.report)?;
    let mut kinds = vec![PlotKind::LossVsEpoch, PlotKind::VarianceVsEpoch];
    if output.report.solvers.iter().any(|s| s.accuracy.is_some()) {
        kinds.push(PlotKind::AccuracyVsEpoch);
    }
    if output.report.solvers.iter().any(|s| s.psi.is_some()) {
        kinds.push(PlotKind::PsiVsIter);
    }
    for kind in kinds {
        emit_plot_data(&output.report, kind, dir)?;
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::SparseVector;
    use crate::solvers::{Algorithm, EtaSchedule, RhoMode, ThetaMode};

    #[test]
    fn accuracy_tie_rule_and_separable() {
        let samples = vec![SparseVector::from_dense(&[1.0, 0.0]), SparseVector::from_dense(&[0.0, 1.0]), SparseVector::from_dense(&[1.0, 1.0])];
        let ds = Dataset::new(samples, vec![1.0, -1.0, 1.0], 2).unwrap();
        assert!((evaluate_accuracy(&[0.0, 0.0], &ds).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(evaluate_accuracy(&[2.0, -1.0], &ds).unwrap(), 1.0);
        let empty = Dataset::new(vec![], vec![], 2).unwrap();
        assert!(evaluate_accuracy(&[0.0, 0.0], &empty).is_err());
    }

    #[test]
    fn run_seeds_are_distinct_and_stable() {
        assert_eq!(run_seed(7, 3), run_seed(7, 3));
        assert_ne!(run_seed(7, 3), run_seed(7, 4));
        assert_ne!(run_seed(7, 3), run_seed(8, 3));
    }

    #[test]
    fn zero_data_gives_flat_zero_trace() {
        let mut s = SolverConfig::new(Algorithm::Asvrg, EtaSchedule::Fixed(1.0), ThetaMode::Fixed(0.5), RhoMode::Fixed(1.0), 3);
        s.m = Some(4);
        let cfg = ExperimentConfig {
            problem: ProblemSpec::ZeroData { n: 3, d1: 2 },
            solvers: vec![s],
            monte_carlo: 1,
            epochs: None,
            output_dir: PathBuf::from("unused"),
            master_seed: 1,
            init: InitSpec::Zero,
        };
        let out = run_experiment_in_memory(&cfg).unwrap();
        let trace = &out.runs[0][0].result.trace;
        assert_eq!(trace.len(), 13);
        assert!(trace.iter().all(|r| r.objective == 0.0 && r.al_value == 0.0 && r.variance_estimate == 0.0));
        let rep = &out.report.solvers[0];
        assert_eq!(rep.runs_total, rep.runs_used + rep.runs_diverged);
        assert_eq!(rep.loss_gap.len(), 4);
    }
}
