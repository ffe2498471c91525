use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use asvrg_admm::bench::report::{run_diagnostics, theory_report, SearchGrid, TraceInputs};
use asvrg_admm::bench::{self, emit_plot_data, ExperimentConfig, ExperimentReport, InitSpec, PlotKind};
use asvrg_admm::data::{AMode, QuadraticInstance};
use asvrg_admm::solvers::{self, SolverConfig};
use asvrg_admm::ConstrainedProblem;

#[derive(Parser)]
#[command(name = "asvrg-bench", version, about = "Stochastic ADMM solvers and Monte-Carlo benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic nonconvex quadratic instance as JSON.
    Gen(GenArgs),
    /// Solve once and print the trace as JSON lines.
    Run(RunArgs),
    /// Run a Monte-Carlo experiment from a TOML config.
    Bench(BenchArgs),
    /// Evaluate the convergence constants of one solver configuration.
    Theory(TheoryArgs),
    /// Write plot CSVs and scripts from a stored report.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AModeArg {
    I,
    Graph,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d1: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = AModeArg::I)]
    a_mode: AModeArg,
    /// Added to every diagonal entry of the component matrices.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda1: f64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Where the problem and solver of a single run come from.
#[derive(Args)]
struct Source {
    /// Experiment config; the problem and initial point are those of run `--run`.
    #[arg(long, short, conflicts_with = "problem")]
    config: Option<PathBuf>,
    /// Solver label inside `--config` (default: the first solver).
    #[arg(long, requires = "config")]
    solver: Option<String>,
    #[arg(long, default_value_t = 0, requires = "config")]
    run: usize,
    /// Problem JSON written by `gen`.
    #[arg(long, requires = "solver_config")]
    problem: Option<PathBuf>,
    /// Solver TOML used with `--problem`.
    #[arg(long)]
    solver_config: Option<PathBuf>,
    /// Standard deviation of a Gaussian starting point with `--problem`.
    #[arg(long)]
    init_scale: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` of the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    source: Source,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also run this many seeds and check the O(1/T) bound and the rate fit.
    #[arg(long)]
    check_runs: Option<usize>,
    /// Search a log grid of (rho, eta) for the largest tau with all Gamma_t > 0.
    #[arg(long)]
    search: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// `report.json` written by `bench`.
    #[arg(long, short)]
    report: PathBuf,
    /// loss, variance, accuracy, psi or all.
    #[arg(long, short, default_value = "all")]
    kind: String,
    /// Output directory (default: next to the report).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let result = match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Theory(a) => theory(a),
        Command::Plot(a) => plot(a),
    };
    // A closed downstream pipe (e.g. `| head`) is not a failure.
    match result {
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe) => Ok(()),
        r => r,
    }
}

macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

fn gen(a: GenArgs) -> Result<()> {
    let a_mode = match a.a_mode {
        AModeArg::I => AMode::I,
        AModeArg::Graph => AMode::GraphStacked,
    };
    let p = QuadraticInstance { n: a.n, d1: a.d1, a_mode, shift: a.shift, lambda1: a.lambda1 }.build(a.seed)?;
    let text = serde_json::to_string(&p)?;
    match a.out {
        Some(path) => fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => out!("{text}"),
    }
    Ok(())
}

fn read_solver(path: &Path) -> Result<SolverConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

struct Single {
    problem: ConstrainedProblem,
    solver: SolverConfig,
    init: InitSpec,
    seed: u64,
}

fn load_single(s: &Source) -> Result<Single> {
    if let Some(path) = &s.config {
        let cfg = ExperimentConfig::load(path)?;
        cfg.validate()?;
        let mut solver = match &s.solver {
            Some(label) => cfg
                .solvers
                .iter()
                .find(|c| &c.label() == label)
                .with_context(|| format!("no solver labelled `{label}` in {}", path.display()))?
                .clone(),
            None => cfg.solvers[0].clone(),
        };
        if let Some(e) = cfg.epochs {
            solver.epochs = e;
        }
        let seed = bench::run_seed(cfg.master_seed, s.run);
        solver.seed = seed;
        let problem = bench::build_problem(&cfg.problem, seed)?.problem;
        return Ok(Single { problem, solver, init: cfg.init, seed });
    }
    let (Some(pp), Some(sp)) = (&s.problem, &s.solver_config) else {
        bail!("give either --config or both --problem and --solver-config");
    };
    let text = fs::read_to_string(pp).with_context(|| format!("reading {}", pp.display()))?;
    let problem: ConstrainedProblem = serde_json::from_str(&text).with_context(|| format!("parsing {}", pp.display()))?;
    let solver = read_solver(sp)?;
    let init = match s.init_scale {
        Some(scale) => InitSpec::Gaussian { scale },
        None => InitSpec::Zero,
    };
    Ok(Single { seed: solver.seed, problem, solver, init })
}

fn run(a: RunArgs) -> Result<()> {
    let s = load_single(&a.source)?;
    let init = s.init.state(&s.problem, s.seed)?;
    let result = solvers::solve(&s.problem, &s.solver, &init)?;
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    for rec in &result.trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    if let solvers::SolveStatus::Diverged(norm) = result.status {
        eprintln!("diverged: iterate norm {norm:e}");
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let out = bench::run_experiment(&cfg)?;
    out!("{:<16} {:>6} {:>9} {:>14} {:>14}", "solver", "runs", "diverged", "final gap", "final var");
    for s in &out.report.solvers {
        let gap = s.loss_gap.last().map_or(f64::NAN, |v| v.mean);
        let var = s.variance.last().map_or(f64::NAN, |v| v.mean);
        out!("{:<16} {:>6} {:>9} {:>14.6e} {:>14.6e}", s.label, s.runs_used, s.runs_diverged, gap, var);
    }
    out!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64))
        .collect()
}

fn theory(a: TheoryArgs) -> Result<()> {
    let s = load_single(&a.source)?;
    let traces = match a.check_runs {
        Some(runs) => {
            let init = s.init.state(&s.problem, s.seed)?;
            let m = s.solver.inner_len(&s.problem);
            let mut diags = Vec::with_capacity(runs);
            let mut distances = Vec::new();
            for k in 0..runs {
                let mut c = s.solver.clone();
                c.seed = s.solver.seed.wrapping_add(k as u64);
                c.lambda_hist = true;
                c.keep_history = true;
                let r = solvers::solve(&s.problem, &c, &init)?;
                if k == 0 {
                    if let Some(h) = &r.history {
                        let last = &h[h.len() - 1].x;
                        distances = h
                            .iter()
                            .map(|e| e.x.iter().zip(last).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
                            .collect();
                        distances.pop();
                    }
                }
                diags.push(run_diagnostics(&r));
            }
            Some(TraceInputs {
                runs: diags,
                horizon: s.solver.epochs * m,
                window: distances.len(),
                distances,
            })
        }
        None => None,
    };
    let grid = a.search.then(|| SearchGrid { rhos: log_grid(-1.0, 6.0, 29), etas: log_grid(-4.0, 2.0, 31) });
    let rep = theory_report(&s.problem, &s.solver, traces.as_ref(), grid.as_ref())?;
    if a.json {
        out!("{}", serde_json::to_string_pretty(&rep)?);
    } else {
        write!(io::stdout().lock(), "{rep}")?;
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let report = ExperimentReport::load(&a.report)?;
    let dir = match a.out {
        Some(d) => d,
        None => a.report.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let kinds: Vec<PlotKind> = if a.kind.eq_ignore_ascii_case("all") {
        PlotKind::ALL
            .into_iter()
            .filter(|k| match k {
                PlotKind::AccuracyVsEpoch => report.solvers.iter().any(|s| s.accuracy.is_some()),
                PlotKind::PsiVsIter => report.solvers.iter().any(|s| s.psi.is_some()),
                _ => true,
            })
            .collect()
    } else {
        vec![a.kind.parse()?]
    };
    for kind in kinds {
        for path in emit_plot_data(&report, kind, &dir)? {
            out!("{}", path.display());
        }
    }
    Ok(())
}
