//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::fs;
use std::time::Instant;

use asvrg_admm::bench::report::run_diagnostics;
use asvrg_admm::bench::{run_experiment, ExperimentConfig, InitSpec, ProblemSpec};
use asvrg_admm::data::{self, AMode, Dataset, ParseErrorKind, QuadraticInstance};
use asvrg_admm::estimators::{full_gradient, svrg_gradient, SnapshotGradient};
use asvrg_admm::problem::{ComponentLoss, ConstrainedProblem, Regularizer, SparseVector};
use asvrg_admm::solvers::{
    self, gamma_auto, q_matrix, z_update_exact, z_update_linearized, Algorithm, DecayForm, EtaSchedule, IterateState, QMode,
    RhoMode, SolveResult, SolverConfig, StepParams, ThetaMode, VarianceMode,
};
use asvrg_admm::theory::{self, ConstantLedger, RunDiagnostics, TheoryParams};
use asvrg_admm::{linalg::DenseMatrix, RealMatrix};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn fixed_cfg(alg: Algorithm, eta: f64, theta: f64, rho: f64, epochs: usize, m: usize) -> SolverConfig {
    let mut c = SolverConfig::new(alg, EtaSchedule::Fixed(eta), ThetaMode::Fixed(theta), RhoMode::Fixed(rho), epochs);
    c.m = Some(m);
    c
}

/// Exhaustive mean of the variance-reduced estimator equals the full gradient.
#[test]
fn c01_svrg_unbiased() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let p = data::gen_quadratic_instance(20, 5, 1000 + (k % 10) as u64, AMode::I).unwrap();
        let mats = quadratic_matrices(&p);
        let x = random_vec(&mut rng, 5, 2.0);
        let xt = random_vec(&mut rng, 5, 2.0);
        let snap = SnapshotGradient::new(&p, &xt).unwrap();
        let mut mean = vec![0.0; 5];
        for i in 0..20 {
            let g = svrg_gradient(&p, &x, &snap, i).unwrap();
            mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v / 20.0);
        }
        // (1/n) Σ A_i x from the raw matrices
        let mut oracle = vec![0.0; 5];
        for a in &mats {
            let ax = matvec(a.data(), 5, 5, &x);
            oracle.iter_mut().zip(&ax).for_each(|(o, v)| *o += v / 20.0);
        }
        worst = worst.max(max_abs_diff(&mean, &oracle));
        worst = worst.max(max_abs_diff(&full_gradient(&p, &x).unwrap(), &oracle));
    }
    let pass = worst <= 1e-12;
    report(1, "variance-reduced estimator is unbiased", pass, format!("max deviation {worst:.3e}, {:?}", start.elapsed()));
    assert!(pass);
}

/// Exhaustive E‖Δ‖² ≤ L²‖x − x̃‖² with L from an independent eigen-solver.
#[test]
fn c02_variance_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for k in 0..100 {
        let p = data::gen_quadratic_instance(20, 5, 2000 + (k % 10) as u64, AMode::I).unwrap();
        let mats = quadratic_matrices(&p);
        let l = mats
            .iter()
            .map(|a| jacobi_eigenvalues(a.data(), 5).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max);
        let x = random_vec(&mut rng, 5, 2.0);
        let xt = random_vec(&mut rng, 5, 2.0);
        let snap = SnapshotGradient::new(&p, &xt).unwrap();
        let full = full_gradient(&p, &x).unwrap();
        let e: f64 = (0..20)
            .map(|i| {
                let g = svrg_gradient(&p, &x, &snap, i).unwrap();
                g.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 20.0;
        let dist: f64 = x.iter().zip(&xt).map(|(a, b)| (a - b).powi(2)).sum();
        let bound = l * l * dist;
        max_ratio = max_ratio.max(e / bound);
        if e > bound {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(2, "variance bound", pass, format!("{violations} violations, max ratio {max_ratio:.4}, {:?}", start.elapsed()));
    assert!(pass);
}

fn reduction_problem() -> ConstrainedProblem {
    QuadraticInstance { n: 50, d1: 10, a_mode: AMode::GraphStacked, shift: 1.0, lambda1: 1e-4 }
        .build(303)
        .unwrap()
}

fn reduction_runs() -> (ConstrainedProblem, SolveResult, SolveResult) {
    let p = reduction_problem();
    let init = InitSpec::Gaussian { scale: 1.0 }.state(&p, 7).unwrap();
    let mut a = fixed_cfg(Algorithm::Asvrg, 0.5, 1.0, 6.0, 5, 50);
    a.seed = 99;
    a.keep_history = true;
    let mut s = a.clone();
    s.algorithm = Algorithm::Svrg;
    let ra = solvers::solve(&p, &a, &init).unwrap();
    let rs = solvers::solve(&p, &s, &init).unwrap();
    (p, ra, rs)
}

/// ASVRG-ADMM with θ = 1 reproduces SVRG-ADMM entry by entry.
#[test]
fn c03_theta_one_reduces_to_svrg() {
    let start = Instant::now();
    let (_, ra, rs) = reduction_runs();
    let mut dev = 0.0f64;
    let same_shape = ra.trace.len() == rs.trace.len() && ra.trace.len() == 5 * 50 + 1;
    for (a, b) in ra.trace.iter().zip(&rs.trace) {
        assert_eq!((a.s, a.t), (b.s, b.t));
        for (u, v) in [
            (a.objective, b.objective),
            (a.al_value, b.al_value),
            (a.constraint_residual, b.constraint_residual),
            (a.variance_estimate, b.variance_estimate),
            (a.theta_used, b.theta_used),
            (a.rho_used, b.rho_used),
        ] {
            dev = dev.max((u - v).abs());
        }
    }
    for (a, b) in ra.history.as_ref().unwrap().iter().zip(rs.history.as_ref().unwrap()) {
        dev = dev.max(max_abs_diff(&a.x, &b.x)).max(max_abs_diff(&a.y, &b.y)).max(max_abs_diff(&a.lambda, &b.lambda));
    }
    let pass = same_shape && dev <= 1e-12 && !ra.diverged();
    report(3, "momentum-free reduction", pass, format!("max deviation {dev:.3e} over {} records, {:?}", ra.trace.len(), start.elapsed()));
    assert!(pass);
}

/// Linearized and exact z-steps agree under the Uzawa choice of Q, and Q ≻ I.
#[test]
fn c04_uzawa_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_diff = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for k in 0..100 {
        let (d1, d2, rows) = (5, 4, 7);
        let losses: Vec<ComponentLoss> = (0..6)
            .map(|_| {
                let m = random_vec(&mut rng, d1 * d1, 1.0);
                ComponentLoss::quadratic(DenseMatrix::from_fn(d1, d1, |i, j| 0.5 * (m[i * d1 + j] + m[j * d1 + i]))).unwrap()
            })
            .collect();
        let a = RealMatrix::dense(rows, d1, random_vec(&mut rng, rows * d1, 1.0)).unwrap();
        let b = RealMatrix::dense(rows, d2, random_vec(&mut rng, rows * d2, 1.0)).unwrap();
        let c = random_vec(&mut rng, rows, 1.0);
        let p = ConstrainedProblem::new(losses, Regularizer::Zero, a, b, c).unwrap();
        let eta = 0.05 + 2.0 * rng.random::<f64>();
        let rho = 0.1 + 10.0 * rng.random::<f64>();
        let theta = if k % 4 == 0 { 1.0 } else { 0.05 + 0.95 * rng.random::<f64>() };
        let gamma = gamma_auto(&p, eta, rho, theta).unwrap();
        let params = StepParams { eta, theta, rho, gamma };
        let z = random_vec(&mut rng, d1, 2.0);
        let y = random_vec(&mut rng, d2, 2.0);
        let lambda = random_vec(&mut rng, rows, 2.0);
        let g = random_vec(&mut rng, d1, 2.0);
        let lin = z_update_linearized(&p, &z, &y, &lambda, &params, &g).unwrap();
        let exact = z_update_exact(&p, &z, &y, &lambda, &params, QMode::Uzawa, &g).unwrap();
        max_diff = max_diff.max(max_abs_diff(&lin, &exact));
        let q = q_matrix(&p, QMode::Uzawa, &params);
        min_eig = min_eig.min(jacobi_eigenvalues(q.data(), d1)[0]);
    }
    let pass = max_diff <= 1e-9 && min_eig > 1.0 - 1e-9;
    report(4, "Uzawa linearization", pass, format!("max step difference {max_diff:.3e}, min eig(Q) {min_eig:.12}, {:?}", start.elapsed()));
    assert!(pass);
}

/// λ_t − λ_{t+1} = ρ(Az_{t+1} + By_{t+1} − c) along the reduction runs.
#[test]
fn c05_dual_step_identity() {
    let start = Instant::now();
    let (p, ra, rs) = reduction_runs();
    let (a, ar, ac) = dense_of(p.a());
    let (b, br, bc) = dense_of(p.b());
    let mut worst = 0.0f64;
    let mut checked = 0;
    for r in [&ra, &rs] {
        let h = r.history.as_ref().unwrap();
        for w in h.windows(2) {
            let az = matvec(&a, ar, ac, &w[1].z);
            let by = matvec(&b, br, bc, &w[1].y);
            for j in 0..ar {
                let lhs = w[0].lambda[j] - w[1].lambda[j];
                let rhs = w[1].rho * (az[j] + by[j] - p.c()[j]);
                worst = worst.max((lhs - rhs).abs());
            }
            checked += 1;
        }
    }
    let pass = worst <= 1e-12 && checked == 2 * 250;
    report(5, "dual step identity", pass, format!("max deviation {worst:.3e} over {checked} steps, {:?}", start.elapsed()));
    assert!(pass);
}

const BOUND_THETA: f64 = 0.9;
const BOUND_M: usize = 2;

fn bound_problem() -> ConstrainedProblem {
    QuadraticInstance { n: 20, d1: 5, a_mode: AMode::I, shift: 1.0, lambda1: 1e-4 }.build(606).unwrap()
}

fn bound_init(p: &ConstrainedProblem) -> IterateState {
    let x: Vec<f64> = (0..p.d1()).map(|k| 1.0 - 0.3 * k as f64).collect();
    IterateState::initial(p, x.clone(), x, vec![0.0; p.d()]).unwrap()
}

/// Grid search for the admissible `(ρ, η)` with the largest `τ`.
fn bound_config(p: &ConstrainedProblem) -> (f64, f64, ConstantLedger) {
    let rhos: Vec<f64> = (0..33).map(|k| 10f64.powf(0.25 * k as f64)).collect();
    let etas: Vec<f64> = (0..31).map(|k| 10f64.powf(-4.0 + 0.2 * k as f64)).collect();
    let a = theory::search_admissible(p, BOUND_THETA, BOUND_M, QMode::Uzawa, &rhos, &etas).expect("an admissible grid point");
    (a.rho, a.eta, a.ledger)
}

fn bound_runs(p: &ConstrainedProblem, rho: f64, eta: f64, horizon: usize, runs: usize) -> (Vec<RunDiagnostics>, ConstantLedger) {
    let init = bound_init(p);
    let mut ledger = None;
    let diags = (0..runs as u64)
        .map(|seed| {
            let mut c = fixed_cfg(Algorithm::Asvrg, eta, BOUND_THETA, rho, horizon / BOUND_M, BOUND_M);
            c.seed = seed;
            c.lambda_hist = true;
            c.keep_history = true;
            c.variance = VarianceMode::Sampled(1);
            let r = solvers::solve(p, &c, &init).unwrap();
            assert!(!r.diverged());
            ledger = r.ledger.clone();
            run_diagnostics(&r)
        })
        .collect();
    (diags, ledger.expect("ledger is constructible"))
}

/// min R̄ ≤ (Ψ̄₁ − Ψ*)/(τT) over 30 sampling seeds on an admissible configuration.
#[test]
fn c06_o_one_over_t_bound() {
    let start = Instant::now();
    let p = bound_problem();
    let (rho, eta, searched) = bound_config(&p);
    let mut pass = searched.gamma.min > 0.0;
    let mut details = vec![format!("rho {rho:.4} eta {eta:.4} min Gamma {:.3e} tau {:.3e}", searched.gamma.min, searched.tau)];
    for horizon in [200, 400, 800] {
        let (diags, ledger) = bound_runs(&p, rho, eta, horizon, 30);
        assert_eq!(ledger, searched);
        // independent evaluation of both sides
        let k = diags.len() as f64;
        let len = diags.iter().map(|d| d.r.len()).min().unwrap();
        let min_mean_r = (0..len).map(|j| diags.iter().map(|d| d.r[j]).sum::<f64>() / k).fold(f64::INFINITY, f64::min);
        let psi1 = diags.iter().map(|d| d.psi[0]).sum::<f64>() / k;
        let psi_star = diags.iter().flat_map(|d| d.psi.iter().copied()).fold(f64::INFINITY, f64::min);
        let rhs = (psi1 - psi_star) / (ledger.tau * horizon as f64);
        let rep = theory::theorem1_check(&diags, &ledger, horizon).unwrap();
        assert!((rep.rhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        assert!((rep.min_mean_r - min_mean_r).abs() <= 1e-12 * min_mean_r.abs().max(1.0));
        let ok = min_mean_r <= rhs && rep.holds && rep.slack >= 0.0;
        pass &= ok;
        details.push(format!("T={horizon}: min R {min_mean_r:.3e} <= {rhs:.3e}"));
    }
    report(6, "O(1/T) bound", pass, format!("{}; {:?}", details.join("; "), start.elapsed()));
    assert!(pass);
}

/// Mean one-step change of Ψ is at most three standard errors above zero.
#[test]
fn c07_sufficient_decrease() {
    let start = Instant::now();
    let p = bound_problem();
    let (rho, eta, _) = bound_config(&p);
    let (diags, _) = bound_runs(&p, rho, eta, 400, 200);
    let len = diags.iter().map(|d| d.psi.len()).min().unwrap();
    let mut worst_z = f64::NEG_INFINITY;
    let mut violations = 0;
    for j in 0..len - 1 {
        let deltas: Vec<f64> = diags.iter().map(|d| d.psi[j + 1] - d.psi[j]).collect();
        let (mean, se) = mean_stderr(&deltas);
        if mean > 3.0 * se {
            violations += 1;
        }
        if se > 0.0 {
            worst_z = worst_z.max(mean / se);
        }
    }
    let pass = violations == 0;
    report(7, "sufficient decrease", pass, format!("{violations} violations over {} steps, 200 runs, worst mean/se {worst_z:.2}, {:?}", len - 1, start.elapsed()));
    assert!(pass);
}

fn f_oracle(tp: &TheoryParams, th: f64) -> f64 {
    let q = (1.0 - th) / th;
    tp.rho * tp.sigma_min * (tp.l2 - (1.0 - th)) / (2.0 * th * th * tp.l2) - 0.5 * (tp.rho + tp.l1) * q * q * tp.sigma_max * (1.0 + 1.0 / tp.alpha1)
}

fn h_oracle(tp: &TheoryParams, eta: f64) -> f64 {
    tp.phi_min / eta - 10.0 * tp.phi_max * tp.phi_max / (tp.sigma_min * eta * eta) * (1.0 / tp.rho + 1.0 / (2.0 * tp.l1))
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form θ* and η* against grid maximizers of F and H.
#[test]
fn c08_optimal_parameters() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut theta_checked, mut theta_ok, mut eta_ok) = (0, 0, 0);
    let mut worst_theta = 0.0f64;
    let mut worst_eta = 0.0f64;
    for _ in 0..20 {
        let sigma_min = 0.1 + rng.random::<f64>();
        let phi_min = 0.5 + rng.random::<f64>();
        let rho = 0.5 + 20.0 * rng.random::<f64>();
        let tp = TheoryParams {
            l: 0.1 + 5.0 * rng.random::<f64>(),
            sigma_min,
            sigma_max: sigma_min * (1.0 + 3.0 * rng.random::<f64>()),
            phi_min,
            phi_max: phi_min * (1.0 + rng.random::<f64>()),
            alpha1: 0.2 + 2.0 * rng.random::<f64>(),
            l1: rho * (0.5 + rng.random::<f64>()),
            l2: 1.0 + rng.random::<f64>(),
            rho,
            eta: 1.0,
            theta: 0.5,
            m: 3,
        };
        let ts = theory::optimal_theta(&tp);
        if ts.in_range {
            theta_checked += 1;
            let grid = (1..=100_000).map(|k| k as f64 * 1e-5);
            let best = grid.fold((0.0, f64::NEG_INFINITY), |b, th| {
                let v = f_oracle(&tp, th);
                if v > b.1 { (th, v) } else { b }
            });
            let err = (best.0 - ts.raw).abs();
            worst_theta = worst_theta.max(err);
            if err <= 2e-4 {
                theta_ok += 1;
            }
        }
        let es = theory::optimal_eta(&tp);
        let grid: Vec<f64> = (0..=4000).map(|k| 10f64.powf(-4.0 + 8.0 * k as f64 / 4000.0)).collect();
        let k = (0..grid.len()).max_by(|&a, &b| h_oracle(&tp, grid[a]).total_cmp(&h_oracle(&tp, grid[b]))).unwrap();
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(grid.len() - 1)];
        let best = golden_max(|e| h_oracle(&tp, e), lo, hi);
        let rel = (best - es).abs() / es;
        worst_eta = worst_eta.max(rel);
        if rel <= 1e-3 {
            eta_ok += 1;
        }
    }
    let pass_theta = theta_ok == theta_checked;
    let pass_eta = eta_ok == 20;
    let pass = pass_theta && pass_eta;
    report(
        8,
        "closed-form optimal parameters",
        pass,
        format!(
            "theta: {theta_ok}/{theta_checked} in-range tuples within 2e-4 (worst {worst_theta:.3e}); eta: {eta_ok}/20 within 0.1% (worst {worst_eta:.3e}); {:?}",
            start.elapsed()
        ),
    );
    assert!(pass_eta, "optimal eta disagrees with the grid maximizer of H");
    assert!(pass_theta, "closed-form theta* is not the maximizer of F (worst gap {worst_theta:.3e})");
}

/// Final-epoch loss gap ASVRG ≤ SVRG < SADMM and variance below SADMM's.
#[test]
fn c09_synthetic_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let vr = |alg, theta| {
        let mut c = SolverConfig::new(alg, EtaSchedule::Fixed(2.0), ThetaMode::Fixed(theta), RhoMode::Fixed(6.0), 30);
        c.q_mode = QMode::Identity;
        c
    };
    let mut sadmm = SolverConfig::new(
        Algorithm::Sadmm,
        EtaSchedule::Decaying { c: 2.0, form: DecayForm::Divisor },
        ThetaMode::Fixed(1.0),
        RhoMode::Fixed(6.0),
        30,
    );
    sadmm.q_mode = QMode::Identity;
    let cfg = ExperimentConfig {
        problem: ProblemSpec::SyntheticQuadratic { n: 100, d1: 10, a_mode: AMode::I, shift: 1.0, lambda1: 1e-4 },
        solvers: vec![vr(Algorithm::Asvrg, 0.19), vr(Algorithm::Svrg, 1.0), sadmm],
        monte_carlo: 30,
        epochs: None,
        output_dir: dir.path().to_path_buf(),
        master_seed: 2024,
        init: InitSpec::Gaussian { scale: 1.0 },
    };
    let out = run_experiment(&cfg).unwrap();
    let rep = &out.report;
    let last = |label: &str| {
        let s = rep.solver(label).unwrap();
        (s.loss_gap.last().map_or(f64::NAN, |v| v.mean), s.variance.last().map_or(f64::NAN, |v| v.mean), s.runs_used)
    };
    let (ga, va, ua) = last("ASVRG");
    let (gs, vs, us) = last("SVRG");
    let (gd, vd, ud) = last("SADMM");
    // two-pass recomputation of the final-epoch means
    for (k, label) in ["ASVRG", "SVRG", "SADMM"].iter().enumerate() {
        let finals: Vec<f64> = out.runs[k]
            .iter()
            .filter(|o| !o.result.diverged())
            .map(|o| o.result.trace.last().unwrap().objective - rep.best_objective)
            .collect();
        let (mean, se) = mean_stderr(&finals);
        let s = rep.solver(label).unwrap().loss_gap.last().copied().unwrap();
        assert!((s.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0) && (s.stderr - se).abs() <= 1e-12 * se.abs().max(1.0));
    }
    let order = ga <= gs && gs < gd;
    let variance = va < vd && vs < vd;
    let pass = order && variance && ua == 30 && us == 30 && ud == 30;
    report(
        9,
        "synthetic quadratic ordering",
        pass,
        format!(
            "gap ASVRG {ga:.3e} SVRG {gs:.3e} SADMM {gd:.3e}; variance ASVRG {va:.3e} SVRG {vs:.3e} SADMM {vd:.3e}; runs used {ua}/{us}/{ud}; {:?}",
            start.elapsed()
        ),
    );
    assert!(pass);
}

/// All four solvers solve min ½‖x‖² s.t. x = y; ASVRG converges linearly.
#[test]
fn c10_strongly_convex_sanity() {
    let start = Instant::now();
    let d1 = 5;
    let p = ConstrainedProblem::consensus(
        vec![ComponentLoss::quadratic(DenseMatrix::identity(d1)).unwrap()],
        Regularizer::Zero,
        RealMatrix::identity(d1),
    )
    .unwrap();
    let x0: Vec<f64> = (0..d1).map(|k| 1.0 + k as f64).collect();
    let init = IterateState::initial(&p, x0.clone(), x0, vec![0.0; d1]).unwrap();
    let mut configs = vec![
        SolverConfig::new(Algorithm::Asvrg, EtaSchedule::Fixed(2.0), ThetaMode::Fixed(0.9), RhoMode::Fixed(6.0), 50),
        SolverConfig::new(Algorithm::Svrg, EtaSchedule::Fixed(2.0), ThetaMode::Fixed(1.0), RhoMode::Fixed(6.0), 50),
    ];
    for alg in [Algorithm::Sadmm, Algorithm::SadmmF] {
        configs.push(SolverConfig::new(
            alg,
            EtaSchedule::Decaying { c: 2.0, form: DecayForm::Divisor },
            ThetaMode::Fixed(1.0),
            RhoMode::Fixed(6.0),
            50,
        ));
    }
    let mut pass = true;
    let mut details = Vec::new();
    let mut asvrg_dist = Vec::new();
    for mut c in configs {
        c.q_mode = QMode::Identity;
        c.keep_history = true;
        c.m = Some(10);
        let r = solvers::solve(&p, &c, &init).unwrap();
        let st = &r.final_state;
        // ∇f(x) = x, Aᵀλ = λ, Bᵀλ = −λ, g = 0
        let stat = norm(&st.x.iter().zip(&st.lambda).map(|(x, l)| x - l).collect::<Vec<_>>());
        let sub = norm(&st.lambda);
        let feas = norm(&st.x.iter().zip(&st.y).map(|(x, y)| x - y).collect::<Vec<_>>());
        let kkt = theory::kkt_residual(&p, &st.x, &st.y, &st.lambda).unwrap();
        assert!((kkt.stationarity - stat).abs() < 1e-12 && (kkt.subgradient - sub).abs() < 1e-12 && (kkt.feasibility - feas).abs() < 1e-12);
        let ok = stat <= 1e-3 && sub <= 1e-3 && feas <= 1e-3 && !r.diverged();
        pass &= ok;
        details.push(format!("{} kkt ({stat:.1e}, {sub:.1e}, {feas:.1e})", c.label()));
        if c.algorithm == Algorithm::Asvrg {
            asvrg_dist = r
                .history
                .unwrap()
                .iter()
                .map(|h| (norm(&h.x).powi(2) + norm(&h.y).powi(2) + norm(&h.lambda).powi(2)).sqrt())
                .collect();
        }
    }
    let fit = theory::linear_rate_fit(&asvrg_dist, asvrg_dist.len()).unwrap();
    let rate_ok = fit.xi_hat < 1.0 && fit.r_squared >= 0.9;
    pass &= rate_ok;
    details.push(format!("ASVRG xi {:.4} r^2 {:.4}", fit.xi_hat, fit.r_squared));
    report(10, "strongly convex sanity", pass, format!("{}; {:?}", details.join("; "), start.elapsed()));
    assert!(pass);
}

/// Round trips on random data and error positions on malformed input.
#[test]
fn c11_libsvm_parser() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut round_trip_ok = 0;
    for _ in 0..100 {
        let d1 = 1 + rng.random_range(0..40usize);
        let n = 1 + rng.random_range(0..30usize);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let idx: Vec<usize> = (0..d1).filter(|_| rng.random::<f64>() < 0.3).collect();
            let vals: Vec<f64> = idx
                .iter()
                .map(|_| match rng.random_range(0..3) {
                    0 => rng.random_range(-5i32..6) as f64,
                    1 => (rng.random::<f64>() - 0.5) * 1e3,
                    _ => (rng.random::<f64>() - 0.5) * 1e-7,
                })
                .collect();
            samples.push(SparseVector::new(idx, vals).unwrap());
            labels.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
        }
        let ds = Dataset::new(samples, labels, d1).unwrap();
        let text = data::serialize_libsvm(&ds);
        let back = data::parse_libsvm_with_dim(&text, Some(d1)).unwrap();
        if back == ds && data::serialize_libsvm(&back) == text {
            round_trip_ok += 1;
        }
    }
    let fixtures: [(&str, usize, usize, fn(&ParseErrorKind) -> bool); 10] = [
        ("", 1, 1, |k| matches!(k, ParseErrorKind::Empty)),
        ("+1 1:0.5\n\n-1 2:1\n", 2, 1, |k| matches!(k, ParseErrorKind::BlankLine)),
        ("abc 1:2\n", 1, 1, |k| matches!(k, ParseErrorKind::BadLabel(_))),
        ("+1 1:1\n-1 2:1 3\n", 2, 8, |k| matches!(k, ParseErrorKind::MissingColon(_))),
        ("+1 0:1\n", 1, 4, |k| matches!(k, ParseErrorKind::BadIndex(_))),
        ("+1 x:1\n", 1, 4, |k| matches!(k, ParseErrorKind::BadIndex(_))),
        ("+1 12:zz\n", 1, 7, |k| matches!(k, ParseErrorKind::BadValue(_))),
        ("-1 3:1 2:1\n", 1, 8, |k| matches!(k, ParseErrorKind::NonIncreasing { prev: 3, got: 2 })),
        ("+1 1:1 1:2\n", 1, 8, |k| matches!(k, ParseErrorKind::NonIncreasing { prev: 1, got: 1 })),
        ("+1  4:nan\n", 1, 7, |k| matches!(k, ParseErrorKind::BadValue(_))),
    ];
    let mut fixture_ok = 0;
    for (text, line, column, kind) in fixtures {
        match data::parse_libsvm(text) {
            Err(e) if e.line == line && e.column == column && kind(&e.kind) => fixture_ok += 1,
            other => println!("  fixture {text:?}: unexpected {other:?}"),
        }
    }
    let pass = round_trip_ok == 100 && fixture_ok == 10;
    report(11, "LIBSVM parser", pass, format!("{round_trip_ok}/100 round trips, {fixture_ok}/10 error positions, {:?}", start.elapsed()));
    assert!(pass);
}

/// Two identical experiment runs write byte-identical traces.
#[test]
fn c12_determinism() {
    let start = Instant::now();
    let base = tempfile::tempdir().unwrap();
    let mut solvers_list = vec![
        fixed_cfg(Algorithm::Asvrg, 0.5, 0.5, 6.0, 3, 20),
        fixed_cfg(Algorithm::Svrg, 0.5, 1.0, 6.0, 3, 20),
    ];
    for alg in [Algorithm::Sadmm, Algorithm::SadmmF] {
        let mut c = SolverConfig::new(alg, EtaSchedule::Decaying { c: 2.0, form: DecayForm::Divisor }, ThetaMode::Fixed(1.0), RhoMode::Fixed(6.0), 3);
        c.m = Some(20);
        solvers_list.push(c);
    }
    solvers_list[0].lambda_hist = true;
    let cfg = |sub: &str| ExperimentConfig {
        problem: ProblemSpec::SyntheticQuadratic { n: 40, d1: 6, a_mode: AMode::GraphStacked, shift: 1.0, lambda1: 1e-4 },
        solvers: solvers_list.clone(),
        monte_carlo: 8,
        epochs: None,
        output_dir: base.path().join(sub),
        master_seed: 12,
        init: InitSpec::Gaussian { scale: 1.0 },
    };
    run_experiment(&cfg("a")).unwrap();
    run_experiment(&cfg("b")).unwrap();
    let mut identical = 0;
    let labels = ["ASVRG", "SVRG", "SADMM", "SADMM_F"];
    for label in labels {
        let name = format!("trace_{label}.jsonl");
        let a = fs::read(base.path().join("a").join(&name)).unwrap();
        let b = fs::read(base.path().join("b").join(&name)).unwrap();
        if !a.is_empty() && a == b {
            identical += 1;
        }
    }
    let pass = identical == labels.len();
    report(12, "determinism", pass, format!("{identical}/{} trace files byte-identical, {:?}", labels.len(), start.elapsed()));
    assert!(pass);
}
