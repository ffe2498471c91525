//! The constrained finite-sum problem `min (1/n)Σ f_i(x) + g(y)  s.t. Ax + By = c`.

use std::sync::OnceLock;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::exec::{self, Exec};
use crate::linalg::{self, vecops, DenseMatrix, RealMatrix, SpectralSummary};

/// Sparse feature vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len("sparse vector values", indices.len(), values.len())?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidProblem("sparse indices must be strictly increasing".into()));
        }
        Ok(Self { indices, values })
    }

    pub fn from_dense(v: &[f64]) -> Self {
        let (indices, values) = v.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &x)| (i, x)).unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&j, v)| v * x[j]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        vecops::norm_sq(&self.values)
    }

    /// out += alpha * self
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (&j, v) in self.indices.iter().zip(&self.values) {
            out[j] += alpha * v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// `1/(1+e^u)` without overflow.
pub fn sigmoid_loss_of_margin(u: f64) -> f64 {
    if u > 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

/// Second derivative of `u ↦ 1/(1+e^u)`.
pub fn sigmoid_loss_curvature(u: f64) -> f64 {
    let f = sigmoid_loss_of_margin(u);
    f * (1.0 - f) * (1.0 - 2.0 * f)
}

/// max_u |d²/du² 1/(1+e^u)|, located by a grid over [-20, 20] with step 1e-4
/// and refined by golden-section search around the best grid point.
pub fn sigmoid_curvature_bound() -> f64 {
    static BOUND: OnceLock<f64> = OnceLock::new();
    *BOUND.get_or_init(|| {
        let h = 1e-4;
        let steps = (40.0 / h) as usize;
        let mut best_u = -20.0;
        let mut best = 0.0;
        for k in 0..=steps {
            let u = -20.0 + k as f64 * h;
            let c = sigmoid_loss_curvature(u).abs();
            if c > best {
                best = c;
                best_u = u;
            }
        }
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (best_u - h, best_u + h);
        for _ in 0..100 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if sigmoid_loss_curvature(a).abs() >= sigmoid_loss_curvature(b).abs() {
                hi = b;
            } else {
                lo = a;
            }
        }
        sigmoid_loss_curvature(0.5 * (lo + hi)).abs().max(best)
    })
}

/// One smooth component `f_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ComponentLoss {
    /// `1/(1 + exp(b aᵀx))`, nonconvex.
    Sigmoid { a: SparseVector, b: f64 },
    /// `log(1 + exp(-b aᵀx))`.
    Logistic { a: SparseVector, b: f64 },
    /// `xᵀ A x / 2` with symmetric `A`.
    Quadratic { a: DenseMatrix },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LipschitzMethod {
    ExactQuadratic,
    GridBoundSigmoid,
    PowerBoundLogistic,
}

impl ComponentLoss {
    pub fn quadratic(a: DenseMatrix) -> Result<Self> {
        check_len("quadratic loss (square)", a.rows(), a.cols())?;
        let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if a.max_asymmetry() > 1e-12 * scale {
            return Err(Error::InvalidProblem("quadratic loss matrix must be symmetric".into()));
        }
        Ok(ComponentLoss::Quadratic { a })
    }

    fn check_dim(&self, d1: usize) -> Result<()> {
        match self {
            ComponentLoss::Sigmoid { a, b } | ComponentLoss::Logistic { a, b } => {
                if let Some(j) = a.max_index() {
                    if j >= d1 {
                        return Err(Error::DimensionMismatch {
                            context: "feature index of a loss component",
                            expected: d1,
                            actual: j + 1,
                        });
                    }
                }
                if *b != 1.0 && *b != -1.0 {
                    return Err(Error::InvalidProblem(format!("label must be ±1, got {b}")));
                }
                Ok(())
            }
            ComponentLoss::Quadratic { a } => {
                check_len("quadratic loss dimension", d1, a.rows())?;
                check_len("quadratic loss dimension", d1, a.cols())?;
                let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if a.max_asymmetry() > 1e-12 * scale {
                    return Err(Error::InvalidProblem("quadratic loss matrix must be symmetric".into()));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ComponentLoss::Sigmoid { a, b } => sigmoid_loss_of_margin(b * a.dot(x)),
            ComponentLoss::Logistic { a, b } => {
                let t = -b * a.dot(x);
                if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
            ComponentLoss::Quadratic { a } => 0.5 * a.quad_form(x),
        }
    }

    /// out += scale * ∇f_i(x)
    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ComponentLoss::Sigmoid { a, b } => {
                let f = sigmoid_loss_of_margin(b * a.dot(x));
                a.axpy_into(-scale * f * (1.0 - f) * b, out);
            }
            ComponentLoss::Logistic { a, b } => {
                let f = sigmoid_loss_of_margin(b * a.dot(x));
                a.axpy_into(-scale * f * b, out);
            }
            ComponentLoss::Quadratic { a } => a.mul_add_into(scale, x, out),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, 1.0, &mut g);
        g
    }

    /// Gradient Lipschitz constant of this component.
    pub fn lipschitz(&self) -> (f64, LipschitzMethod) {
        match self {
            ComponentLoss::Sigmoid { a, .. } => (a.norm_sq() * sigmoid_curvature_bound(), LipschitzMethod::GridBoundSigmoid),
            ComponentLoss::Logistic { a, .. } => (0.25 * a.norm_sq(), LipschitzMethod::PowerBoundLogistic),
            ComponentLoss::Quadratic { a } => {
                let eig = linalg::symmetric_eigenvalues(a);
                let l = eig.first().map_or(0.0, |v| v.abs()).max(eig.last().map_or(0.0, |v| v.abs()));
                (l, LipschitzMethod::ExactQuadratic)
            }
        }
    }
}

/// Convex, possibly nonsmooth `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    L1 { lambda1: f64 },
    Zero,
}

impl Regularizer {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Regularizer::L1 { lambda1 } => lambda1 * y.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::Zero => 0.0,
        }
    }

    /// argmin_u scale·g(u) + ½‖u − v‖².
    pub fn prox(&self, v: &[f64], scale: f64) -> Vec<f64> {
        match self {
            Regularizer::L1 { lambda1 } => {
                let k = scale * lambda1;
                v.iter().map(|&x| x.signum() * (x.abs() - k).max(0.0)).collect()
            }
            Regularizer::Zero => v.to_vec(),
        }
    }
}

/// Free-function form of [`Regularizer::prox`].
pub fn prox_regularizer(r: &Regularizer, v: &[f64], scale: f64) -> Vec<f64> {
    r.prox(v, scale)
}

/// Serializable description; validated on conversion to [`ConstrainedProblem`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemData {
    pub losses: Vec<ComponentLoss>,
    pub regularizer: Regularizer,
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: Vec<f64>,
}

/// Validated problem instance. Immutable; derived spectra are cached lazily.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "ProblemData", into = "ProblemData")]
pub struct ConstrainedProblem {
    losses: Vec<ComponentLoss>,
    regularizer: Regularizer,
    a: RealMatrix,
    b: RealMatrix,
    c: Vec<f64>,
    b_neg_identity: bool,
    lipschitz: OnceLock<LipschitzEstimate>,
    spectrum_a: OnceLock<Result<SpectralSummary>>,
    spectrum_at: OnceLock<Result<SpectralSummary>>,
}

impl Clone for ConstrainedProblem {
    fn clone(&self) -> Self {
        ConstrainedProblem::try_from(self.clone_data()).expect("already validated")
    }
}

impl ConstrainedProblem {
    fn clone_data(&self) -> ProblemData {
        ProblemData {
            losses: self.losses.clone(),
            regularizer: self.regularizer,
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
        }
    }
}

impl From<ConstrainedProblem> for ProblemData {
    fn from(p: ConstrainedProblem) -> Self {
        ProblemData {
            losses: p.losses,
            regularizer: p.regularizer,
            a: p.a,
            b: p.b,
            c: p.c,
        }
    }
}

impl TryFrom<ProblemData> for ConstrainedProblem {
    type Error = Error;
    fn try_from(d: ProblemData) -> Result<Self> {
        ConstrainedProblem::new(d.losses, d.regularizer, d.a, d.b, d.c)
    }
}

impl ConstrainedProblem {
    pub fn new(
        losses: Vec<ComponentLoss>,
        regularizer: Regularizer,
        a: RealMatrix,
        b: RealMatrix,
        c: Vec<f64>,
    ) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::InvalidProblem("at least one loss component is required".into()));
        }
        let d1 = a.cols();
        for l in &losses {
            l.check_dim(d1)?;
        }
        check_len("rows of B", a.rows(), b.rows())?;
        check_len("length of c", a.rows(), c.len())?;
        if let Regularizer::L1 { lambda1 } = regularizer {
            if !(lambda1 >= 0.0) {
                return Err(Error::InvalidProblem(format!("lambda1 must be nonnegative, got {lambda1}")));
            }
        }
        let b_neg_identity = b.is_neg_identity();
        Ok(Self {
            losses,
            regularizer,
            a,
            b,
            c,
            b_neg_identity,
            lipschitz: OnceLock::new(),
            spectrum_a: OnceLock::new(),
            spectrum_at: OnceLock::new(),
        })
    }

    /// `B = −I`, `c = 0` consensus form `y = Ax`.
    pub fn consensus(losses: Vec<ComponentLoss>, regularizer: Regularizer, a: RealMatrix) -> Result<Self> {
        let d = a.rows();
        Self::new(losses, regularizer, a, RealMatrix::scaled_identity(d, -1.0), vec![0.0; d])
    }

    pub fn losses(&self) -> &[ComponentLoss] {
        &self.losses
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn a(&self) -> &RealMatrix {
        &self.a
    }

    pub fn b(&self) -> &RealMatrix {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn d1(&self) -> usize {
        self.a.cols()
    }

    pub fn d2(&self) -> usize {
        self.b.cols()
    }

    /// Number of constraint rows.
    pub fn d(&self) -> usize {
        self.a.rows()
    }

    pub fn b_is_neg_identity(&self) -> bool {
        self.b_neg_identity
    }

    pub fn check_x(&self, x: &[f64]) -> Result<()> {
        check_len("primal x", self.d1(), x.len())
    }

    pub fn check_y(&self, y: &[f64]) -> Result<()> {
        check_len("primal y", self.d2(), y.len())
    }

    pub fn check_dual(&self, lambda: &[f64]) -> Result<()> {
        check_len("dual lambda", self.d(), lambda.len())
    }

    /// (1/n) Σ f_i(x)
    pub fn smooth_value(&self, x: &[f64]) -> f64 {
        self.smooth_value_with(Exec::default(), x)
    }

    pub fn smooth_value_with(&self, exec: Exec, x: &[f64]) -> f64 {
        exec::sum_scalars(exec, self.n(), |i| self.losses[i].value(x)) / self.n() as f64
    }

    /// `Ax + By − c`, unchecked.
    pub fn residual(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.c.iter().map(|v| -v).collect();
        self.a.mul_add_into(1.0, x, &mut r);
        self.b.mul_add_into(1.0, y, &mut r);
        r
    }

    pub fn lipschitz(&self) -> &LipschitzEstimate {
        self.lipschitz.get_or_init(|| lipschitz_estimate(self))
    }

    /// Spectral summary of `A` (σ extremes of `AAᵀ`).
    pub fn spectrum_a(&self) -> Result<SpectralSummary> {
        clone_result(self.spectrum_a.get_or_init(|| {
            linalg::spectral_extremes(&self.a, linalg::SPECTRAL_TOL, linalg::MAX_POWER_ITERS)
        }))
    }

    /// Spectral summary of `Aᵀ` (σ extremes of `AᵀA`).
    pub fn spectrum_at(&self) -> Result<SpectralSummary> {
        clone_result(self.spectrum_at.get_or_init(|| {
            linalg::spectral_extremes(&self.a.transpose(), linalg::SPECTRAL_TOL, linalg::MAX_POWER_ITERS)
        }))
    }
}

fn clone_result(r: &Result<SpectralSummary>) -> Result<SpectralSummary> {
    match r {
        Ok(s) => Ok(*s),
        Err(Error::NoConvergence { what, iterations, best }) => Err(Error::NoConvergence {
            what,
            iterations: *iterations,
            best: *best,
        }),
        Err(e) => Err(Error::InvalidProblem(e.to_string())),
    }
}

/// `(1/n)Σ f_i(x) + g(y)`
pub fn full_objective(p: &ConstrainedProblem, x: &[f64], y: &[f64]) -> Result<f64> {
    p.check_x(x)?;
    p.check_y(y)?;
    Ok(p.smooth_value(x) + p.regularizer.value(y))
}

/// `f(x) + g(y) − ⟨λ, Ax+By−c⟩ + (ρ/2)‖Ax+By−c‖²`
pub fn augmented_lagrangian(p: &ConstrainedProblem, x: &[f64], y: &[f64], lambda: &[f64], rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    p.check_dual(lambda)?;
    let obj = full_objective(p, x, y)?;
    let r = p.residual(x, y);
    Ok(obj - vecops::dot(lambda, &r) + 0.5 * rho * vecops::norm_sq(&r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// max_i L_i
    pub l: f64,
    /// Method of the component attaining the maximum.
    pub method: LipschitzMethod,
    pub per_component: Vec<f64>,
}

pub fn lipschitz_estimate(p: &ConstrainedProblem) -> LipschitzEstimate {
    let per: Vec<(f64, LipschitzMethod)> = p.losses.iter().map(ComponentLoss::lipschitz).collect();
    let (l, method) = per
        .iter()
        .copied()
        .fold((f64::NEG_INFINITY, per[0].1), |acc, e| if e.0 > acc.0 { e } else { acc });
    LipschitzEstimate {
        l,
        method,
        per_component: per.into_iter().map(|e| e.0).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCheck {
    pub label: String,
    pub residual: f64,
    pub threshold: f64,
}

/// Outcome of checking `Im(B) ∪ {c} ⊆ Im(A)`; advisory only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub passed: bool,
    pub worst_residual: f64,
    pub checks: Vec<FeasibilityCheck>,
}

/// Least-squares test of each column of `B` and of `c` against the range of `A`.
pub fn validate_feasibility(p: &ConstrainedProblem, tol: f64) -> FeasibilityReport {
    let a = p.a.to_dense().to_nalgebra();
    let svd = SVD::new(a, true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let rank_tol = smax * 1e-12 * (p.d().max(p.d1()) as f64);
    let basis: Vec<Vec<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > rank_tol)
        .map(|(k, _)| u.column(k).iter().copied().collect())
        .collect();
    let project_out = |v: &[f64]| {
        let mut r = v.to_vec();
        for q in &basis {
            let coef = vecops::dot(q, v);
            vecops::axpy(-coef, q, &mut r);
        }
        vecops::norm(&r)
    };
    let b_dense = p.b.to_dense();
    let mut checks = Vec::with_capacity(p.d2() + 1);
    for j in 0..p.d2() {
        let col: Vec<f64> = (0..p.d()).map(|i| b_dense.get(i, j)).collect();
        checks.push(FeasibilityCheck {
            label: format!("B[:, {j}]"),
            residual: project_out(&col),
            threshold: tol * (1.0 + vecops::norm(&col)),
        });
    }
    checks.push(FeasibilityCheck {
        label: "c".into(),
        residual: project_out(&p.c),
        threshold: tol * (1.0 + vecops::norm(&p.c)),
    });
    FeasibilityReport {
        passed: checks.iter().all(|c| c.residual <= c.threshold),
        worst_residual: checks.iter().map(|c| c.residual).fold(0.0, f64::max),
        checks,
    }
}
