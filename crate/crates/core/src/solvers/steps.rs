//! Individual sub-steps of one inner iteration.

use nalgebra::SymmetricEigen;

use super::{IterateState, QMode};
use crate::error::{Error, Result};
use crate::linalg::{vecops, Cholesky, DenseMatrix, RealMatrix};
use crate::problem::{ConstrainedProblem, Regularizer};

/// Added to the automatic `γ` so that `Q ≻ I` strictly.
pub const GAMMA_SLACK: f64 = 1e-9;

/// Largest `d2` for the dense y-solve with a general `B`.
pub const MAX_DENSE_Y: usize = 256;

/// Largest `d1` for dense z/x solves.
pub const MAX_DENSE_X: usize = 512;

/// Numeric parameters of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub eta: f64,
    pub theta: f64,
    pub rho: f64,
    pub gamma: f64,
}

/// `1 + ηρ‖AᵀA‖₂/θ + GAMMA_SLACK`
pub fn gamma_auto(p: &ConstrainedProblem, eta: f64, rho: f64, theta: f64) -> Result<f64> {
    Ok(1.0 + eta * rho * p.spectrum_a()?.op_norm_gram / theta + GAMMA_SLACK)
}

/// `argmin_y g(y) + (ρ/2)‖Ax + By − c − λ/ρ‖²` at the state's `x` and `λ`.
pub fn y_update(p: &ConstrainedProblem, state: &IterateState, rho: f64) -> Result<Vec<f64>> {
    p.check_x(&state.x)?;
    p.check_dual(&state.lambda)?;
    // v = Ax − c − λ/ρ
    let mut v: Vec<f64> = p.c().iter().zip(&state.lambda).map(|(c, l)| -c - l / rho).collect();
    p.a().mul_add_into(1.0, &state.x, &mut v);
    if p.b_is_neg_identity() {
        return Ok(p.regularizer().prox(&v, 1.0 / rho));
    }
    match p.regularizer() {
        Regularizer::L1 { .. } => Err(Error::Unsupported(
            "L1 regularizer with a general B; rewrite the constraint with B = -I".into(),
        )),
        Regularizer::Zero => {
            if p.d2() > MAX_DENSE_Y {
                return Err(Error::Unsupported(format!(
                    "dense y-solve limited to d2 <= {MAX_DENSE_Y}, got {}",
                    p.d2()
                )));
            }
            // BᵀB y = −Bᵀv, with a tiny ridge for rank-deficient B
            let mut m = p.b().gram_cols();
            let scale = (0..p.d2()).map(|j| m.get(j, j)).fold(1.0f64, f64::max);
            for j in 0..p.d2() {
                m.set(j, j, m.get(j, j) + 1e-12 * scale);
            }
            let rhs = vecops::scale(-1.0, &p.b().tr_mat_vec(&v)?);
            Cholesky::factor(&m)?.solve(&rhs)
        }
    }
}

/// `z − (η/(γθ))·[ĝ + ρAᵀ(Az + By_next − c − λ/ρ)]`
pub fn z_update_linearized(
    p: &ConstrainedProblem,
    z: &[f64],
    y_next: &[f64],
    lambda: &[f64],
    params: &StepParams,
    grad_est: &[f64],
) -> Result<Vec<f64>> {
    p.check_x(z)?;
    p.check_x(grad_est)?;
    p.check_y(y_next)?;
    p.check_dual(lambda)?;
    let StepParams { eta, theta, rho, gamma } = *params;
    let mut r = p.residual(z, y_next);
    vecops::axpy(-1.0 / rho, lambda, &mut r);
    let mut dir = grad_est.to_vec();
    p.a().tr_mul_add_into(rho, &r, &mut dir);
    let step = eta / (gamma * theta);
    Ok(z.iter().zip(&dir).map(|(zi, di)| zi - step * di).collect())
}

/// Dense `Q` for the given mode.
pub fn q_matrix(p: &ConstrainedProblem, q_mode: QMode, params: &StepParams) -> DenseMatrix {
    match q_mode {
        QMode::Identity => DenseMatrix::identity(p.d1()),
        QMode::Uzawa => {
            let ata = p.a().gram_cols();
            let k = params.eta * params.rho / params.theta;
            DenseMatrix::from_fn(p.d1(), p.d1(), |i, j| {
                let id = if i == j { params.gamma } else { 0.0 };
                id - k * ata.get(i, j)
            })
        }
    }
}

/// Solves `((θ/η)Q + ρAᵀA) z = (θ/η)Q z_t − ĝ + ρAᵀ(c + λ/ρ − By_next)` densely.
pub fn z_update_exact(
    p: &ConstrainedProblem,
    z: &[f64],
    y_next: &[f64],
    lambda: &[f64],
    params: &StepParams,
    q_mode: QMode,
    grad_est: &[f64],
) -> Result<Vec<f64>> {
    p.check_x(z)?;
    p.check_x(grad_est)?;
    p.check_y(y_next)?;
    p.check_dual(lambda)?;
    let d1 = p.d1();
    if d1 > MAX_DENSE_X {
        return Err(Error::Unsupported(format!("dense z-solve limited to d1 <= {MAX_DENSE_X}, got {d1}")));
    }
    let StepParams { eta, theta, rho, .. } = *params;
    let q = q_matrix(p, q_mode, params);
    let ata = p.a().gram_cols();
    let w = theta / eta;
    let coef = DenseMatrix::from_fn(d1, d1, |i, j| w * q.get(i, j) + rho * ata.get(i, j));
    let mut rhs = vecops::scale(w, &q.mul_vec(z));
    vecops::axpy(-1.0, grad_est, &mut rhs);
    // c + λ/ρ − By
    let mut u: Vec<f64> = p.c().iter().zip(lambda).map(|(c, l)| c + l / rho).collect();
    p.b().mul_add_into(-1.0, y_next, &mut u);
    p.a().tr_mul_add_into(rho, &u, &mut rhs);
    Cholesky::factor(&coef)?.solve(&rhs)
}

/// `θz + (1−θ)x̃`, evaluated as `x̃ + θ(z − x̃)` so that `z = x̃` is a fixed point.
pub fn momentum_update(z_next: &[f64], x_tilde: &[f64], theta: f64) -> Vec<f64> {
    if theta == 1.0 {
        return z_next.to_vec();
    }
    z_next.iter().zip(x_tilde).map(|(z, xt)| xt + theta * (z - xt)).collect()
}

/// `λ − ρ(Az + By − c)`
pub fn dual_update(p: &ConstrainedProblem, z_next: &[f64], y_next: &[f64], lambda: &[f64], rho: f64) -> Result<Vec<f64>> {
    p.check_x(z_next)?;
    p.check_y(y_next)?;
    p.check_dual(lambda)?;
    let r = p.residual(z_next, y_next);
    Ok(lambda.iter().zip(&r).map(|(l, ri)| l - rho * ri).collect())
}

/// Eigendecomposition of `AᵀA`, reused for every `(1/η)I + ρAᵀA` solve.
pub(crate) struct GramEigen {
    values: Vec<f64>,
    /// Column-major eigenvectors.
    vectors: Vec<f64>,
    n: usize,
}

impl GramEigen {
    pub(crate) fn new(a: &RealMatrix) -> Result<Self> {
        let n = a.cols();
        if n > MAX_DENSE_X {
            return Err(Error::Unsupported(format!("dense x-solve limited to d1 <= {MAX_DENSE_X}, got {n}")));
        }
        let eig = SymmetricEigen::new(a.gram_cols().to_nalgebra());
        Ok(Self {
            values: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            vectors: eig.eigenvectors.as_slice().to_vec(),
            n,
        })
    }

    /// Solves `(αI + ρAᵀA) x = b`.
    pub(crate) fn solve_shifted(&self, alpha: f64, rho: f64, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for k in 0..n {
            let col = &self.vectors[k * n..(k + 1) * n];
            let coef = vecops::dot(col, b) / (alpha + rho * self.values[k]);
            vecops::axpy(coef, col, &mut x);
        }
        x
    }
}

/// `Q = I` step: solves `(wI + ρAᵀA) z = w z_t − ĝ + ρAᵀ(c + λ/ρ − By_next)`.
pub(crate) fn z_update_identity(
    p: &ConstrainedProblem,
    gram: &GramEigen,
    z: &[f64],
    y_next: &[f64],
    lambda: &[f64],
    w: f64,
    rho: f64,
    grad_est: &[f64],
) -> Vec<f64> {
    let mut rhs = vecops::scale(w, z);
    vecops::axpy(-1.0, grad_est, &mut rhs);
    let mut u: Vec<f64> = p.c().iter().zip(lambda).map(|(c, l)| c + l / rho).collect();
    p.b().mul_add_into(-1.0, y_next, &mut u);
    p.a().tr_mul_add_into(rho, &u, &mut rhs);
    gram.solve_shifted(w, rho, &rhs)
}
