//! Gradient oracles: full, single-sample and SVRG variance-reduced, plus a
//! variance probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg::vecops;
use crate::problem::ConstrainedProblem;

/// Snapshot point `x̃` and the full gradient there.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGradient {
    pub x_tilde: Vec<f64>,
    pub full_grad_at_snapshot: Vec<f64>,
}

impl SnapshotGradient {
    pub fn new(p: &ConstrainedProblem, x_tilde: &[f64]) -> Result<Self> {
        Self::new_with(Exec::default(), p, x_tilde)
    }

    pub fn new_with(exec: Exec, p: &ConstrainedProblem, x_tilde: &[f64]) -> Result<Self> {
        Ok(Self {
            x_tilde: x_tilde.to_vec(),
            full_grad_at_snapshot: full_gradient_with(exec, p, x_tilde)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    /// Estimate of E‖Δ‖², Δ = estimator − ∇f(x).
    pub mean_sq_error: f64,
    /// L²‖x − x̃‖²; infinite for estimators without a snapshot.
    pub bound: f64,
    pub sample_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

/// (1/n) Σ ∇f_i(x)
pub fn full_gradient(p: &ConstrainedProblem, x: &[f64]) -> Result<Vec<f64>> {
    full_gradient_with(Exec::default(), p, x)
}

pub fn full_gradient_with(exec: Exec, p: &ConstrainedProblem, x: &[f64]) -> Result<Vec<f64>> {
    p.check_x(x)?;
    let losses = p.losses();
    let mut g = exec::sum_vectors(exec, losses.len(), x.len(), |i, acc| losses[i].add_gradient(x, 1.0, acc));
    let inv = 1.0 / losses.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

fn check_index(p: &ConstrainedProblem, i: usize) -> Result<()> {
    if i < p.n() {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index: i, n: p.n() })
    }
}

/// ∇f_i(x)
pub fn sgd_gradient(p: &ConstrainedProblem, x: &[f64], i: usize) -> Result<Vec<f64>> {
    p.check_x(x)?;
    check_index(p, i)?;
    Ok(p.losses()[i].gradient(x))
}

/// ∇f_i(x) − ∇f_i(x̃) + ∇f(x̃)
pub fn svrg_gradient(p: &ConstrainedProblem, x: &[f64], snap: &SnapshotGradient, i: usize) -> Result<Vec<f64>> {
    p.check_x(x)?;
    check_index(p, i)?;
    let mut g = snap.full_grad_at_snapshot.clone();
    svrg_add_correction(p, x, snap, i, &mut g);
    Ok(g)
}

fn svrg_add_correction(p: &ConstrainedProblem, x: &[f64], snap: &SnapshotGradient, i: usize, out: &mut [f64]) {
    let loss = &p.losses()[i];
    let mut diff = vec![0.0; out.len()];
    loss.add_gradient(x, 1.0, &mut diff);
    loss.add_gradient(&snap.x_tilde, -1.0, &mut diff);
    vecops::axpy(1.0, &diff, out);
}

/// Sample indices drawn from a counter-keyed ChaCha stream: the draw for
/// `(epoch, step)` is a pure function of `(seed, epoch, step, n)`, so solvers
/// sharing a seed see the same index sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexSampler {
    seed: u64,
}

impl IndexSampler {
    /// Words reserved per draw in the keystream.
    const WORDS_PER_DRAW: u128 = 16;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn index(&self, epoch: u64, step: u64, n: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        rng.set_word_pos(step as u128 * Self::WORDS_PER_DRAW);
        rng.random_range(0..n)
    }
}

fn probe_indices(n: usize, mode: ProbeMode) -> (Vec<usize>, bool) {
    match mode {
        ProbeMode::Exhaustive => ((0..n).collect(), true),
        ProbeMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ((0..samples.max(1)).map(|_| rng.random_range(0..n)).collect(), false)
        }
    }
}

/// Variance of the SVRG estimator at `x` against snapshot `snap`.
pub fn variance_probe(p: &ConstrainedProblem, x: &[f64], snap: &SnapshotGradient, mode: ProbeMode) -> Result<VarianceProbe> {
    variance_probe_with(Exec::default(), p, x, snap, mode)
}

pub fn variance_probe_with(
    exec: Exec,
    p: &ConstrainedProblem,
    x: &[f64],
    snap: &SnapshotGradient,
    mode: ProbeMode,
) -> Result<VarianceProbe> {
    p.check_x(x)?;
    p.check_x(&snap.x_tilde)?;
    let full = full_gradient_with(exec, p, x)?;
    let (idx, _) = probe_indices(p.n(), mode);
    let total = exec::sum_scalars(exec, idx.len(), |k| {
        let mut g = snap.full_grad_at_snapshot.clone();
        svrg_add_correction(p, x, snap, idx[k], &mut g);
        vecops::dist_sq(&g, &full)
    });
    let l = p.lipschitz().l;
    Ok(VarianceProbe {
        mean_sq_error: total / idx.len() as f64,
        bound: l * l * vecops::dist_sq(x, &snap.x_tilde),
        sample_count: idx.len(),
    })
}

/// Variance of the plain single-sample estimator ∇f_i(x) at `x`.
pub fn sgd_variance_probe(p: &ConstrainedProblem, x: &[f64], mode: ProbeMode) -> Result<VarianceProbe> {
    sgd_variance_probe_with(Exec::default(), p, x, mode)
}

pub fn sgd_variance_probe_with(exec: Exec, p: &ConstrainedProblem, x: &[f64], mode: ProbeMode) -> Result<VarianceProbe> {
    p.check_x(x)?;
    let full = full_gradient_with(exec, p, x)?;
    let (idx, _) = probe_indices(p.n(), mode);
    let total = exec::sum_scalars(exec, idx.len(), |k| vecops::dist_sq(&p.losses()[idx[k]].gradient(x), &full));
    Ok(VarianceProbe {
        mean_sq_error: total / idx.len() as f64,
        bound: f64::INFINITY,
        sample_count: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseMatrix, RealMatrix};
    use crate::problem::{ComponentLoss, Regularizer, SparseVector};

    fn sigmoid_problem() -> ConstrainedProblem {
        let losses = vec![
            ComponentLoss::Sigmoid { a: SparseVector::from_dense(&[1.0, 0.5, 0.0]), b: 1.0 },
            ComponentLoss::Sigmoid { a: SparseVector::from_dense(&[-0.3, 2.0, 1.0]), b: -1.0 },
            ComponentLoss::Sigmoid { a: SparseVector::from_dense(&[0.0, 0.0, -1.5]), b: 1.0 },
        ];
        ConstrainedProblem::consensus(losses, Regularizer::Zero, RealMatrix::identity(3)).unwrap()
    }

    #[test]
    fn sigmoid_gradient_at_origin_is_minus_quarter_ba() {
        let p = sigmoid_problem();
        let g = full_gradient(&p, &[0.0; 3]).unwrap();
        // central differences at 0
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = [0.0; 3];
            let mut xm = [0.0; 3];
            xp[j] = h;
            xm[j] = -h;
            let fd = (p.smooth_value(&xp) - p.smooth_value(&xm)) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-8);
        }
        let expected = [-(1.0 + 0.3) / 12.0, -(0.5 - 2.0) / 12.0, -(-1.0 - 1.5) / 12.0];
        for j in 0..3 {
            assert!((g[j] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn svrg_at_snapshot_is_full_gradient() {
        let p = sigmoid_problem();
        let xt = [0.3, -0.2, 0.9];
        let snap = SnapshotGradient::new(&p, &xt).unwrap();
        for i in 0..p.n() {
            assert_eq!(svrg_gradient(&p, &xt, &snap, i).unwrap(), snap.full_grad_at_snapshot);
        }
        assert!(matches!(svrg_gradient(&p, &xt, &snap, 3), Err(Error::IndexOutOfRange { index: 3, n: 3 })));
        assert!(sgd_gradient(&p, &xt, 7).is_err());
    }

    #[test]
    fn single_component_estimators_are_exact() {
        let a = DenseMatrix::new(2, 2, vec![2.0, 1.0, 1.0, -3.0]).unwrap();
        let p = ConstrainedProblem::consensus(vec![ComponentLoss::quadratic(a.clone()).unwrap()], Regularizer::Zero, RealMatrix::identity(2)).unwrap();
        let x = [0.7, -1.1];
        let snap = SnapshotGradient::new(&p, &[5.0, 2.0]).unwrap();
        assert_eq!(sgd_gradient(&p, &x, 0).unwrap(), a.mul_vec(&x));
        let full = full_gradient(&p, &x).unwrap();
        let sv = svrg_gradient(&p, &x, &snap, 0).unwrap();
        assert!(vecops::max_abs_diff(&sv, &full) < 1e-14);
        let probe = variance_probe(&p, &x, &snap, ProbeMode::Exhaustive).unwrap();
        assert!(probe.mean_sq_error < 1e-28);
    }

    #[test]
    fn probe_vanishes_at_snapshot() {
        let p = sigmoid_problem();
        let xt = [0.1, 0.2, 0.3];
        let snap = SnapshotGradient::new(&p, &xt).unwrap();
        let probe = variance_probe(&p, &xt, &snap, ProbeMode::Exhaustive).unwrap();
        assert_eq!(probe.mean_sq_error, 0.0);
        assert_eq!(probe.sample_count, 3);
        assert_eq!(probe.bound, 0.0);
    }

    #[test]
    fn sampler_is_keyed_and_in_range() {
        let s = IndexSampler::new(42);
        let a: Vec<usize> = (0..200).map(|t| s.index(3, t, 17)).collect();
        let b: Vec<usize> = (0..200).rev().map(|t| s.index(3, t, 17)).rev().collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 17));
        let other: Vec<usize> = (0..200).map(|t| s.index(4, t, 17)).collect();
        assert_ne!(a, other);
    }

    #[test]
    fn sampled_probe_is_deterministic() {
        let p = sigmoid_problem();
        let snap = SnapshotGradient::new(&p, &[0.0; 3]).unwrap();
        let mode = ProbeMode::Sampled { samples: 50, seed: 9 };
        let a = variance_probe(&p, &[1.0, 1.0, 1.0], &snap, mode).unwrap();
        let b = variance_probe(&p, &[1.0, 1.0, 1.0], &snap, mode).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_count, 50);
    }
}
