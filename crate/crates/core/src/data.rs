//! LIBSVM text I/O, synthetic quadratic instances, correlation graphs and
//! seeded train/test splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, RealMatrix};
use crate::problem::{ComponentLoss, ConstrainedProblem, Regularizer, SparseVector};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("input contains no samples")]
    Empty,
    #[error("blank line")]
    BlankLine,
    #[error("label `{0}` is not a number")]
    BadLabel(String),
    #[error("feature `{0}` is not of the form index:value")]
    MissingColon(String),
    #[error("feature index `{0}` is not a positive integer")]
    BadIndex(String),
    #[error("feature value `{0}` is not a finite number")]
    BadValue(String),
    #[error("feature index {got} does not increase past {prev}")]
    NonIncreasing { prev: usize, got: usize },
    #[error("feature index {index} exceeds dimension {dim}")]
    IndexTooLarge { index: usize, dim: usize },
}

/// Position is 1-based in both line and column (columns count characters).
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// Labelled sparse samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SparseVector>,
    pub labels: Vec<f64>,
    pub d1: usize,
}

impl Dataset {
    pub fn new(samples: Vec<SparseVector>, labels: Vec<f64>, d1: usize) -> Result<Self> {
        crate::error::check_len("dataset labels", samples.len(), labels.len())?;
        if let Some(b) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidProblem(format!("label must be ±1, got {b}")));
        }
        if let Some(j) = samples.iter().filter_map(SparseVector::max_index).max() {
            if j >= d1 {
                return Err(Error::DimensionMismatch {
                    context: "dataset feature dimension",
                    expected: d1,
                    actual: j + 1,
                });
            }
        }
        Ok(Self { samples, labels, d1 })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            d1: self.d1,
        }
    }

    pub fn sigmoid_losses(&self) -> Vec<ComponentLoss> {
        self.samples
            .iter()
            .zip(&self.labels)
            .map(|(a, &b)| ComponentLoss::Sigmoid { a: a.clone(), b })
            .collect()
    }
}

/// Parses LIBSVM text; `d1` is the largest index seen.
pub fn parse_libsvm(text: &str) -> std::result::Result<Dataset, ParseError> {
    parse_libsvm_with_dim(text, None)
}

/// Parses LIBSVM text, optionally fixing the feature dimension.
pub fn parse_libsvm_with_dim(text: &str, dim: Option<usize>) -> std::result::Result<Dataset, ParseError> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    let mut lines = 0;
    for (ln, line) in text.lines().enumerate() {
        lines = ln + 1;
        let at = |column: usize, kind| ParseError { line: ln + 1, column, kind };
        let mut tokens = tokens_with_columns(line);
        let Some((col, label)) = tokens.next() else {
            return Err(at(1, ParseErrorKind::BlankLine));
        };
        let b: f64 = label
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| at(col, ParseErrorKind::BadLabel(label.into())))?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (col, tok) in tokens {
            let (is, vs) = tok
                .split_once(':')
                .ok_or_else(|| at(col, ParseErrorKind::MissingColon(tok.into())))?;
            let idx: usize = is
                .parse()
                .ok()
                .filter(|&i| i > 0)
                .ok_or_else(|| at(col, ParseErrorKind::BadIndex(is.into())))?;
            let val: f64 = vs
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| at(col + is.chars().count() + 1, ParseErrorKind::BadValue(vs.into())))?;
            if let Some(&prev) = indices.last() {
                if idx - 1 <= prev {
                    return Err(at(col, ParseErrorKind::NonIncreasing { prev: prev + 1, got: idx }));
                }
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(at(col, ParseErrorKind::IndexTooLarge { index: idx, dim: d }));
                }
            }
            max_index = max_index.max(idx);
            indices.push(idx - 1);
            values.push(val);
        }
        labels.push(if b > 0.0 { 1.0 } else { -1.0 });
        samples.push(SparseVector { indices, values });
    }
    if samples.is_empty() {
        return Err(ParseError {
            line: lines.max(1),
            column: 1,
            kind: ParseErrorKind::Empty,
        });
    }
    Ok(Dataset {
        samples,
        labels,
        d1: dim.unwrap_or(max_index),
    })
}

fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut col = 1;
    std::iter::from_fn(move || {
        let skip = rest.len() - rest.trim_start().len();
        col += rest[..skip].chars().count();
        rest = &rest[skip..];
        if rest.is_empty() {
            return None;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let tok = &rest[..end];
        let start = col;
        col += tok.chars().count();
        rest = &rest[end..];
        Some((start, tok))
    })
}

/// LIBSVM text with `+1`/`-1` labels, 1-based indices and shortest
/// round-trip decimals.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for (x, &b) in ds.samples.iter().zip(&ds.labels) {
        out.push_str(if b > 0.0 { "+1" } else { "-1" });
        for (j, v) in x.iter() {
            let _ = write!(out, " {}:{}", j + 1, v);
        }
        out.push('\n');
    }
    out
}

pub fn read_libsvm(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_libsvm_with_dim(&text, dim)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AMode {
    /// `A = I`
    I,
    /// `A = [G; I]` with a random ±1 edge matrix `G`.
    GraphStacked,
}

/// Random nonconvex quadratic instance: `f_i(x) = xᵀA_i x/2` with
/// `A_i = (M + Mᵀ)/2 + shift·I`, `M` standard normal, `g = λ₁‖·‖₁`, `y = Ax`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInstance {
    pub n: usize,
    pub d1: usize,
    pub a_mode: AMode,
    pub shift: f64,
    pub lambda1: f64,
}

impl QuadraticInstance {
    pub fn new(n: usize, d1: usize, a_mode: AMode) -> Self {
        Self {
            n,
            d1,
            a_mode,
            shift: 0.0,
            lambda1: 1e-4,
        }
    }

    pub fn build(&self, seed: u64) -> Result<ConstrainedProblem> {
        if self.n == 0 || self.d1 == 0 {
            return Err(Error::InvalidConfig("n and d1 must be at least 1".into()));
        }
        let d1 = self.d1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let losses = (0..self.n)
            .map(|_| {
                let m: Vec<f64> = (0..d1 * d1).map(|_| rng.sample(StandardNormal)).collect();
                let a = DenseMatrix::from_fn(d1, d1, |i, j| {
                    let s = (m[i * d1 + j] + m[j * d1 + i]) / 2.0;
                    if i == j {
                        s + self.shift
                    } else {
                        s
                    }
                });
                ComponentLoss::quadratic(a)
            })
            .collect::<Result<Vec<_>>>()?;
        let a = match self.a_mode {
            AMode::I => RealMatrix::identity(d1),
            AMode::GraphStacked => {
                let mut grng = ChaCha8Rng::seed_from_u64(seed);
                grng.set_stream(1);
                let g = random_edge_matrix(d1, 2.0 / d1 as f64, &mut grng);
                RealMatrix::vstack(&[&g, &RealMatrix::identity(d1)])?
            }
        };
        ConstrainedProblem::consensus(losses, Regularizer::L1 { lambda1: self.lambda1 }, a)
    }
}

pub fn gen_quadratic_instance(n: usize, d1: usize, seed: u64, a_mode: AMode) -> Result<ConstrainedProblem> {
    QuadraticInstance::new(n, d1, a_mode).build(seed)
}

fn random_edge_matrix(d1: usize, prob: f64, rng: &mut ChaCha8Rng) -> RealMatrix {
    let mut triplets = Vec::new();
    let mut row = 0;
    for j in 0..d1 {
        for k in j + 1..d1 {
            if rng.random::<f64>() < prob {
                triplets.push((row, j, 1.0));
                triplets.push((row, k, -1.0));
                row += 1;
            }
        }
    }
    RealMatrix::from_triplets(row, d1, &triplets).expect("edge entries are in range")
}

/// Fused-lasso edge matrix: one row `e_j − e_k` per correlated feature pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMatrix {
    pub g: RealMatrix,
    /// `(j, k)` with `j < k`, in row order.
    pub edges: Vec<(usize, usize)>,
    /// Constant features left out of the pairing.
    pub excluded: Vec<usize>,
}

impl GraphMatrix {
    /// `[G; I]`
    pub fn stacked(&self) -> Result<RealMatrix> {
        RealMatrix::vstack(&[&self.g, &RealMatrix::identity(self.g.cols())])
    }
}

/// Pairs features whose absolute Pearson correlation exceeds `threshold`.
pub fn build_graph_matrix(ds: &Dataset, threshold: f64) -> Result<GraphMatrix> {
    if ds.n() < 2 {
        return Err(Error::InvalidProblem("graph construction needs at least 2 samples".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("correlation threshold must lie in (0, 1), got {threshold}")));
    }
    let d = ds.d1;
    let n = ds.n() as f64;
    let mut mean = vec![0.0; d];
    let mut cross = vec![0.0; d * d];
    for x in &ds.samples {
        for (j, v) in x.iter() {
            mean[j] += v;
            for (k, w) in x.iter() {
                cross[j * d + k] += v * w;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let cov = |j: usize, k: usize| cross[j * d + k] / n - mean[j] * mean[k];
    let sd: Vec<f64> = (0..d).map(|j| cov(j, j).max(0.0).sqrt()).collect();
    let scale = sd.iter().fold(0.0f64, |m, &s| m.max(s));
    let constant = |j: usize| sd[j] <= 1e-12 * scale.max(1.0);
    let excluded: Vec<usize> = (0..d).filter(|&j| constant(j)).collect();
    let mut edges = Vec::new();
    for j in 0..d {
        for k in j + 1..d {
            if constant(j) || constant(k) {
                continue;
            }
            if (cov(j, k) / (sd[j] * sd[k])).abs() > threshold {
                edges.push((j, k));
            }
        }
    }
    let triplets: Vec<_> = edges
        .iter()
        .enumerate()
        .flat_map(|(r, &(j, k))| [(r, j, 1.0), (r, k, -1.0)])
        .collect();
    Ok(GraphMatrix {
        g: RealMatrix::from_triplets(edges.len(), d, &triplets)?,
        edges,
        excluded,
    })
}

/// Seeded permutation split into `⌊fraction·n⌋` training and the rest test samples.
pub fn split_train_test(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.n() < 2 {
        return Err(Error::InvalidProblem("splitting needs at least 2 samples".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut perm: Vec<usize> = (0..ds.n()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * ds.n() as f64).floor() as usize;
    Ok((ds.subset(&perm[..cut]), ds.subset(&perm[cut..])))
}

/// Graph-guided fused lasso with sigmoid loss: `A = [G; I]`, `B = −I`, `c = 0`.
pub fn fused_lasso_problem(ds: &Dataset, lambda1: f64, graph: &GraphMatrix) -> Result<ConstrainedProblem> {
    ConstrainedProblem::consensus(ds.sigmoid_losses(), Regularizer::L1 { lambda1 }, graph.stacked()?)
}

/// Sigmoid loss with `λ₁‖x‖₁`, written as `y = x`.
pub fn rlr_problem(ds: &Dataset, lambda1: f64) -> Result<ConstrainedProblem> {
    ConstrainedProblem::consensus(ds.sigmoid_losses(), Regularizer::L1 { lambda1 }, RealMatrix::identity(ds.d1))
}
