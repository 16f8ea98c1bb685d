// SPDX-License-Identifier: MIT OR Apache-2.0

//! Kernels, bandwidth selection and dense Gram matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KcpdError, Result};

/// Rows beyond this count are subsampled before the median heuristic runs.
pub const MEDIAN_HEURISTIC_MAX_ROWS: usize = 2000;
const MEDIAN_HEURISTIC_SEED: u64 = 0x6b63_7064_6d65_6469;

/// An ordered `T x d` sequence of finite observations, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    data: Vec<f64>,
    len: usize,
    dim: usize,
}

impl EmbeddingSequence {
    pub fn from_flat(data: Vec<f64>, len: usize, dim: usize) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(KcpdError::invalid(format!(
                "sequence needs at least one row and one column, got {len} x {dim}"
            )));
        }
        if data.len() != len * dim {
            return Err(KcpdError::DimensionMismatch {
                expected: len * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(KcpdError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { data, len, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(KcpdError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, rows.len(), dim)
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row `t` (0-based).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (row, chunk) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(KcpdError::ZeroNorm { row });
            }
            chunk.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            data,
            len: self.len,
            dim: self.dim,
        })
    }

    fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            len: idx.len(),
            dim: self.dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Cosine,
}

/// RBF bandwidth: an explicit value or the median-heuristic sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Ignored by the cosine kernel.
    pub bandwidth: Bandwidth,
    /// Upper bound `M` on kernel values.
    pub bound: f64,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Fixed(sigma),
            bound: 1.0,
        }
    }

    pub fn rbf_median() -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Median,
            bound: 1.0,
        }
    }

    pub fn cosine() -> Self {
        Self {
            kind: KernelKind::Cosine,
            bandwidth: Bandwidth::Median,
            bound: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(KcpdError::invalid(format!(
                "kernel bound must be positive, got {}",
                self.bound
            )));
        }
        if let Bandwidth::Fixed(sigma) = self.bandwidth {
            if self.kind == KernelKind::Rbf && !(sigma.is_finite() && sigma > 0.0) {
                return Err(KcpdError::invalid(format!(
                    "RBF bandwidth must be positive and finite, got {sigma}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_resolved(&self) -> bool {
        self.kind == KernelKind::Cosine || matches!(self.bandwidth, Bandwidth::Fixed(_))
    }

    /// Replaces the median sentinel with a concrete bandwidth computed on `seq`.
    pub fn resolve(&self, seq: &EmbeddingSequence) -> Result<Self> {
        self.validate()?;
        if self.is_resolved() {
            return Ok(*self);
        }
        Ok(Self {
            bandwidth: Bandwidth::Fixed(median_heuristic_bandwidth(seq)?),
            ..*self
        })
    }

    pub fn sigma(&self) -> Option<f64> {
        match (self.kind, self.bandwidth) {
            (KernelKind::Rbf, Bandwidth::Fixed(s)) => Some(s),
            _ => None,
        }
    }
}

/// Evaluates `k(x, y)`.
///
/// RBF is `exp(-|x - y|^2 / (2 sigma^2))`; cosine is `<x, y> / (|x| |y|)`,
/// clamped to `[-1, 1]` and exactly 1 when `x == y`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KcpdError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    match spec.kind {
        KernelKind::Rbf => {
            let sigma = spec.sigma().ok_or(KcpdError::UnresolvedBandwidth)?;
            Ok(rbf(x, y, 1.0 / (2.0 * sigma * sigma)))
        }
        KernelKind::Cosine => {
            let nx = dot(x, x).sqrt();
            let ny = dot(y, y).sqrt();
            if nx == 0.0 || ny == 0.0 {
                return Err(KcpdError::ZeroNorm {
                    row: usize::from(nx != 0.0),
                });
            }
            Ok(cosine(x, y, nx, ny))
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[inline]
fn rbf(x: &[f64], y: &[f64], inv_two_sigma_sq: f64) -> f64 {
    (-sq_dist(x, y) * inv_two_sigma_sq).exp()
}

#[inline]
fn cosine(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    if x == y {
        return 1.0;
    }
    (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0)
}

/// Median of all pairwise Euclidean distances `|Y_i - Y_j|`, `i < j`.
///
/// Sequences longer than [`MEDIAN_HEURISTIC_MAX_ROWS`] are reduced to a
/// fixed-seed subsample of that many rows first. An even number of
/// distances yields the mean of the two central values.
pub fn median_heuristic_bandwidth(seq: &EmbeddingSequence) -> Result<f64> {
    if seq.len() < 2 {
        return Err(KcpdError::invalid(
            "median heuristic needs at least two observations",
        ));
    }
    let sub;
    let seq = if seq.len() > MEDIAN_HEURISTIC_MAX_ROWS {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_HEURISTIC_SEED);
        let mut idx =
            rand::seq::index::sample(&mut rng, seq.len(), MEDIAN_HEURISTIC_MAX_ROWS).into_vec();
        idx.sort_unstable();
        sub = seq.select_rows(&idx);
        &sub
    } else {
        seq
    };

    let n = seq.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = seq.row(i);
        for j in (i + 1)..n {
            dists.push(sq_dist(xi, seq.row(j)).sqrt());
        }
    }
    let median = median_in_place(&mut dists);
    if median > 0.0 {
        Ok(median)
    } else if dists.iter().all(|&d| d == 0.0) {
        Err(KcpdError::DegenerateBandwidth)
    } else {
        // More than half the pairs coincide; fall back to the smallest
        // positive distance so the kernel stays well defined.
        Ok(dists
            .iter()
            .copied()
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min))
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Dense symmetric Gram matrix `G[i][j] = k(Y_i, Y_j)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    values: Vec<f64>,
    len: usize,
    kernel: KernelSpec,
}

impl GramMatrix {
    /// Wraps precomputed values; the matrix must be square, finite and
    /// exactly symmetric.
    pub fn from_values(values: Vec<f64>, len: usize, kernel: KernelSpec) -> Result<Self> {
        if len == 0 || values.len() != len * len {
            return Err(KcpdError::DimensionMismatch {
                expected: len * len,
                found: values.len(),
            });
        }
        for i in 0..len {
            for j in 0..len {
                let v = values[i * len + j];
                if !v.is_finite() {
                    return Err(KcpdError::NonFinite { row: i, col: j });
                }
                if v != values[j * len + i] {
                    return Err(KcpdError::invalid(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            len,
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Resolved kernel used to build the matrix.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Builds the Gram matrix of `seq` under `spec`, resolving a median
/// bandwidth if needed. The upper triangle is computed and mirrored.
pub fn compute_gram(seq: &EmbeddingSequence, spec: &KernelSpec) -> Result<GramMatrix> {
    let kernel = spec.resolve(seq)?;
    let n = seq.len();
    let norms: Vec<f64> = match kernel.kind {
        KernelKind::Rbf => Vec::new(),
        KernelKind::Cosine => {
            let norms: Vec<f64> = seq.rows().map(|r| dot(r, r).sqrt()).collect();
            if let Some(row) = norms.iter().position(|&v| v == 0.0) {
                return Err(KcpdError::ZeroNorm { row });
            }
            norms
        }
    };
    let inv = kernel
        .sigma()
        .map_or(0.0, |sigma| 1.0 / (2.0 * sigma * sigma));

    let upper_row = |i: usize| -> Vec<f64> {
        let xi = seq.row(i);
        (i..n)
            .map(|j| match kernel.kind {
                KernelKind::Rbf => rbf(xi, seq.row(j), inv),
                KernelKind::Cosine => cosine(xi, seq.row(j), norms[i], norms[j]),
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let upper: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(upper_row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let upper: Vec<Vec<f64>> = (0..n).map(upper_row).collect();

    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(GramMatrix {
        values,
        len: n,
        kernel,
    })
}
