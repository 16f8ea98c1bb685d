// SPDX-License-Identifier: MIT OR Apache-2.0

//! Empirical block cost over a prefix-summed Gram matrix.
//!
//! For a block `[s, e]` (1-based, inclusive) of length `n`:
//!
//! ```text
//! C(s, e) = sum_{t=s}^{e} k(Y_t, Y_t) - (1/n) sum_{i=s}^{e} sum_{j=s}^{e} k(Y_i, Y_j)
//! ```
//!
//! Both sums are answered in O(1) from a `(T+1) x (T+1)` table of 2-D prefix
//! sums and a `(T+1)` table of diagonal prefix sums.

use serde::{Deserialize, Serialize};

use crate::error::{KcpdError, Result};
use crate::kernels::GramMatrix;

#[derive(Clone, Debug)]
pub struct GramPrefix {
    /// `sums[i * (len + 1) + j] = sum_{a < i, b < j} G[a][b]`.
    sums: Vec<f64>,
    diag: Vec<f64>,
    len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCostReport {
    pub s: usize,
    pub e: usize,
    pub n: usize,
    pub cost: f64,
}

impl GramPrefix {
    /// Builds the prefix tables in O(T^2). The table is filled on and above
    /// the diagonal and mirrored, so it is exactly symmetric.
    pub fn build(gram: &GramMatrix) -> Self {
        let n = gram.len();
        let w = n + 1;
        let mut sums = vec![0.0; w * w];
        for i in 1..=n {
            let row = gram.row(i - 1);
            for j in i..=n {
                // For j == i, sums[i][i-1] was written as the mirror of row i-1.
                let v = row[j - 1] + sums[(i - 1) * w + j] + sums[i * w + j - 1]
                    - sums[(i - 1) * w + j - 1];
                sums[i * w + j] = v;
                sums[j * w + i] = v;
            }
        }
        let mut diag = vec![0.0; w];
        for i in 1..=n {
            diag[i] = diag[i - 1] + gram.get(i - 1, i - 1);
        }
        Self { sums, diag, len: n }
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Entry `S[i][j]` of the prefix table, `0 <= i, j <= T`.
    pub fn prefix(&self, i: usize, j: usize) -> f64 {
        self.sums[i * (self.len + 1) + j]
    }

    /// Entry `D[i]` of the diagonal prefix table.
    pub fn diag_prefix(&self, i: usize) -> f64 {
        self.diag[i]
    }

    fn check(&self, s: usize, e: usize) -> Result<()> {
        if s == 0 || s > e || e > self.len {
            return Err(KcpdError::IndexOutOfRange {
                s,
                e,
                len: self.len,
            });
        }
        Ok(())
    }

    /// Sum of Gram entries over the 1-based rectangle `[s1, e1] x [s2, e2]`.
    #[inline]
    fn rect_sum(&self, s1: usize, e1: usize, s2: usize, e2: usize) -> f64 {
        self.prefix(e1, e2) - self.prefix(s1 - 1, e2) - self.prefix(e1, s2 - 1)
            + self.prefix(s1 - 1, s2 - 1)
    }

    /// Sum of Gram entries over `[s, e]^2` (1-based, inclusive).
    pub fn block_sum(&self, s: usize, e: usize) -> Result<f64> {
        self.check(s, e)?;
        Ok(self.block_sum_unchecked(s - 1, e))
    }

    /// Half-open, 0-based variant used by the solvers: rows `start..end`.
    #[inline]
    pub(crate) fn block_sum_unchecked(&self, start: usize, end: usize) -> f64 {
        let w = self.len + 1;
        self.sums[end * w + end] - 2.0 * self.sums[start * w + end]
            + self.sums[start * w + start]
    }

    #[inline]
    pub(crate) fn cost_unchecked(&self, start: usize, end: usize) -> f64 {
        if end - start == 1 {
            return 0.0;
        }
        let n = (end - start) as f64;
        (self.diag[end] - self.diag[start]) - self.block_sum_unchecked(start, end) / n
    }

    /// Empirical block cost of `[s, e]` (1-based, inclusive). The raw value is
    /// returned; it may be a few ulps below zero.
    pub fn block_cost(&self, s: usize, e: usize) -> Result<f64> {
        self.check(s, e)?;
        Ok(self.cost_unchecked(s - 1, e))
    }

    pub fn block_cost_report(&self, s: usize, e: usize) -> Result<BlockCostReport> {
        Ok(BlockCostReport {
            s,
            e,
            n: e + 1 - s,
            cost: self.block_cost(s, e)?,
        })
    }

    /// Biased (V-statistic) squared MMD between the empirical distributions
    /// of blocks `a = [s1, e1]` and `b = [s2, e2]`.
    pub fn mmd2_empirical(&self, a: (usize, usize), b: (usize, usize)) -> Result<f64> {
        let ((s1, e1), (s2, e2)) = (a, b);
        self.check(s1, e1)?;
        self.check(s2, e2)?;
        let na = (e1 + 1 - s1) as f64;
        let nb = (e2 + 1 - s2) as f64;
        let aa = self.rect_sum(s1, e1, s1, e1) / (na * na);
        let bb = self.rect_sum(s2, e2, s2, e2) / (nb * nb);
        let ab = self.rect_sum(s1, e1, s2, e2) / (na * nb);
        Ok(aa + bb - 2.0 * ab)
    }
}

/// Expected block cost of a stationary segment of length `n` under an
/// m-dependent process:
///
/// ```text
/// C(n) = (n - 1)(c0 - c_inf) - 2 sum_{l=1}^{min(n-1, m)} (1 - l/n)(c_l - c_inf)
/// ```
///
/// where `autocov[l - 1] = c_l = E k(Y_1, Y_{1+l})` for `l = 1..=m` and
/// `c_inf = |mu_P|^2` is the value for lags beyond `m`.
pub fn expected_block_cost_stationary(c0: f64, autocov: &[f64], c_inf: f64, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    let lag_term: f64 = autocov
        .iter()
        .take(n - 1)
        .enumerate()
        .map(|(i, &cl)| {
            let l = (i + 1) as f64;
            (1.0 - l / nf) * (cl - c_inf)
        })
        .sum();
    (nf - 1.0) * (c0 - c_inf) - 2.0 * lag_term
}
