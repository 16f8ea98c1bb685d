// SPDX-License-Identifier: MIT OR Apache-2.0

//! Penalized segmentation: exact optimal partitioning, a fixed-K variant and
//! PELT, all over the kernel block cost.
//!
//! A segmentation of `1..=T` is stored as its interior boundaries
//! `0 < tau_1 < ... < tau_K < T`; boundary `tau` separates positions `tau`
//! and `tau + 1`. The penalized criterion is
//!
//! ```text
//! L(tau) = sum_k C(tau_{k-1} + 1, tau_k) + beta * K
//! ```
//!
//! Ties (objectives within [`TIE_TOLERANCE`]) are broken towards fewer
//! boundaries, then towards the candidate scanned first.

use serde::{Deserialize, Serialize};

use crate::cost::GramPrefix;
use crate::error::{KcpdError, Result};

/// Objectives closer than this are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// PELT drops a candidate outright only when it is worse than the new
/// candidate by more than this margin; the margin dominates the rounding
/// slack in the split inequality of prefix-summed costs.
const PRUNE_MARGIN: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSegmentation", into = "RawSegmentation")]
pub struct Segmentation {
    len: usize,
    change_points: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSegmentation {
    #[serde(rename = "T")]
    len: usize,
    change_points: Vec<usize>,
}

impl TryFrom<RawSegmentation> for Segmentation {
    type Error = KcpdError;

    fn try_from(raw: RawSegmentation) -> Result<Self> {
        Segmentation::new(raw.len, raw.change_points)
    }
}

impl From<Segmentation> for RawSegmentation {
    fn from(seg: Segmentation) -> Self {
        Self {
            len: seg.len,
            change_points: seg.change_points,
        }
    }
}

impl Segmentation {
    pub fn new(len: usize, change_points: Vec<usize>) -> Result<Self> {
        if len == 0 {
            return Err(KcpdError::InvalidSegmentation(
                "sequence length must be positive".into(),
            ));
        }
        let mut prev = 0;
        for &tau in &change_points {
            if tau <= prev || tau >= len {
                return Err(KcpdError::InvalidSegmentation(format!(
                    "change points must be strictly increasing within (0, {len}), got {change_points:?}"
                )));
            }
            prev = tau;
        }
        Ok(Self { len, change_points })
    }

    /// The single-block segmentation.
    pub fn empty(len: usize) -> Result<Self> {
        Self::new(len, Vec::new())
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    /// Number of interior boundaries `K`.
    pub fn num_change_points(&self) -> usize {
        self.change_points.len()
    }

    /// Blocks as 1-based inclusive `(s, e)` pairs.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.change_points.iter().copied());
        let ends = self
            .change_points
            .iter()
            .copied()
            .chain(std::iter::once(self.len));
        starts.zip(ends).map(|(a, b)| (a + 1, b))
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments().map(|(s, e)| e + 1 - s).collect()
    }

    pub fn min_segment_length(&self) -> usize {
        self.segments().map(|(s, e)| e + 1 - s).min().unwrap_or(self.len)
    }

    /// 0-based segment label of every position.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len);
        for (k, (s, e)) in self.segments().enumerate() {
            out.extend(std::iter::repeat_n(k, e + 1 - s));
        }
        out
    }
}

/// Penalty family `beta_T = C * sqrt(T ln T)`, with the constants consumed by
/// the theoretical floor diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub c: f64,
    /// Dependence lag assumed by [`penalty_floor`].
    pub m_hint: usize,
    /// Kernel bound `M`.
    pub bound: f64,
}

impl PenaltySchedule {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            m_hint: 0,
            bound: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(KcpdError::invalid(format!(
                "penalty constant must be finite and >= 0, got {}",
                self.c
            )));
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(KcpdError::invalid(format!(
                "kernel bound must be positive, got {}",
                self.bound
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        penalty_value(self, t)
    }

    pub fn floor(&self, t: usize) -> f64 {
        penalty_floor(self.m_hint, self.bound, t)
    }
}

/// `C * sqrt(T ln T)`; zero for `T = 1`.
pub fn penalty_value(schedule: &PenaltySchedule, t: usize) -> f64 {
    let t = t as f64;
    if t <= 1.0 || schedule.c == 0.0 {
        return 0.0;
    }
    schedule.c * (t * t.ln()).sqrt()
}

/// Smallest penalty covered by the consistency guarantee:
/// `16 M sqrt(2 (8m + 5) T ln T) + 2 M (1 + 6m)`.
pub fn penalty_floor(m: usize, bound: f64, t: usize) -> f64 {
    let m = m as f64;
    let t = t as f64;
    16.0 * bound * (2.0 * (8.0 * m + 5.0) * t * t.ln()).sqrt() + 2.0 * bound * (1.0 + 6.0 * m)
}

/// Scale `lambda_T = 4 sqrt(2) M sqrt((8m + 5) ln T)` of the uniform
/// deviation `|C_hat(s, e) - C(s, e)| <= lambda_T sqrt(e - s + 1)`.
pub fn uniform_deviation_scale(m: usize, bound: f64, t: usize) -> f64 {
    4.0 * std::f64::consts::SQRT_2 * bound * ((8.0 * m as f64 + 5.0) * (t as f64).ln()).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub segmentation: Segmentation,
    /// `sum(per_segment_costs) + beta_used * K`.
    pub objective: f64,
    pub per_segment_costs: Vec<f64>,
    pub beta_used: f64,
}

impl SegmentationResult {
    fn from_boundaries(prefix: &GramPrefix, change_points: Vec<usize>, beta: f64) -> Self {
        let segmentation = Segmentation {
            len: prefix.len(),
            change_points,
        };
        let per_segment_costs: Vec<f64> = segmentation
            .segments()
            .map(|(s, e)| prefix.cost_unchecked(s - 1, e))
            .collect();
        let objective = per_segment_costs.iter().sum::<f64>()
            + beta * segmentation.num_change_points() as f64;
        Self {
            segmentation,
            objective,
            per_segment_costs,
            beta_used: beta,
        }
    }

    pub fn num_change_points(&self) -> usize {
        self.segmentation.num_change_points()
    }
}

/// `L(seg) = sum of block costs + beta * K`.
pub fn objective(prefix: &GramPrefix, seg: &Segmentation, beta: f64) -> Result<f64> {
    if seg.len() != prefix.len() {
        return Err(KcpdError::InvalidSegmentation(format!(
            "segmentation covers {} positions, data has {}",
            seg.len(),
            prefix.len()
        )));
    }
    let mut total = beta * seg.num_change_points() as f64;
    for (s, e) in seg.segments() {
        total += prefix.block_cost(s, e)?;
    }
    Ok(total)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(KcpdError::invalid(format!(
            "penalty must be finite and >= 0, got {beta}"
        )))
    }
}

fn check_min_size(min_size: usize) -> Result<()> {
    if min_size == 0 {
        return Err(KcpdError::invalid("min_size must be >= 1"));
    }
    Ok(())
}

#[inline]
fn improves(value: f64, count: usize, best: f64, best_count: usize) -> bool {
    value < best - TIE_TOLERANCE || (value <= best + TIE_TOLERANCE && count < best_count)
}

fn backtrack(prev: &[usize], len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = len;
    while t > 0 {
        let s = prev[t];
        if s > 0 {
            out.push(s);
        }
        t = s;
    }
    out.reverse();
    out
}

/// Exact minimizer of the penalized criterion over all segmentations, by
/// O(T^2) optimal partitioning.
pub fn dp_penalized(prefix: &GramPrefix, beta: f64) -> Result<SegmentationResult> {
    dp_penalized_with(prefix, beta, 1)
}

/// [`dp_penalized`] restricted to segments of at least `min_size` points.
pub fn dp_penalized_with(
    prefix: &GramPrefix,
    beta: f64,
    min_size: usize,
) -> Result<SegmentationResult> {
    check_beta(beta)?;
    check_min_size(min_size)?;
    let n = prefix.len();
    if n < 2 * min_size {
        return Ok(SegmentationResult::from_boundaries(prefix, Vec::new(), beta));
    }
    let mut best = vec![f64::INFINITY; n + 1];
    let mut count = vec![usize::MAX; n + 1];
    let mut prev = vec![0usize; n + 1];
    best[0] = 0.0;
    count[0] = 0;
    for t in min_size..=n {
        let (mut bv, mut bc, mut bs) = (f64::INFINITY, usize::MAX, 0);
        for s in (0..=t - min_size).filter(|&s| best[s].is_finite()) {
            let boundary = usize::from(s > 0);
            let v = best[s] + beta * boundary as f64 + prefix.cost_unchecked(s, t);
            let c = count[s] + boundary;
            if improves(v, c, bv, bc) {
                (bv, bc, bs) = (v, c, s);
            }
        }
        best[t] = bv;
        count[t] = bc;
        prev[t] = bs;
    }
    Ok(SegmentationResult::from_boundaries(
        prefix,
        backtrack(&prev, n),
        beta,
    ))
}

/// Minimizes the total block cost over segmentations with exactly `k`
/// interior boundaries (O(k T^2)). The result carries `beta_used = 0`.
pub fn dp_fixed_k(prefix: &GramPrefix, k: usize) -> Result<SegmentationResult> {
    dp_fixed_k_with(prefix, k, 1)
}

#[allow(clippy::needless_range_loop)]
pub fn dp_fixed_k_with(prefix: &GramPrefix, k: usize, min_size: usize) -> Result<SegmentationResult> {
    check_min_size(min_size)?;
    let n = prefix.len();
    if k >= n || (k + 1) * min_size > n {
        return Err(KcpdError::invalid(format!(
            "cannot place {k} change points in {n} positions with min_size {min_size}"
        )));
    }
    // layer[j][t]: best cost of splitting 0..t into j + 1 blocks.
    let mut layer = vec![f64::INFINITY; n + 1];
    for t in min_size..=n {
        layer[t] = prefix.cost_unchecked(0, t);
    }
    let mut prev = vec![vec![0usize; n + 1]; k + 1];
    for j in 1..=k {
        let mut next = vec![f64::INFINITY; n + 1];
        for t in (j + 1) * min_size..=n {
            let (mut bv, mut bs) = (f64::INFINITY, 0);
            for s in j * min_size..=t - min_size {
                if !layer[s].is_finite() {
                    continue;
                }
                let v = layer[s] + prefix.cost_unchecked(s, t);
                if v < bv - TIE_TOLERANCE {
                    (bv, bs) = (v, s);
                }
            }
            next[t] = bv;
            prev[j][t] = bs;
        }
        layer = next;
    }
    let mut cps = Vec::with_capacity(k);
    let mut t = n;
    for j in (1..=k).rev() {
        t = prev[j][t];
        cps.push(t);
    }
    cps.reverse();
    Ok(SegmentationResult::from_boundaries(prefix, cps, 0.0))
}

/// Bookkeeping from a PELT run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeltStats {
    /// Size of the candidate set evaluated at each `t = 1..=T`.
    pub candidates_per_step: Vec<usize>,
    pub cost_evaluations: usize,
}

impl PeltStats {
    pub fn max_candidates(&self) -> usize {
        self.candidates_per_step.iter().copied().max().unwrap_or(0)
    }
}

/// Pruned exact search. Returns the same segmentation as [`dp_penalized`].
pub fn pelt_penalized(prefix: &GramPrefix, beta: f64) -> Result<SegmentationResult> {
    pelt_penalized_with(prefix, beta, 1).map(|(r, _)| r)
}

/// PELT with a minimum segment length, returning pruning statistics.
///
/// Kernel block costs never decrease when two adjacent blocks are merged,
/// so a candidate `s` that is no better than starting a new block at `t`
/// stays dominated for every later end point; dropping it keeps the search
/// exact. Candidates are retired only once `t` itself becomes admissible.
pub fn pelt_penalized_with(
    prefix: &GramPrefix,
    beta: f64,
    min_size: usize,
) -> Result<(SegmentationResult, PeltStats)> {
    check_beta(beta)?;
    check_min_size(min_size)?;
    let n = prefix.len();
    let mut stats = PeltStats::default();
    if n < 2 * min_size {
        return Ok((
            SegmentationResult::from_boundaries(prefix, Vec::new(), beta),
            stats,
        ));
    }
    let mut best = vec![f64::INFINITY; n + 1];
    let mut count = vec![usize::MAX; n + 1];
    let mut prev = vec![0usize; n + 1];
    best[0] = 0.0;
    count[0] = 0;

    struct Candidate {
        start: usize,
        expires: usize,
    }
    // Sorted by start; pending entries become admissible `min_size` steps
    // after they were recorded.
    let mut active: Vec<Candidate> = Vec::new();
    let mut pending: std::collections::VecDeque<usize> = [0].into();
    let mut values: Vec<(f64, usize)> = Vec::new();

    for t in 1..=n {
        while pending.front().is_some_and(|&s| s + min_size <= t) {
            let start = pending.pop_front().unwrap_or_default();
            active.push(Candidate {
                start,
                expires: usize::MAX,
            });
        }
        active.retain(|c| c.expires > t);
        stats.candidates_per_step.push(active.len());
        if active.is_empty() {
            continue;
        }

        values.clear();
        let (mut bv, mut bc, mut bs) = (f64::INFINITY, usize::MAX, 0);
        for cand in &active {
            let s = cand.start;
            let boundary = usize::from(s > 0);
            let v = best[s] + beta * boundary as f64 + prefix.cost_unchecked(s, t);
            let c = count[s] + boundary;
            stats.cost_evaluations += 1;
            values.push((v, c));
            if improves(v, c, bv, bc) {
                (bv, bc, bs) = (v, c, s);
            }
        }
        best[t] = bv;
        count[t] = bc;
        prev[t] = bs;

        // Value and boundary count of the path that will open a block at t.
        let (gt, ct) = (bv + beta, bc + 1);
        for (cand, &(v, c)) in active.iter_mut().zip(&values) {
            if v > gt + PRUNE_MARGIN || (v >= gt && c >= ct) {
                cand.expires = cand.expires.min(t + min_size);
            }
        }
        if bv.is_finite() {
            pending.push_back(t);
        }
    }
    Ok((
        SegmentationResult::from_boundaries(prefix, backtrack(&prev, n), beta),
        stats,
    ))
}
