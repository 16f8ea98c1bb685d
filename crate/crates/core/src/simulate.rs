// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exactly m-dependent synthetic sequences and the experiments built on them.
//!
//! Observations follow a piecewise-mean moving average of order `m`:
//!
//! ```text
//! Y_t = mu_{b(t)} + sigma / sqrt(m + 1) * sum_{i=0}^{m} eps_{t-i},   eps_j ~ N(0, I_d)
//! ```
//!
//! so `Y_t` and `Y_t'` are independent whenever `|t - t'| > m` and every
//! coordinate has marginal variance `sigma^2`. Innovations run across block
//! boundaries; only the mean jumps, so the first `m` points of a block carry
//! noise shared with the previous block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cost::GramPrefix;
use crate::error::{KcpdError, Result};
use crate::kernels::{compute_gram, EmbeddingSequence, KernelKind, KernelSpec};
use crate::metrics::{self, MetricReport};
use crate::segmentation::{
    pelt_penalized_with, uniform_deviation_scale, PenaltySchedule, Segmentation,
};

/// Number of change points: explicit, or `ceil(2 ln T)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangePointCount {
    Auto,
    Fixed(usize),
}

/// Minimum block length: explicit, or `max(floor, T / (divisor K))` capped at
/// the largest feasible value `T / (K + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Fixed(usize),
    Scaled { floor: usize, divisor: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: ChangePointCount,
    pub min_spacing: Spacing,
    /// Euclidean distance between consecutive block means.
    pub mean_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t: 500,
            d: 16,
            m: 5,
            k: ChangePointCount::Auto,
            min_spacing: Spacing::Scaled {
                floor: 20,
                divisor: 4,
            },
            mean_shift: 2.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

/// `ceil(2 ln T)`.
pub fn auto_k(t: usize) -> usize {
    if t <= 1 {
        0
    } else {
        (2.0 * (t as f64).ln()).ceil() as usize
    }
}

impl SimConfig {
    pub fn with_t(self, t: usize) -> Self {
        Self { t, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn resolved_k(&self) -> usize {
        match self.k {
            ChangePointCount::Auto => auto_k(self.t),
            ChangePointCount::Fixed(k) => k,
        }
    }

    pub fn resolved_spacing(&self) -> usize {
        let k = self.resolved_k();
        match self.min_spacing {
            Spacing::Fixed(ell) => ell,
            Spacing::Scaled { floor, divisor } => {
                let scaled = if k == 0 { self.t } else { self.t / (divisor.max(1) * k) };
                floor.max(scaled).min(self.t / (k + 1)).max(1)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.d == 0 {
            return Err(KcpdError::invalid("T and d must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(KcpdError::invalid(format!(
                "noise sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !(self.mean_shift.is_finite() && self.mean_shift >= 0.0) {
            return Err(KcpdError::invalid(format!(
                "mean shift must be >= 0, got {}",
                self.mean_shift
            )));
        }
        let k = self.resolved_k();
        let ell = self.resolved_spacing();
        if ell == 0 || (k + 1) * ell > self.t {
            return Err(KcpdError::InfeasibleSpacing { t: self.t, k, ell });
        }
        if self.m >= ell {
            return Err(KcpdError::invalid(format!(
                "dependence lag m = {} must be smaller than the minimum spacing {ell}",
                self.m
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSequence {
    pub seq: EmbeddingSequence,
    pub truth: Segmentation,
    pub block_means: Vec<Vec<f64>>,
    pub config: SimConfig,
}

/// Mixes `(seed, a, b)` into an independent 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ a) ^ b)
}

/// Uniform draw over all boundary sets whose segments are at least `ell`
/// long, via the stars-and-bars bijection.
pub fn sample_change_points<R: Rng + ?Sized>(
    t: usize,
    k: usize,
    ell: usize,
    rng: &mut R,
) -> Result<Segmentation> {
    if ell == 0 || (k + 1) * ell > t {
        return Err(KcpdError::InfeasibleSpacing { t, k, ell });
    }
    let slack = t - (k + 1) * ell;
    let mut bars = rand::seq::index::sample(rng, slack + k, k).into_vec();
    bars.sort_unstable();
    let cps = bars
        .iter()
        .enumerate()
        .map(|(j, &x)| (j + 1) * ell + x - j)
        .collect();
    Segmentation::new(t, cps)
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R, orthogonal_to: Option<&[f64]>) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = orthogonal_to {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            return v;
        }
    }
}

/// Block means with `|mu_k - mu_{k+1}| = shift`.
///
/// For `d >= 2` every mean lies on the sphere of radius `shift / sqrt 2` and
/// each next mean points along a fresh random direction orthogonal to the
/// previous one. For `d = 1` the means alternate between `-shift/2` and
/// `+shift/2`.
fn block_means<R: Rng + ?Sized>(blocks: usize, d: usize, shift: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if d == 1 {
        return (0..blocks)
            .map(|k| vec![if k % 2 == 0 { -0.5 * shift } else { 0.5 * shift }])
            .collect();
    }
    let radius = shift / std::f64::consts::SQRT_2;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(blocks);
    for k in 0..blocks {
        let dir = random_unit(d, rng, k.checked_sub(1).map(|p| dirs[p].as_slice()));
        dirs.push(dir);
    }
    dirs.into_iter()
        .map(|u| u.into_iter().map(|x| radius * x).collect())
        .collect()
}

/// Stationary MA(m) noise: `t` rows of dimension `d`, marginal std `sigma`.
pub fn ma_noise<R: Rng + ?Sized>(t: usize, d: usize, m: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..(t + m) * d).map(|_| rng.sample(StandardNormal)).collect();
    let scale = sigma / ((m + 1) as f64).sqrt();
    let mut out = vec![0.0; t * d];
    let mut window = vec![0.0; d];
    for j in 0..m {
        window
            .iter_mut()
            .zip(&eps[j * d..(j + 1) * d])
            .for_each(|(w, e)| *w += e);
    }
    for t_idx in 0..t {
        let enter = t_idx + m;
        window
            .iter_mut()
            .zip(&eps[enter * d..(enter + 1) * d])
            .for_each(|(w, e)| *w += e);
        out[t_idx * d..(t_idx + 1) * d]
            .iter_mut()
            .zip(&window)
            .for_each(|(o, w)| *o = scale * w);
        window
            .iter_mut()
            .zip(&eps[t_idx * d..(t_idx + 1) * d])
            .for_each(|(w, e)| *w -= e);
    }
    out
}

/// Draws change points, block means and MA(m) noise, in that order, from `rng`.
pub fn generate_m_dependent<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<GeneratedSequence> {
    config.validate()?;
    let (t, d) = (config.t, config.d);
    let truth = sample_change_points(t, config.resolved_k(), config.resolved_spacing(), rng)?;
    let means = block_means(truth.num_change_points() + 1, d, config.mean_shift, rng);
    let mut data = ma_noise(t, d, config.m, config.noise_sigma, rng);
    for (label, row) in truth.labels().into_iter().zip(data.chunks_exact_mut(d)) {
        row.iter_mut().zip(&means[label]).for_each(|(y, mu)| *y += mu);
    }
    Ok(GeneratedSequence {
        seq: EmbeddingSequence::from_flat(data, t, d)?,
        truth,
        block_means: means,
        config: *config,
    })
}

impl GeneratedSequence {
    /// Generates with an RNG seeded from `config.seed`.
    pub fn from_config(config: &SimConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        generate_m_dependent(config, &mut rng)
    }
}

fn map_indexed<T: Send, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Kernel prefix table for `seq`; cosine inputs are row-normalized first.
pub fn prefix_for(seq: &EmbeddingSequence, kernel: &KernelSpec) -> Result<GramPrefix> {
    let gram = if kernel.kind == KernelKind::Cosine {
        compute_gram(&seq.normalized()?, kernel)?
    } else {
        compute_gram(seq, kernel)?
    };
    Ok(GramPrefix::build(&gram))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub replicates: usize,
    /// Per-T settings; `t` and `seed` are overridden per replicate.
    pub base: SimConfig,
    pub kernel: KernelSpec,
    pub schedule: PenaltySchedule,
    pub min_size: usize,
    /// Wall-clock timing makes reports non-reproducible, so it is opt-in.
    pub record_runtime: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    #[serde(rename = "T")]
    pub t: usize,
    pub replicate: usize,
    pub seed: u64,
    pub beta: f64,
    pub k_true: usize,
    pub k_est: usize,
    pub pk: f64,
    pub window_diff: f64,
    pub window: usize,
    pub ell_t: usize,
    /// `None` (JSON null) when the estimate or truth has no change points
    /// and the other does.
    #[serde(with = "finite_or_null")]
    pub loc_err_est_to_true: f64,
    #[serde(with = "finite_or_null")]
    pub loc_err_true_to_est: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_ms: Option<f64>,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "T")]
    pub t: usize,
    pub replicates: usize,
    pub k_true: usize,
    pub k_est_mean: f64,
    pub k_est_std: f64,
    pub k_match_freq: f64,
    pub pk_mean: f64,
    pub pk_std: f64,
    pub window_diff_mean: f64,
    pub window_diff_std: f64,
    #[serde(with = "finite_or_null")]
    pub loc_err_est_to_true_median: f64,
    #[serde(with = "finite_or_null")]
    pub loc_err_true_to_est_median: f64,
    /// Replicates where one side had no change points.
    pub loc_err_undefined: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_ms_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub aggregates: Vec<Aggregate>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Median with infinities sorted last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

impl Aggregate {
    pub fn from_records(t: usize, records: &[ReplicateRecord]) -> Self {
        let rs = records.iter().filter(|r| r.t == t);
        let n = rs.clone().count();
        let (k_est_mean, k_est_std) = mean_std(rs.clone().map(|r| r.k_est as f64));
        let (pk_mean, pk_std) = mean_std(rs.clone().map(|r| r.pk));
        let (wd_mean, wd_std) = mean_std(rs.clone().map(|r| r.window_diff));
        let e2t: Vec<f64> = rs.clone().map(|r| r.loc_err_est_to_true).collect();
        let t2e: Vec<f64> = rs.clone().map(|r| r.loc_err_true_to_est).collect();
        let runtimes: Vec<f64> = rs.clone().filter_map(|r| r.runtime_ms).collect();
        Self {
            t,
            replicates: n,
            k_true: rs.clone().map(|r| r.k_true).max().unwrap_or(0),
            k_est_mean,
            k_est_std,
            k_match_freq: rs.clone().filter(|r| r.k_est == r.k_true).count() as f64 / n.max(1) as f64,
            pk_mean,
            pk_std,
            window_diff_mean: wd_mean,
            window_diff_std: wd_std,
            loc_err_est_to_true_median: median(&e2t),
            loc_err_true_to_est_median: median(&t2e),
            loc_err_undefined: e2t.iter().filter(|v| !v.is_finite()).count(),
            runtime_ms_mean: (!runtimes.is_empty())
                .then(|| runtimes.iter().sum::<f64>() / runtimes.len() as f64),
        }
    }
}

/// Generates one replicate, segments it with PELT at `beta` and scores it.
pub fn run_replicate(
    sim: &SimConfig,
    kernel: &KernelSpec,
    beta: f64,
    min_size: usize,
) -> Result<(GeneratedSequence, Segmentation, MetricReport)> {
    let generated = GeneratedSequence::from_config(sim)?;
    let prefix = prefix_for(&generated.seq, kernel)?;
    let (result, _) = pelt_penalized_with(&prefix, beta, min_size)?;
    let est = result.segmentation;
    let window = metrics::default_window(&generated.truth).min(sim.t.saturating_sub(1).max(1));
    let report = metrics::evaluate(&generated.truth, &est, Some(window), None)?;
    Ok((generated, est, report))
}

/// Runs `replicates` independent simulations per `T` and scores the
/// penalized estimator at `beta_T = C sqrt(T ln T)`.
///
/// Replicate `r` at length `T` is seeded with `derive_seed(base.seed, T, r)`,
/// so reports are reproducible regardless of scheduling.
pub fn consistency_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.t_grid.is_empty() || config.replicates == 0 {
        return Err(KcpdError::invalid("T grid and replicate count must be nonempty"));
    }
    config.schedule.validate()?;
    config.kernel.validate()?;
    for &t in &config.t_grid {
        config.base.with_t(t).validate()?;
    }
    let jobs: Vec<(usize, usize)> = config
        .t_grid
        .iter()
        .flat_map(|&t| (0..config.replicates).map(move |r| (t, r)))
        .collect();
    let records: Vec<Result<ReplicateRecord>> = map_indexed(jobs.len(), |i| {
        let (t, r) = jobs[i];
        let seed = derive_seed(config.base.seed, t as u64, r as u64);
        let sim = config.base.with_t(t).with_seed(seed);
        let beta = config.schedule.beta(t);
        let start = config.record_runtime.then(std::time::Instant::now);
        let (_, _, rep) = run_replicate(&sim, &config.kernel, beta, config.min_size)?;
        Ok(ReplicateRecord {
            t,
            replicate: r,
            seed,
            beta,
            k_true: rep.k_true,
            k_est: rep.k_est,
            pk: rep.pk,
            window_diff: rep.window_diff,
            window: rep.window,
            ell_t: rep.ell_t,
            loc_err_est_to_true: rep.loc_err_est_to_true,
            loc_err_true_to_est: rep.loc_err_true_to_est,
            runtime_ms: start.map(|s| s.elapsed().as_secs_f64() * 1e3),
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregates = config
        .t_grid
        .iter()
        .map(|&t| Aggregate::from_records(t, &records))
        .collect();
    Ok(ExperimentReport {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        records,
        aggregates,
    })
}

impl ExperimentReport {
    /// One CSV row per replicate.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "T",
            "replicate",
            "seed",
            "beta",
            "k_true",
            "k_est",
            "pk",
            "window_diff",
            "window",
            "ell_t",
            "loc_err_est_to_true",
            "loc_err_true_to_est",
            "runtime_ms",
        ])
        .map_err(csv_err)?;
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { "inf".into() };
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.beta.to_string(),
                r.k_true.to_string(),
                r.k_est.to_string(),
                r.pk.to_string(),
                r.window_diff.to_string(),
                r.window.to_string(),
                r.ell_t.to_string(),
                fmt(r.loc_err_est_to_true),
                fmt(r.loc_err_true_to_est),
                r.runtime_ms.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| KcpdError::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> KcpdError {
    KcpdError::invalid(e.to_string())
}

/// Picks the penalty constant with the smallest mean Pk on pilot replicates.
/// Returns the chosen constant and the mean Pk of every candidate.
pub fn calibrate_penalty(
    pilot: &SimConfig,
    c_grid: &[f64],
    replicates: usize,
    kernel: &KernelSpec,
    min_size: usize,
) -> Result<(f64, Vec<f64>)> {
    if c_grid.is_empty() || replicates == 0 {
        return Err(KcpdError::invalid("calibration grid and replicates must be nonempty"));
    }
    pilot.validate()?;
    let prepared: Vec<Result<(GeneratedSequence, GramPrefix)>> = map_indexed(replicates, |r| {
        let sim = pilot.with_seed(derive_seed(pilot.seed, u64::MAX, r as u64));
        let g = GeneratedSequence::from_config(&sim)?;
        let p = prefix_for(&g.seq, kernel)?;
        Ok((g, p))
    });
    let prepared = prepared.into_iter().collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let beta = PenaltySchedule::new(c).beta(pilot.t);
        let pks: Vec<Result<f64>> = map_indexed(prepared.len(), |i| {
            let (g, p) = &prepared[i];
            let (res, _) = pelt_penalized_with(p, beta, min_size)?;
            metrics::pk(&g.truth, &res.segmentation, metrics::default_window(&g.truth))
        });
        let pks = pks.into_iter().collect::<Result<Vec<_>>>()?;
        scores.push(pks.iter().sum::<f64>() / pks.len() as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| c_grid[i])
        .unwrap_or(c_grid[0]);
    Ok((best, scores))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    pub kernel: KernelSpec,
    /// Defaults to [`default_x_grid`].
    pub x_grid: Option<Vec<f64>>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub x: f64,
    pub empirical_tail: f64,
    /// Binomial standard error of `empirical_tail`.
    pub stderr: f64,
    pub bound: f64,
    /// `min(bound, 1)` for display.
    pub bound_clipped: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub version: String,
    pub config: ConcentrationConfig,
    /// RBF bandwidth actually used (fixed across replicates).
    pub bandwidth: Option<f64>,
    /// Monte-Carlo estimate of `E[C_hat(1, n)]`.
    pub mean_cost: f64,
    pub std_cost: f64,
    pub rows: Vec<TailRow>,
    /// `4 sqrt(2) M sqrt((8m + 5) ln n)`, the uniform deviation scale at `T = n`.
    pub lambda_t: f64,
}

/// `4 exp(-x^2 / (8 (8m + 5) M^2 n))`.
pub fn concentration_bound(x: f64, n: usize, m: usize, bound: f64) -> f64 {
    let denom = 8.0 * (8.0 * m as f64 + 5.0) * bound * bound * n as f64;
    4.0 * (-x * x / denom).exp()
}

/// Eight thresholds `x_j = j M sqrt(2 (8m + 5) n)`, `j = 0..8`, at which the
/// bound equals `4 exp(-j^2 / 4)`.
pub fn default_x_grid(n: usize, m: usize, bound: f64) -> Vec<f64> {
    let unit = bound * (2.0 * (8.0 * m as f64 + 5.0) * n as f64).sqrt();
    (0..8).map(|j| j as f64 * unit).collect()
}

/// Monte-Carlo tail of `|C_hat(1, n) - E C_hat(1, n)|` for stationary MA(m)
/// blocks versus the analytic concentration bound.
///
/// A median bandwidth is resolved once on a pilot block and then held fixed,
/// so every replicate uses the same kernel.
pub fn concentration_check(config: &ConcentrationConfig) -> Result<ConcentrationReport> {
    if config.n == 0 || config.d == 0 || config.replicates == 0 {
        return Err(KcpdError::invalid("n, d and replicates must be positive"));
    }
    if !(config.sigma.is_finite() && config.sigma > 0.0) {
        return Err(KcpdError::invalid("sigma must be positive"));
    }
    config.kernel.validate()?;
    let block = |seed: u64| -> Result<EmbeddingSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = ma_noise(config.n, config.d, config.m, config.sigma, &mut rng);
        EmbeddingSequence::from_flat(data, config.n, config.d)
    };
    let kernel = if config.kernel.is_resolved() {
        config.kernel
    } else {
        let pilot_len = config.n.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 0));
        let data = ma_noise(pilot_len, config.d, config.m, config.sigma, &mut rng);
        config
            .kernel
            .resolve(&EmbeddingSequence::from_flat(data, pilot_len, config.d)?)?
    };
    let costs: Vec<Result<f64>> = map_indexed(config.replicates, |r| {
        let seq = block(derive_seed(config.seed, config.n as u64, r as u64))?;
        prefix_for(&seq, &kernel)?.block_cost(1, config.n)
    });
    let costs = costs.into_iter().collect::<Result<Vec<_>>>()?;
    let (mean_cost, std_cost) = mean_std(costs.iter().copied());
    let grid = config
        .x_grid
        .clone()
        .unwrap_or_else(|| default_x_grid(config.n, config.m, kernel.bound));
    let reps = costs.len() as f64;
    let rows = grid
        .iter()
        .map(|&x| {
            let exceed = costs.iter().filter(|&&c| (c - mean_cost).abs() > x).count();
            let p = exceed as f64 / reps;
            let bound = concentration_bound(x, config.n, config.m, kernel.bound);
            TailRow {
                x,
                empirical_tail: p,
                stderr: (p * (1.0 - p) / reps).sqrt(),
                bound,
                bound_clipped: bound.min(1.0),
            }
        })
        .collect();
    Ok(ConcentrationReport {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        bandwidth: kernel.sigma(),
        mean_cost,
        std_cost,
        rows,
        lambda_t: uniform_deviation_scale(config.m, kernel.bound, config.n.max(2)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "C")]
    pub c: f64,
    pub beta: f64,
    /// Detected change points; the replicate mean for simulated sweeps.
    pub k_est: f64,
    /// Penalized objective; the replicate mean for simulated sweeps.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    #[serde(rename = "T")]
    pub t: usize,
    pub replicates: usize,
    pub rows: Vec<SweepRow>,
    /// Whether the detected count never increases with `C`.
    pub monotone: bool,
}

impl SweepTable {
    fn new(t: usize, replicates: usize, rows: Vec<SweepRow>) -> Self {
        let monotone = rows.windows(2).all(|w| w[1].k_est <= w[0].k_est);
        Self {
            t,
            replicates,
            rows,
            monotone,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("C,beta,k_est,objective\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.c, r.beta, r.k_est, r.objective));
        }
        out.push_str(&format!("# monotone: {}\n", self.monotone));
        out
    }
}

fn check_grid(c_grid: &[f64]) -> Result<()> {
    if c_grid.is_empty() {
        return Err(KcpdError::invalid("C grid is empty"));
    }
    if let Some(c) = c_grid.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(KcpdError::invalid(format!("invalid penalty constant {c}")));
    }
    if c_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KcpdError::invalid("C grid must be strictly increasing"));
    }
    Ok(())
}

/// Detected change-point count for every `C` on one instance.
pub fn sweep_penalty(prefix: &GramPrefix, c_grid: &[f64], min_size: usize) -> Result<SweepTable> {
    check_grid(c_grid)?;
    let t = prefix.len();
    let rows = c_grid
        .iter()
        .map(|&c| {
            let beta = PenaltySchedule::new(c).beta(t);
            let (res, _) = pelt_penalized_with(prefix, beta, min_size)?;
            Ok(SweepRow {
                c,
                beta,
                k_est: res.num_change_points() as f64,
                objective: res.objective,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable::new(t, 1, rows))
}

/// [`sweep_penalty`] averaged over simulated replicates of `base`.
pub fn sweep_penalty_replicates(
    base: &SimConfig,
    kernel: &KernelSpec,
    c_grid: &[f64],
    replicates: usize,
    min_size: usize,
) -> Result<SweepTable> {
    check_grid(c_grid)?;
    if replicates == 0 {
        return Err(KcpdError::invalid("replicates must be positive"));
    }
    let tables: Vec<Result<SweepTable>> = map_indexed(replicates, |r| {
        let sim = base.with_seed(derive_seed(base.seed, base.t as u64, r as u64));
        let g = GeneratedSequence::from_config(&sim)?;
        sweep_penalty(&prefix_for(&g.seq, kernel)?, c_grid, min_size)
    });
    let tables = tables.into_iter().collect::<Result<Vec<_>>>()?;
    let n = tables.len() as f64;
    let rows = c_grid
        .iter()
        .enumerate()
        .map(|(i, &c)| SweepRow {
            c,
            beta: tables[0].rows[i].beta,
            k_est: tables.iter().map(|t| t.rows[i].k_est).sum::<f64>() / n,
            objective: tables.iter().map(|t| t.rows[i].objective).sum::<f64>() / n,
        })
        .collect();
    let mut table = SweepTable::new(base.t, replicates, rows);
    table.monotone &= tables.iter().all(|t| t.monotone);
    Ok(table)
}
