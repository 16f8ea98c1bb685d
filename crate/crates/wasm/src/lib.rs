// SPDX-License-Identifier: MIT OR Apache-2.0
#![forbid(unsafe_code)]

//! Browser bindings for the demo page in `www/`. Every export takes plain
//! numbers and returns a JSON string.

use kcpd_core::segmentation::pelt_penalized_with;
use kcpd_core::simulate::{
    self, ChangePointCount, ConcentrationConfig, GeneratedSequence, SimConfig, Spacing,
};
use kcpd_core::{metrics, KernelSpec, PenaltySchedule};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn sim_config(t: usize, d: usize, m: usize, delta: f64, seed: u64) -> SimConfig {
    SimConfig {
        t,
        d,
        m,
        k: ChangePointCount::Auto,
        min_spacing: Spacing::Scaled { floor: 20, divisor: 4 },
        mean_shift: delta,
        noise_sigma: 1.0,
        seed,
    }
}

#[derive(Serialize)]
struct SegmentView {
    /// Projection of each observation on the first block-mean difference.
    trace: Vec<f64>,
    truth: Vec<usize>,
    estimate: Vec<usize>,
    beta: f64,
    objective: f64,
    pk: f64,
    window_diff: f64,
    k_true: usize,
    k_est: usize,
}

/// Simulates one sequence and segments it with an RBF kernel at
/// `beta = C sqrt(T ln T)`.
pub fn simulate_and_segment_json(t: usize, d: usize, m: usize, delta: f64, c: f64, seed: u64) -> Result<String, String> {
    let generated = GeneratedSequence::from_config(&sim_config(t, d, m, delta, seed)).map_err(|e| e.to_string())?;
    let kernel = KernelSpec::rbf_median();
    let prefix = simulate::prefix_for(&generated.seq, &kernel).map_err(|e| e.to_string())?;
    let beta = PenaltySchedule::new(c).beta(t);
    let (result, _) = pelt_penalized_with(&prefix, beta, 1).map_err(|e| e.to_string())?;
    let report = metrics::evaluate(&generated.truth, &result.segmentation, None, None).map_err(|e| e.to_string())?;

    let means = &generated.block_means;
    let mut axis: Vec<f64> = match means.get(1) {
        Some(next) => next.iter().zip(&means[0]).map(|(a, b)| a - b).collect(),
        None => vec![1.0; d],
    };
    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        axis.iter_mut().for_each(|v| *v /= norm);
    } else {
        axis = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    }
    let trace = generated
        .seq
        .rows()
        .map(|row| row.iter().zip(&axis).map(|(a, b)| a * b).sum())
        .collect();
    let view = SegmentView {
        trace,
        truth: generated.truth.change_points().to_vec(),
        estimate: result.segmentation.change_points().to_vec(),
        beta,
        objective: result.objective,
        pk: report.pk,
        window_diff: report.window_diff,
        k_true: report.k_true,
        k_est: report.k_est,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Detected change points across a comma-separated grid of penalty constants.
pub fn sweep_json(t: usize, d: usize, m: usize, delta: f64, c_grid: &str, seed: u64) -> Result<String, String> {
    let grid = c_grid
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    let generated = GeneratedSequence::from_config(&sim_config(t, d, m, delta, seed)).map_err(|e| e.to_string())?;
    let prefix = simulate::prefix_for(&generated.seq, &KernelSpec::rbf_median()).map_err(|e| e.to_string())?;
    let table = simulate::sweep_penalty(&prefix, &grid, 1).map_err(|e| e.to_string())?;
    serde_json::to_string(&table).map_err(|e| e.to_string())
}

/// Empirical tail of the block cost against the analytic bound.
pub fn concentration_curve_json(n: usize, m: usize, d: usize, replicates: usize, seed: u64) -> Result<String, String> {
    let report = simulate::concentration_check(&ConcentrationConfig {
        n,
        m,
        d,
        sigma: 1.0,
        kernel: KernelSpec::rbf_median(),
        x_grid: None,
        replicates,
        seed,
    })
    .map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate_and_segment(t: usize, d: usize, m: usize, delta: f64, c: f64, seed: u32) -> Result<String, JsError> {
    simulate_and_segment_json(t, d, m, delta, c, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep(t: usize, d: usize, m: usize, delta: f64, c_grid: &str, seed: u32) -> Result<String, JsError> {
    sweep_json(t, d, m, delta, c_grid, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn concentration_curve(n: usize, m: usize, d: usize, replicates: usize, seed: u32) -> Result<String, JsError> {
    concentration_curve_json(n, m, d, replicates, seed as u64).map_err(|e| JsError::new(&e))
}
