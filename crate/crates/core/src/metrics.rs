// SPDX-License-Identifier: MIT OR Apache-2.0

//! Segmentation quality: Pk, WindowDiff, boundary-count agreement and the
//! normalized location error.
//!
//! Boundary `tau` separates positions `tau` and `tau + 1`. A probe window
//! starting at position `i` spans positions `i..=i + w`; the boundaries it
//! contains are those with `i <= tau < i + w`. Windows start at
//! `i = 1..=T - w`.

use serde::{Deserialize, Serialize};

use crate::error::{KcpdError, Result};
use crate::segmentation::Segmentation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pk: f64,
    pub window_diff: f64,
    pub window: usize,
    pub k_true: usize,
    pub k_est: usize,
    pub k_match: bool,
    /// Largest distance from an estimated boundary to its nearest true one, over `ell_t`.
    pub loc_err_est_to_true: f64,
    /// Largest distance from a true boundary to its nearest estimate, over `ell_t`.
    pub loc_err_true_to_est: f64,
    pub ell_t: usize,
}

/// Half the average reference segment length, rounded half away from zero,
/// at least 1.
pub fn default_window(reference: &Segmentation) -> usize {
    let segments = (reference.num_change_points() + 1) as f64;
    let w = (reference.len() as f64 / (2.0 * segments)).round();
    (w as usize).max(1)
}

/// `counts[j]` = number of boundaries `<= j`, for `j = 0..=T`.
fn boundary_prefix(seg: &Segmentation) -> Vec<u32> {
    let mut counts = vec![0u32; seg.len() + 1];
    for &tau in seg.change_points() {
        counts[tau] += 1;
    }
    for j in 1..counts.len() {
        counts[j] += counts[j - 1];
    }
    counts
}

fn check_pair(reference: &Segmentation, hyp: &Segmentation, window: usize) -> Result<()> {
    if reference.len() != hyp.len() {
        return Err(KcpdError::InvalidSegmentation(format!(
            "reference covers {} positions, hypothesis {}",
            reference.len(),
            hyp.len()
        )));
    }
    if window == 0 {
        return Err(KcpdError::invalid("window must be >= 1"));
    }
    if window >= reference.len() {
        return Err(KcpdError::WindowTooLarge {
            window,
            len: reference.len(),
        });
    }
    Ok(())
}

/// Window counts for every probe start `i = 1..=T - w`.
fn window_counts(seg: &Segmentation, window: usize) -> impl Iterator<Item = u32> + '_ {
    let prefix = boundary_prefix(seg);
    (1..=seg.len() - window).map(move |i| prefix[i + window - 1] - prefix[i - 1])
}

/// Fraction of probe pairs `(i, i + w)` on which reference and hypothesis
/// disagree about sharing a segment.
pub fn pk(reference: &Segmentation, hyp: &Segmentation, window: usize) -> Result<f64> {
    check_pair(reference, hyp, window)?;
    let probes = reference.len() - window;
    let disagree = window_counts(reference, window)
        .zip(window_counts(hyp, window))
        .filter(|&(r, h)| (r == 0) != (h == 0))
        .count();
    Ok(disagree as f64 / probes as f64)
}

/// Fraction of probe windows whose boundary counts differ.
pub fn window_diff(reference: &Segmentation, hyp: &Segmentation, window: usize) -> Result<f64> {
    check_pair(reference, hyp, window)?;
    let probes = reference.len() - window;
    let differ = window_counts(reference, window)
        .zip(window_counts(hyp, window))
        .filter(|&(r, h)| r != h)
        .count();
    Ok(differ as f64 / probes as f64)
}

fn directed_distance(from: &[usize], to: &[usize]) -> f64 {
    from.iter()
        .map(|&a| {
            // `to` is sorted; the nearest point is adjacent to the insertion index.
            let idx = to.partition_point(|&b| b < a);
            let right = to.get(idx).map(|&b| b - a);
            let left = idx.checked_sub(1).map(|j| a - to[j]);
            left.into_iter().chain(right).min().unwrap_or(usize::MAX)
        })
        .max()
        .unwrap_or(0) as f64
}

/// Normalized one-sided Hausdorff distances `(est -> true, true -> est)`,
/// each divided by `ell_t`.
///
/// When exactly one side has no change points both components are
/// `f64::INFINITY`; when both are empty both are 0.
pub fn location_error(truth: &Segmentation, est: &Segmentation, ell_t: usize) -> Result<(f64, f64)> {
    if ell_t == 0 {
        return Err(KcpdError::invalid("ell_T must be >= 1"));
    }
    let (t, e) = (truth.change_points(), est.change_points());
    if t.is_empty() != e.is_empty() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let ell = ell_t as f64;
    Ok((directed_distance(e, t) / ell, directed_distance(t, e) / ell))
}

/// All metrics for one reference/hypothesis pair. `window` defaults to
/// [`default_window`] and `ell_t` to the reference's shortest segment.
pub fn evaluate(
    reference: &Segmentation,
    hyp: &Segmentation,
    window: Option<usize>,
    ell_t: Option<usize>,
) -> Result<MetricReport> {
    let window = window.unwrap_or_else(|| default_window(reference));
    let ell_t = ell_t.unwrap_or_else(|| reference.min_segment_length());
    let (est_to_true, true_to_est) = location_error(reference, hyp, ell_t)?;
    let k_true = reference.num_change_points();
    let k_est = hyp.num_change_points();
    Ok(MetricReport {
        pk: pk(reference, hyp, window)?,
        window_diff: window_diff(reference, hyp, window)?,
        window,
        k_true,
        k_est,
        k_match: k_true == k_est,
        loc_err_est_to_true: est_to_true,
        loc_err_true_to_est: true_to_est,
        ell_t,
    })
}
