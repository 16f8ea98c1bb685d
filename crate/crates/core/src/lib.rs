// SPDX-License-Identifier: MIT OR Apache-2.0

//! Kernel change-point detection (KCPD).
//!
//! The crate computes the empirical RKHS block cost of contiguous segments of
//! an embedding sequence from a prefix-summed Gram matrix, minimizes the
//! penalized segmentation criterion exactly (optimal partitioning and PELT),
//! evaluates segmentations with Pk / WindowDiff and normalized location
//! errors, and ships an exactly m-dependent moving-average generator with the
//! experiment harnesses built on top of it.

#![forbid(unsafe_code)]

pub mod cost;
pub mod error;
pub mod ingest;
pub mod kernels;
pub mod metrics;
pub mod segmentation;
pub mod simulate;

pub use cost::{expected_block_cost_stationary, BlockCostReport, GramPrefix};
pub use error::{KcpdError, Result};
pub use kernels::{Bandwidth, EmbeddingSequence, GramMatrix, KernelKind, KernelSpec};
pub use metrics::MetricReport;
pub use segmentation::{PenaltySchedule, Segmentation, SegmentationResult};
pub use simulate::{GeneratedSequence, SimConfig};

/// Crate version, embedded into every machine-readable artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
