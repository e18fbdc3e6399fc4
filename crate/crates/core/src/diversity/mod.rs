//! Diversity-driven selection: k-means clustering, greedy k-center
//! sampling, and compression-ratio (ZIP) selection.
//!
//! Distances are Euclidean on the raw ingested embeddings.

mod compress;
mod kcenter;
mod kmeans;
mod zip;

pub use compress::{compression_ratio, Compressor, DEFAULT_LEVEL};
pub use kcenter::{kcenter_select, KCenterResult};
pub use kmeans::{kmeans, ClusterAssignment, KMeansParams};
pub use zip::{zip_select, CompressionState, ContextWindow, ScoreUpdate, ZipOutcome, ZipParams, DEFAULT_WINDOW};

use crate::scores::{RecordId, ScoreError};

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {n} available records")]
    TooFewRecords { k: usize, n: usize },
    #[error("budget {budget} exceeds the {available} available records")]
    BudgetExceeds { budget: usize, available: usize },
    #[error("record {0} has no embedding")]
    MissingEmbedding(RecordId),
    #[error("record {0} is both in the pool and a candidate")]
    PoolOverlap(RecordId),
    #[error("record {0} has empty content")]
    EmptyRecord(RecordId),
    #[error("cannot compress empty input")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    File(#[from] ScoreError),
}

/// Squared Euclidean distance between two `f32` vectors, accumulated in
/// `f64` over four fixed lanes.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            let d = a[i * 4 + l] as f64 - b[i * 4 + l] as f64;
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared distance between a point and an `f64` centroid.
#[inline]
pub(crate) fn sq_dist_centroid(a: &[f32], c: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), c.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            let d = a[i * 4 + l] as f64 - c[i * 4 + l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let d = a[i] as f64 - c[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_match_plain_sum() {
        let a: Vec<f32> = (0..13).map(|i| i as f32 * 0.37).collect();
        let b: Vec<f32> = (0..13).map(|i| (13 - i) as f32 * 0.11).collect();
        let plain: f64 = a.iter().zip(&b).map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2)).sum();
        assert!((sq_dist(&a, &b) - plain).abs() < 1e-12 * plain);
        let c: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        assert_eq!(sq_dist(&a, &b), sq_dist_centroid(&a, &c));
    }
}
