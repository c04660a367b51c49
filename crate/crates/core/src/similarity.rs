//! Pairwise similarity measures between sensor windows.
//!
//! Pearson correlation is computed as the inner product of standardized
//! windows: each window is centered by its sample mean and scaled to unit
//! Euclidean norm, so `pearson(x, y) = u(x)ᵀ u(y)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("window length {0} is too short (need at least 2)")]
    TooShort(usize),
    #[error("window lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-variance window")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    Pearson,
    InnerProduct,
    NegEuclidean,
}

impl SimilarityKind {
    /// Pearson scores are confined to [-1, 1].
    pub fn is_bounded(self) -> bool {
        matches!(self, SimilarityKind::Pearson)
    }
}

/// A window centered at its mean and scaled to unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedWindow {
    pub u: Vec<f64>,
    pub degenerate: bool,
}

pub fn standardize(x: &[f64]) -> Result<StandardizedWindow, SimilarityError> {
    let mut u = x.to_vec();
    let degenerate = standardize_in_place(&mut u)?;
    Ok(StandardizedWindow { u, degenerate })
}

/// Standardizes `x` in place; returns `true` when the window has zero
/// variance (in which case `x` is left as all zeros).
pub fn standardize_in_place(x: &mut [f64]) -> Result<bool, SimilarityError> {
    if x.len() < 2 {
        return Err(SimilarityError::TooShort(x.len()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        x.fill(0.0);
        return Ok(true);
    }
    for v in x.iter_mut() {
        *v /= norm;
    }
    Ok(false)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn clamp_unit(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, SimilarityError> {
    if x.len() != y.len() {
        return Err(SimilarityError::LengthMismatch(x.len(), y.len()));
    }
    let u = standardize(x)?;
    let v = standardize(y)?;
    if u.degenerate || v.degenerate {
        return Err(SimilarityError::Degenerate);
    }
    Ok(clamp_unit(dot(&u.u, &v.u)))
}

/// Larger is more similar for every kind.
pub fn measure(kind: SimilarityKind, x: &[f64], y: &[f64]) -> Result<f64, SimilarityError> {
    if x.len() != y.len() {
        return Err(SimilarityError::LengthMismatch(x.len(), y.len()));
    }
    match kind {
        SimilarityKind::Pearson => pearson(x, y),
        SimilarityKind::InnerProduct => Ok(dot(x, y)),
        SimilarityKind::NegEuclidean => Ok(-x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
    }
}
