//! Flat real vectors standing in for images and measurements.
//!
//! Two-dimensional images are stored row-major. Arithmetic helpers do not
//! re-validate finiteness; callers that iterate (the solver) check
//! [`Signal::is_finite`] themselves.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Signal(Vec<f64>);

impl Signal {
    /// Validating constructor: non-empty and every entry finite.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidSignal("dimension must be at least 1".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("entry {i} is not finite")));
        }
        Ok(Signal(data))
    }

    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Signal(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Signal(vec![0.0; dim.max(1)])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Signal(vec![value; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Signal) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, factor: f64) -> Signal {
        Signal(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &Signal) -> Signal {
        debug_assert_eq!(self.dim(), other.dim());
        Signal(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Signal) -> Signal {
        debug_assert_eq!(self.dim(), other.dim());
        Signal(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Signal) -> Signal {
        debug_assert_eq!(self.dim(), other.dim());
        Signal(self.0.iter().zip(&other.0).map(|(a, b)| a + alpha * b).collect())
    }

    /// `a * self + b * other`, evaluated entrywise in that order.
    pub fn lincomb(&self, a: f64, other: &Signal, b: f64) -> Signal {
        debug_assert_eq!(self.dim(), other.dim());
        Signal(self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect())
    }

    pub fn distance(&self, other: &Signal) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        check_dim(expected, self.dim())
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Signal::new(value)
    }
}

impl From<Signal> for Vec<f64> {
    fn from(s: Signal) -> Self {
        s.0
    }
}

impl std::ops::Index<usize> for Signal {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Pairwise (tree) summation. The reduction tree depends only on the length,
/// so results are bitwise stable regardless of how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
