//! Linear forward operators `A`, their adjoints, and the gradient step
//! `G(x) = x - tau * A^T (A x - y)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{standard_normal_vec, stream_rng, streams};
use crate::signal::Signal;

pub const DEFAULT_POWER_ITERS: usize = 200;
const POWER_REL_TOL: f64 = 1e-12;

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator {
    Identity {
        dim: usize,
    },
    /// `true` marks an observed entry; unobserved entries map to zero.
    Mask {
        mask: Vec<bool>,
    },
    /// Circular convolution with a kernel no longer than the signal.
    Convolution1D {
        kernel: Vec<f64>,
        dim: usize,
    },
    Dense {
        matrix: DMatrix<f64>,
    },
}

impl ForwardOperator {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("operator dimension must be positive".into()));
        }
        Ok(ForwardOperator::Identity { dim })
    }

    pub fn mask(mask: Vec<bool>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::InvalidParameter("mask must be non-empty".into()));
        }
        Ok(ForwardOperator::Mask { mask })
    }

    /// Seeded uniform-random mask hiding `round(fraction * dim)` entries.
    pub fn random_mask(dim: usize, fraction: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidParameter(format!(
                "mask needs dim >= 1 and fraction in [0, 1], got dim {dim}, fraction {fraction}"
            )));
        }
        let hidden = ((fraction * dim as f64).round() as usize).min(dim);
        let mut rng = stream_rng(seed, streams::MASK);
        let mut mask = vec![true; dim];
        for i in index::sample(&mut rng, dim, hidden) {
            mask[i] = false;
        }
        Ok(ForwardOperator::Mask { mask })
    }

    pub fn convolution(kernel: Vec<f64>, dim: usize) -> Result<Self> {
        if kernel.is_empty() || kernel.len() > dim {
            return Err(Error::InvalidParameter(format!("kernel length {} must be in 1..={dim}", kernel.len())));
        }
        if kernel.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidParameter("kernel entries must be finite".into()));
        }
        Ok(ForwardOperator::Convolution1D { kernel, dim })
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidParameter("dense operator must be non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(ForwardOperator::Dense { matrix })
    }

    pub fn dense_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidParameter("matrix rows have unequal lengths".into()));
        }
        Self::dense(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn in_dim(&self) -> usize {
        match self {
            ForwardOperator::Identity { dim } | ForwardOperator::Convolution1D { dim, .. } => *dim,
            ForwardOperator::Mask { mask } => mask.len(),
            ForwardOperator::Dense { matrix } => matrix.ncols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ForwardOperator::Dense { matrix } => matrix.nrows(),
            _ => self.in_dim(),
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        x.check_dim(self.in_dim())?;
        Ok(self.apply_unchecked(x.as_slice()))
    }

    /// `A^T y`.
    pub fn adjoint(&self, y: &Signal) -> Result<Signal> {
        y.check_dim(self.out_dim())?;
        Ok(self.adjoint_unchecked(y.as_slice()))
    }

    fn apply_unchecked(&self, x: &[f64]) -> Signal {
        let out = match self {
            ForwardOperator::Identity { .. } => x.to_vec(),
            ForwardOperator::Mask { mask } => x.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect(),
            ForwardOperator::Convolution1D { kernel, dim } => {
                let n = *dim;
                (0..n).map(|i| kernel.iter().enumerate().map(|(j, k)| k * x[(i + n - j) % n]).sum()).collect()
            }
            ForwardOperator::Dense { matrix } => (matrix * DVector::from_column_slice(x)).as_slice().to_vec(),
        };
        Signal::from_vec(out)
    }

    fn adjoint_unchecked(&self, y: &[f64]) -> Signal {
        let out = match self {
            ForwardOperator::Identity { .. } | ForwardOperator::Mask { .. } => {
                return self.apply_unchecked(y);
            }
            ForwardOperator::Convolution1D { kernel, dim } => {
                let n = *dim;
                (0..n).map(|l| kernel.iter().enumerate().map(|(j, k)| k * y[(l + j) % n]).sum()).collect()
            }
            ForwardOperator::Dense { matrix } => {
                (matrix.transpose() * DVector::from_column_slice(y)).as_slice().to_vec()
            }
        };
        Signal::from_vec(out)
    }

    /// `A^T A x`.
    pub fn normal(&self, x: &Signal) -> Result<Signal> {
        let ax = self.apply(x)?;
        Ok(self.adjoint_unchecked(ax.as_slice()))
    }

    /// Dense `m x n` matrix of the operator (column `j` is `A e_j`).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            ForwardOperator::Dense { matrix } => matrix.clone(),
            _ => {
                let n = self.in_dim();
                let mut m = DMatrix::zeros(self.out_dim(), n);
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    let col = self.apply_unchecked(&e);
                    m.column_mut(j).copy_from_slice(col.as_slice());
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// Estimate of `||A^T A||` by seeded power iteration.
    pub fn op_norm_sq(&self, iters: usize, seed: u64) -> Result<f64> {
        Ok(self.power_iteration(iters, seed)?.estimate)
    }

    pub fn power_iteration(&self, iters: usize, seed: u64) -> Result<PowerIteration> {
        if iters == 0 {
            return Err(Error::InvalidParameter("power iteration needs iters >= 1".into()));
        }
        let n = self.in_dim();
        let mut rng = stream_rng(seed, streams::POWER_ITERATION);
        let mut v = Signal::from_vec(standard_normal_vec(&mut rng, n));
        let v_norm = v.norm();
        v = v.scale(1.0 / v_norm);

        let mut history = Vec::with_capacity(iters.min(64));
        for _ in 0..iters {
            let w = self.normal(&v)?;
            let rayleigh = v.dot(&w);
            let w_norm = w.norm();
            if w_norm == 0.0 {
                history.push(0.0);
                return Ok(PowerIteration { estimate: 0.0, rayleigh_history: history });
            }
            let converged =
                history.last().is_some_and(|&prev: &f64| (rayleigh - prev).abs() < POWER_REL_TOL * rayleigh.abs());
            history.push(rayleigh);
            if converged {
                break;
            }
            v = w.scale(1.0 / w_norm);
        }
        Ok(PowerIteration { estimate: *history.last().unwrap(), rayleigh_history: history })
    }
}

#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub estimate: f64,
    /// Rayleigh quotients `<v_k, A^T A v_k>` of the unit iterates.
    pub rayleigh_history: Vec<f64>,
}

/// `G(x) = x - tau * A^T (A x - y)`.
pub fn gradient_step(op: &ForwardOperator, y: &Signal, tau: f64, x: &Signal) -> Result<Signal> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {tau}")));
    }
    y.check_dim(op.out_dim())?;
    let residual = op.apply(x)?.sub(y);
    Ok(x.add_scaled(-tau, &op.adjoint_unchecked(residual.as_slice())))
}

/// JSON description of a forward operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_mask_fraction")]
    pub mask_fraction: f64,
    #[serde(default)]
    pub kernel: Option<Vec<f64>>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    Mask,
    Conv1d,
    Dense,
}

fn default_mask_fraction() -> f64 {
    0.2
}

impl OperatorSpec {
    pub fn identity(dim: usize) -> Self {
        OperatorSpec {
            kind: OperatorKind::Identity,
            dim: Some(dim),
            mask_fraction: default_mask_fraction(),
            kernel: None,
            matrix: None,
            seed: 0,
        }
    }

    pub fn mask(dim: usize, mask_fraction: f64, seed: u64) -> Self {
        OperatorSpec { kind: OperatorKind::Mask, mask_fraction, seed, ..Self::identity(dim) }
    }

    /// `fallback_dim` fills a missing `dim` (the prior's dimension).
    pub fn build(&self, fallback_dim: usize) -> Result<ForwardOperator> {
        let dim = self.dim.unwrap_or(fallback_dim);
        match self.kind {
            OperatorKind::Identity => ForwardOperator::identity(dim),
            OperatorKind::Mask => ForwardOperator::random_mask(dim, self.mask_fraction, self.seed),
            OperatorKind::Conv1d => {
                let kernel =
                    self.kernel.clone().ok_or_else(|| Error::Config("conv1d operator needs `kernel`".into()))?;
                ForwardOperator::convolution(kernel, dim)
            }
            OperatorKind::Dense => {
                let rows = self.matrix.as_ref().ok_or_else(|| Error::Config("dense operator needs `matrix`".into()))?;
                ForwardOperator::dense_from_rows(rows)
            }
        }
    }
}
