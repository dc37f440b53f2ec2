//! PnP-PGD: fixed-point iteration of `T = D_delta ∘ G` with
//! `G(x) = x - tau A^T (A x - y)`, plus the averagedness algebra that
//! certifies convergence and a dense oracle for affine denoisers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoise;
use crate::error::{Error, Result};
use crate::linop::{gradient_step, ForwardOperator, DEFAULT_POWER_ITERS};
use crate::signal::Signal;

/// Iterates with a norm above this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// The affine oracle refuses iteration matrices with `rho(M) >= 1 - this`.
pub const SINGULARITY_MARGIN: f64 = 1e-10;

/// `theta = delta^2 / (2 delta^2 - 1)`, the averagedness of `T_delta`.
pub fn averagedness_theta(delta: f64) -> Result<f64> {
    let d2 = delta * delta;
    if !(d2 > 0.5) || !d2.is_finite() {
        return Err(Error::InvalidParameter(format!("averagedness needs delta^2 > 1/2, got {d2}")));
    }
    Ok(d2 / (2.0 * d2 - 1.0))
}

/// Averagedness of `O1 ∘ O2` for a `theta1`- and a `theta2`-averaged operator.
pub fn compose_averaged(theta1: f64, theta2: f64) -> Result<f64> {
    let open_unit = |t: f64| t > 0.0 && t < 1.0;
    if !open_unit(theta1) || !open_unit(theta2) {
        return Err(Error::InvalidParameter(format!(
            "averagedness constants must lie in (0, 1), got {theta1}, {theta2}"
        )));
    }
    Ok((theta1 + theta2 - 2.0 * theta1 * theta2) / (1.0 - theta1 * theta2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpConfig {
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    /// Relative successive-iterate threshold: stop once
    /// `||x_{i+1} - x_i|| <= tol (1 + ||x_{i+1}||)`.
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::yes")]
    pub record_history: bool,
    /// Compare `tau` with `1 / ||A^T A||` and record a warning if it is larger.
    #[serde(default = "defaults::yes")]
    pub check_step_size: bool,
}

mod defaults {
    pub fn tau() -> f64 {
        1.0
    }
    pub fn max_iters() -> usize {
        300
    }
    pub fn tol() -> f64 {
        1e-9
    }
    pub fn yes() -> bool {
        true
    }
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            tau: defaults::tau(),
            max_iters: defaults::max_iters(),
            tol: defaults::tol(),
            record_history: true,
            check_step_size: true,
        }
    }
}

impl PnpConfig {
    /// Defaults with the certified step `tau = 1 / ||A^T A||`.
    pub fn for_operator(op: &ForwardOperator) -> Result<Self> {
        let norm = op.op_norm_sq(DEFAULT_POWER_ITERS, 0)?;
        let tau = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        Ok(PnpConfig { tau, ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter(format!(
                "solver needs tau > 0, tol > 0, max_iters >= 1 (got {}, {}, {})",
                self.tau, self.tol, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub x_star: Signal,
    pub iterations: usize,
    pub converged: bool,
    /// `||x_{i+1} - x_i||` per iteration.
    pub residual_history: Vec<f64>,
    /// `0.5 ||A x_{i+1} - y||^2` per iteration.
    pub objective_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FixedPointResult {
    pub fn last_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }
}

/// One application of `T(x) = D(G(x))`.
pub fn pnp_step<D: Denoise + ?Sized>(op: &ForwardOperator, y: &Signal, d: &D, tau: f64, x: &Signal) -> Result<Signal> {
    d.denoise(&gradient_step(op, y, tau, x)?)
}

pub fn pnp_pgd<D: Denoise + ?Sized>(
    op: &ForwardOperator,
    y: &Signal,
    d: &D,
    cfg: &PnpConfig,
    x0: &Signal,
) -> Result<FixedPointResult> {
    cfg.validate()?;
    x0.check_dim(op.in_dim())?;
    y.check_dim(op.out_dim())?;
    if d.dim() != op.in_dim() {
        return Err(Error::DimensionMismatch { expected: op.in_dim(), found: d.dim() });
    }

    let mut warnings = Vec::new();
    if cfg.check_step_size {
        let norm = op.op_norm_sq(DEFAULT_POWER_ITERS, 0)?;
        if cfg.tau * norm > 1.0 + 1e-9 {
            warnings.push(format!(
                "step size {} exceeds 1/||A^T A|| = {}; no convergence certificate",
                cfg.tau,
                1.0 / norm
            ));
        }
    }

    let mut residuals = Vec::new();
    let mut objectives = Vec::new();
    let mut x = x0.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let next = pnp_step(op, y, d, cfg.tau, &x)?;
        iterations += 1;
        let norm = next.norm();
        if !next.is_finite() || !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { iteration: iterations, norm });
        }
        let residual = next.distance(&x);
        if cfg.record_history {
            residuals.push(residual);
            objectives.push(0.5 * op.apply(&next)?.sub(y).norm_sq());
        } else {
            residuals.clear();
            residuals.push(residual);
        }
        x = next;
        if residual <= cfg.tol * (1.0 + norm) {
            converged = true;
            break;
        }
    }

    Ok(FixedPointResult {
        x_star: x,
        iterations,
        converged,
        residual_history: residuals,
        objective_history: objectives,
        warnings,
    })
}

/// `T(x) = M x + K y + c` for an affine (scaled) denoiser `D(z) = W z + b`:
/// `M = W (I - tau A^T A)`, `K = tau W A^T`, `c = b`.
#[derive(Debug, Clone)]
pub struct AffinePnp {
    iteration: DMatrix<f64>,
    data_gain: DMatrix<f64>,
    bias: DVector<f64>,
}

impl AffinePnp {
    pub fn new<D: Denoise + ?Sized>(op: &ForwardOperator, d: &D, tau: f64) -> Result<Self> {
        let (w, b) = d
            .affine_parts()
            .ok_or_else(|| Error::InvalidParameter("the affine oracle needs a denoiser with an affine form".into()))?;
        let n = op.in_dim();
        if w.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.nrows() });
        }
        let a = op.to_matrix();
        let gram = a.transpose() * &a;
        let iteration = &w * (DMatrix::identity(n, n) - gram * tau);
        let data_gain = &w * a.transpose() * tau;
        Ok(AffinePnp { iteration, data_gain, bias: DVector::from_column_slice(b.as_slice()) })
    }

    pub fn iteration_matrix(&self) -> &DMatrix<f64> {
        &self.iteration
    }

    pub fn spectral_radius(&self) -> f64 {
        self.iteration.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn system(&self) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let rho = self.spectral_radius();
        if rho >= 1.0 - SINGULARITY_MARGIN {
            return Err(Error::NoUniqueFixedPoint { spectral_radius: rho });
        }
        let n = self.iteration.nrows();
        Ok((DMatrix::identity(n, n) - &self.iteration).lu())
    }

    /// Solves `(I - M) x = K y + c`.
    pub fn fixed_point(&self, y: &Signal) -> Result<Signal> {
        y.check_dim(self.data_gain.ncols())?;
        let rhs = &self.data_gain * DVector::from_column_slice(y.as_slice()) + &self.bias;
        let x = self.system()?.solve(&rhs).ok_or(Error::NoUniqueFixedPoint { spectral_radius: f64::NAN })?;
        Ok(Signal::from_vec(x.as_slice().to_vec()))
    }

    /// `(I - M)^{-1} K`: the linear part of `y -> Fix(T_y)`.
    pub fn solution_map(&self) -> Result<DMatrix<f64>> {
        self.system()?.solve(&self.data_gain).ok_or(Error::NoUniqueFixedPoint { spectral_radius: f64::NAN })
    }
}

/// Closed-form fixed point of PnP-PGD when the denoiser is affine.
pub fn linear_fixed_point_oracle<D: Denoise + ?Sized>(
    op: &ForwardOperator,
    y: &Signal,
    d: &D,
    cfg: &PnpConfig,
) -> Result<Signal> {
    cfg.validate()?;
    AffinePnp::new(op, d, cfg.tau)?.fixed_point(y)
}
