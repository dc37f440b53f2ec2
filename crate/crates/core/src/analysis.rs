//! Monte-Carlo estimators for the denoising loss `L2(D) = E||D(X + sigma xi) - X||^2`
//! and for the optimal Tweedie scale
//!
//! ```text
//! delta_opt^2 = -E||D(Y) - Y||^2 / E<sigma xi, D(Y) - Y>,   Y = X + sigma xi.
//! ```
//!
//! Everything that compares denoisers or scales runs on one shared
//! [`SampleSet`] (common random numbers). On a fixed sample set the map
//! `u = 1/delta^2 -> L2(D_delta)` is exactly the parabola
//! `mean||sigma xi||^2 + 2u mean<sigma xi, e> + u^2 mean||e||^2` with
//! `e = D(Y) - Y`, and its minimizer is the ratio estimator above.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{tweedie_scale, Denoise, Denoiser};
use crate::error::{Error, Result};
use crate::prior::{GmmPrior, SampleSet};
use crate::signal::{pairwise_sum, Signal};

pub const DEFAULT_SAMPLES: usize = 100_000;
/// `|denominator| < DEGENERACY_RATIO * (1 + numerator)` means `D ≈ Id`.
pub const DEGENERACY_RATIO: f64 = 1e-12;
/// Comparisons are judged at this many combined standard errors.
pub const SANDWICH_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptEstimate {
    /// Estimate of `E||D(Y) - Y||^2`.
    pub numerator: f64,
    /// Estimate of `E<sigma xi, D(Y) - Y>`.
    pub denominator: f64,
    pub delta_opt_sq: f64,
    /// First-order delta-method standard error of the ratio.
    pub stderr_delta_opt_sq: f64,
    pub samples: usize,
    pub seed: u64,
}

impl DeltaOptEstimate {
    /// A non-negative denominator gives a non-positive ratio: the denoiser
    /// does not shrink toward the data on average.
    pub fn is_well_posed(&self) -> bool {
        self.denominator < 0.0
    }

    pub fn delta_opt(&self) -> Option<f64> {
        (self.delta_opt_sq > 0.0).then(|| self.delta_opt_sq.sqrt())
    }
}

/// Mean and standard error of the mean, with a length-determined reduction tree.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {samples}")));
    }
    Ok(())
}

/// Per-sample squared errors `||D(y_i) - x_i||^2`.
pub fn squared_errors<D: Denoise + ?Sized>(d: &D, set: &SampleSet) -> Result<Vec<f64>> {
    set.pairs.par_iter().map(|p| Ok(d.denoise(&p.noisy)?.distance(&p.clean).powi(2))).collect()
}

pub fn l2_on_samples<D: Denoise + ?Sized>(d: &D, set: &SampleSet) -> Result<L2Estimate> {
    check_samples(set.len())?;
    let (value, stderr) = mean_and_stderr(&squared_errors(d, set)?);
    Ok(L2Estimate { value, stderr, samples: set.len(), seed: set.seed })
}

pub fn estimate_l2<D: Denoise + ?Sized>(
    d: &D,
    prior: &GmmPrior,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<L2Estimate> {
    check_samples(samples)?;
    l2_on_samples(d, &prior.sample_pairs(sigma, samples, seed)?)
}

/// Per-sample `(||e||^2, <sigma xi, e>)` with `e = D(y) - y`, `sigma xi = y - x`.
fn residual_moments<D: Denoise + ?Sized>(d: &D, set: &SampleSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs: Vec<(f64, f64)> = set
        .pairs
        .par_iter()
        .map(|p| {
            let e = d.denoise(&p.noisy)?.sub(&p.noisy);
            let noise = p.noisy.sub(&p.clean);
            Ok((e.norm_sq(), noise.dot(&e)))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

pub fn delta_opt_on_samples<D: Denoise + ?Sized>(d: &D, set: &SampleSet) -> Result<DeltaOptEstimate> {
    check_samples(set.len())?;
    let (num_terms, den_terms) = residual_moments(d, set)?;
    let n = set.len() as f64;
    let numerator = pairwise_sum(&num_terms) / n;
    let denominator = pairwise_sum(&den_terms) / n;
    if denominator.abs() < DEGENERACY_RATIO * (1.0 + numerator) {
        return Err(Error::DegenerateDenoiser { numerator, denominator });
    }
    let ratio = -numerator / denominator;
    // Var(R) ≈ Var(a + R b) / (N b̄^2) for R = -ā / b̄.
    let linearized: Vec<f64> = num_terms.iter().zip(&den_terms).map(|(a, b)| a + ratio * b).collect();
    let (_, se_lin) = mean_and_stderr(&linearized);
    Ok(DeltaOptEstimate {
        numerator,
        denominator,
        delta_opt_sq: ratio,
        stderr_delta_opt_sq: se_lin / denominator.abs(),
        samples: set.len(),
        seed: set.seed,
    })
}

pub fn estimate_delta_opt<D: Denoise + ?Sized>(
    d: &D,
    prior: &GmmPrior,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<DeltaOptEstimate> {
    check_samples(samples)?;
    delta_opt_on_samples(d, &prior.sample_pairs(sigma, samples, seed)?)
}

/// `L2(u) = constant + 2 u cross + u^2 quadratic` on a fixed sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticProfile {
    /// `mean||sigma xi||^2`, the loss of the identity (`u = 0`).
    pub constant: f64,
    /// `mean<sigma xi, D(Y) - Y>`.
    pub cross: f64,
    /// `mean||D(Y) - Y||^2`.
    pub quadratic: f64,
}

impl QuadraticProfile {
    pub fn at(&self, u: f64) -> f64 {
        self.constant + 2.0 * u * self.cross + u * u * self.quadratic
    }

    /// `argmin_u L2(u) = -cross / quadratic`.
    pub fn minimizer(&self) -> f64 {
        -self.cross / self.quadratic
    }
}

pub fn l2_profile<D: Denoise + ?Sized>(d: &D, set: &SampleSet) -> Result<QuadraticProfile> {
    check_samples(set.len())?;
    let (quad, cross) = residual_moments(d, set)?;
    let noise: Vec<f64> = set.pairs.iter().map(|p| p.noisy.sub(&p.clean).norm_sq()).collect();
    let n = set.len() as f64;
    Ok(QuadraticProfile {
        constant: pairwise_sum(&noise) / n,
        cross: pairwise_sum(&cross) / n,
        quadratic: pairwise_sum(&quad) / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub delta_opt: DeltaOptEstimate,
    pub l2_mmse: L2Estimate,
    pub l2_scaled: L2Estimate,
    pub l2_base: L2Estimate,
}

impl SandwichReport {
    fn combined(a: &L2Estimate, b: &L2Estimate) -> f64 {
        (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
    }

    /// `sqrt(se_mmse^2 + se_scaled^2)`.
    pub fn lower_stderr(&self) -> f64 {
        Self::combined(&self.l2_mmse, &self.l2_scaled)
    }

    /// `sqrt(se_scaled^2 + se_base^2)`.
    pub fn upper_stderr(&self) -> f64 {
        Self::combined(&self.l2_scaled, &self.l2_base)
    }

    /// `L2(D_delta_opt) - L2(D_MMSE)`.
    pub fn lower_margin(&self) -> f64 {
        self.l2_scaled.value - self.l2_mmse.value
    }

    /// `L2(D) - L2(D_delta_opt)`.
    pub fn upper_margin(&self) -> f64 {
        self.l2_base.value - self.l2_scaled.value
    }

    /// Neither inequality is violated by more than the tolerance.
    pub fn pass(&self) -> bool {
        self.lower_margin() >= -SANDWICH_SIGMAS * self.lower_stderr()
            && self.upper_margin() >= -SANDWICH_SIGMAS * self.upper_stderr()
    }

    /// Both inequalities hold strictly, each by at least the tolerance.
    pub fn strict(&self) -> bool {
        self.lower_margin() >= SANDWICH_SIGMAS * self.lower_stderr()
            && self.upper_margin() >= SANDWICH_SIGMAS * self.upper_stderr()
    }

    /// All three losses agree within the tolerance.
    pub fn coincide(&self) -> bool {
        let outer = Self::combined(&self.l2_mmse, &self.l2_base);
        self.lower_margin().abs() <= SANDWICH_SIGMAS * self.lower_stderr()
            && self.upper_margin().abs() <= SANDWICH_SIGMAS * self.upper_stderr()
            && (self.l2_base.value - self.l2_mmse.value).abs() <= SANDWICH_SIGMAS * outer
    }
}

/// `L2(D_MMSE) <= L2(D_delta_opt) <= L2(D)` on one shared sample set.
pub fn verify_sandwich(
    d: &Denoiser,
    prior: &Arc<GmmPrior>,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<SandwichReport> {
    check_samples(samples)?;
    let set = prior.sample_pairs(sigma, samples, seed)?;
    let delta_opt = delta_opt_on_samples(d, &set)?;
    if !delta_opt.is_well_posed() {
        return Err(Error::DegenerateDenoiser { numerator: delta_opt.numerator, denominator: delta_opt.denominator });
    }
    let mmse = Denoiser::exact_mmse(prior.clone(), sigma)?;
    let scaled = tweedie_scale(d.clone(), delta_opt.delta_opt_sq.sqrt())?;
    Ok(SandwichReport {
        delta_opt,
        l2_mmse: l2_on_samples(&mmse, &set)?,
        l2_scaled: l2_on_samples(&scaled, &set)?,
        l2_base: l2_on_samples(d, &set)?,
    })
}

/// `L2(tweedie_scale(d, delta))` for every grid value, on one sample set.
///
/// `D(y_i)` is evaluated once per sample; each grid point then applies the
/// same interpolation `(1 - u) y + u D(y)` that [`crate::ScaledDenoiser`] uses.
pub fn delta_sweep_on_samples<D: Denoise + ?Sized>(
    d: &D,
    set: &SampleSet,
    delta_grid: &[f64],
) -> Result<Vec<(f64, L2Estimate)>> {
    check_samples(set.len())?;
    if delta_grid.is_empty() {
        return Err(Error::InvalidParameter("delta grid must be non-empty".into()));
    }
    if let Some(bad) = delta_grid.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {bad}")));
    }
    let outputs: Vec<Signal> = set.pairs.par_iter().map(|p| d.denoise(&p.noisy)).collect::<Result<_>>()?;
    delta_grid
        .iter()
        .map(|&delta| {
            let u = 1.0 / (delta * delta);
            let losses: Vec<f64> = set
                .pairs
                .par_iter()
                .zip(&outputs)
                .map(|(p, dy)| p.noisy.lincomb(1.0 - u, dy, u).distance(&p.clean).powi(2))
                .collect();
            let (value, stderr) = mean_and_stderr(&losses);
            Ok((delta, L2Estimate { value, stderr, samples: set.len(), seed: set.seed }))
        })
        .collect()
}

pub fn delta_sweep<D: Denoise + ?Sized>(
    d: &D,
    prior: &GmmPrior,
    sigma: f64,
    delta_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, L2Estimate)>> {
    check_samples(samples)?;
    delta_sweep_on_samples(d, &prior.sample_pairs(sigma, samples, seed)?, delta_grid)
}

/// Grid value with the smallest loss.
pub fn sweep_argmin(sweep: &[(f64, L2Estimate)]) -> Option<f64> {
    sweep.iter().min_by(|a, b| a.1.value.total_cmp(&b.1.value)).map(|(delta, _)| *delta)
}
