//! The denoiser zoo and the scaling wrappers built on top of it.
//!
//! Tweedie scaling `D_delta = Id + (D - Id) / delta^2` is evaluated in its
//! interpolation form `(1 - 1/delta^2) y + D(y) / delta^2`, which is exact at
//! `delta = 1`. Homogeneous scaling is `D_delta(y) = D(delta y) / delta`.
//! Either can be followed by the rescaling `gamma(1/delta^2) = delta^2 / (1 + delta^2)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::GmmPrior;
use crate::signal::Signal;

/// Slack allowed between a pairwise Lipschitz estimate and an exact bound.
pub const LIPSCHITZ_EXACT_SLACK: f64 = 1e-8;

/// A map `R^n -> R^n` used as a denoiser.
pub trait Denoise: Sync {
    fn dim(&self) -> usize;

    fn denoise(&self, y: &Signal) -> Result<Signal>;

    /// `(W, b)` with `D(y) = W y + b`, for denoisers that are affine.
    fn affine_parts(&self) -> Option<(DMatrix<f64>, Signal)> {
        None
    }

    /// Exact Lipschitz constant when it is available in closed form.
    fn exact_lipschitz(&self) -> Option<f64> {
        self.affine_parts().map(|(w, _)| spectral_norm(&w))
    }
}

pub fn spectral_norm(w: &DMatrix<f64>) -> f64 {
    w.singular_values().iter().copied().fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Denoiser {
    /// `E[X | Y]` for the prior at noise level `sigma`.
    ExactMmse {
        prior: Arc<GmmPrior>,
        sigma: f64,
    },
    /// MMSE formula at `sigma_train`, applied to data at `sigma_eval`.
    MismatchedMmse {
        prior: Arc<GmmPrior>,
        sigma_train: f64,
        sigma_eval: f64,
    },
    /// `alpha * y`; `alpha = 1` is the identity.
    Shrinkage {
        alpha: f64,
        dim: usize,
    },
    Affine {
        weight: DMatrix<f64>,
        bias: Signal,
    },
    /// `factor * base(y)`, used to make a base strictly contractive.
    Contracted {
        base: Box<Denoiser>,
        factor: f64,
    },
}

impl Denoiser {
    pub fn exact_mmse(prior: Arc<GmmPrior>, sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        Ok(Denoiser::ExactMmse { prior, sigma })
    }

    pub fn mismatched_mmse(prior: Arc<GmmPrior>, sigma_train: f64, sigma_eval: f64) -> Result<Self> {
        positive("sigma_train", sigma_train)?;
        positive("sigma_eval", sigma_eval)?;
        Ok(Denoiser::MismatchedMmse { prior, sigma_train, sigma_eval })
    }

    pub fn shrinkage(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "shrinkage needs alpha in (0, 1] and dim >= 1, got alpha {alpha}, dim {dim}"
            )));
        }
        Ok(Denoiser::Shrinkage { alpha, dim })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::shrinkage(1.0, dim)
    }

    pub fn affine(weight: DMatrix<f64>, bias: Signal) -> Result<Self> {
        if !weight.is_square() || weight.nrows() != bias.dim() {
            return Err(Error::InvalidParameter(format!(
                "affine denoiser needs an n x n weight matching bias dim {}, got {}x{}",
                bias.dim(),
                weight.nrows(),
                weight.ncols()
            )));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("affine weight must be finite".into()));
        }
        Ok(Denoiser::Affine { weight, bias })
    }

    pub fn contracted(base: Denoiser, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidParameter(format!("contraction factor must be in (0, 1], got {factor}")));
        }
        Ok(Denoiser::Contracted { base: Box::new(base), factor })
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")))
    }
}

impl Denoise for Denoiser {
    fn dim(&self) -> usize {
        match self {
            Denoiser::ExactMmse { prior, .. } | Denoiser::MismatchedMmse { prior, .. } => prior.dim(),
            Denoiser::Shrinkage { dim, .. } => *dim,
            Denoiser::Affine { bias, .. } => bias.dim(),
            Denoiser::Contracted { base, .. } => base.dim(),
        }
    }

    fn denoise(&self, y: &Signal) -> Result<Signal> {
        y.check_dim(self.dim())?;
        match self {
            Denoiser::ExactMmse { prior, sigma } => prior.mmse_denoise(*sigma, y),
            Denoiser::MismatchedMmse { prior, sigma_train, .. } => prior.mmse_denoise(*sigma_train, y),
            Denoiser::Shrinkage { alpha, .. } => Ok(y.scale(*alpha)),
            Denoiser::Affine { weight, bias } => {
                let wy = weight * DVector::from_column_slice(y.as_slice());
                Ok(Signal::from_vec(wy.as_slice().to_vec()).add(bias))
            }
            Denoiser::Contracted { base, factor } => Ok(base.denoise(y)?.scale(*factor)),
        }
    }

    fn affine_parts(&self) -> Option<(DMatrix<f64>, Signal)> {
        let n = self.dim();
        match self {
            Denoiser::Shrinkage { alpha, .. } => Some((DMatrix::identity(n, n) * *alpha, Signal::zeros(n))),
            Denoiser::Affine { weight, bias } => Some((weight.clone(), bias.clone())),
            Denoiser::Contracted { base, factor } => base.affine_parts().map(|(w, b)| (w * *factor, b.scale(*factor))),
            // A single Gaussian component gives the Wiener filter.
            Denoiser::ExactMmse { prior, sigma } | Denoiser::MismatchedMmse { prior, sigma_train: sigma, .. }
                if prior.components() == 1 =>
            {
                let v = prior.variances()[0];
                let s2 = sigma * sigma;
                let gain = v / (v + s2);
                let bias = prior.means()[0].scale(s2 / (v + s2));
                Some((DMatrix::identity(n, n) * gain, bias))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Tweedie,
    Homogeneous,
}

/// `gamma(1/delta^2) = delta^2 / (1 + delta^2)`.
pub fn gamma(delta: f64) -> f64 {
    let d2 = delta * delta;
    d2 / (1.0 + d2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDenoiser {
    base: Denoiser,
    delta: f64,
    mode: ScalingMode,
    gamma_rescale: bool,
}

impl ScaledDenoiser {
    pub fn new(base: Denoiser, delta: f64, mode: ScalingMode, gamma_rescale: bool) -> Result<Self> {
        positive("delta", delta)?;
        Ok(ScaledDenoiser { base, delta, mode, gamma_rescale })
    }

    pub fn base(&self) -> &Denoiser {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mode(&self) -> ScalingMode {
        self.mode
    }

    pub fn gamma_rescale(&self) -> bool {
        self.gamma_rescale
    }

    pub fn with_gamma_rescale(mut self, on: bool) -> Self {
        self.gamma_rescale = on;
        self
    }

    fn output_factor(&self) -> f64 {
        if self.gamma_rescale {
            gamma(self.delta)
        } else {
            1.0
        }
    }
}

pub fn tweedie_scale(d: Denoiser, delta: f64) -> Result<ScaledDenoiser> {
    ScaledDenoiser::new(d, delta, ScalingMode::Tweedie, false)
}

pub fn homogeneous_scale(d: Denoiser, delta: f64) -> Result<ScaledDenoiser> {
    ScaledDenoiser::new(d, delta, ScalingMode::Homogeneous, false)
}

impl Denoise for ScaledDenoiser {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn denoise(&self, y: &Signal) -> Result<Signal> {
        y.check_dim(self.dim())?;
        let scaled = match self.mode {
            ScalingMode::Tweedie => {
                let u = 1.0 / (self.delta * self.delta);
                y.lincomb(1.0 - u, &self.base.denoise(y)?, u)
            }
            ScalingMode::Homogeneous => self.base.denoise(&y.scale(self.delta))?.scale(1.0 / self.delta),
        };
        Ok(if self.gamma_rescale { scaled.scale(gamma(self.delta)) } else { scaled })
    }

    fn affine_parts(&self) -> Option<(DMatrix<f64>, Signal)> {
        let (w, b) = self.base.affine_parts()?;
        let n = self.dim();
        let g = self.output_factor();
        Some(match self.mode {
            ScalingMode::Tweedie => {
                let u = 1.0 / (self.delta * self.delta);
                let lin = DMatrix::identity(n, n) * (1.0 - u) + w * u;
                (lin * g, b.scale(u * g))
            }
            ScalingMode::Homogeneous => (w * g, b.scale(g / self.delta)),
        })
    }
}

/// Largest `||D(y1) - D(y2)|| / ||y1 - y2||` over all pairs of distinct
/// points. When `d` has an exact Lipschitz constant the estimate is checked
/// against it.
pub fn estimate_lipschitz<D: Denoise + ?Sized>(d: &D, points: &[Signal]) -> Result<f64> {
    for p in points {
        p.check_dim(d.dim())?;
    }
    let images = points.par_iter().map(|p| d.denoise(p)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let gap = points[i].distance(&points[j]);
            if gap == 0.0 {
                continue;
            }
            let ratio = images[i].distance(&images[j]) / gap;
            best = Some(best.map_or(ratio, |b| b.max(ratio)));
        }
    }
    let estimate = best.ok_or(Error::InsufficientPoints)?;
    if let Some(exact) = d.exact_lipschitz() {
        if estimate > exact + LIPSCHITZ_EXACT_SLACK {
            return Err(Error::LipschitzBoundViolated { estimate, exact });
        }
    }
    Ok(estimate)
}

/// JSON description of a base denoiser. `sigma_train` defaults to the
/// experiment's noise level; `mismatch` sets `sigma_train = mismatch * sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_train: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_value: Option<f64>,
    /// Wraps the base in a contraction by `1 - contraction_eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction_eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    ExactMmse,
    MismatchedMmse,
    Shrinkage,
    Affine,
}

impl DenoiserSpec {
    pub fn of_kind(kind: DenoiserKind) -> Self {
        DenoiserSpec {
            kind,
            alpha: None,
            sigma_train: None,
            mismatch: None,
            matrix: None,
            bias: None,
            bias_value: None,
            contraction_eps: None,
        }
    }

    pub fn build(&self, prior: &Arc<GmmPrior>, sigma: f64) -> Result<Denoiser> {
        let n = prior.dim();
        let base = match self.kind {
            DenoiserKind::ExactMmse => Denoiser::exact_mmse(prior.clone(), sigma)?,
            DenoiserKind::MismatchedMmse => {
                let sigma_train = match (self.sigma_train, self.mismatch) {
                    (Some(s), _) => s,
                    (None, Some(m)) => m * sigma,
                    (None, None) => {
                        return Err(Error::Config("mismatched_mmse needs `sigma_train` or `mismatch`".into()))
                    }
                };
                Denoiser::mismatched_mmse(prior.clone(), sigma_train, sigma)?
            }
            DenoiserKind::Shrinkage => {
                let alpha = self.alpha.ok_or_else(|| Error::Config("shrinkage needs `alpha`".into()))?;
                Denoiser::shrinkage(alpha, n)?
            }
            DenoiserKind::Affine => {
                let weight = match &self.matrix {
                    Some(rows) => {
                        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                            return Err(Error::Config(format!("affine `matrix` must be {n}x{n}")));
                        }
                        DMatrix::from_fn(n, n, |i, j| rows[i][j])
                    }
                    None => DMatrix::identity(n, n) * self.alpha.unwrap_or(1.0),
                };
                let bias = match (&self.bias, self.bias_value) {
                    (Some(b), _) => Signal::new(b.clone())?,
                    (None, Some(c)) => Signal::filled(n, c),
                    (None, None) => Signal::zeros(n),
                };
                Denoiser::affine(weight, bias)?
            }
        };
        match self.contraction_eps {
            Some(eps) => Denoiser::contracted(base, 1.0 - eps),
            None => Ok(base),
        }
    }
}

/// JSON description of the scaling wrapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub mode: ScalingMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub gamma_rescale: bool,
}

fn default_delta() -> f64 {
    1.0
}

impl ScalingSpec {
    pub fn apply(&self, base: Denoiser, delta: f64) -> Result<ScaledDenoiser> {
        ScaledDenoiser::new(base, delta, self.mode, self.gamma_rescale)
    }
}
