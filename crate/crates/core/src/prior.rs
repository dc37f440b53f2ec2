//! Isotropic Gaussian-mixture priors and their Gaussian-smoothed densities.
//!
//! For `p_X = sum_k w_k N(mu_k, v_k I)` the smoothed density
//! `p_sigma = p_X * N(0, sigma^2 I)` is again a mixture with variances
//! `v_k + sigma^2`, so the density, its score and the MMSE denoiser all
//! have closed forms costing `O(K n)` per evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{standard_normal_vec, stream_rng};
use crate::signal::Signal;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpec", into = "PriorSpec")]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<Signal>,
    variances: Vec<f64>,
}

/// JSON form: `{"weights": [...], "means": [[...], ...], "variances": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl TryFrom<PriorSpec> for GmmPrior {
    type Error = Error;

    fn try_from(spec: PriorSpec) -> Result<Self> {
        let means = spec.means.into_iter().map(Signal::new).collect::<Result<Vec<_>>>()?;
        GmmPrior::new(spec.weights, means, spec.variances)
    }
}

impl From<GmmPrior> for PriorSpec {
    fn from(p: GmmPrior) -> Self {
        PriorSpec {
            weights: p.weights,
            means: p.means.into_iter().map(Signal::into_vec).collect(),
            variances: p.variances,
        }
    }
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Signal>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidParameter(format!(
                "mixture needs matching non-empty weights/means/variances, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights must sum to 1, got {total}")));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("component variances must be positive".into()));
        }
        let n = means[0].dim();
        if means.iter().any(|m| m.dim() != n) {
            return Err(Error::InvalidParameter("component means differ in dimension".into()));
        }
        Ok(GmmPrior { weights, means, variances })
    }

    /// `N(mean, variance I)`.
    pub fn gaussian(mean: Signal, variance: f64) -> Result<Self> {
        GmmPrior::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Signal] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `sum_k w_k mu_k`.
    pub fn mean(&self) -> Signal {
        let mut out = Signal::zeros(self.dim());
        for (w, m) in self.weights.iter().zip(&self.means) {
            out = out.add_scaled(*w, m);
        }
        out
    }

    fn check(&self, sigma: f64, y: &Signal) -> Result<()> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        y.check_dim(self.dim())
    }

    /// Per-component `log(w_k N(y; mu_k, (v_k + sigma^2) I))`.
    fn log_terms(&self, sigma: f64, y: &Signal) -> Vec<f64> {
        let n = self.dim() as f64;
        let s2 = sigma * sigma;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), v)| {
                let s = v + s2;
                w.ln() - 0.5 * n * (LN_2PI + s.ln()) - 0.5 * y.distance(mu).powi(2) / s
            })
            .collect()
    }

    /// Softmax of the log terms; falls back to a hard assignment to the
    /// nearest component when every term underflows.
    fn responsibilities(&self, sigma: f64, y: &Signal) -> Vec<f64> {
        let terms = self.log_terms(sigma, y);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return self.hard_assignment(sigma, y);
        }
        let mut r: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
        let z: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= z);
        r
    }

    fn hard_assignment(&self, sigma: f64, y: &Signal) -> Vec<f64> {
        let s2 = sigma * sigma;
        let nearest = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(mu, v)| scaled_distance(y, mu) / (v + s2).sqrt())
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
            .0;
        let mut r = vec![0.0; self.components()];
        r[nearest] = 1.0;
        r
    }

    /// `log p_sigma(y)`; `sigma = 0` gives `log p_X(y)`.
    pub fn log_p_sigma(&self, sigma: f64, y: &Signal) -> Result<f64> {
        self.check(sigma, y)?;
        let terms = self.log_terms(sigma, y);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }

    /// `grad_y log p_sigma(y) = sum_k r_k(y) (mu_k - y) / (v_k + sigma^2)`.
    pub fn score(&self, sigma: f64, y: &Signal) -> Result<Signal> {
        self.check(sigma, y)?;
        let r = self.responsibilities(sigma, y);
        let s2 = sigma * sigma;
        let mut out = Signal::zeros(self.dim());
        for ((rk, mu), v) in r.iter().zip(&self.means).zip(&self.variances) {
            if *rk == 0.0 {
                continue;
            }
            out = out.add_scaled(rk / (v + s2), &mu.sub(y));
        }
        Ok(out)
    }

    /// Tweedie route: `D(y) = y + sigma^2 grad log p_sigma(y)`.
    pub fn mmse_denoise(&self, sigma: f64, y: &Signal) -> Result<Signal> {
        positive_sigma(sigma)?;
        let score = self.score(sigma, y)?;
        Ok(y.add_scaled(sigma * sigma, &score))
    }

    /// Posterior-mean route: `E[X | Y = y]` as the responsibility-weighted
    /// mixture of per-component Wiener estimates. Shares no code with
    /// [`GmmPrior::score`].
    pub fn posterior_mean_oracle(&self, sigma: f64, y: &Signal) -> Result<Signal> {
        positive_sigma(sigma)?;
        y.check_dim(self.dim())?;
        let s2 = sigma * sigma;
        let n = self.dim() as f64;
        let log_post: Vec<f64> = (0..self.components())
            .map(|k| {
                let s = self.variances[k] + s2;
                let d2: f64 = y.as_slice().iter().zip(self.means[k].as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
                self.weights[k].ln() - 0.5 * n * s.ln() - 0.5 * d2 / s
            })
            .collect();
        let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let post: Vec<f64> = if top.is_finite() {
            let unnorm: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = unnorm.iter().sum();
            unnorm.into_iter().map(|u| u / z).collect()
        } else {
            self.hard_assignment(sigma, y)
        };

        let mut out = vec![0.0; self.dim()];
        for ((p, v), mean) in post.iter().zip(&self.variances).zip(&self.means) {
            let gain = v / (v + s2);
            for (o, (yi, mi)) in out.iter_mut().zip(y.as_slice().iter().zip(mean.as_slice())) {
                *o += p * (mi + gain * (yi - mi));
            }
        }
        Ok(Signal::from_vec(out))
    }

    /// `count` draws of `(x, x + sigma xi)` with `x ~ p_X`, `xi ~ N(0, I)`.
    /// Sample `i` uses its own stream, so output is independent of thread count.
    pub fn sample_pairs(&self, sigma: f64, count: usize, seed: u64) -> Result<SampleSet> {
        let noise = NoiseModel::new(sigma)?;
        if count == 0 {
            return Err(Error::InvalidParameter("sample count must be positive".into()));
        }
        let pairs = (0..count as u64).into_par_iter().map(|i| self.sample_one(noise, seed, i)).collect();
        Ok(SampleSet { pairs, sigma, seed })
    }

    fn sample_one(&self, noise: NoiseModel, seed: u64, index: u64) -> SamplePair {
        let mut rng = stream_rng(seed, index);
        let u: f64 = rng.random();
        let mut k = self.components() - 1;
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let n = self.dim();
        let sd = self.variances[k].sqrt();
        let z = standard_normal_vec(&mut rng, n);
        let clean: Vec<f64> = self.means[k].as_slice().iter().zip(&z).map(|(m, zi)| m + sd * zi).collect();
        let xi = standard_normal_vec(&mut rng, n);
        let noisy = clean.iter().zip(&xi).map(|(c, e)| c + noise.sigma() * e).collect();
        SamplePair { clean: Signal::from_vec(clean), noisy: Signal::from_vec(noisy) }
    }

    /// One prior draw on a dedicated stream.
    pub fn sample_clean(&self, seed: u64, stream: u64) -> Signal {
        self.sample_one(NoiseModel { sigma: 0.0 }, seed, stream).clean
    }
}

/// Euclidean distance that does not overflow for huge entries.
fn scaled_distance(a: &Signal, b: &Signal) -> f64 {
    let diffs: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    let top = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if top == 0.0 || !top.is_finite() {
        return top;
    }
    top * diffs.iter().map(|d| (d / top).powi(2)).sum::<f64>().sqrt()
}

fn positive_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")))
    }
}

/// Additive white Gaussian noise of standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        positive_sigma(sigma)?;
        Ok(NoiseModel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub clean: Signal,
    pub noisy: Signal,
}

/// One common-random-numbers sample set, shared by every estimator that
/// compares denoisers or scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub pairs: Vec<SamplePair>,
    pub sigma: f64,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
