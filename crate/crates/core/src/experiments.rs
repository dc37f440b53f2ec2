//! Desk-scale experiment protocols: the δ sweep over a family of imperfect
//! denoisers, stability of PnP fixed points under vanishing measurement
//! noise, convergent regularisation along a δ grid, and the Lipschitz table.
//!
//! Grid points run as independent rayon tasks. Records are sorted before
//! output, so the number of workers never changes an artifact.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{delta_opt_on_samples, delta_sweep_on_samples, sweep_argmin, DEFAULT_SAMPLES};
use crate::denoiser::{estimate_lipschitz, Denoise, DenoiserKind, DenoiserSpec, ScalingMode, ScalingSpec};
use crate::error::{Error, Result};
use crate::linop::{ForwardOperator, OperatorSpec};
use crate::prior::GmmPrior;
use crate::random::{standard_normal_signal, streams};
use crate::signal::Signal;
use crate::solver::{pnp_pgd, AffinePnp, PnpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    DeltaSweep,
    Stability,
    ConvReg,
    Lipschitz,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 4] =
        [ExperimentName::DeltaSweep, ExperimentName::Stability, ExperimentName::ConvReg, ExperimentName::Lipschitz];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::DeltaSweep => "delta-sweep",
            ExperimentName::Stability => "stability",
            ExperimentName::ConvReg => "conv-reg",
            ExperimentName::Lipschitz => "lipschitz",
        }
    }
}

impl std::fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = ExperimentName::ALL.iter().map(|n| n.as_str()).collect();
            Error::Config(format!("unknown experiment `{s}`; valid names: {}", valid.join(", ")))
        })
    }
}

/// Experiment configuration as written by a user. Every field is optional;
/// [`ExperimentSpec::resolve`] fills the per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<ExperimentName>,
    /// Signal dimension for generated priors; ignored when `prior` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GmmPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<DenoiserSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<PnpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Point-cloud size for the Lipschitz table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Draw a fresh noise vector per δ in conv-reg instead of reusing one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_noise: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A spec with every default applied. Serializes to JSON that parses back
/// as an [`ExperimentSpec`] resolving to the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSpec {
    pub name: ExperimentName,
    pub prior: GmmPrior,
    pub operator: OperatorSpec,
    pub denoiser: DenoiserSpec,
    pub scaling: ScalingSpec,
    pub sigma: f64,
    pub delta_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub mismatch_grid: Vec<f64>,
    pub solver: PnpConfig,
    pub samples: usize,
    pub points: usize,
    pub resample_noise: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

pub const DEFAULT_SIGMA_GRID: [f64; 8] = [0.01, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
pub const DEFAULT_STABILITY_DELTA: f64 = 1.09;
pub const DEFAULT_CONTRACTION_EPS: f64 = 1e-3;

/// `count` points evenly spaced in log scale over `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| if i + 1 == count { hi } else { (a + (b - a) * i as f64 / (count - 1) as f64).exp() }).collect()
}

/// Three-component mixture with smooth, phase-shifted cosine means at
/// pairwise squared distance about 1 and variances 0.2 to 0.3. Mild enough
/// for its MMSE denoiser to stay close to non-expansive at `sigma = 0.1`.
pub fn default_prior(dim: usize) -> Result<GmmPrior> {
    if dim == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    let amplitude = (2.0 / (3.0 * dim as f64)).sqrt();
    let means = (0..3)
        .map(|k| {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            Signal::new(
                (0..dim)
                    .map(|i| amplitude * (2.0 * std::f64::consts::PI * i as f64 / dim as f64 + phase).cos())
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GmmPrior::new(vec![0.3, 0.4, 0.3], means, vec![0.2, 0.25, 0.3])
}

impl ExperimentSpec {
    pub fn for_experiment(name: ExperimentName) -> Self {
        ExperimentSpec { name: Some(name), ..Self::default() }
    }

    pub fn resolve(&self) -> Result<ResolvedSpec> {
        let name = self.name.ok_or_else(|| Error::Config("missing field `name`".into()))?;
        let seed = self.seed.unwrap_or(0);
        let prior = match (&self.prior, self.dim) {
            (Some(p), Some(d)) if p.dim() != d => {
                return Err(Error::Config(format!("`dim` {d} disagrees with the prior's dimension {}", p.dim())))
            }
            (Some(p), _) => p.clone(),
            (None, dim) => {
                let dim = dim.unwrap_or(match name {
                    ExperimentName::DeltaSweep | ExperimentName::Lipschitz => 4,
                    ExperimentName::Stability => 16,
                    ExperimentName::ConvReg => 64,
                });
                match name {
                    ExperimentName::Lipschitz => GmmPrior::gaussian(Signal::zeros(dim.max(1)), 1.0)?,
                    _ => default_prior(dim)?,
                }
            }
        };
        let n = prior.dim();
        let operator = self.operator.clone().unwrap_or_else(|| match name {
            ExperimentName::Stability | ExperimentName::ConvReg => OperatorSpec::mask(n, 0.2, seed),
            _ => OperatorSpec::identity(n),
        });
        let denoiser = self.denoiser.clone().unwrap_or_else(|| match name {
            ExperimentName::DeltaSweep => DenoiserSpec::of_kind(DenoiserKind::MismatchedMmse),
            ExperimentName::Stability => DenoiserSpec {
                contraction_eps: Some(DEFAULT_CONTRACTION_EPS),
                ..DenoiserSpec::of_kind(DenoiserKind::ExactMmse)
            },
            _ => DenoiserSpec::of_kind(DenoiserKind::ExactMmse),
        });
        let scaling = self.scaling.clone().unwrap_or(ScalingSpec {
            mode: ScalingMode::Tweedie,
            delta: if name == ExperimentName::Stability { DEFAULT_STABILITY_DELTA } else { 1.0 },
            gamma_rescale: name == ExperimentName::ConvReg,
        });
        let delta_grid = self.delta_grid.clone().unwrap_or_else(|| match name {
            ExperimentName::DeltaSweep => logspace(0.5, 8.0, 32),
            _ => logspace(1.0, 1e3, 32),
        });
        let solver = self.solver.clone().unwrap_or_else(|| match name {
            ExperimentName::Stability => PnpConfig { max_iters: 20_000, tol: 1e-10, ..PnpConfig::default() },
            _ => PnpConfig::default(),
        });
        let resolved = ResolvedSpec {
            name,
            prior,
            operator,
            denoiser,
            scaling,
            sigma: self.sigma.unwrap_or(0.1),
            delta_grid,
            k_grid: self.k_grid.clone().unwrap_or_else(|| (0..9).map(|i| f64::from(1u32 << i)).collect()),
            sigma_grid: self.sigma_grid.clone().unwrap_or_else(|| DEFAULT_SIGMA_GRID.to_vec()),
            mismatch_grid: self.mismatch_grid.clone().unwrap_or_else(|| vec![1.0, 1.5, 2.0, 3.0]),
            solver,
            samples: self.samples.unwrap_or(DEFAULT_SAMPLES),
            points: self.points.unwrap_or(200),
            resample_noise: self.resample_noise.unwrap_or(false),
            seed,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("`{name}` must be non-empty")));
    }
    if grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("`{name}` entries must be positive and finite")));
    }
    Ok(())
}

impl ResolvedSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("`sigma` must be positive, got {}", self.sigma)));
        }
        check_grid("delta_grid", &self.delta_grid)?;
        check_grid("k_grid", &self.k_grid)?;
        check_grid("sigma_grid", &self.sigma_grid)?;
        check_grid("mismatch_grid", &self.mismatch_grid)?;
        if self.samples < 2 {
            return Err(Error::Config("`samples` must be at least 2".into()));
        }
        if self.points < 2 {
            return Err(Error::Config("`points` must be at least 2".into()));
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn operator(&self) -> Result<ForwardOperator> {
        let op = self.operator.build(self.prior.dim())?;
        if op.in_dim() != self.prior.dim() {
            return Err(Error::Config(format!(
                "operator input dimension {} differs from the prior's {}",
                op.in_dim(),
                self.prior.dim()
            )));
        }
        Ok(op)
    }

    /// Ground truth `x†` and one standard normal measurement-noise vector.
    fn ground_truth_and_noise(&self, op: &ForwardOperator) -> (Signal, Signal) {
        let x = self.prior.sample_clean(self.seed, streams::GROUND_TRUTH);
        let xi = standard_normal_signal(self.seed, streams::MEASUREMENT_NOISE, op.out_dim());
        (x, xi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    /// δ, k, σ or the mismatch ratio, depending on the experiment.
    pub key: f64,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock time; kept out of CSVs unless explicitly requested.
    pub runtime_ms: f64,
}

impl ExperimentRecord {
    fn new(experiment: impl Into<String>, key: f64) -> Self {
        ExperimentRecord { experiment: experiment.into(), key, metrics: BTreeMap::new(), runtime_ms: 0.0 }
    }

    fn set(&mut self, metric: &str, value: f64) {
        self.metrics.insert(metric.to_string(), value);
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn diverged(&self) -> bool {
        self.metric("diverged") == Some(1.0)
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| a.experiment.cmp(&b.experiment).then(a.key.total_cmp(&b.key)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ResolvedSpec,
    pub records: Vec<ExperimentRecord>,
}

pub fn run_experiment(spec: &ResolvedSpec) -> Result<ExperimentOutput> {
    let mut records = match spec.name {
        ExperimentName::DeltaSweep => run_delta_sweep_experiment(spec)?,
        ExperimentName::Stability => run_stability(spec)?,
        ExperimentName::ConvReg => run_conv_reg(spec)?,
        ExperimentName::Lipschitz => run_lipschitz_table(spec)?,
    };
    sort_records(&mut records);
    Ok(ExperimentOutput { spec: spec.clone(), records })
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::Config("`workers` must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// A solve that may have diverged; divergence becomes data.
enum Solve {
    Done { x: Signal, converged: bool, iterations: usize, residual: f64 },
    Diverged { iteration: usize },
}

fn solve<D: Denoise + ?Sized>(op: &ForwardOperator, y: &Signal, d: &D, cfg: &PnpConfig) -> Result<Solve> {
    let x0 = Signal::zeros(op.in_dim());
    match pnp_pgd(op, y, d, cfg, &x0) {
        Ok(r) => Ok(Solve::Done {
            residual: r.last_residual().unwrap_or(0.0),
            x: r.x_star,
            converged: r.converged,
            iterations: r.iterations,
        }),
        Err(Error::Divergence { iteration, .. }) => Ok(Solve::Diverged { iteration }),
        Err(e) => Err(e),
    }
}

fn record_solve(rec: &mut ExperimentRecord, s: &Solve) {
    match s {
        Solve::Done { converged, iterations, residual, .. } => {
            rec.set("diverged", 0.0);
            rec.set("converged", flag(*converged));
            rec.set("iterations", *iterations as f64);
            rec.set("final_residual", *residual);
        }
        Solve::Diverged { iteration } => {
            rec.set("diverged", 1.0);
            rec.set("divergence_iteration", *iteration as f64);
        }
    }
}

/// Fixed points for `y_k = y + (sigma / k) xi` against the fixed point for `y`.
pub fn run_stability(spec: &ResolvedSpec) -> Result<Vec<ExperimentRecord>> {
    let op = spec.operator()?;
    let prior = Arc::new(spec.prior.clone());
    let base = spec.denoiser.build(&prior, spec.sigma)?;
    let d = spec.scaling.apply(base, spec.scaling.delta)?;
    let (x_true, xi) = spec.ground_truth_and_noise(&op);
    let y = op.apply(&x_true)?;

    let limit = match solve(&op, &y, &d, &spec.solver)? {
        Solve::Done { x, .. } => x,
        Solve::Diverged { iteration } => {
            return Err(Error::Divergence { iteration, norm: f64::INFINITY });
        }
    };
    // Affine scaled denoisers have an explicit linear solution map.
    let solution_map = match AffinePnp::new(&op, &d, spec.solver.tau) {
        Ok(affine) => affine.solution_map().ok(),
        Err(_) => None,
    };

    let mut records: Vec<ExperimentRecord> = spec
        .k_grid
        .par_iter()
        .map(|&k| {
            let start = Instant::now();
            let perturbation = xi.scale(spec.sigma / k);
            let y_k = y.add(&perturbation);
            let mut rec = ExperimentRecord::new(ExperimentName::Stability.as_str(), k);
            let s = solve(&op, &y_k, &d, &spec.solver)?;
            record_solve(&mut rec, &s);
            rec.set("noise_norm", perturbation.norm());
            if let Solve::Done { x, .. } = &s {
                rec.set("distance_to_limit", x.distance(&limit));
            }
            if let Some(map) = &solution_map {
                let shift = map * nalgebra::DVector::from_column_slice(perturbation.as_slice());
                rec.set("oracle_distance", shift.norm());
            }
            rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    // C = max_k k m_k, the tightest constant with m_k <= C / k on the grid.
    let c = records.iter().filter_map(|r| r.metric("distance_to_limit").map(|m| r.key * m)).fold(0.0, f64::max);
    for rec in &mut records {
        if let Some(m) = rec.metric("distance_to_limit") {
            rec.set("c_over_k", c / rec.key);
            rec.set("fit_residual", c / rec.key - m);
        }
    }
    Ok(records)
}

/// PnP reconstructions from `y_delta = y0 + (sigma / delta) xi` along the δ grid.
pub fn run_conv_reg(spec: &ResolvedSpec) -> Result<Vec<ExperimentRecord>> {
    let op = spec.operator()?;
    let prior = Arc::new(spec.prior.clone());
    let base = spec.denoiser.build(&prior, spec.sigma)?;
    let (x_true, xi) = spec.ground_truth_and_noise(&op);
    let y0 = op.apply(&x_true)?;
    let y0_norm = y0.norm();
    if y0_norm == 0.0 {
        return Err(Error::Config("noiseless measurement A x† is zero".into()));
    }

    let mut grid = spec.delta_grid.clone();
    grid.sort_by(f64::total_cmp);
    let solved: Vec<(ExperimentRecord, Option<Signal>)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let start = Instant::now();
            let noise = if spec.resample_noise {
                standard_normal_signal(spec.seed, streams::PER_GRID_NOISE + i as u64, op.out_dim())
            } else {
                xi.clone()
            };
            let y_delta = y0.add_scaled(spec.sigma / delta, &noise);
            let d = spec.scaling.apply(base.clone(), delta)?;
            let mut rec = ExperimentRecord::new(ExperimentName::ConvReg.as_str(), delta);
            let s = solve(&op, &y_delta, &d, &spec.solver)?;
            record_solve(&mut rec, &s);
            let x = match s {
                Solve::Done { x, .. } => {
                    rec.set("data_consistency", op.apply(&x)?.distance(&y0) / y0_norm);
                    rec.set("error_to_truth", x.distance(&x_true));
                    Some(x)
                }
                Solve::Diverged { .. } => None,
            };
            rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((rec, x))
        })
        .collect::<Result<_>>()?;

    let gaps: Vec<Option<f64>> = solved
        .windows(2)
        .map(|w| match (&w[0].1, &w[1].1) {
            (Some(a), Some(b)) => Some(a.distance(b)),
            _ => None,
        })
        .collect();
    Ok(solved
        .into_iter()
        .enumerate()
        .map(|(i, (mut rec, _))| {
            if let Some(Some(gap)) = gaps.get(i) {
                rec.set("iterate_gap", *gap);
            }
            rec
        })
        .collect())
}

/// Curve label for one member of the δ-sweep family.
pub fn sweep_label(mismatch: Option<f64>) -> String {
    match mismatch {
        Some(m) => format!("delta-sweep[mismatch={m:?}]"),
        None => "delta-sweep[base]".to_string(),
    }
}

pub const SWEEP_OPT_EXPERIMENT: &str = "delta-sweep-opt";
pub const SWEEP_SUMMARY_EXPERIMENT: &str = "delta-sweep-summary";

/// L² curves over the δ grid and δ_opt for a family of denoisers of graded
/// quality, all on one common sample set.
pub fn run_delta_sweep_experiment(spec: &ResolvedSpec) -> Result<Vec<ExperimentRecord>> {
    let prior = Arc::new(spec.prior.clone());
    let set = prior.sample_pairs(spec.sigma, spec.samples, spec.seed)?;
    let family: Vec<(Option<f64>, DenoiserSpec)> =
        if spec.denoiser.kind == DenoiserKind::MismatchedMmse && spec.denoiser.sigma_train.is_none() {
            spec.mismatch_grid
                .iter()
                .map(|&m| (Some(m), DenoiserSpec { mismatch: Some(m), ..spec.denoiser.clone() }))
                .collect()
        } else {
            vec![(None, spec.denoiser.clone())]
        };
    let mut grid = spec.delta_grid.clone();
    grid.sort_by(f64::total_cmp);

    let mut records = Vec::new();
    let mut estimates = Vec::new();
    for (mismatch, dspec) in &family {
        let start = Instant::now();
        let d = dspec.build(&prior, spec.sigma)?;
        let sweep = delta_sweep_on_samples(&d, &set, &grid)?;
        let est = delta_opt_on_samples(&d, &set)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let label = sweep_label(*mismatch);
        for (delta, l2) in &sweep {
            let mut rec = ExperimentRecord::new(label.clone(), *delta);
            rec.set("l2", l2.value);
            rec.set("l2_stderr", l2.stderr);
            records.push(rec);
        }
        // Second divided differences in u = 1/δ².
        let pts: Vec<(f64, f64)> = sweep.iter().map(|(dl, e)| (1.0 / (dl * dl), e.value)).collect();
        let min_curvature = pts
            .windows(3)
            .map(|w| {
                let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
                (s2 - s1) / (w[2].0 - w[0].0)
            })
            .fold(f64::INFINITY, f64::min);
        let mut rec = ExperimentRecord::new(SWEEP_OPT_EXPERIMENT, mismatch.unwrap_or(0.0));
        rec.set("delta_opt_sq", est.delta_opt_sq);
        rec.set("delta_opt_sq_stderr", est.stderr_delta_opt_sq);
        rec.set("numerator", est.numerator);
        rec.set("denominator", est.denominator);
        rec.set("argmin_delta", sweep_argmin(&sweep).unwrap_or(f64::NAN));
        rec.set("convex_in_u", flag(min_curvature >= -1e-10));
        rec.runtime_ms = elapsed;
        records.push(rec);
        estimates.push(est);
    }

    let ordered = estimates.windows(2).all(|w| {
        let se = (w[0].stderr_delta_opt_sq.powi(2) + w[1].stderr_delta_opt_sq.powi(2)).sqrt();
        w[1].delta_opt_sq - w[0].delta_opt_sq >= 3.0 * se
    });
    let mut summary = ExperimentRecord::new(SWEEP_SUMMARY_EXPERIMENT, 0.0);
    summary.set("quality_ordering", flag(ordered));
    summary.set("members", estimates.len() as f64);
    records.push(summary);
    Ok(records)
}

/// Largest pairwise Lipschitz ratio of the denoiser at each σ, on a point
/// cloud drawn from the noisy prior at that σ.
pub fn run_lipschitz_table(spec: &ResolvedSpec) -> Result<Vec<ExperimentRecord>> {
    let prior = Arc::new(spec.prior.clone());
    spec.sigma_grid
        .par_iter()
        .map(|&sigma| {
            let start = Instant::now();
            let base = spec.denoiser.build(&prior, sigma)?;
            let d = spec.scaling.apply(base, spec.scaling.delta)?;
            let cloud: Vec<Signal> =
                prior.sample_pairs(sigma, spec.points, spec.seed)?.pairs.into_iter().map(|p| p.noisy).collect();
            let lipschitz = estimate_lipschitz(&d, &cloud)?;
            let mut rec = ExperimentRecord::new(ExperimentName::Lipschitz.as_str(), sigma);
            rec.set("lipschitz_max", lipschitz);
            rec.set("non_expansive", flag(lipschitz <= 1.0));
            if let Some(exact) = d.exact_lipschitz() {
                rec.set("lipschitz_exact", exact);
            }
            rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: ExperimentName, json: &str) -> ResolvedSpec {
        let mut s: ExperimentSpec = serde_json::from_str(json).unwrap();
        s.name = Some(name);
        s.resolve().unwrap()
    }

    #[test]
    fn names_round_trip() {
        for n in ExperimentName::ALL {
            assert_eq!(n.as_str().parse::<ExperimentName>().unwrap(), n);
            let json = serde_json::to_string(&n).unwrap();
            assert_eq!(json, format!("\"{}\"", n.as_str()));
        }
        let err = "sweep".parse::<ExperimentName>().unwrap_err().to_string();
        assert!(err.contains("delta-sweep") && err.contains("lipschitz"));
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1.0, 1e3, 32);
        assert_eq!(g.len(), 32);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[31], 1e3);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn resolved_spec_round_trips_through_json() {
        for n in ExperimentName::ALL {
            let r = ExperimentSpec::for_experiment(n).resolve().unwrap();
            let json = serde_json::to_string(&r).unwrap();
            let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back.resolve().unwrap(), r);
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let bad: ExperimentSpec = serde_json::from_str(r#"{"name": "conv-reg", "delta_grid": []}"#).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        let bad: ExperimentSpec = serde_json::from_str(r#"{"name": "stability", "sigma": -1}"#).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"nmae": "x"}"#).is_err());
        assert!(matches!(ExperimentSpec::default().resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn default_prior_means_are_mildly_separated() {
        let p = default_prior(64).unwrap();
        let m = p.means();
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let d2 = m[a].distance(&m[b]).powi(2);
            assert!((d2 - 1.0).abs() < 1e-9, "{d2}");
        }
    }

    #[test]
    fn conv_reg_identity_case_is_the_perturbation() {
        let s = spec(
            ExperimentName::ConvReg,
            r#"{"dim": 8, "operator": {"kind": "identity"},
                "denoiser": {"kind": "shrinkage", "alpha": 1.0},
                "scaling": {"mode": "tweedie"},
                "delta_grid": [1, 10, 100]}"#,
        );
        let recs = run_conv_reg(&s).unwrap();
        let op = s.operator().unwrap();
        let (x, xi) = s.ground_truth_and_noise(&op);
        for r in &recs {
            let expected = s.sigma / r.key * xi.norm() / x.norm();
            let got = r.metric("data_consistency").unwrap();
            assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn unit_delta_without_gamma_is_plain_pnp() {
        let s = spec(
            ExperimentName::ConvReg,
            r#"{"dim": 16, "scaling": {"mode": "tweedie", "gamma_rescale": false}, "delta_grid": [1]}"#,
        );
        let rec = &run_conv_reg(&s).unwrap()[0];
        let op = s.operator().unwrap();
        let (x, xi) = s.ground_truth_and_noise(&op);
        let y = op.apply(&x).unwrap().add_scaled(s.sigma, &xi);
        let base = s.denoiser.build(&Arc::new(s.prior.clone()), s.sigma).unwrap();
        let plain = pnp_pgd(&op, &y, &base, &s.solver, &Signal::zeros(16)).unwrap();
        let dc = op.apply(&plain.x_star).unwrap().distance(&op.apply(&x).unwrap()) / op.apply(&x).unwrap().norm();
        assert!((rec.metric("data_consistency").unwrap() - dc).abs() <= 1e-12);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        // Homogeneous scaling of an expansive affine map blows up.
        let s = spec(
            ExperimentName::ConvReg,
            r#"{"dim": 4, "operator": {"kind": "mask", "mask_fraction": 0.5},
                "denoiser": {"kind": "affine", "alpha": 3.0, "bias_value": 1.0},
                "scaling": {"mode": "homogeneous"},
                "delta_grid": [2.0],
                "solver": {"max_iters": 1000}}"#,
        );
        let recs = run_conv_reg(&s).unwrap();
        assert!(recs[0].diverged());
        assert!(recs[0].metric("data_consistency").is_none());
    }

    #[test]
    fn lipschitz_single_gaussian_matches_wiener_gain() {
        let s = spec(ExperimentName::Lipschitz, r#"{"points": 40}"#);
        let recs = run_lipschitz_table(&s).unwrap();
        for r in &recs {
            let expected = 1.0 / (1.0 + r.key * r.key);
            assert!((r.metric("lipschitz_max").unwrap() - expected).abs() <= 1e-6);
        }
    }
}
