//! Fast oracle suite: each check compares a production code path against an
//! independent closed form.

use nalgebra::DMatrix;

use crate::denoiser::{tweedie_scale, Denoiser, ScaledDenoiser};
use crate::error::Result;
use crate::experiments::{default_prior, logspace};
use crate::linop::ForwardOperator;
use crate::prior::GmmPrior;
use crate::random::{standard_normal_signal, standard_normal_vec, stream_rng, streams};
use crate::signal::Signal;
use crate::solver::{averagedness_theta, compose_averaged, linear_fixed_point_oracle, pnp_pgd, PnpConfig};

pub const TWEEDIE_CHECK: &str = "tweedie-consistency";
pub const AFFINE_CHECK: &str = "affine-fixed-point-oracle";
pub const AVERAGEDNESS_CHECK: &str = "averagedness-identity";
pub const ADJOINT_CHECK: &str = "adjoint-consistency";

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelftestOptions {
    /// Added to every score evaluation in the Tweedie check. Non-zero only
    /// in mutation tests of the suite itself.
    pub score_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, limit: f64) -> CheckOutcome {
    CheckOutcome { name, passed: worst <= limit, detail: format!("max deviation {worst:.3e} (limit {limit:.0e})") }
}

/// A random affine PnP problem with a non-expansive Tweedie-scaled base:
/// square Gaussian `A`, `W` rescaled to spectral norm in `[0.5, 0.95]`,
/// `tau = 1 / ||A^T A||`.
#[derive(Debug, Clone)]
pub struct AffineInstance {
    pub op: ForwardOperator,
    pub y: Signal,
    pub denoiser: ScaledDenoiser,
    pub cfg: PnpConfig,
}

pub fn affine_instance(seed: u64, n: usize, delta: f64) -> Result<AffineInstance> {
    let mut rng = stream_rng(seed, streams::AFFINE_INSTANCE);
    let scale = 1.0 / (n as f64).sqrt();
    let a = DMatrix::from_vec(n, n, standard_normal_vec(&mut rng, n * n)) * scale;
    let w = DMatrix::from_vec(n, n, standard_normal_vec(&mut rng, n * n));
    let target: f64 = 0.5 + 0.45 * rand::Rng::random::<f64>(&mut rng);
    let w = &w * (target / crate::denoiser::spectral_norm(&w));
    let b = Signal::from_vec(standard_normal_vec(&mut rng, n));
    let y = Signal::from_vec(standard_normal_vec(&mut rng, n));
    let op = ForwardOperator::dense(a)?;
    let cfg = PnpConfig { max_iters: 200_000, tol: 1e-13, ..PnpConfig::for_operator(&op)? };
    Ok(AffineInstance { op, y, denoiser: tweedie_scale(Denoiser::affine(w, b)?, delta)?, cfg })
}

fn tweedie_check(opts: &SelftestOptions) -> Result<CheckOutcome> {
    let priors = [GmmPrior::gaussian(Signal::zeros(1), 1.0)?, default_prior(4)?, default_prior(16)?];
    let mut worst: f64 = 0.0;
    for (i, prior) in priors.iter().enumerate() {
        for (j, sigma) in [0.05, 0.3].into_iter().enumerate() {
            let set = prior.sample_pairs(sigma, 100, 1000 + (2 * i + j) as u64)?;
            for p in &set.pairs {
                let y = &p.noisy;
                let score = prior.score(sigma, y)?;
                let biased = Signal::from_vec(score.as_slice().iter().map(|s| s + opts.score_bias).collect());
                let tweedie = y.add_scaled(sigma * sigma, &biased);
                let oracle = prior.posterior_mean_oracle(sigma, y)?;
                worst = worst.max(tweedie.distance(&oracle) / (1.0 + y.norm()));
            }
        }
    }
    Ok(outcome(TWEEDIE_CHECK, worst, 1e-10))
}

fn affine_check() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for (i, d2) in [1.2f64, 2.0, 10.0].into_iter().cycle().take(9).enumerate() {
        let inst = affine_instance(i as u64, 8, d2.sqrt())?;
        let x0 = Signal::zeros(8);
        let run = pnp_pgd(&inst.op, &inst.y, &inst.denoiser, &inst.cfg, &x0)?;
        let exact = linear_fixed_point_oracle(&inst.op, &inst.y, &inst.denoiser, &inst.cfg)?;
        let rel = run.x_star.distance(&exact) / exact.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(if run.converged { rel } else { f64::INFINITY });
    }
    Ok(outcome(AFFINE_CHECK, worst, 1e-8))
}

fn averagedness_check() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for d2 in logspace(1.01, 1e6, 100) {
        let lhs = compose_averaged(1.0 / d2, 0.5)?;
        worst = worst.max((lhs - averagedness_theta(d2.sqrt())?).abs());
    }
    Ok(outcome(AVERAGEDNESS_CHECK, worst, 1e-14))
}

fn adjoint_check() -> Result<CheckOutcome> {
    let n = 12;
    let rows: Vec<Vec<f64>> = (0..7).map(|r| standard_normal_signal(5, r, n).into_vec()).collect();
    let ops = [
        ForwardOperator::identity(n)?,
        ForwardOperator::random_mask(n, 0.2, 3)?,
        ForwardOperator::convolution(vec![0.5, 0.3, -0.2], n)?,
        ForwardOperator::dense_from_rows(&rows)?,
    ];
    let mut worst: f64 = 0.0;
    for (k, op) in ops.iter().enumerate() {
        for i in 0..100u64 {
            let x = standard_normal_signal(17 + k as u64, 2 * i, op.in_dim());
            let y = standard_normal_signal(17 + k as u64, 2 * i + 1, op.out_dim());
            let lhs = op.apply(&x)?.dot(&y);
            let rhs = x.dot(&op.adjoint(&y)?);
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    Ok(outcome(ADJOINT_CHECK, worst, 1e-10))
}

type Check<'a> = Box<dyn Fn() -> Result<CheckOutcome> + 'a>;

/// Runs every check; an evaluation error counts as a failure of that check.
pub fn run_selftest(opts: &SelftestOptions) -> Vec<CheckOutcome> {
    let checks: [(&'static str, Check); 4] = [
        (TWEEDIE_CHECK, Box::new(|| tweedie_check(opts))),
        (AFFINE_CHECK, Box::new(affine_check)),
        (AVERAGEDNESS_CHECK, Box::new(averagedness_check)),
        (ADJOINT_CHECK, Box::new(adjoint_check)),
    ];
    checks
        .iter()
        .map(|(name, check)| {
            check().unwrap_or_else(|e| CheckOutcome { name, passed: false, detail: format!("error: {e}") })
        })
        .collect()
}
