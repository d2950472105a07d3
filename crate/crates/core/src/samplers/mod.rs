//! Random-walk proposal, chain configuration and the chain driver.

mod mhss;
mod rwm;
mod smh;
mod tuna;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundFamily, BoundSpec, BoundTable};
use crate::cv::{r_total, CvCache, Order};
use crate::error::{Error, Result};
use crate::glm::Dataset;
use crate::modefit::Preconditioner;
use crate::par::Execution;

pub use mhss::mhss_step;
pub use rwm::rwm_step;
pub use smh::{smh_exact_log_alpha2, smh_step};
pub use tuna::tuna_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Rwm,
    Mhss1,
    Mhss2,
    Smh1,
    Smh2,
    Smh1Nb,
    Smh2Nb,
    Tuna,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Rwm,
        Algorithm::Mhss1,
        Algorithm::Mhss2,
        Algorithm::Smh1,
        Algorithm::Smh2,
        Algorithm::Smh1Nb,
        Algorithm::Smh2Nb,
        Algorithm::Tuna,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rwm => "RWM",
            Algorithm::Mhss1 => "MHSS1",
            Algorithm::Mhss2 => "MHSS2",
            Algorithm::Smh1 => "SMH1",
            Algorithm::Smh2 => "SMH2",
            Algorithm::Smh1Nb => "SMH1NB",
            Algorithm::Smh2Nb => "SMH2NB",
            Algorithm::Tuna => "TUNA",
        }
    }

    /// Accepts the canonical names case-insensitively, with or without
    /// hyphens or underscores (`mh-ss-1`, `smh_2_nb`, `tunamh`).
    pub fn parse(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_uppercase();
        if key == "TUNAMH" {
            return Ok(Algorithm::Tuna);
        }
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Algorithm::Rwm => 2.38,
            Algorithm::Mhss1 | Algorithm::Mhss2 => 1.5,
            Algorithm::Smh1 => 1.0,
            Algorithm::Smh2 => 2.0,
            Algorithm::Smh1Nb => 0.5,
            Algorithm::Smh2Nb => 1.5,
            Algorithm::Tuna => 0.05,
        }
    }

    /// Bound family and order, `None` for the full-data sampler.
    pub fn bound_spec(self) -> Option<BoundSpec> {
        use BoundFamily::*;
        let (family, order) = match self {
            Algorithm::Rwm => return None,
            Algorithm::Mhss1 => (MhSs, Order::First),
            Algorithm::Mhss2 => (MhSs, Order::Second),
            Algorithm::Smh1 => (Smh, Order::First),
            Algorithm::Smh2 => (Smh, Order::Second),
            Algorithm::Smh1Nb => (MhSs, Order::First),
            Algorithm::Smh2Nb => (MhSs, Order::Second),
            Algorithm::Tuna => (Tuna, Order::First),
        };
        Some(BoundSpec::new(family, order))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    #[default]
    Flat,
    GaussianIso {
        sigma: f64,
    },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::GaussianIso { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Config(format!("prior sigma must be positive, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match *self {
            Prior::Flat => 0.0,
            Prior::GaussianIso { sigma } => {
                -0.5 * theta.iter().map(|t| t * t).sum::<f64>() / (sigma * sigma)
            }
        }
    }

    pub fn log_ratio(&self, theta: &[f64], theta_prime: &[f64]) -> f64 {
        match self {
            Prior::Flat => 0.0,
            _ => self.log_density(theta_prime) - self.log_density(theta),
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match *self {
            Prior::Flat => vec![0.0; theta.len()],
            Prior::GaussianIso { sigma } => theta.iter().map(|t| -t / (sigma * sigma)).collect(),
        }
    }

    /// Diagonal entry of the (isotropic) prior Hessian.
    pub fn hessian_diag(&self) -> f64 {
        match *self {
            Prior::Flat => 0.0,
            Prior::GaussianIso { sigma } => -1.0 / (sigma * sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    AtMode,
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Independent rng stream under the same seed (replicates).
    #[serde(default)]
    pub stream: u64,
    pub chi: f64,
    pub prior: Prior,
    pub init: Init,
    #[serde(skip)]
    pub exec: Execution,
}

impl ChainConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        let iterations = 10_000;
        ChainConfig {
            algorithm,
            lambda: algorithm.default_lambda(),
            gamma: 0.0,
            iterations,
            burn_in: iterations / 10,
            seed: 0,
            stream: 0,
            chi: 1e-4,
            prior: Prior::Flat,
            init: Init::AtMode,
            exec: Execution::default(),
        }
    }

    /// Set the run length with the default 10% burn-in.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = iterations / 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::Config(format!(
                "chi must be non-negative, got {}",
                self.chi
            )));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        self.prior.validate()
    }
}

/// `theta' ~ N(theta, (lambda^2 / d) V)`.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub scale: f64,
    /// Lower Cholesky factor of `(lambda^2 / d) V`.
    pub chol_factor: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl Proposal {
    pub fn new(lambda: f64, pre: &Preconditioner) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let d = pre.v.nrows();
        Ok(Proposal {
            scale: lambda,
            chol_factor: &pre.chol * (lambda / (d as f64).sqrt()),
            v: pre.v.clone(),
        })
    }

    pub fn d(&self) -> usize {
        self.v.nrows()
    }
}

pub fn propose<R: Rng + ?Sized>(rng: &mut R, proposal: &Proposal, theta: &[f64]) -> Vec<f64> {
    let d = theta.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let l = &proposal.chol_factor;
    (0..d)
        .map(|i| theta[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
        .collect()
}

/// Stage-one log acceptance probability.
pub fn log_alpha1(
    cache: &CvCache,
    prior: &Prior,
    theta: &[f64],
    theta_prime: &[f64],
    order: Order,
) -> f64 {
    (prior.log_ratio(theta, theta_prime) + r_total(cache, theta, theta_prime, order)).min(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub accepted: bool,
    pub stage1_pass: bool,
    /// Raw batch size `B`, `n` for full-data evaluations, 0 after a stage-one rejection.
    pub batch: u64,
    pub full_data: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// Full-data log-likelihood at `theta`, kept by the full-data sampler.
    pub(crate) loglik: Option<f64>,
}

impl ChainState {
    pub fn new(theta: Vec<f64>) -> Self {
        ChainState {
            theta,
            loglik: None,
        }
    }
}

/// Everything a step needs besides the rng and the current state.
#[derive(Debug)]
pub struct Sampler<'a> {
    pub dataset: &'a Dataset,
    pub cache: &'a CvCache,
    pub proposal: &'a Proposal,
    pub config: &'a ChainConfig,
    pub table: Option<BoundTable>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        dataset: &'a Dataset,
        cache: &'a CvCache,
        proposal: &'a Proposal,
        config: &'a ChainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let d = dataset.d();
        for got in [cache.d(), proposal.d()] {
            if got != d {
                return Err(Error::DimensionMismatch { expected: d, got });
            }
        }
        if cache.n() != dataset.n() {
            return Err(Error::DimensionMismatch {
                expected: dataset.n(),
                got: cache.n(),
            });
        }
        let table = match config.algorithm.bound_spec() {
            Some(spec) => Some(BoundTable::new(spec, cache, dataset)?),
            None => None,
        };
        Ok(Sampler {
            dataset,
            cache,
            proposal,
            config,
            table,
        })
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        state: &mut ChainState,
    ) -> Result<StepOutcome> {
        match self.config.algorithm {
            Algorithm::Rwm => rwm_step(rng, state, self),
            Algorithm::Mhss1 | Algorithm::Mhss2 => mhss_step(rng, state, self),
            Algorithm::Smh1 | Algorithm::Smh2 | Algorithm::Smh1Nb | Algorithm::Smh2Nb => {
                smh_step(rng, state, self)
            }
            Algorithm::Tuna => tuna_step(rng, state, self),
        }
    }

    pub(crate) fn table(&self) -> &BoundTable {
        self.table
            .as_ref()
            .expect("subsampling algorithm without a bound table")
    }

    pub(crate) fn order(&self) -> Order {
        self.table().spec.order
    }
}

/// Accept when `ln u < log_alpha`; always consumes one uniform.
#[inline]
pub(crate) fn accept<R: Rng + ?Sized>(rng: &mut R, log_alpha: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_alpha.min(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub algorithm: Algorithm,
    pub d: usize,
    pub burn_in: usize,
    /// Row-major `(iterations - burn_in) x d`.
    pub samples: Vec<f64>,
    pub accept_flags: Vec<bool>,
    pub stage1_pass_flags: Vec<bool>,
    pub batch_sizes: Vec<u64>,
    pub wall_time_seconds: f64,
    pub full_data_count: usize,
}

impl ChainOutput {
    pub fn iterations(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.samples[k * self.d..(k + 1) * self.d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(j)
            .step_by(self.d)
            .copied()
            .collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        rate(&self.accept_flags)
    }

    pub fn stage1_rate(&self) -> f64 {
        rate(&self.stage1_pass_flags)
    }
}

fn rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
    }
}

pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run_chain(
    dataset: &Dataset,
    cache: &CvCache,
    proposal: &Proposal,
    config: &ChainConfig,
) -> Result<ChainOutput> {
    let sampler = Sampler::new(dataset, cache, proposal, config)?;
    let d = dataset.d();
    let start = match &config.init {
        Init::AtMode => cache.theta_hat.clone(),
        Init::Point(p) if p.len() == d => p.clone(),
        Init::Point(p) => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            })
        }
    };
    let mut state = ChainState::new(start);
    let mut rng = chain_rng(config.seed, config.stream);
    let iters = config.iterations;
    let mut out = ChainOutput {
        algorithm: config.algorithm,
        d,
        burn_in: config.burn_in,
        samples: Vec::with_capacity((iters - config.burn_in) * d),
        accept_flags: Vec::with_capacity(iters),
        stage1_pass_flags: Vec::with_capacity(iters),
        batch_sizes: Vec::with_capacity(iters),
        wall_time_seconds: 0.0,
        full_data_count: 0,
    };
    let clock = Instant::now();
    for it in 0..iters {
        let o = sampler
            .step(&mut rng, &mut state)
            .map_err(|e| e.at_iteration(it))?;
        out.accept_flags.push(o.accepted);
        out.stage1_pass_flags.push(o.stage1_pass);
        out.batch_sizes.push(o.batch);
        out.full_data_count += o.full_data as usize;
        if it >= config.burn_in {
            out.samples.extend_from_slice(&state.theta);
        }
    }
    out.wall_time_seconds = clock.elapsed().as_secs_f64();
    Ok(out)
}
