//! Posterior mode estimation and the proposal preconditioner `V = -H^{-1}`.
//!
//! Both optimizers step along `B^{-1} g`, where `B = sum_i M(y_i) x_i x_i^T`
//! plus the prior precision is a fixed global majorizer of the negative
//! log-likelihood Hessian. `B` is factorized once; no Hessian is evaluated
//! during the iterations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{
    accumulate_outer, add_into, curvature_bound, dh, dot, symmetric_from_upper, Dataset,
};
use crate::par::{self, Execution};
use crate::samplers::Prior;

const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    FullGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFitConfig {
    pub method: Method,
    pub steps: usize,
    pub minibatch: usize,
    pub step0: f64,
    /// `step_t = step0 / (1 + decay t)`.
    pub decay: f64,
    pub seed: u64,
    /// Gradient-norm target for `FullGradient`, which also starts its step
    /// length search at `max(step0, 1)`.
    pub tolerance: f64,
    pub prior: Prior,
}

impl ModeFitConfig {
    pub fn full_gradient() -> Self {
        ModeFitConfig {
            method: Method::FullGradient,
            steps: 10_000,
            minibatch: 128,
            step0: 1.0,
            decay: 0.0,
            seed: 0,
            tolerance: 1e-8,
            prior: Prior::Flat,
        }
    }

    /// Defaults sized to the data: 50 passes' worth of minibatches, final
    /// step one hundredth of the first.
    pub fn sgd(n: usize) -> Self {
        let minibatch = n.clamp(1, 128);
        let steps = (50 * n / 128).max(1);
        ModeFitConfig {
            method: Method::Sgd,
            steps,
            minibatch,
            step0: 0.5,
            decay: 99.0 / steps as f64,
            seed: 0,
            tolerance: 1e-8,
            prior: Prior::Flat,
        }
    }

    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = prior;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        self.prior.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("mode fit needs at least one step".into()));
        }
        if !(self.tolerance > 0.0) || !(self.step0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::Config(
                "tolerance and step0 must be positive, decay non-negative".into(),
            ));
        }
        if self.method == Method::Sgd && (self.minibatch == 0 || self.minibatch > n) {
            return Err(Error::Config(format!(
                "minibatch {} must lie in 1..={n}",
                self.minibatch
            )));
        }
        Ok(())
    }
}

/// Proposal covariance and its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub v: DMatrix<f64>,
    pub chol: DMatrix<f64>,
}

/// Cholesky factor with escalating diagonal jitter.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let d = a.nrows().max(1) as f64;
    let scale = (a.trace() / d).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-4 * scale * (1.0 + 1e-12) {
        let mut b = a.clone();
        for i in 0..a.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        jitter: jitter / 10.0,
    })
}

/// Log-posterior Hessian at `theta`.
pub fn hessian_at(dataset: &Dataset, prior: &Prior, theta: &[f64]) -> DMatrix<f64> {
    let mut h = dataset.hessian(theta, Execution::default());
    let p = prior.hessian_diag();
    for i in 0..h.nrows() {
        h[(i, i)] += p;
    }
    h
}

/// `V = -H^{-1}` and its Cholesky factor.
pub fn preconditioner(h: &DMatrix<f64>) -> Result<Preconditioner> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: h.ncols(),
        });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian".into()));
    }
    let neg = -h;
    let v = cholesky_jittered(&neg)?.inverse();
    let v = (&v + v.transpose()) * 0.5;
    let chol = cholesky_jittered(&v)?.l();
    Ok(Preconditioner { v, chol })
}

fn log_posterior(dataset: &Dataset, prior: &Prior, theta: &[f64]) -> f64 {
    dataset.loglik(theta, Execution::default()) + prior.log_density(theta)
}

fn posterior_gradient(dataset: &Dataset, prior: &Prior, theta: &[f64]) -> Vec<f64> {
    let mut g = dataset.gradient(theta, Execution::default());
    for (a, b) in g.iter_mut().zip(prior.gradient(theta)) {
        *a += b;
    }
    g
}

/// `sum_i M(y_i) x_i x_i^T - prior Hessian`, scaled by `scale`.
fn majorizer(dataset: &Dataset, prior: &Prior, scale: f64) -> Result<Cholesky<f64, Dyn>> {
    let d = dataset.d();
    let model = dataset.model();
    let flat = par::fold(
        dataset.n(),
        Execution::default(),
        || vec![0.0; d * d],
        |acc, i| accumulate_outer(acc, dataset.row(i), curvature_bound(model, dataset.y(i))),
        add_into,
    );
    let mut b = symmetric_from_upper(d, &flat);
    for i in 0..d {
        b[(i, i)] -= prior.hessian_diag();
    }
    cholesky_jittered(&(b * scale))
}

fn solve(chol: &Cholesky<f64, Dyn>, g: &[f64]) -> Vec<f64> {
    chol.solve(&DVector::from_column_slice(g))
        .as_slice()
        .to_vec()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn fit_mode(dataset: &Dataset, config: &ModeFitConfig) -> Result<Vec<f64>> {
    config.validate(dataset.n())?;
    match config.method {
        Method::FullGradient => full_gradient(dataset, config),
        Method::Sgd => sgd(dataset, config),
    }
}

fn full_gradient(dataset: &Dataset, config: &ModeFitConfig) -> Result<Vec<f64>> {
    let prior = &config.prior;
    let d = dataset.d();
    let chol = majorizer(dataset, prior, 1.0)?;
    let mut theta = vec![0.0; d];
    let mut f = log_posterior(dataset, prior, &theta);
    let mut g = posterior_gradient(dataset, prior, &theta);
    let mut t = config.step0.max(1.0);
    for step in 0..config.steps {
        let gn = norm(&g);
        if !gn.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {step}")));
        }
        if gn <= config.tolerance {
            return Ok(theta);
        }
        let dir = solve(&chol, &g);
        let slope = dot(&dir, &g);
        // A unit step never decreases the objective because `B` majorizes the
        // curvature. Longer steps are tried first and kept if they pass Armijo.
        let mut next = None;
        while t > 1.0 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fc = log_posterior(dataset, prior, &cand);
            if fc.is_finite() && fc >= f + 1e-4 * t * slope {
                next = Some((cand, fc));
                break;
            }
            t = (t * 0.5).max(1.0);
        }
        let (cand, fc) = next.unwrap_or_else(|| {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let fc = log_posterior(dataset, prior, &cand);
            (cand, fc)
        });
        if !fc.is_finite() {
            return Err(Error::NonFinite(format!("log posterior at step {step}")));
        }
        theta = cand;
        f = fc;
        let nrm = norm(&theta);
        if nrm > DIVERGENCE_NORM {
            return Err(Error::Diverged {
                steps: step + 1,
                norm: nrm,
            });
        }
        g = posterior_gradient(dataset, prior, &theta);
        t = (t * 2.0).min(64.0);
    }
    let last = norm(&g);
    if last <= config.tolerance {
        Ok(theta)
    } else {
        Err(Error::NotConverged {
            steps: config.steps,
            tolerance: config.tolerance,
            last,
        })
    }
}

fn sgd(dataset: &Dataset, config: &ModeFitConfig) -> Result<Vec<f64>> {
    let n = dataset.n();
    let d = dataset.d();
    let prior = &config.prior;
    let model = dataset.model();
    let chol = majorizer(dataset, prior, 1.0 / n as f64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut theta = vec![0.0; d];
    let b = config.minibatch;
    for t in 0..config.steps {
        let mut g = vec![0.0; d];
        for _ in 0..b {
            if pos == n {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let i = order[pos];
            pos += 1;
            let x = dataset.row(i);
            let w = dh(model, dot(x, &theta), dataset.y(i)) / b as f64;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += w * xj;
            }
        }
        for (gj, pj) in g.iter_mut().zip(prior.gradient(&theta)) {
            *gj += pj / n as f64;
        }
        let dir = solve(&chol, &g);
        let rate = config.step0 / (1.0 + config.decay * t as f64);
        for (th, dj) in theta.iter_mut().zip(&dir) {
            *th += rate * dj;
        }
        let nrm = norm(&theta);
        if !nrm.is_finite() || nrm > DIVERGENCE_NORM {
            return Err(Error::Diverged {
                steps: t + 1,
                norm: nrm,
            });
        }
    }
    Ok(theta)
}
