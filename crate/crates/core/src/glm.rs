//! The three supported regression likelihoods.
//!
//! Every observation contributes `h(eta; y)` with `eta = x . theta`. The
//! samplers only ever need `h` and its first two derivatives at scalar
//! linear predictors, plus the per-observation curvature constants that
//! bound `|h''|` and `|h'''|` uniformly in `eta`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::special::{
    ln_factorial, log_norm_cdf, mills_ratio, mills_ratio_plus, sigmoid, sigmoid_var, softplus,
};

/// `sqrt(3) / 18`, the sup of `|h'''|` for the logistic link.
pub const LOGISTIC_THIRD: f64 = 0.096_225_044_864_937_63;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Probit,
    /// Poisson counts with mean `log(1 + rate_scale * exp(eta))`.
    PoissonSoftplus {
        rate_scale: f64,
    },
}

impl ModelKind {
    pub fn poisson(rate_scale: f64) -> Result<Self> {
        if !(rate_scale > 0.0 && rate_scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "poisson rate_scale must be positive, got {rate_scale}"
            )));
        }
        Ok(ModelKind::PoissonSoftplus { rate_scale })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Probit => "probit",
            ModelKind::PoissonSoftplus { .. } => "poisson",
        }
    }

    /// Parse `logistic`, `probit`, `poisson` or `poisson:<rate>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "logistic" | "logit" => Ok(ModelKind::Logistic),
            "probit" => Ok(ModelKind::Probit),
            "poisson" => ModelKind::poisson(1.0),
            other => match other.strip_prefix("poisson:") {
                Some(rate) => ModelKind::poisson(
                    rate.parse()
                        .map_err(|_| Error::Invalid(format!("bad poisson rate '{rate}'")))?,
                ),
                None => Err(Error::Invalid(format!("unknown model '{other}'"))),
            },
        }
    }

    pub fn check_response(&self, row: usize, y: f64) -> Result<()> {
        let ok = match self {
            ModelKind::Logistic | ModelKind::Probit => y == 0.0 || y == 1.0,
            ModelKind::PoissonSoftplus { .. } => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                model: self.name(),
                row,
                value: y,
            })
        }
    }

    #[inline]
    fn poisson_shift(rate_scale: f64) -> f64 {
        if rate_scale == 1.0 {
            0.0
        } else {
            rate_scale.ln()
        }
    }
}

/// Poisson-softplus building blocks at the shifted predictor:
/// `(s, p, q)` with `s = softplus`, `p = sigmoid`, `q = p / s`.
#[inline]
fn softplus_parts(eta: f64) -> (f64, f64, f64) {
    let s = softplus(eta);
    let p = sigmoid(eta);
    let q = if s > 0.0 { p / s } else { 1.0 };
    (s, p, q)
}

/// `h(eta; y)` including the `-log(y!)` constant for Poisson.
pub fn loglik_term(model: ModelKind, eta: f64, y: f64) -> f64 {
    match model {
        ModelKind::PoissonSoftplus { .. } => loglik_core(model, eta, y) - ln_factorial(y),
        _ => loglik_core(model, eta, y),
    }
}

/// `h(eta; y)` without constants that do not depend on `eta`.
#[inline]
pub(crate) fn loglik_core(model: ModelKind, eta: f64, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => {
            if y > 0.5 {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        }
        ModelKind::Probit => {
            let t = if y > 0.5 { eta } else { -eta };
            log_norm_cdf(t)
        }
        ModelKind::PoissonSoftplus { rate_scale } => {
            let e = eta + ModelKind::poisson_shift(rate_scale);
            let s = softplus(e);
            let log_s = if s > 0.0 { s.ln() } else { e };
            if y == 0.0 {
                -s
            } else {
                y * log_s - s
            }
        }
    }
}

/// `h'(eta; y)`.
pub fn dh(model: ModelKind, eta: f64, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => y - sigmoid(eta),
        ModelKind::Probit => {
            if y > 0.5 {
                mills_ratio(eta)
            } else {
                -mills_ratio(-eta)
            }
        }
        ModelKind::PoissonSoftplus { rate_scale } => {
            let (_, p, q) = softplus_parts(eta + ModelKind::poisson_shift(rate_scale));
            y * q - p
        }
    }
}

/// `h''(eta; y)`; non-positive for all three models.
pub fn d2h(model: ModelKind, eta: f64, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => -sigmoid_var(eta),
        ModelKind::Probit => {
            let t = if y > 0.5 { eta } else { -eta };
            -mills_ratio(t) * mills_ratio_plus(t)
        }
        ModelKind::PoissonSoftplus { rate_scale } => {
            let e = eta + ModelKind::poisson_shift(rate_scale);
            let (_, p, q) = softplus_parts(e);
            y * q * (1.0 - p - q) - sigmoid_var(e)
        }
    }
}

/// `h'''(eta; y)`.
pub fn d3h(model: ModelKind, eta: f64, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => {
            let p = sigmoid(eta);
            -sigmoid_var(eta) * (1.0 - 2.0 * p)
        }
        ModelKind::Probit => {
            let (sign, t) = if y > 0.5 { (1.0, eta) } else { (-1.0, -eta) };
            let r = mills_ratio(t);
            let rp = mills_ratio_plus(t);
            sign * (r * rp * (r + rp) - r)
        }
        ModelKind::PoissonSoftplus { rate_scale } => {
            let e = eta + ModelKind::poisson_shift(rate_scale);
            let (_, p, q) = softplus_parts(e);
            let base = sigmoid_var(e) * (1.0 - 2.0 * p);
            y * q * ((1.0 - p) * (1.0 - 2.0 * p) - 3.0 * (1.0 - p) * q + 2.0 * q * q) - base
        }
    }
}

/// `M(y)`: uniform bound on `|h''(eta; y)|`.
pub fn curvature_bound(model: ModelKind, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => 0.25,
        ModelKind::Probit => 1.0,
        ModelKind::PoissonSoftplus { .. } => 0.25 + 0.168 * y,
    }
}

/// `L(y)`: uniform bound on `|h'''(eta; y)|`. The probit and Poisson values
/// are established numerically rather than analytically.
pub fn third_bound(model: ModelKind, y: f64) -> f64 {
    match model {
        ModelKind::Logistic => LOGISTIC_THIRD,
        ModelKind::Probit => 0.30,
        ModelKind::PoissonSoftplus { .. } => LOGISTIC_THIRD + 0.061 * y,
    }
}

/// Uniform bound on `|h'(eta; y)|`, the per-observation Lipschitz constant
/// used without control variates.
pub fn first_deriv_bound(model: ModelKind, y: f64) -> Result<f64> {
    match model {
        ModelKind::Logistic => Ok(1.0),
        ModelKind::PoissonSoftplus { .. } => Ok(y.max(1.0)),
        ModelKind::Probit => Err(Error::UnsupportedModel("a first-derivative bound")),
    }
}

pub fn linear_predictor(x_row: &[f64], theta: &[f64]) -> Result<f64> {
    if x_row.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: x_row.len(),
            got: theta.len(),
        });
    }
    Ok(dot(x_row, theta))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x h'(x . theta; y)`.
pub fn grad_term(x_row: &[f64], theta: &[f64], model: ModelKind, y: f64) -> Result<Vec<f64>> {
    let g = dh(model, linear_predictor(x_row, theta)?, y);
    Ok(x_row.iter().map(|x| x * g).collect())
}

/// `x x^T h''(x . theta; y)`.
pub fn hess_term(x_row: &[f64], theta: &[f64], model: ModelKind, y: f64) -> Result<DMatrix<f64>> {
    let w = d2h(model, linear_predictor(x_row, theta)?, y);
    let d = x_row.len();
    Ok(DMatrix::from_fn(d, d, |j, k| x_row[j] * x_row[k] * w))
}

/// Covariates, responses and the likelihood they are modelled with.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
    model: ModelKind,
    ln_y_fact: Vec<f64>,
}

impl Dataset {
    /// `x` is row-major `n x d`. An empty dataset (`n = 0`) is allowed and
    /// gives a flat likelihood.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize, model: ModelKind) -> Result<Self> {
        let n = y.len();
        if d == 0 {
            return Err(Error::Invalid("dataset needs d >= 1".into()));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "covariate at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        for (row, &v) in y.iter().enumerate() {
            model.check_response(row, v)?;
        }
        let ln_y_fact = match model {
            ModelKind::PoissonSoftplus { .. } => y.iter().map(|&v| ln_factorial(v)).collect(),
            _ => vec![0.0; n],
        };
        Ok(Dataset {
            x,
            y,
            n,
            d,
            model,
            ln_y_fact,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, model: ModelKind) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Dataset::new(rows.concat(), y, d, model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    /// `l_i(theta)` including normalizing constants.
    #[inline]
    pub fn loglik_i(&self, i: usize, theta: &[f64]) -> f64 {
        let eta = dot(self.row(i), theta);
        loglik_core(self.model, eta, self.y[i]) - self.ln_y_fact[i]
    }

    /// `l_i(theta') - l_i(theta)` given both linear predictors.
    #[inline]
    pub(crate) fn loglik_diff_at(&self, i: usize, eta: f64, eta_prime: f64) -> f64 {
        let y = self.y[i];
        loglik_core(self.model, eta_prime, y) - loglik_core(self.model, eta, y)
    }

    pub fn loglik(&self, theta: &[f64], exec: Execution) -> f64 {
        par::sum(self.n, exec, |i| self.loglik_i(i, theta))
    }

    /// `sum_i l_i(theta') - l_i(theta)` over the full data.
    pub fn loglik_diff(&self, theta: &[f64], theta_prime: &[f64], exec: Execution) -> f64 {
        par::sum(self.n, exec, |i| {
            let x = self.row(i);
            self.loglik_diff_at(i, dot(x, theta), dot(x, theta_prime))
        })
    }

    /// Full-data gradient of the log-likelihood.
    pub fn gradient(&self, theta: &[f64], exec: Execution) -> Vec<f64> {
        let d = self.d;
        par::fold(
            self.n,
            exec,
            || vec![0.0; d],
            |acc, i| {
                let x = self.row(i);
                let g = dh(self.model, dot(x, theta), self.y[i]);
                for (a, xj) in acc.iter_mut().zip(x) {
                    *a += g * xj;
                }
            },
            add_into,
        )
    }

    /// Full-data Hessian of the log-likelihood.
    pub fn hessian(&self, theta: &[f64], exec: Execution) -> DMatrix<f64> {
        let d = self.d;
        let flat = par::fold(
            self.n,
            exec,
            || vec![0.0; d * d],
            |acc, i| {
                let x = self.row(i);
                let w = d2h(self.model, dot(x, theta), self.y[i]);
                accumulate_outer(acc, x, w);
            },
            add_into,
        );
        symmetric_from_upper(d, &flat)
    }

    /// Rebuild with every row repeated `times` times (test helper for additivity).
    pub fn replicate(&self, times: usize) -> Dataset {
        let mut x = Vec::with_capacity(self.x.len() * times);
        let mut y = Vec::with_capacity(self.n * times);
        for _ in 0..times {
            x.extend_from_slice(&self.x);
            y.extend_from_slice(&self.y);
        }
        Dataset::new(x, y, self.d, self.model).expect("replica of a valid dataset")
    }
}

#[allow(clippy::ptr_arg)]
pub(crate) fn add_into(acc: &mut Vec<f64>, part: Vec<f64>) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += p;
    }
}

/// Add `w x x^T` into the upper triangle of a row-major `d x d` buffer.
#[inline]
pub(crate) fn accumulate_outer(acc: &mut [f64], x: &[f64], w: f64) {
    let d = x.len();
    for j in 0..d {
        let wx = w * x[j];
        if wx == 0.0 {
            continue;
        }
        let row = &mut acc[j * d..(j + 1) * d];
        for k in j..d {
            row[k] += wx * x[k];
        }
    }
}

pub(crate) fn symmetric_from_upper(d: usize, flat: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |j, k| {
        if j <= k {
            flat[j * d + k]
        } else {
            flat[k * d + j]
        }
    })
}
