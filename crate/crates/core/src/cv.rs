//! Control variates built from Taylor expansions of each log-likelihood
//! term around a fixed centre `theta_hat`.
//!
//! Only scalars are cached per observation (`x_i . theta_hat` and the first
//! two link derivatives there); the per-index control variate is rebuilt in
//! O(d) from them. The aggregate gradient and Hessian sums make the full
//! control-variate total O(d) / O(d^2) per proposal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::glm::{
    accumulate_outer, add_into, curvature_bound, d2h, dh, dot, symmetric_from_upper, third_bound,
    Dataset,
};
use crate::par::{self, Execution};

/// Order of the Taylor expansion behind the control variates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Order {
    First = 1,
    Second = 2,
}

impl Order {
    pub fn from_int(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::Invalid(format!(
                "control-variate order must be 1 or 2, got {k}"
            ))),
        }
    }

    pub fn as_int(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCache {
    pub theta_hat: Vec<f64>,
    pub eta_hat: Vec<f64>,
    pub dh_hat: Vec<f64>,
    pub d2h_hat: Vec<f64>,
    pub sum_g: Vec<f64>,
    pub sum_h: DMatrix<f64>,
    pub x_norm: Vec<f64>,
    /// `||x_i||^2 M(y_i)`
    pub c1: Vec<f64>,
    /// `||x_i||^3 L(y_i)`
    pub c2: Vec<f64>,
    pub c1_total: f64,
    pub c2_total: f64,
    pub x_maxabs: Vec<f64>,
}

impl CvCache {
    pub fn n(&self) -> usize {
        self.eta_hat.len()
    }

    pub fn d(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn weights(&self, order: Order) -> &[f64] {
        match order {
            Order::First => &self.c1,
            Order::Second => &self.c2,
        }
    }

    pub fn total(&self, order: Order) -> f64 {
        match order {
            Order::First => self.c1_total,
            Order::Second => self.c2_total,
        }
    }
}

pub fn build_cache(dataset: &Dataset, theta_hat: &[f64]) -> Result<CvCache> {
    build_cache_with(dataset, theta_hat, Execution::default())
}

pub fn build_cache_with(dataset: &Dataset, theta_hat: &[f64], exec: Execution) -> Result<CvCache> {
    let (n, d) = (dataset.n(), dataset.d());
    if theta_hat.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta_hat.len(),
        });
    }
    if theta_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta_hat".into()));
    }
    let model = dataset.model();

    let mut eta_hat = vec![0.0; n];
    par::fill(&mut eta_hat, exec, |i| dot(dataset.row(i), theta_hat));
    let mut dh_hat = vec![0.0; n];
    par::fill(&mut dh_hat, exec, |i| dh(model, eta_hat[i], dataset.y(i)));
    let mut d2h_hat = vec![0.0; n];
    par::fill(&mut d2h_hat, exec, |i| d2h(model, eta_hat[i], dataset.y(i)));
    let mut x_norm = vec![0.0; n];
    par::fill(&mut x_norm, exec, |i| {
        dot(dataset.row(i), dataset.row(i)).sqrt()
    });
    let mut x_maxabs = vec![0.0; n];
    par::fill(&mut x_maxabs, exec, |i| {
        dataset.row(i).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    });
    let c1: Vec<f64> = (0..n)
        .map(|i| x_norm[i].powi(2) * curvature_bound(model, dataset.y(i)))
        .collect();
    let c2: Vec<f64> = (0..n)
        .map(|i| x_norm[i].powi(3) * third_bound(model, dataset.y(i)))
        .collect();

    if let Some(i) = (0..n)
        .find(|&i| !(eta_hat[i].is_finite() && dh_hat[i].is_finite() && d2h_hat[i].is_finite()))
    {
        return Err(Error::NonFinite(format!(
            "link derivatives at observation {i} (eta_hat = {})",
            eta_hat[i]
        )));
    }

    // Gradient and upper-triangular Hessian sums in one pass.
    let sums = par::fold(
        n,
        exec,
        || vec![0.0; d + d * d],
        |acc, i| {
            let x = dataset.row(i);
            let (g, h) = acc.split_at_mut(d);
            for (a, xj) in g.iter_mut().zip(x) {
                *a += dh_hat[i] * xj;
            }
            accumulate_outer(h, x, d2h_hat[i]);
        },
        add_into,
    );
    let sum_g = sums[..d].to_vec();
    let sum_h = symmetric_from_upper(d, &sums[d..]);
    if sum_g.iter().chain(sum_h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient/Hessian sums".into()));
    }

    let c1_total = c1.iter().sum();
    let c2_total = c2.iter().sum();
    Ok(CvCache {
        theta_hat: theta_hat.to_vec(),
        eta_hat,
        dh_hat,
        d2h_hat,
        sum_g,
        sum_h,
        x_norm,
        c1,
        c2,
        c1_total,
        c2_total,
        x_maxabs,
    })
}

/// Per-proposal vectors shared by every index: `theta' - theta` and
/// `(theta + theta') / 2 - theta_hat`.
#[derive(Debug, Clone)]
pub struct Displacement<'a> {
    pub theta: &'a [f64],
    pub theta_prime: &'a [f64],
    pub step: Vec<f64>,
    pub mid: Vec<f64>,
}

impl<'a> Displacement<'a> {
    pub fn new(theta: &'a [f64], theta_prime: &'a [f64], theta_hat: &[f64]) -> Self {
        let step = theta_prime.iter().zip(theta).map(|(b, a)| b - a).collect();
        let mid = theta
            .iter()
            .zip(theta_prime)
            .zip(theta_hat)
            .map(|((a, b), c)| 0.5 * (a + b) - c)
            .collect();
        Displacement {
            theta,
            theta_prime,
            step,
            mid,
        }
    }
}

/// `sum_i r_i(theta, theta')` from the cached aggregates.
pub fn r_total(cache: &CvCache, theta: &[f64], theta_prime: &[f64], order: Order) -> f64 {
    let disp = Displacement::new(theta, theta_prime, &cache.theta_hat);
    r_total_disp(cache, &disp, order)
}

pub(crate) fn r_total_disp(cache: &CvCache, disp: &Displacement<'_>, order: Order) -> f64 {
    let first = dot(&disp.step, &cache.sum_g);
    match order {
        Order::First => first,
        Order::Second => {
            let d = disp.step.len();
            let mut quad = 0.0;
            for j in 0..d {
                let mut row = 0.0;
                for k in 0..d {
                    row += cache.sum_h[(j, k)] * disp.mid[k];
                }
                quad += disp.step[j] * row;
            }
            first + quad
        }
    }
}

fn check_index(cache: &CvCache, i: usize) -> Result<()> {
    if i >= cache.n() {
        return Err(Error::Invalid(format!(
            "index {i} out of range for n = {}",
            cache.n()
        )));
    }
    Ok(())
}

/// Per-index control variate `r_i(theta, theta'; theta_hat)`.
pub fn r_i(
    cache: &CvCache,
    dataset: &Dataset,
    i: usize,
    theta: &[f64],
    theta_prime: &[f64],
    order: Order,
) -> Result<f64> {
    check_index(cache, i)?;
    let disp = Displacement::new(theta, theta_prime, &cache.theta_hat);
    Ok(r_i_disp(cache, dataset.row(i), i, &disp, order))
}

#[inline]
pub(crate) fn r_i_disp(
    cache: &CvCache,
    x: &[f64],
    i: usize,
    disp: &Displacement<'_>,
    order: Order,
) -> f64 {
    let a = dot(x, &disp.step);
    match order {
        Order::First => a * cache.dh_hat[i],
        Order::Second => {
            let b = dot(x, &disp.mid);
            a * cache.dh_hat[i] + a * b * cache.d2h_hat[i]
        }
    }
}

/// Remainder `Delta_i = r_i - (l_i(theta') - l_i(theta))`.
pub fn delta_i(
    cache: &CvCache,
    dataset: &Dataset,
    i: usize,
    theta: &[f64],
    theta_prime: &[f64],
    order: Order,
) -> Result<f64> {
    check_index(cache, i)?;
    let disp = Displacement::new(theta, theta_prime, &cache.theta_hat);
    Ok(remainder(cache, dataset, i, &disp, Some(order)).value)
}

/// A remainder together with the rounding error its evaluation may carry.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Remainder {
    pub value: f64,
    pub rounding: f64,
}

/// `Delta_i` for the given proposal; `order = None` means no control variate
/// (`r_i = 0`), as used by the Lipschitz-bound sampler.
#[inline]
pub(crate) fn remainder(
    cache: &CvCache,
    dataset: &Dataset,
    i: usize,
    disp: &Displacement<'_>,
    order: Option<Order>,
) -> Remainder {
    let x = dataset.row(i);
    let eta = dot(x, disp.theta);
    let a = dot(x, &disp.step);
    let model = dataset.model();
    let y = dataset.y(i);
    let l0 = crate::glm::loglik_core(model, eta, y);
    let l1 = crate::glm::loglik_core(model, eta + a, y);
    let r = match order {
        None => 0.0,
        Some(Order::First) => a * cache.dh_hat[i],
        Some(Order::Second) => {
            let b = dot(x, &disp.mid);
            a * cache.dh_hat[i] + a * b * cache.d2h_hat[i]
        }
    };
    Remainder {
        value: r - (l1 - l0),
        rounding: 8.0 * f64::EPSILON * (l0.abs() + l1.abs() + r.abs() + eta.abs()),
    }
}
