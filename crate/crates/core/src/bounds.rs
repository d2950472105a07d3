//! Global factors `M(theta, theta')` for the three remainder-bound families.
//!
//! Each family bounds `|Delta_i| <= c_i * M(theta, theta')` with per-index
//! weights `c_i` fixed at start-up and a factor computed once per proposal
//! in O(d):
//!
//! * `MhSs`: covariate-norm bounds sharpened by the `D_k(omega)` factor.
//! * `Smh`: l1-norm bounds with coordinate-wise derivative maxima. Only the
//!   logistic constants are published; probit and Poisson reuse `M(y)`/`L(y)`
//!   through the same coordinate-wise argument.
//! * `Tuna`: Lipschitz bounds without control variates.

use serde::{Deserialize, Serialize};

use crate::cv::{CvCache, Order};
use crate::error::{Error, Result};
use crate::glm::{curvature_bound, dot, first_deriv_bound, third_bound, Dataset};
use crate::thinning::AliasTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundFamily {
    MhSs,
    Smh,
    Tuna,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub family: BoundFamily,
    /// Ignored for [`BoundFamily::Tuna`].
    pub order: Order,
}

impl BoundSpec {
    pub fn new(family: BoundFamily, order: Order) -> Self {
        BoundSpec { family, order }
    }

    /// Control-variate order used for the remainder, `None` when `r_i = 0`.
    pub fn cv_order(&self) -> Option<Order> {
        match self.family {
            BoundFamily::Tuna => None,
            _ => Some(self.order),
        }
    }
}

/// Sharpening factor over Cauchy-Schwarz for `|u.x|^k |v.x|`.
pub fn dk_factor(k: u32, omega: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::Invalid("D_k needs k >= 1".into()));
    }
    let w = omega.abs().min(1.0);
    let kf = k as f64;
    let half_km1 = 0.5 * (kf - 1.0);
    let ck = (kf + half_km1 * half_km1 * w * w).sqrt() - half_km1 * w;
    let e = 0.5 * (kf + 1.0);
    Ok((kf + w * ck).powf(e) / (ck * (kf + 1.0).powf(e)))
}

#[inline]
fn d1(omega: f64) -> f64 {
    0.5 * (1.0 + omega.abs().min(1.0))
}

#[inline]
fn d2(omega: f64) -> f64 {
    let w = omega.abs().min(1.0);
    let ck = (2.0 + 0.25 * w * w).sqrt() - 0.5 * w;
    (2.0 + w * ck).powf(1.5) / (ck * 3f64.powf(1.5))
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`; zero when
/// either vector is (numerically) zero.
pub fn omega_of(u: &[f64], v: &[f64]) -> f64 {
    let nu = norm2(u);
    let nv = norm2(v);
    if nu < 1e-300 || nv < 1e-300 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Theta-dependent part of the MH-SS bound; the covariate norm and the
/// curvature constant live in the weights.
pub fn mhss_bound_factor(
    theta: &[f64],
    theta_prime: &[f64],
    theta_hat: &[f64],
    order: Order,
) -> f64 {
    let step = diff(theta_prime, theta);
    let u = diff(theta, theta_hat);
    let up = diff(theta_prime, theta_hat);
    let (ns, nu, nup) = (norm2(&step), norm2(&u), norm2(&up));
    if ns == 0.0 {
        return 0.0;
    }
    let w = omega_of(&u, &step);
    let wp = omega_of(&up, &step);
    match order {
        Order::First => ns * (nu * d1(w)).max(nup * d1(wp)),
        Order::Second => 0.5 * ns * (ns * ns / 6.0 + nu * nu * d2(w) + nup * nup * d2(wp)),
    }
}

/// l1-norm factor of the SMH bounds.
pub fn smh_factor(theta: &[f64], theta_prime: &[f64], theta_hat: &[f64], order: Order) -> f64 {
    let a = norm1(&diff(theta, theta_hat));
    let b = norm1(&diff(theta_prime, theta_hat));
    if theta == theta_prime {
        return 0.0;
    }
    match order {
        Order::First => 0.5 * (a * a + b * b),
        Order::Second => (a.powi(3) + b.powi(3)) / 6.0,
    }
}

/// SMH per-index weights: `M(y_i) max_j x_ij^2` or `L(y_i) max_j |x_ij|^3`.
pub fn smh_weights(cache: &CvCache, dataset: &Dataset, order: Order) -> Vec<f64> {
    let model = dataset.model();
    (0..dataset.n())
        .map(|i| {
            let m = cache.x_maxabs[i];
            match order {
                Order::First => curvature_bound(model, dataset.y(i)) * m * m,
                Order::Second => third_bound(model, dataset.y(i)) * m * m * m,
            }
        })
        .collect()
}

pub fn smh_bound(
    theta: &[f64],
    theta_prime: &[f64],
    theta_hat: &[f64],
    order: Order,
    cache: &CvCache,
    dataset: &Dataset,
) -> (Vec<f64>, f64) {
    (
        smh_weights(cache, dataset, order),
        smh_factor(theta, theta_prime, theta_hat, order),
    )
}

pub fn tuna_weights(cache: &CvCache, dataset: &Dataset) -> Result<Vec<f64>> {
    let model = dataset.model();
    (0..dataset.n())
        .map(|i| Ok(cache.x_norm[i] * first_deriv_bound(model, dataset.y(i))?))
        .collect()
}

pub fn tuna_factor(theta: &[f64], theta_prime: &[f64]) -> f64 {
    norm2(&diff(theta_prime, theta))
}

pub fn tuna_bound(
    theta: &[f64],
    theta_prime: &[f64],
    cache: &CvCache,
    dataset: &Dataset,
) -> Result<(Vec<f64>, f64)> {
    Ok((
        tuna_weights(cache, dataset)?,
        tuna_factor(theta, theta_prime),
    ))
}

/// Weights, their total and the alias table for one bound family, built
/// once per chain.
#[derive(Debug, Clone)]
pub struct BoundTable {
    pub spec: BoundSpec,
    pub weights: Vec<f64>,
    pub total: f64,
    /// `None` when every weight is zero (no index can ever be drawn).
    pub alias: Option<AliasTable>,
}

impl BoundTable {
    pub fn new(spec: BoundSpec, cache: &CvCache, dataset: &Dataset) -> Result<Self> {
        let weights = match spec.family {
            BoundFamily::MhSs => cache.weights(spec.order).to_vec(),
            BoundFamily::Smh => smh_weights(cache, dataset, spec.order),
            BoundFamily::Tuna => tuna_weights(cache, dataset)?,
        };
        let total: f64 = weights.iter().sum();
        let alias = if total > 0.0 {
            Some(AliasTable::new(&weights)?)
        } else {
            None
        };
        Ok(BoundTable {
            spec,
            weights,
            total,
            alias,
        })
    }

    pub fn factor(&self, theta: &[f64], theta_prime: &[f64], theta_hat: &[f64]) -> f64 {
        match self.spec.family {
            BoundFamily::MhSs => mhss_bound_factor(theta, theta_prime, theta_hat, self.spec.order),
            BoundFamily::Smh => smh_factor(theta, theta_prime, theta_hat, self.spec.order),
            BoundFamily::Tuna => tuna_factor(theta, theta_prime),
        }
    }
}
