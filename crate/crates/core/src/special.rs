//! Numerically guarded scalar functions shared by the likelihoods.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Below this the normal CDF is evaluated through its asymptotic series.
const NORMAL_TAIL: f64 = -35.0;
const SOFTPLUS_BRANCH: f64 = 30.0;

pub fn norm_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// `sum_k (-1)^k (2k-1)!! / t^{2k}` for k >= 1, i.e. S(t) - 1 where
/// Phi(t) ~ phi(t) / (-t) * S(t) as t -> -inf.
fn mills_series_minus_one(t: f64) -> f64 {
    let inv2 = 1.0 / (t * t);
    let mut term = 1.0;
    let mut acc = 0.0;
    for k in 1..=6 {
        term *= -((2 * k - 1) as f64) * inv2;
        acc += term;
    }
    acc
}

pub fn log_norm_cdf(t: f64) -> f64 {
    if t > 0.0 {
        (-norm_cdf(-t)).ln_1p()
    } else if t >= NORMAL_TAIL {
        norm_cdf(t).ln()
    } else {
        log_norm_cdf_tail(t)
    }
}

fn log_norm_cdf_tail(t: f64) -> f64 {
    -0.5 * t * t - (-t).ln() - LN_SQRT_2PI + mills_series_minus_one(t).ln_1p()
}

fn mills_ratio_tail(t: f64) -> f64 {
    -t / (1.0 + mills_series_minus_one(t))
}

/// Inverse Mills ratio `phi(t) / Phi(t)`.
pub fn mills_ratio(t: f64) -> f64 {
    if t >= NORMAL_TAIL {
        norm_pdf(t) / norm_cdf(t)
    } else {
        mills_ratio_tail(t)
    }
}

/// `mills_ratio(t) + t`, which cancels badly in the far left tail.
pub fn mills_ratio_plus(t: f64) -> f64 {
    if t >= NORMAL_TAIL {
        mills_ratio(t) + t
    } else {
        let s1 = mills_series_minus_one(t);
        t * s1 / (1.0 + s1)
    }
}

pub fn softplus(eta: f64) -> f64 {
    if eta > SOFTPLUS_BRANCH {
        eta + (-eta).exp()
    } else {
        eta.exp().ln_1p()
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `p (1 - p)` for `p = sigmoid(eta)`, without forming `1 - p`.
pub fn sigmoid_var(eta: f64) -> f64 {
    let e = (-eta.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn ln_factorial(y: f64) -> f64 {
    libm::lgamma(y + 1.0)
}
