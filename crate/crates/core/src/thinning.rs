//! Poisson-thinned subsampling of observation indices.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::bounds::BoundTable;
use crate::cv::{remainder, CvCache, Displacement};
use crate::error::{Error, Result};
use crate::glm::Dataset;

/// Relative tolerance on `|Delta_i| <= c_i M` before a run is aborted.
pub const BOUND_RTOL: f64 = 1e-9;

/// Walker/Vose alias table over non-negative weights.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
    total_weight: f64,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Invalid(
                "alias table needs at least one weight".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Invalid(format!(
                "alias weight {w} is not a finite non-negative number"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("alias weights are all zero".into()));
        }
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        for (i, &p) in prob.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        Ok(AliasTable {
            prob,
            alias,
            total_weight: total,
        })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

pub fn build_alias(weights: &[f64]) -> Result<AliasTable> {
    AliasTable::new(weights)
}

#[inline]
fn phi_unchecked(delta: f64, cm: f64, gamma: f64) -> f64 {
    let v = gamma * delta.max(0.0) + (1.0 - gamma) * (cm + delta.min(0.0));
    v.clamp(0.0, cm)
}

/// `phi = gamma max(0, Delta) + (1 - gamma)(cM + min(0, Delta))`.
pub fn phi(delta: f64, cm: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid(format!("gamma = {gamma} is outside [0, 1]")));
    }
    if !(cm >= 0.0) || !delta.is_finite() {
        return Err(Error::NonFinite(format!("phi(delta = {delta}, cM = {cm})")));
    }
    if delta.abs() > cm * (1.0 + BOUND_RTOL) {
        return Err(Error::BoundViolation {
            iteration: 0,
            index: 0,
            delta,
            bound: cm,
        });
    }
    Ok(phi_unchecked(delta.clamp(-cm, cm), cm, gamma))
}

/// `Delta_i` for the proposal, checked against `c_i M` and clamped into
/// `[-c_i M, c_i M]`. Evaluation rounding is tolerated on top of the
/// relative tolerance.
pub(crate) fn checked_delta(
    table: &BoundTable,
    cache: &CvCache,
    dataset: &Dataset,
    disp: &Displacement<'_>,
    i: usize,
    m: f64,
) -> Result<(f64, f64)> {
    let rem = remainder(cache, dataset, i, disp, table.spec.cv_order());
    let bound = table.weights[i] * m;
    if !rem.value.is_finite() {
        return Err(Error::NonFinite(format!("remainder at index {i}")));
    }
    if rem.value.abs() > bound * (1.0 + BOUND_RTOL) + rem.rounding {
        return Err(Error::BoundViolation {
            iteration: 0,
            index: i,
            delta: rem.value,
            bound,
        });
    }
    Ok((rem.value.clamp(-bound, bound), bound))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleEntry {
    pub index: usize,
    /// Retained multiplicity `s_i >= 1`.
    pub count: u64,
    pub phi: f64,
    pub phi_prime: f64,
    /// Extra Poisson rate added to both `phi` and `phi_prime`.
    pub kappa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Subsample {
    /// Raw Poisson count `B` before thinning.
    pub raw_count: u64,
    /// Sorted by index.
    pub entries: Vec<SubsampleEntry>,
    pub retained: u64,
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::NonFinite(format!("Poisson rate {rate}")));
    }
    let dist =
        Poisson::new(rate).map_err(|e| Error::Invalid(format!("Poisson rate {rate}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Draw the thinned subsample for one proposal.
///
/// `m` is the bound factor `M(theta, theta')` for `table`; the caller
/// handles `m == 0`. Each index then appears `Pois(kappa_i + phi_i)` times,
/// with `kappa_i = extra_rate_per_unit_c * c_i`.
#[allow(clippy::too_many_arguments)]
pub fn draw_subsample<R: Rng + ?Sized>(
    rng: &mut R,
    cache: &CvCache,
    dataset: &Dataset,
    table: &BoundTable,
    disp: &Displacement<'_>,
    m: f64,
    gamma: f64,
    extra_rate_per_unit_c: f64,
) -> Result<Subsample> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid(format!("gamma = {gamma} is outside [0, 1]")));
    }
    if !(extra_rate_per_unit_c >= 0.0) {
        return Err(Error::Invalid(format!(
            "extra rate {extra_rate_per_unit_c} must be >= 0"
        )));
    }
    let alias = match &table.alias {
        Some(a) if m > 0.0 => a,
        _ => return Ok(Subsample::default()),
    };
    let raw_count = poisson_count(rng, table.total * (m + extra_rate_per_unit_c))?;
    let mut draws: Vec<usize> = (0..raw_count).map(|_| alias.sample(rng)).collect();
    draws.sort_unstable();

    let mut entries = Vec::new();
    let mut retained = 0;
    let mut start = 0;
    while start < draws.len() {
        let i = draws[start];
        let end = start + draws[start..].iter().take_while(|&&j| j == i).count();
        let (delta, bound) = checked_delta(table, cache, dataset, disp, i, m)?;
        let kappa = extra_rate_per_unit_c * table.weights[i];
        let phi = phi_unchecked(delta, bound, gamma);
        let phi_prime = phi_unchecked(-delta, bound, gamma);
        let keep = (kappa + phi) / (kappa + bound);
        let count = (start..end).filter(|_| rng.random::<f64>() < keep).count() as u64;
        if count > 0 {
            entries.push(SubsampleEntry {
                index: i,
                count,
                phi,
                phi_prime,
                kappa,
            });
            retained += count;
        }
        start = end;
    }
    Ok(Subsample {
        raw_count,
        entries,
        retained,
    })
}

/// `sum_i s_i (ln(phi'_i + kappa_i) - ln(phi_i + kappa_i))`.
pub fn stage2_log_ratio(sub: &Subsample) -> f64 {
    let mut acc = 0.0;
    for e in &sub.entries {
        let num = e.phi_prime + e.kappa;
        if num <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += e.count as f64 * (num.ln() - (e.phi + e.kappa).ln());
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{BoundFamily, BoundSpec};
    use crate::cv::{build_cache, Order};
    use crate::glm::ModelKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
        let stat: f64 = observed
            .iter()
            .zip(expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        1.0 - ChiSquared::new((observed.len() - 1) as f64)
            .unwrap()
            .cdf(stat)
    }

    #[test]
    fn alias_uniform() {
        let table = build_alias(&[1.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u64; 4];
        for _ in 0..100_000 {
            counts[table.sample(&mut rng)] += 1;
        }
        assert!(chi_square_p(&counts, &[25_000.0; 4]) > 1e-3);
    }

    #[test]
    fn alias_one_to_three() {
        let table = build_alias(&[1.0, 3.0]).unwrap();
        assert_eq!(table.total_weight(), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let ones = (0..n).filter(|_| table.sample(&mut rng) == 1).count() as f64;
        let sd = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((ones - 0.75 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn alias_irregular_weights() {
        let w = [0.0, 5.0, 0.1, 2.0, 0.0, 7.3, 1e-3];
        let table = build_alias(&w).unwrap();
        let total: f64 = w.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut counts = [0u64; 7];
        for _ in 0..n {
            counts[table.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        assert_eq!(counts[4], 0);
        let obs: Vec<u64> = [1, 2, 3, 5, 6].iter().map(|&i| counts[i]).collect();
        let exp: Vec<f64> = [1, 2, 3, 5, 6]
            .iter()
            .map(|&i| n as f64 * w[i] / total)
            .collect();
        assert!(chi_square_p(&obs, &exp) > 1e-3);
    }

    #[test]
    fn alias_single_and_errors() {
        let table = build_alias(&[0.0, 0.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..1000).all(|_| table.sample(&mut rng) == 2));
        assert!(build_alias(&[0.0, 0.0]).is_err());
        assert!(build_alias(&[]).is_err());
        assert!(build_alias(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 1.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(phi(-0.3, 1.0, 0.0).unwrap(), 0.7);
        assert_relative_eq!(phi(0.3, 1.0, 1.0).unwrap(), 0.3);
        assert!(phi(1.1, 1.0, 0.0).unwrap_err().is_bound_violation());
        assert!(phi(1.0 + 1e-12, 1.0, 0.0).is_ok());
        assert!(phi(0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn phi_range_and_antisymmetry() {
        for g in 0..=10 {
            let gamma = g as f64 / 10.0;
            for k in -20..=20 {
                let cm = 1.7;
                let delta = cm * k as f64 / 20.0;
                let a = phi(delta, cm, gamma).unwrap();
                let b = phi(-delta, cm, gamma).unwrap();
                assert!((0.0..=cm).contains(&a));
                assert!((a - b - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stage2_examples() {
        assert_eq!(stage2_log_ratio(&Subsample::default()), 0.0);
        let entry = SubsampleEntry {
            index: 0,
            count: 2,
            phi: 0.5,
            phi_prime: 1.0,
            kappa: 0.0,
        };
        let sub = Subsample {
            raw_count: 2,
            entries: vec![entry],
            retained: 2,
        };
        assert_relative_eq!(stage2_log_ratio(&sub), 2.0 * 2f64.ln());
        let sub = Subsample {
            entries: vec![SubsampleEntry {
                phi_prime: 0.0,
                ..entry
            }],
            ..sub
        };
        assert_eq!(stage2_log_ratio(&sub), f64::NEG_INFINITY);
    }

    fn toy(n: usize) -> (Dataset, CvCache) {
        let x: Vec<f64> = (0..n)
            .flat_map(|i| [1.0, (i as f64 * 0.37).sin()])
            .collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let ds = Dataset::new(x, y, 2, ModelKind::Logistic).unwrap();
        let cache = build_cache(&ds, &[0.1, -0.2]).unwrap();
        (ds, cache)
    }

    #[test]
    fn empty_when_factor_is_zero() {
        let (ds, cache) = toy(5);
        let table =
            BoundTable::new(BoundSpec::new(BoundFamily::MhSs, Order::First), &cache, &ds).unwrap();
        let th = [0.3, 0.3];
        let disp = Displacement::new(&th, &th, &cache.theta_hat);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sub = draw_subsample(&mut rng, &cache, &ds, &table, &disp, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(sub, Subsample::default());
    }

    #[test]
    fn expected_raw_count_and_determinism() {
        let (ds, cache) = toy(50);
        let table = BoundTable::new(
            BoundSpec::new(BoundFamily::MhSs, Order::Second),
            &cache,
            &ds,
        )
        .unwrap();
        let a = [0.4, 0.9];
        let b = [-0.5, 0.2];
        let disp = Displacement::new(&a, &b, &cache.theta_hat);
        let m = table.factor(&a, &b, &cache.theta_hat);
        let rate = table.total * m;
        let reps = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = 0.0;
        for _ in 0..reps {
            let s = draw_subsample(&mut rng, &cache, &ds, &table, &disp, m, 0.0, 0.0).unwrap();
            assert!(s.retained <= s.raw_count);
            assert!(s.entries.iter().all(|e| e.count >= 1 && e.phi > 0.0));
            sum += s.raw_count as f64;
        }
        let se = (rate / reps as f64).sqrt();
        assert!((sum / reps as f64 - rate).abs() < 3.0 * se);

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw_subsample(&mut rng, &cache, &ds, &table, &disp, m, 0.3, 0.1).unwrap()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn never_thinned_when_phi_equals_cm() {
        // n = 1 with theta = theta_hat and a first-order bound on an intercept
        // only model: choose M so that c M = 2 and force Delta = 0 by using
        // theta' = theta.
        let ds = Dataset::new(vec![1.0], vec![1.0], 1, ModelKind::Logistic).unwrap();
        let cache = build_cache(&ds, &[0.0]).unwrap();
        let table =
            BoundTable::new(BoundSpec::new(BoundFamily::MhSs, Order::First), &cache, &ds).unwrap();
        let th = [0.0];
        let disp = Displacement::new(&th, &th, &cache.theta_hat);
        let m = 2.0 / table.weights[0];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = 10_000;
        let mut total = 0.0;
        for _ in 0..reps {
            let s = draw_subsample(&mut rng, &cache, &ds, &table, &disp, m, 0.0, 0.0).unwrap();
            assert_eq!(s.retained, s.raw_count);
            total += s.retained as f64;
        }
        let se = (2.0 / reps as f64).sqrt();
        assert!((total / reps as f64 - 2.0).abs() < 3.0 * se);
    }
}
