//! Chain diagnostics: effective sample size, jump distances, batch means
//! and the optimal-scaling efficiency curve.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::samplers::ChainOutput;
use crate::special::norm_cdf;

/// Autocorrelations `rho_0..rho_{N-1}` via a zero-padded FFT. `None` for a
/// constant series.
pub fn autocorrelation(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 0.0) || !c0.is_finite() {
        return None;
    }
    Some(buf[..n].iter().map(|c| c.re / c0).collect())
}

/// Effective sample size with Geyer's initial monotone positive sequence,
/// clamped to `[1, N]`. A constant series gives 1.
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    let Some(rho) = autocorrelation(x) else {
        return 1.0;
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho[2 * m] + rho[2 * m + 1];
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        tau += 2.0 * gamma;
        prev = gamma;
        m += 1;
    }
    (n as f64 / tau).clamp(1.0, n as f64)
}

/// Mean squared one-step increment, averaged over coordinates. `samples` is
/// row-major with `d` columns.
pub fn msjd(samples: &[f64], d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let rows = samples.len() / d;
    if rows < 2 {
        return 0.0;
    }
    let samples = &samples[..rows * d];
    let total: f64 = samples[d..]
        .iter()
        .zip(samples)
        .map(|(next, cur)| (next - cur) * (next - cur))
        .sum();
    total / ((rows - 1) * d) as f64
}

/// Batch-means standard error of the sample mean with `batches` equal
/// batches (any remainder at the end is dropped).
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches.max(1);
    if batches < 2 || size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = x
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Batch means with `floor(sqrt(N))` batches.
pub fn batch_means_se_default(x: &[f64]) -> f64 {
    batch_means_se(x, (x.len() as f64).sqrt() as usize)
}

/// `2 lambda Phi(-lambda / 2)`, proportional to the limiting expected
/// squared jump per unit of likelihood cost.
pub fn efficiency_curve(lambda: f64) -> f64 {
    2.0 * lambda * norm_cdf(-0.5 * lambda)
}

/// Limiting acceptance rate `2 Phi(-lambda / 2)` at scale `lambda`.
pub fn limiting_acceptance(lambda: f64) -> f64 {
    2.0 * norm_cdf(-0.5 * lambda)
}

/// Maximizer of [`efficiency_curve`] on `[0.01, 10]` by golden-section search.
pub fn optimal_lambda() -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.01, 10.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (efficiency_curve(c), efficiency_curve(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = efficiency_curve(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = efficiency_curve(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetrics {
    pub algorithm: String,
    pub samples: usize,
    pub ess: Vec<f64>,
    pub ess_min: f64,
    pub ess_mean: f64,
    pub msjd: f64,
    pub acceptance_rate: f64,
    pub stage1_rate: f64,
    /// Mean raw batch size over post-burn-in iterations.
    pub mean_batch: f64,
    pub full_data_fraction: f64,
    pub wall_time_seconds: f64,
    /// `ess_mean` per second of wall time, 0 when the time is unknown.
    pub ess_per_second: f64,
    /// `ess_mean / mean_batch`, with the batch floored at one observation.
    pub ess_per_batch: f64,
}

pub fn summarize(output: &ChainOutput) -> ChainMetrics {
    summarize_labelled(output, output.algorithm.name())
}

pub fn summarize_labelled(output: &ChainOutput, label: &str) -> ChainMetrics {
    let d = output.d;
    let samples = output.n_samples();
    let ess_v: Vec<f64> = (0..d).map(|j| ess(&output.column(j))).collect();
    let ess_min = ess_v.iter().copied().fold(f64::INFINITY, f64::min);
    let ess_min = if ess_min.is_finite() { ess_min } else { 0.0 };
    let ess_mean = if d == 0 {
        0.0
    } else {
        ess_v.iter().sum::<f64>() / d as f64
    };
    let kept = &output.batch_sizes[output.burn_in.min(output.batch_sizes.len())..];
    let mean_batch = if kept.is_empty() {
        0.0
    } else {
        kept.iter().map(|&b| b as f64).sum::<f64>() / kept.len() as f64
    };
    let iters = output.iterations().max(1) as f64;
    ChainMetrics {
        algorithm: label.to_owned(),
        samples,
        ess_min,
        ess_mean,
        msjd: msjd(&output.samples, d),
        acceptance_rate: output.acceptance_rate(),
        stage1_rate: output.stage1_rate(),
        mean_batch,
        full_data_fraction: output.full_data_count as f64 / iters,
        wall_time_seconds: output.wall_time_seconds,
        ess_per_second: if output.wall_time_seconds > 0.0 {
            ess_mean / output.wall_time_seconds
        } else {
            0.0
        },
        ess_per_batch: ess_mean / mean_batch.max(1.0),
        ess: ess_v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::Algorithm;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
        let z = normals(n, seed);
        let mut x = Vec::with_capacity(n);
        let mut v = z[0] / (1.0 - rho * rho).sqrt();
        for e in z {
            v = rho * v + e;
            x.push(v);
        }
        x
    }

    #[test]
    fn ess_of_iid_draws() {
        let x = normals(10_000, 1);
        let r = ess(&x) / 1e4;
        assert!((0.85..=1.15).contains(&r), "{r}");
    }

    #[test]
    fn ess_of_ar1() {
        let x = ar1(100_000, 0.9, 2);
        let r = ess(&x) / 1e5;
        let target = 0.1 / 1.9;
        assert!((r / target - 1.0).abs() < 0.25, "{r} vs {target}");
    }

    #[test]
    fn ess_edge_cases() {
        assert_eq!(ess(&[3.0; 50]), 1.0);
        assert_eq!(ess(&[]), 1.0);
        let alt: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let e = ess(&alt);
        assert!((1.0..=100.0).contains(&e));
    }

    #[test]
    fn autocorrelation_matches_direct_sum() {
        let x = ar1(300, 0.5, 3);
        let rho = autocorrelation(&x).unwrap();
        let m = x.iter().sum::<f64>() / 300.0;
        let c = |k: usize| {
            (0..300 - k)
                .map(|t| (x[t] - m) * (x[t + k] - m))
                .sum::<f64>()
        };
        for k in [0, 1, 5, 50] {
            assert_relative_eq!(rho[k], c(k) / c(0), epsilon = 1e-12);
        }
    }

    #[test]
    fn msjd_examples() {
        assert_eq!(msjd(&[2.0; 20], 2), 0.0);
        let alt: Vec<f64> = (0..101)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_relative_eq!(msjd(&alt, 1), 4.0);
        let x = normals(100_000, 4);
        let m = msjd(&x, 1);
        // Var of (z1 - z2)^2 is 8.
        assert!((m - 2.0).abs() < 3.0 * (8.0 / 1e5f64).sqrt());
        assert_eq!(msjd(&[1.0, 2.0], 2), 0.0);
    }

    #[test]
    fn msjd_matches_lag_one_identity() {
        let x = ar1(200_000, 0.6, 5);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rho1 = autocorrelation(&x).unwrap()[1];
        let expect = 2.0 * var * (1.0 - rho1);
        assert!((msjd(&x, 1) / expect - 1.0).abs() < 0.1);
    }

    #[test]
    fn batch_means_on_iid() {
        let x = normals(40_000, 6);
        let se = batch_means_se(&x, 200);
        assert!((se / (1.0 / 200.0) - 1.0).abs() < 0.25, "{se}");
        assert!(batch_means_se(&x, 1).is_nan());
    }

    #[test]
    fn optimal_scaling_values() {
        let l = optimal_lambda();
        assert!((l - 1.50).abs() <= 0.01, "{l}");
        assert!((limiting_acceptance(l) - 0.452).abs() <= 0.002);
        assert!(efficiency_curve(1e-9) < 1e-8);
        assert!(efficiency_curve(10.0) < efficiency_curve(1.5));
    }

    fn output(samples: Vec<f64>, d: usize, accepted: Vec<bool>, batch: Vec<u64>) -> ChainOutput {
        ChainOutput {
            algorithm: Algorithm::Mhss1,
            d,
            burn_in: 0,
            samples,
            stage1_pass_flags: accepted.clone(),
            accept_flags: accepted,
            batch_sizes: batch,
            wall_time_seconds: 0.5,
            full_data_count: 0,
        }
    }

    #[test]
    fn summarize_constant_and_short_chains() {
        let m = summarize(&output(vec![1.0; 40], 2, vec![false; 20], vec![0; 20]));
        assert_eq!(m.msjd, 0.0);
        assert_eq!(m.acceptance_rate, 0.0);
        assert_eq!(m.ess, vec![1.0, 1.0]);
        let m = summarize(&output(vec![0.0, 1.0], 1, vec![true, true], vec![3, 5]));
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("null") && !json.contains("NaN"));
        assert_eq!(m.mean_batch, 4.0);
    }

    #[test]
    fn summarize_ess_mean_is_column_average() {
        let a = ar1(5000, 0.5, 7);
        let b = normals(5000, 8);
        let samples: Vec<f64> = a.iter().zip(&b).flat_map(|(x, y)| [*x, *y]).collect();
        let m = summarize(&output(samples, 2, vec![true; 5000], vec![10; 5000]));
        assert_relative_eq!(m.ess_mean, 0.5 * (ess(&a) + ess(&b)));
        assert_relative_eq!(m.ess_min, ess(&a).min(ess(&b)));
        assert_relative_eq!(m.ess_per_batch, m.ess_mean / 10.0);
    }
}
