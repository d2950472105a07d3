//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mhss::cv::build_cache;
use mhss::data::generate_synthetic;
use mhss::experiment::write_samples_csv;
use mhss::glm::{Dataset, ModelKind};
use mhss::modefit::{fit_mode, hessian_at, preconditioner, ModeFitConfig, Preconditioner};
use mhss::par::{map_jobs, Execution};
use mhss::samplers::{run_chain, Algorithm, ChainConfig, Prior, Proposal};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Samples CSV bytes for every algorithm on a small fixed problem.
pub fn golden_runs(exec: Execution) -> Vec<(String, Vec<u8>)> {
    let ds = generate_synthetic(200, 3, ModelKind::Logistic, 11)
        .unwrap()
        .dataset;
    let theta_hat = fit_mode(&ds, &ModeFitConfig::full_gradient()).unwrap();
    let cache = build_cache(&ds, &theta_hat).unwrap();
    let pre = preconditioner(&hessian_at(&ds, &Prior::Flat, &theta_hat)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    Algorithm::ALL
        .iter()
        .map(|&alg| {
            let mut cfg = ChainConfig::new(alg).with_iterations(150);
            cfg.burn_in = 0;
            cfg.seed = 7;
            cfg.exec = exec;
            let proposal = Proposal::new(cfg.lambda, &pre).unwrap();
            let out = run_chain(&ds, &cache, &proposal, &cfg).unwrap();
            let path = tmp.path().join(format!("{}.csv", alg.name()));
            write_samples_csv(&path, &out).unwrap();
            (alg.name().to_owned(), std::fs::read(&path).unwrap())
        })
        .collect()
}

/// Compare against the stored files; `MHSS_BLESS=1` rewrites them.
pub fn check_golden(runs: &[(String, Vec<u8>)]) -> Vec<String> {
    let dir = golden_dir();
    let bless = std::env::var("MHSS_BLESS").is_ok_and(|v| v == "1");
    let mut mismatched = Vec::new();
    for (name, bytes) in runs {
        let path = dir.join(format!("{name}.samples.csv"));
        if bless {
            std::fs::write(&path, bytes).unwrap();
        } else if std::fs::read(&path).ok().as_deref() != Some(bytes.as_slice()) {
            mismatched.push(name.clone());
        }
    }
    mismatched
}

/// Posterior mean and variance per coordinate of a 2-d posterior by a dense
/// grid over `center + L z`, `z` in `[-10, 10]^2`.
pub fn quadrature_moments(
    ds: &Dataset,
    pre: &Preconditioner,
    center: &[f64],
    prior: &Prior,
) -> (Vec<f64>, Vec<f64>) {
    let points = 801usize;
    let half = 10.0;
    let h = 2.0 * half / (points - 1) as f64;
    let l = &pre.chol;
    let grid: Vec<(f64, f64, f64)> = map_jobs((0..points).collect(), Execution::Parallel, |a| {
        (0..points)
            .map(|b| {
                let z = [-half + a as f64 * h, -half + b as f64 * h];
                let t0 = center[0] + l[(0, 0)] * z[0];
                let t1 = center[1] + l[(1, 0)] * z[0] + l[(1, 1)] * z[1];
                let lp = ds.loglik(&[t0, t1], Execution::Sequential) + prior.log_density(&[t0, t1]);
                (t0, t1, lp)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let top = grid.iter().map(|g| g.2).fold(f64::NEG_INFINITY, f64::max);
    let weight = |lp: f64| (lp - top).exp();
    let total: f64 = grid.iter().map(|g| weight(g.2)).sum();
    let mean = vec![
        grid.iter().map(|g| weight(g.2) * g.0).sum::<f64>() / total,
        grid.iter().map(|g| weight(g.2) * g.1).sum::<f64>() / total,
    ];
    let var = vec![
        grid.iter()
            .map(|g| weight(g.2) * (g.0 - mean[0]).powi(2))
            .sum::<f64>()
            / total,
        grid.iter()
            .map(|g| weight(g.2) * (g.1 - mean[1]).powi(2))
            .sum::<f64>()
            / total,
    ];
    (mean, var)
}
