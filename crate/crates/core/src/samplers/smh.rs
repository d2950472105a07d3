use rand::Rng;

use super::{accept, propose, ChainState, Sampler, StepOutcome};
use crate::bounds::BoundTable;
use crate::cv::{r_total_disp, CvCache, Displacement};
use crate::error::Result;
use crate::glm::Dataset;
use crate::par::{self, Execution};
use crate::thinning::checked_delta;

/// `sum_i min(0, -Delta_i)`, the log of the exact second-stage factor
/// `prod_i 1 ^ exp(-Delta_i)`.
pub fn smh_exact_log_alpha2(
    table: &BoundTable,
    cache: &CvCache,
    dataset: &Dataset,
    theta: &[f64],
    theta_prime: &[f64],
    exec: Execution,
) -> Result<f64> {
    let disp = Displacement::new(theta, theta_prime, &cache.theta_hat);
    let m = table.factor(theta, theta_prime, &cache.theta_hat);
    exact_with(table, cache, dataset, &disp, m, exec)
}

fn exact_with(
    table: &BoundTable,
    cache: &CvCache,
    dataset: &Dataset,
    disp: &Displacement<'_>,
    m: f64,
    exec: Execution,
) -> Result<f64> {
    par::fold(
        dataset.n(),
        exec,
        || Ok(0.0),
        |acc: &mut Result<f64>, i| {
            if let Ok(sum) = acc {
                match checked_delta(table, cache, dataset, disp, i, m) {
                    Ok((delta, _)) => *sum += (-delta).min(0.0),
                    Err(e) => *acc = Err(e),
                }
            }
        },
        |acc, part| {
            if let Ok(sum) = acc {
                match part {
                    Ok(v) => *sum += v,
                    Err(e) => *acc = Err(e),
                }
            }
        },
    )
}

/// SMH step: stage one as MH-SS, then per-index rejection events with
/// probability `max(0, Delta_i) / (c_i M)` for each of `B ~ Pois(C M)` draws.
/// The chain rejects at the first flagged draw.
pub fn smh_step<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    s: &Sampler<'_>,
) -> Result<StepOutcome> {
    let theta_prime = propose(rng, s.proposal, &state.theta);
    let disp = Displacement::new(&state.theta, &theta_prime, &s.cache.theta_hat);
    let r_tot = r_total_disp(s.cache, &disp, s.order());
    let log_a1 = s.config.prior.log_ratio(&state.theta, &theta_prime) + r_tot;
    if !accept(rng, log_a1) {
        return Ok(StepOutcome::default());
    }

    let table = s.table();
    let m = table.factor(&state.theta, &theta_prime, &s.cache.theta_hat);
    let n = s.dataset.n();
    let (accepted, batch, full_data) = if table.total * m >= n as f64 {
        let log_a2 = exact_with(table, s.cache, s.dataset, &disp, m, s.config.exec)?;
        (accept(rng, log_a2), n as u64, true)
    } else {
        match &table.alias {
            Some(alias) if m > 0.0 => {
                let rate = table.total * m;
                let b = rand_distr::Distribution::sample(
                    &rand_distr::Poisson::new(rate)
                        .map_err(|e| crate::Error::Invalid(format!("Poisson rate {rate}: {e}")))?,
                    rng,
                ) as u64;
                let mut examined = 0;
                let mut flagged = false;
                while examined < b {
                    let i = alias.sample(rng);
                    examined += 1;
                    let (delta, bound) = checked_delta(table, s.cache, s.dataset, &disp, i, m)?;
                    let p = delta.max(0.0) / bound;
                    if rng.random::<f64>() < p {
                        flagged = true;
                        break;
                    }
                }
                (!flagged, examined, false)
            }
            _ => (true, 0, false),
        }
    };
    drop(disp);
    if accepted {
        state.theta = theta_prime;
    }
    Ok(StepOutcome {
        accepted,
        stage1_pass: true,
        batch,
        full_data,
    })
}
