use rand::Rng;

use super::{accept, propose, ChainState, Sampler, StepOutcome};
use crate::cv::Displacement;
use crate::error::Result;
use crate::thinning::{draw_subsample, stage2_log_ratio};

/// Single-stage TunaMH step: Lipschitz bounds, no control variates,
/// `gamma = 1/2` and an extra Poisson rate of `chi C M^2` spread over the
/// indices in proportion to `c_i`.
pub fn tuna_step<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    s: &Sampler<'_>,
) -> Result<StepOutcome> {
    let theta_prime = propose(rng, s.proposal, &state.theta);
    let table = s.table();
    let disp = Displacement::new(&state.theta, &theta_prime, &s.cache.theta_hat);
    let m = table.factor(&state.theta, &theta_prime, &s.cache.theta_hat);
    let extra = s.config.chi * table.total * m * m;
    let sub = draw_subsample(rng, s.cache, s.dataset, table, &disp, m, 0.5, extra)?;
    let log_a = s.config.prior.log_ratio(&state.theta, &theta_prime) + stage2_log_ratio(&sub);
    let accepted = accept(rng, log_a);
    drop(disp);
    if accepted {
        state.theta = theta_prime;
    }
    Ok(StepOutcome {
        accepted,
        stage1_pass: true,
        batch: sub.raw_count,
        full_data: false,
    })
}
