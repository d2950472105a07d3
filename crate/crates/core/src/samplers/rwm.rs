use rand::Rng;

use super::{accept, propose, ChainState, Sampler, StepOutcome};
use crate::error::Result;

/// Full-data random-walk Metropolis step.
pub fn rwm_step<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    s: &Sampler<'_>,
) -> Result<StepOutcome> {
    let exec = s.config.exec;
    let current = match state.loglik {
        Some(v) => v,
        None => s.dataset.loglik(&state.theta, exec),
    };
    let theta_prime = propose(rng, s.proposal, &state.theta);
    let proposed = s.dataset.loglik(&theta_prime, exec);
    let log_a = s.config.prior.log_ratio(&state.theta, &theta_prime) + (proposed - current);
    let accepted = accept(rng, log_a);
    if accepted {
        state.theta = theta_prime;
        state.loglik = Some(proposed);
    } else {
        state.loglik = Some(current);
    }
    Ok(StepOutcome {
        accepted,
        stage1_pass: true,
        batch: s.dataset.n() as u64,
        full_data: true,
    })
}
