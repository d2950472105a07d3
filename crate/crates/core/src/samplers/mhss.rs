use rand::Rng;

use super::{accept, propose, ChainState, Sampler, StepOutcome};
use crate::cv::{r_total_disp, Displacement};
use crate::error::Result;
use crate::thinning::{draw_subsample, stage2_log_ratio};

/// Two-stage MH-SS step: a control-variate screen, then either the thinned
/// subsample ratio or, when `C M >= n`, the exact remainder ratio.
pub fn mhss_step<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ChainState,
    s: &Sampler<'_>,
) -> Result<StepOutcome> {
    let theta_prime = propose(rng, s.proposal, &state.theta);
    let disp = Displacement::new(&state.theta, &theta_prime, &s.cache.theta_hat);
    let order = s.order();
    let r_tot = r_total_disp(s.cache, &disp, order);
    let log_a1 = s.config.prior.log_ratio(&state.theta, &theta_prime) + r_tot;
    if !accept(rng, log_a1) {
        return Ok(StepOutcome::default());
    }

    let table = s.table();
    let m = table.factor(&state.theta, &theta_prime, &s.cache.theta_hat);
    let n = s.dataset.n();
    let (log_a2, batch, full_data) = if table.total * m >= n as f64 {
        let ll = s
            .dataset
            .loglik_diff(&state.theta, &theta_prime, s.config.exec);
        (ll - r_tot, n as u64, true)
    } else {
        let sub = draw_subsample(
            rng,
            s.cache,
            s.dataset,
            table,
            &disp,
            m,
            s.config.gamma,
            0.0,
        )?;
        (stage2_log_ratio(&sub), sub.raw_count, false)
    };
    let accepted = accept(rng, log_a2);
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
