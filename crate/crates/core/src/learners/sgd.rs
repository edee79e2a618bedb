use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::particle_sde::HyperParams;
use crate::rng::StreamRng;

/// One (stochastic) gradient step `θ − rate·∇L_batch(θ)`.
pub fn sgd_step(theta: &[f64], objective: &dyn Objective, rate: f64, batch: Option<usize>, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0 (got {rate})")));
    }
    objective.check_dim(theta)?;
    let g = objective.stochastic_grad(theta, batch, rng);
    Ok(theta.iter().zip(&g).map(|(t, g)| t - rate * g).collect())
}

/// `hp.local_steps` gradient steps at rate `λ₂γ`, with heavy-ball momentum
/// when `hp.momentum > 0`. The momentum buffer starts at zero on every call.
pub fn local_update(theta: &[f64], objective: &dyn Objective, hp: &HyperParams, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let rate = hp.lambda2 * hp.gamma;
    if hp.momentum == 0.0 {
        let mut cur = theta.to_vec();
        for _ in 0..hp.local_steps {
            cur = sgd_step(&cur, objective, rate, hp.batch_size, rng)?;
        }
        return Ok(cur);
    }
    objective.check_dim(theta)?;
    let mut cur = theta.to_vec();
    let mut velocity = vec![0.0; cur.len()];
    for _ in 0..hp.local_steps {
        let g = objective.stochastic_grad(&cur, hp.batch_size, rng);
        for ((t, v), g) in cur.iter_mut().zip(velocity.iter_mut()).zip(&g) {
            *v = hp.momentum * *v + g;
            *t -= rate * *v;
        }
    }
    Ok(cur)
}
