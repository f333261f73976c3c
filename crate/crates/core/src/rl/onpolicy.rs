//! Update rules for the on-policy algorithms (A2C, PPO, TRPO).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::gae::normalize;
use super::mlp::Mlp;
use super::policy::{gaussian_entropy, GaussianPolicy};
use super::{AlgoConfig, RlError};

/// Flattened on-policy samples; per-sample rows are row-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Policy means when the samples were collected.
    pub old_means: Vec<f64>,
    pub old_log_std: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        let rows = |v: &[f64], w: usize| idx.iter().flat_map(|&i| v[i * w..(i + 1) * w].iter().copied()).collect();
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        Batch {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            obs: rows(&self.obs, self.obs_dim),
            actions: rows(&self.actions, self.act_dim),
            log_probs: pick(&self.log_probs),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            old_means: rows(&self.old_means, self.act_dim),
            old_log_std: self.old_log_std.clone(),
        }
    }

    fn validate(&self) -> Result<(), RlError> {
        let n = self.len();
        let ok = self.obs.len() == n * self.obs_dim
            && self.actions.len() == n * self.act_dim
            && self.advantages.len() == n
            && self.returns.len() == n
            && self.old_means.len() == n * self.act_dim
            && self.old_log_std.len() == self.act_dim;
        if ok {
            Ok(())
        } else {
            Err(RlError::LengthMismatch("batch fields disagree in length".into()))
        }
    }
}

/// Policy and value networks with their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct OnPolicyAgent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub pi_opt: Adam,
    pub v_opt: Adam,
}

impl OnPolicyAgent {
    pub fn new(policy: GaussianPolicy, value: Mlp, cfg: &AlgoConfig) -> Self {
        let pi_opt = Adam::new(policy.num_params(), cfg.lr_policy);
        let v_opt = Adam::new(value.num_params(), cfg.lr_value);
        Self { policy, value, pi_opt, v_opt }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean `KL(old ‖ new)` on the batch after the update.
    pub kl: f64,
    pub entropy: f64,
    /// TRPO: whether the line search accepted a step.
    pub accepted: bool,
}

/// `−mean(A·log π(a|s)) − c·H(π)` and its gradient.
pub fn a2c_loss_and_gradient(policy: &GaussianPolicy, batch: &Batch, entropy_coef: f64) -> Result<(f64, Vec<f64>), RlError> {
    batch.validate()?;
    let n = batch.len() as f64;
    let eval = policy.evaluate(&batch.obs, &batch.actions, batch.len())?;
    let loss = -eval.log_probs.iter().zip(&batch.advantages).map(|(l, a)| l * a).sum::<f64>() / n
        - entropy_coef * gaussian_entropy(policy.log_std());
    let coeffs: Vec<f64> = batch.advantages.iter().map(|a| -a / n).collect();
    let mut grad = policy.log_prob_gradient(&eval, &batch.actions, &coeffs);
    let k = policy.act_dim();
    let off = grad.len() - k;
    grad[off..].iter_mut().for_each(|g| *g -= entropy_coef);
    Ok((loss, grad))
}

/// Clipped surrogate `mean(min(r·A, clip(r, 1−ε, 1+ε)·A))` with
/// `r = exp(log_probs − old_log_probs)`.
pub fn ppo_objective(log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip: f64) -> f64 {
    let n = log_probs.len() as f64;
    log_probs
        .iter()
        .zip(old_log_probs)
        .zip(advantages)
        .map(|((lp, old), a)| {
            let r = (lp - old).exp();
            (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a)
        })
        .sum::<f64>()
        / n
}

/// Negated clipped surrogate and its gradient.
pub fn ppo_loss_and_gradient(policy: &GaussianPolicy, batch: &Batch, clip: f64) -> Result<(f64, Vec<f64>), RlError> {
    batch.validate()?;
    let n = batch.len() as f64;
    let eval = policy.evaluate(&batch.obs, &batch.actions, batch.len())?;
    let objective = ppo_objective(&eval.log_probs, &batch.log_probs, &batch.advantages, clip);
    let coeffs: Vec<f64> = eval
        .log_probs
        .iter()
        .zip(&batch.log_probs)
        .zip(&batch.advantages)
        .map(|((lp, old), a)| {
            let r = (lp - old).exp();
            if r * a <= r.clamp(1.0 - clip, 1.0 + clip) * a {
                -r * a / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((-objective, policy.log_prob_gradient(&eval, &batch.actions, &coeffs)))
}

/// `0.5·mean((V(s) − R)²)` and its gradient.
pub fn value_loss_and_gradient(value: &Mlp, obs: &[f64], returns: &[f64]) -> Result<(f64, Vec<f64>), RlError> {
    let n = returns.len();
    let tape = value.forward_batch(obs, n)?;
    let diff: Vec<f64> = tape.output().iter().zip(returns).map(|(v, r)| v - r).collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let d_out: Vec<f64> = diff.iter().map(|d| d / n as f64).collect();
    let mut grad = vec![0.0; value.num_params()];
    value.backward(&tape, &d_out, &mut grad)?;
    Ok((loss, grad))
}

/// Importance-weighted surrogate `mean(π_θ(a|s)/π_θk(a|s) · A)`.
pub fn surrogate(policy: &GaussianPolicy, batch: &Batch) -> Result<f64, RlError> {
    let eval = policy.evaluate(&batch.obs, &batch.actions, batch.len())?;
    Ok(eval
        .log_probs
        .iter()
        .zip(&batch.log_probs)
        .zip(&batch.advantages)
        .map(|((lp, old), a)| (lp - old).exp() * a)
        .sum::<f64>()
        / batch.len() as f64)
}

fn value_step(agent: &mut OnPolicyAgent, batch: &Batch, cfg: &AlgoConfig) -> Result<f64, RlError> {
    let (loss, mut grad) = value_loss_and_gradient(&agent.value, &batch.obs, &batch.returns)?;
    clip_grad_norm(&mut grad, cfg.max_grad_norm);
    agent.v_opt.step(agent.value.params_mut(), &grad);
    Ok(loss)
}

fn minibatches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

fn fit_value<R: Rng + ?Sized>(agent: &mut OnPolicyAgent, batch: &Batch, cfg: &AlgoConfig, rng: &mut R) -> Result<f64, RlError> {
    let mut last = 0.0;
    for _ in 0..cfg.ppo_epochs {
        for mb in minibatches(batch.len(), cfg.minibatch, rng) {
            last = value_step(agent, &batch.subset(&mb), cfg)?;
        }
    }
    Ok(last)
}

fn batch_kl(policy: &GaussianPolicy, batch: &Batch) -> Result<f64, RlError> {
    Ok(policy.kl_and_gradient(&batch.obs, &batch.old_means, &batch.old_log_std)?.0)
}

/// One synchronous advantage actor-critic step over all worker samples.
pub fn a2c_update(agent: &mut OnPolicyAgent, batch: &Batch, cfg: &AlgoConfig) -> Result<UpdateStats, RlError> {
    let (policy_loss, mut grad) = a2c_loss_and_gradient(&agent.policy, batch, cfg.entropy_coef)?;
    clip_grad_norm(&mut grad, cfg.max_grad_norm);
    let opt = &mut agent.pi_opt;
    agent.policy.update_params(|p| opt.step(p, &grad));
    let value_loss = value_step(agent, batch, cfg)?;
    Ok(UpdateStats {
        policy_loss,
        value_loss,
        kl: batch_kl(&agent.policy, batch)?,
        entropy: gaussian_entropy(agent.policy.log_std()),
        accepted: true,
    })
}

/// Clipped-surrogate epochs over shuffled minibatches with joint value
/// regression. Advantages are normalized over the whole batch first.
pub fn ppo_update<R: Rng + ?Sized>(agent: &mut OnPolicyAgent, batch: &Batch, cfg: &AlgoConfig, rng: &mut R) -> Result<UpdateStats, RlError> {
    batch.validate()?;
    let mut batch = batch.clone();
    normalize(&mut batch.advantages);
    let (mut policy_loss, mut value_loss) = (0.0, 0.0);
    for _ in 0..cfg.ppo_epochs {
        for mb in minibatches(batch.len(), cfg.minibatch, rng) {
            let sub = batch.subset(&mb);
            let (loss, mut grad) = ppo_loss_and_gradient(&agent.policy, &sub, cfg.ppo_clip)?;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            let opt = &mut agent.pi_opt;
            agent.policy.update_params(|p| opt.step(p, &grad));
            policy_loss = loss;
            value_loss = value_step(agent, &sub, cfg)?;
        }
    }
    Ok(UpdateStats {
        policy_loss,
        value_loss,
        kl: batch_kl(&agent.policy, &batch)?,
        entropy: gaussian_entropy(agent.policy.log_std()),
        accepted: true,
    })
}

/// Relative probe size for finite-difference Fisher products.
const FVP_EPS: f64 = 1e-5;

/// `F·v + damping·v`, where `F` is the Hessian of the mean
/// `KL(π_old ‖ π_θ)` at `θ = θ_old`, by central differences of the
/// analytic KL gradient.
pub fn fisher_vector_product(
    policy: &GaussianPolicy,
    obs: &[f64],
    old_means: &[f64],
    old_log_std: &[f64],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>, RlError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let h = FVP_EPS / norm;
    let theta = policy.params();
    let mut probe = policy.clone();
    let mut grad_at = |sign: f64| -> Result<Vec<f64>, RlError> {
        let p: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + sign * h * d).collect();
        // No clamping here: the probe must see the exact perturbation.
        probe.set_params_unclamped(&p);
        Ok(probe.kl_and_gradient(obs, old_means, old_log_std)?.1)
    };
    let gp = grad_at(1.0)?;
    let gm = grad_at(-1.0)?;
    Ok(gp.iter().zip(&gm).zip(v).map(|((a, b), x)| (a - b) / (2.0 * h) + damping * x).collect())
}

/// Solves `A·x = b` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize) -> Result<Vec<f64>, RlError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, RlError>,
{
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < 1e-20 {
            break;
        }
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// Natural-gradient step with a KL-constrained backtracking line search,
/// followed by value regression. A rejected search leaves the policy
/// bit-identical.
pub fn trpo_update<R: Rng + ?Sized>(agent: &mut OnPolicyAgent, batch: &Batch, cfg: &AlgoConfig, rng: &mut R) -> Result<UpdateStats, RlError> {
    batch.validate()?;
    let mut batch = batch.clone();
    normalize(&mut batch.advantages);
    let saved = agent.policy.clone();
    let theta = saved.params();

    let eval = saved.evaluate(&batch.obs, &batch.actions, batch.len())?;
    let n = batch.len() as f64;
    let coeffs: Vec<f64> = eval
        .log_probs
        .iter()
        .zip(&batch.log_probs)
        .zip(&batch.advantages)
        .map(|((lp, old), a)| (lp - old).exp() * a / n)
        .collect();
    let g = saved.log_prob_gradient(&eval, &batch.actions, &coeffs);
    let base = surrogate(&saved, &batch)?;

    let mut accepted = false;
    if g.iter().any(|&v| v != 0.0) {
        let fvp = |v: &[f64]| {
            fisher_vector_product(&saved, &batch.obs, &batch.old_means, &batch.old_log_std, v, cfg.cg_damping)
        };
        let x = conjugate_gradient(fvp, &g, cfg.cg_iters)?;
        let xfx: f64 = x.iter().zip(&fvp(&x)?).map(|(a, b)| a * b).sum();
        if xfx.is_finite() && xfx > 0.0 {
            let scale = (2.0 * cfg.trpo_delta / xfx).sqrt();
            let mut frac = 1.0;
            for _ in 0..cfg.backtrack_steps {
                let candidate: Vec<f64> = theta.iter().zip(&x).map(|(t, d)| t + frac * scale * d).collect();
                agent.policy.set_params(&candidate);
                let kl = batch_kl(&agent.policy, &batch)?;
                let sur = surrogate(&agent.policy, &batch)?;
                if kl.is_finite() && kl <= cfg.trpo_delta && sur > base {
                    accepted = true;
                    break;
                }
                frac *= cfg.backtrack_coeff;
            }
        }
    }
    if !accepted {
        agent.policy = saved;
    }
    let value_loss = fit_value(agent, &batch, cfg, rng)?;
    Ok(UpdateStats {
        policy_loss: -surrogate(&agent.policy, &batch)?,
        value_loss,
        kl: batch_kl(&agent.policy, &batch)?,
        entropy: gaussian_entropy(agent.policy.log_std()),
        accepted,
    })
}
