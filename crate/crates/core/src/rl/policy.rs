//! Diagonal Gaussian policy with a state-independent learnable log-std.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, Tape};
use super::RlError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// `KL(p ‖ q)` between diagonal Gaussians.
pub fn gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    (0..mean_p.len())
        .map(|j| {
            let vp = (2.0 * log_std_p[j]).exp();
            let vq = (2.0 * log_std_q[j]).exp();
            let d = mean_p[j] - mean_q[j];
            log_std_q[j] - log_std_p[j] + (vp + d * d) / (2.0 * vq) - 0.5
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    log_std: Vec<f64>,
}

/// Policy outputs on a batch of observations.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub tape: Tape,
    pub log_probs: Vec<f64>,
}

impl PolicyEval {
    pub fn means(&self) -> &[f64] {
        self.tape.output()
    }
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std: Vec<f64>) -> Result<Self, RlError> {
        if log_std.len() != mean.output_dim() {
            return Err(RlError::DimensionMismatch { expected: mean.output_dim(), found: log_std.len() });
        }
        let mut p = Self { mean, log_std };
        p.clamp_log_std();
        Ok(p)
    }

    pub fn init<R: Rng + ?Sized>(sizes: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mean = Mlp::new(sizes, 0.01, rng);
        let act = mean.output_dim();
        Self::new(mean, vec![init_log_std; act]).expect("sizes agree")
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    fn clamp_log_std(&mut self) {
        self.log_std.iter_mut().for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// Mean-network parameters followed by the log-std vector.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.set_params_unclamped(p);
        self.clamp_log_std();
    }

    pub(crate) fn set_params_unclamped(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let n = self.mean.num_params();
        self.mean.params_mut().copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }

    /// Applies `f` to the flat parameter vector, then re-clamps log-std.
    pub fn update_params(&mut self, f: impl FnOnce(&mut [f64])) {
        let mut p = self.params();
        f(&mut p);
        self.set_params(&p);
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        self.mean.forward(obs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), RlError> {
        let mean = self.mean.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, RlError> {
        let mean = self.mean.forward(obs)?;
        Ok(gaussian_log_prob(&mean, &self.log_std, action))
    }

    /// Means and log-probabilities of `actions` for `n` observations.
    pub fn evaluate(&self, obs: &[f64], actions: &[f64], n: usize) -> Result<PolicyEval, RlError> {
        let k = self.act_dim();
        if actions.len() != n * k {
            return Err(RlError::DimensionMismatch { expected: n * k, found: actions.len() });
        }
        let tape = self.mean.forward_batch(obs, n)?;
        let log_probs = tape
            .output()
            .chunks(k)
            .zip(actions.chunks(k))
            .map(|(m, a)| gaussian_log_prob(m, &self.log_std, a))
            .collect();
        Ok(PolicyEval { tape, log_probs })
    }

    /// Flat gradient of `Σ_i coeffs[i] · log π(a_i | s_i)`.
    pub fn log_prob_gradient(&self, eval: &PolicyEval, actions: &[f64], coeffs: &[f64]) -> Vec<f64> {
        let k = self.act_dim();
        let inv_var: Vec<f64> = self.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
        let mut d_mean = vec![0.0; eval.means().len()];
        let mut g_ls = vec![0.0; k];
        for (i, c) in coeffs.iter().enumerate() {
            for j in 0..k {
                let diff = actions[i * k + j] - eval.means()[i * k + j];
                d_mean[i * k + j] = c * diff * inv_var[j];
                g_ls[j] += c * (diff * diff * inv_var[j] - 1.0);
            }
        }
        self.assemble_gradient(&eval.tape, &d_mean, &g_ls)
    }

    /// Mean `KL(old ‖ self)` over a batch and its flat gradient with respect
    /// to this policy's parameters.
    pub fn kl_and_gradient(&self, obs: &[f64], old_means: &[f64], old_log_std: &[f64]) -> Result<(f64, Vec<f64>), RlError> {
        let k = self.act_dim();
        let n = old_means.len() / k;
        let tape = self.mean.forward_batch(obs, n)?;
        let means = tape.output();
        let inv_var: Vec<f64> = self.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
        let old_var: Vec<f64> = old_log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
        let scale = 1.0 / n as f64;
        let mut kl = 0.0;
        let mut d_mean = vec![0.0; means.len()];
        let mut g_ls = vec![0.0; k];
        for i in 0..n {
            let (mo, mn) = (&old_means[i * k..(i + 1) * k], &means[i * k..(i + 1) * k]);
            kl += gaussian_kl(mo, old_log_std, mn, &self.log_std);
            for j in 0..k {
                let d = mn[j] - mo[j];
                d_mean[i * k + j] = scale * d * inv_var[j];
                g_ls[j] += scale * (1.0 - (old_var[j] + d * d) * inv_var[j]);
            }
        }
        Ok((kl * scale, self.assemble_gradient(&tape, &d_mean, &g_ls)))
    }

    fn assemble_gradient(&self, tape: &Tape, d_mean: &[f64], g_ls: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        let n = self.mean.num_params();
        self.mean.backward(tape, d_mean, &mut grad[..n]).expect("shapes checked by caller");
        grad[n..].copy_from_slice(g_ls);
        grad
    }
}
