//! Policy optimization from scratch: networks with analytic gradients and
//! the A2C, TRPO, PPO and DDPG update rules.

mod adam;
mod checkpoint;
mod ddpg;
mod gae;
mod mlp;
mod onpolicy;
mod policy;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::{Agent, Arch, Checkpoint, DdpgTargets};
pub use ddpg::{
    actor_loss_and_gradient, critic_loss_and_gradient, critic_targets, ddpg_update, DdpgAgent,
    ReplayBuffer, TransitionBatch,
};
pub use gae::{compute_advantages, normalize};
pub use mlp::{mlp_gradients, Mlp, Tape};
pub use onpolicy::{
    a2c_loss_and_gradient, a2c_update, conjugate_gradient, fisher_vector_product, ppo_loss_and_gradient,
    ppo_objective, ppo_update, surrogate, trpo_update, value_loss_and_gradient, Batch, OnPolicyAgent,
    UpdateStats,
};
pub use policy::{
    gaussian_entropy, gaussian_kl, gaussian_log_prob, GaussianPolicy, PolicyEval, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use train::{evaluate, run_episode, train, EpisodeRecord, EvalReport, EVAL_SEED_BASE};

/// Value network: observation → scalar.
pub type ValueNet = Mlp;
/// Action-value network: (observation, action) → scalar.
pub type QNet = Mlp;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint parse error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    A2c,
    Trpo,
    Ppo,
    Ddpg,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::A2c, Algo::Trpo, Algo::Ppo, Algo::Ddpg];

    pub fn name(self) -> &'static str {
        match self {
            Algo::A2c => "a2c",
            Algo::Trpo => "trpo",
            Algo::Ppo => "ppo",
            Algo::Ddpg => "ddpg",
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub trpo_delta: f64,
    pub cg_iters: usize,
    /// Tikhonov damping added to Fisher-vector products.
    pub cg_damping: f64,
    pub backtrack_steps: usize,
    pub backtrack_coeff: f64,
    pub ddpg_tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub exploration_sigma: f64,
    /// Steps per on-policy update (PPO, TRPO) and the learning-curve
    /// sampling interval for every algorithm.
    pub rollout_horizon: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Synchronous environment workers for on-policy collection.
    pub num_workers: usize,
    /// Steps per worker between A2C updates.
    pub a2c_nsteps: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    pub hidden: Vec<usize>,
    /// DDPG: environment steps before the first update.
    pub update_after: usize,
    /// DDPG: steps between update phases.
    pub update_every: usize,
    /// DDPG: gradient updates per environment step.
    pub updates_per_step: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            ppo_clip: 0.2,
            ppo_epochs: 10,
            minibatch: 64,
            trpo_delta: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_steps: 10,
            backtrack_coeff: 0.8,
            ddpg_tau: 0.005,
            buffer_capacity: 100_000,
            batch_size: 128,
            exploration_sigma: 0.1,
            rollout_horizon: 2048,
            total_steps: 150_000,
            seed: 0,
            num_workers: 8,
            a2c_nsteps: 5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            init_log_std: -0.5,
            hidden: vec![64, 64],
            update_after: 1000,
            update_every: 50,
            updates_per_step: 1.0,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.ppo_clip > 0.0) || !(self.trpo_delta > 0.0) {
            return bad("ppo_clip and trpo_delta must be positive");
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return bad("learning rates must be positive");
        }
        let counts = [
            self.ppo_epochs,
            self.minibatch,
            self.cg_iters,
            self.backtrack_steps,
            self.buffer_capacity,
            self.batch_size,
            self.rollout_horizon,
            self.num_workers,
            self.a2c_nsteps,
            self.update_every,
        ];
        if counts.contains(&0) {
            return bad("all counts must be at least 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size");
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return bad("backtrack_coeff must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.ddpg_tau) {
            return bad("ddpg_tau must lie in [0, 1]");
        }
        if !(self.exploration_sigma >= 0.0 && self.entropy_coef >= 0.0 && self.cg_damping >= 0.0) {
            return bad("exploration_sigma, entropy_coef and cg_damping must be non-negative");
        }
        if !(self.max_grad_norm > 0.0) || !(self.updates_per_step > 0.0) {
            return bad("max_grad_norm and updates_per_step must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive");
        }
        Ok(())
    }
}
