use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::{Algo, AlgoConfig, RlError};
use crate::env::EnvSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
}

impl Arch {
    pub fn policy_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(self.act_dim);
        s
    }

    pub fn value_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn q_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim + self.act_dim];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgTargets {
    pub actor: Mlp,
    pub q: Mlp,
}

/// Immutable snapshot of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub algo: Algo,
    pub arch: Arch,
    /// Policy mean network, or the DDPG actor.
    pub weights: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_weights: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_weights: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_weights: Option<DdpgTargets>,
    pub config: AlgoConfig,
    pub env: EnvSpec,
    pub steps_trained: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    /// `(step, mean episode reward)` samples.
    pub curve: Vec<(u64, f64)>,
}

/// Acting view of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Gaussian(GaussianPolicy),
    /// DDPG actor; actions are `tanh` of the network output.
    Deterministic(Mlp),
}

impl Agent {
    /// Noise-free action: the Gaussian mean or the squashed actor output.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        match self {
            Agent::Gaussian(p) => p.mean_action(obs),
            Agent::Deterministic(actor) => Ok(actor.forward(obs)?.into_iter().map(f64::tanh).collect()),
        }
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint fields are finite and serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let mismatch = |m: String| Err(RlError::CheckpointMismatch(m));
        let check = |net: &Mlp, want: Vec<usize>, what: &str| {
            if net.sizes() != want.as_slice() {
                Err(RlError::CheckpointMismatch(format!("{what} sizes {:?}, expected {want:?}", net.sizes())))
            } else {
                Ok(())
            }
        };
        check(&self.weights, self.arch.policy_sizes(), "policy")?;
        match self.algo {
            Algo::Ddpg => {
                let (Some(q), Some(t)) = (&self.q_weights, &self.target_weights) else {
                    return mismatch("ddpg checkpoint lacks q or target weights".into());
                };
                check(q, self.arch.q_sizes(), "q")?;
                check(&t.q, self.arch.q_sizes(), "target q")?;
                check(&t.actor, self.arch.policy_sizes(), "target actor")?;
            }
            _ => {
                let (Some(ls), Some(v)) = (&self.log_std, &self.value_weights) else {
                    return mismatch(format!("{} checkpoint lacks log_std or value weights", self.algo));
                };
                if ls.len() != self.arch.act_dim {
                    return mismatch(format!("log_std has {} entries", ls.len()));
                }
                check(v, self.arch.value_sizes(), "value")?;
            }
        }
        Ok(())
    }

    pub fn agent(&self) -> Result<Agent, RlError> {
        match self.algo {
            Algo::Ddpg => Ok(Agent::Deterministic(self.weights.clone())),
            _ => {
                let ls = self.log_std.clone().ok_or_else(|| RlError::CheckpointMismatch("missing log_std".into()))?;
                Ok(Agent::Gaussian(GaussianPolicy::new(self.weights.clone(), ls)?))
            }
        }
    }
}
