//! Deterministic policy gradient with a replay buffer and Polyak-averaged
//! target networks. The actor's linear output is squashed by tanh so
//! actions lie in `[-1, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::mlp::{Mlp, Tape};
use super::{AlgoConfig, RlError};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<bool>,
    pos: usize,
}

/// Sampled transitions, row-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionBatch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// True termination only; time-limit truncation is not terminal.
    pub dones: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Appends, overwriting the oldest transition once full.
    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(action.len(), self.act_dim);
        if self.len() < self.capacity {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.dones.push(done);
        } else {
            let (i, o, a) = (self.pos, self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(obs);
            self.actions[i * a..(i + 1) * a].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(next_obs);
            self.dones[i] = done;
        }
        self.pos = (self.pos + 1) % self.capacity;
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TransitionBatch, RlError> {
        if self.len() < n {
            return Err(RlError::BufferTooSmall { have: self.len(), need: n });
        }
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = TransitionBatch::default();
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            b.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            b.actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            b.rewards.push(self.rewards[i]);
            b.next_obs.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            b.dones.push(self.dones[i]);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub q: Mlp,
    pub actor_targ: Mlp,
    pub q_targ: Mlp,
    pub actor_opt: Adam,
    pub q_opt: Adam,
}

impl DdpgAgent {
    pub fn new(actor: Mlp, q: Mlp, cfg: &AlgoConfig) -> Self {
        let actor_opt = Adam::new(actor.num_params(), cfg.lr_policy);
        let q_opt = Adam::new(q.num_params(), cfg.lr_value);
        Self { actor_targ: actor.clone(), q_targ: q.clone(), actor, q, actor_opt, q_opt }
    }

    /// Deterministic action `tanh(actor(obs))`.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(self.actor.forward(obs)?.into_iter().map(f64::tanh).collect())
    }
}

fn squashed(actor: &Mlp, obs: &[f64], n: usize) -> Result<(Tape, Vec<f64>), RlError> {
    let tape = actor.forward_batch(obs, n)?;
    let a = tape.output().iter().map(|v| v.tanh()).collect();
    Ok((tape, a))
}

fn concat_rows(obs: &[f64], obs_dim: usize, act: &[f64], act_dim: usize) -> Vec<f64> {
    obs.chunks(obs_dim)
        .zip(act.chunks(act_dim))
        .flat_map(|(o, a)| o.iter().chain(a).copied())
        .collect()
}

/// Regression targets `r + γ(1 − d)·Q_targ(s′, μ_targ(s′))`.
pub fn critic_targets(q_targ: &Mlp, actor_targ: &Mlp, batch: &TransitionBatch, gamma: f64) -> Result<Vec<f64>, RlError> {
    let n = batch.len();
    let obs_dim = actor_targ.input_dim();
    let act_dim = actor_targ.output_dim();
    let (_, next_a) = squashed(actor_targ, &batch.next_obs, n)?;
    let q_next = q_targ.forward_batch(&concat_rows(&batch.next_obs, obs_dim, &next_a, act_dim), n)?;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(q_next.output())
        .map(|((r, &d), qn)| if d { *r } else { r + gamma * qn })
        .collect())
}

/// `mean((Q(s, a) − y)²)` and its gradient with respect to `q`.
pub fn critic_loss_and_gradient(q: &Mlp, batch: &TransitionBatch, targets: &[f64]) -> Result<(f64, Vec<f64>), RlError> {
    let n = batch.len();
    if n == 0 || targets.len() != n {
        return Err(RlError::LengthMismatch(format!("{n} transitions, {} targets", targets.len())));
    }
    let (obs_dim, act_dim) = (batch.obs.len() / n, batch.actions.len() / n);
    if obs_dim + act_dim != q.input_dim() {
        return Err(RlError::DimensionMismatch { expected: q.input_dim(), found: obs_dim + act_dim });
    }
    let tape = q.forward_batch(&concat_rows(&batch.obs, obs_dim, &batch.actions, act_dim), n)?;
    let diff: Vec<f64> = tape.output().iter().zip(targets).map(|(v, y)| v - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * d / n as f64).collect();
    let mut grad = vec![0.0; q.num_params()];
    q.backward(&tape, &d_out, &mut grad)?;
    Ok((loss, grad))
}

/// `−mean(Q(s, μ(s)))` and its gradient with respect to the actor.
pub fn actor_loss_and_gradient(actor: &Mlp, q: &Mlp, obs: &[f64], n: usize) -> Result<(f64, Vec<f64>), RlError> {
    let obs_dim = actor.input_dim();
    let act_dim = actor.output_dim();
    let (a_tape, a) = squashed(actor, obs, n)?;
    let q_tape = q.forward_batch(&concat_rows(obs, obs_dim, &a, act_dim), n)?;
    let loss = -q_tape.output().iter().sum::<f64>() / n as f64;
    let mut scratch = vec![0.0; q.num_params()];
    let d_in = q.backward(&q_tape, &vec![-1.0 / n as f64; n], &mut scratch)?;
    let width = obs_dim + act_dim;
    let d_pre: Vec<f64> = (0..n)
        .flat_map(|i| (0..act_dim).map(move |j| (i, j)))
        .map(|(i, j)| {
            let aj = a[i * act_dim + j];
            d_in[i * width + obs_dim + j] * (1.0 - aj * aj)
        })
        .collect();
    let mut grad = vec![0.0; actor.num_params()];
    actor.backward(&a_tape, &d_pre, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DdpgStats {
    pub q_loss: f64,
    pub actor_loss: f64,
}

/// One critic step, one actor step through the updated critic, then soft
/// target updates.
pub fn ddpg_update<R: Rng + ?Sized>(agent: &mut DdpgAgent, buffer: &ReplayBuffer, cfg: &AlgoConfig, rng: &mut R) -> Result<DdpgStats, RlError> {
    let batch = buffer.sample(cfg.batch_size, rng)?;
    let targets = critic_targets(&agent.q_targ, &agent.actor_targ, &batch, cfg.gamma)?;
    let (q_loss, mut gq) = critic_loss_and_gradient(&agent.q, &batch, &targets)?;
    clip_grad_norm(&mut gq, cfg.max_grad_norm);
    agent.q_opt.step(agent.q.params_mut(), &gq);

    let (actor_loss, mut ga) = actor_loss_and_gradient(&agent.actor, &agent.q, &batch.obs, batch.len())?;
    clip_grad_norm(&mut ga, cfg.max_grad_norm);
    agent.actor_opt.step(agent.actor.params_mut(), &ga);

    agent.q_targ.soft_update(&agent.q, cfg.ddpg_tau);
    agent.actor_targ.soft_update(&agent.actor, cfg.ddpg_tau);
    Ok(DdpgStats { q_loss, actor_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nets(seed: u64) -> (Mlp, Mlp) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Mlp::new(&[3, 6, 2], 1.0, &mut rng), Mlp::new(&[5, 6, 1], 1.0, &mut rng))
    }

    fn batch(dones: [bool; 4]) -> TransitionBatch {
        TransitionBatch {
            obs: (0..12).map(|i| 0.1 * i as f64 - 0.5).collect(),
            actions: vec![0.2, -0.4, 0.9, 0.0, -1.0, 0.3, 0.5, 0.5],
            rewards: vec![-0.3, 1.0, 0.25, -2.0],
            next_obs: (0..12).map(|i| 0.05 * i as f64).collect(),
            dones: dones.to_vec(),
        }
    }

    #[test]
    fn terminal_and_zero_gamma_targets_are_rewards() {
        let (actor, q) = nets(1);
        let b = batch([true; 4]);
        assert_eq!(critic_targets(&q, &actor, &b, 0.99).unwrap(), b.rewards);
        let b = batch([false; 4]);
        assert_eq!(critic_targets(&q, &actor, &b, 0.0).unwrap(), b.rewards);
    }

    #[test]
    fn critic_loss_matches_hand_computation() {
        let (actor, q) = nets(2);
        let b = batch([false, true, false, true]);
        let y = critic_targets(&q, &actor, &b, 0.9).unwrap();
        let (loss, _) = critic_loss_and_gradient(&q, &b, &y).unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            let mut input = b.obs[i * 3..i * 3 + 3].to_vec();
            input.extend(&b.actions[i * 2..i * 2 + 2]);
            let qv = q.forward(&input).unwrap()[0];
            let target = if b.dones[i] {
                b.rewards[i]
            } else {
                let na: Vec<f64> = actor.forward(&b.next_obs[i * 3..i * 3 + 3]).unwrap().iter().map(|v| v.tanh()).collect();
                let mut ni = b.next_obs[i * 3..i * 3 + 3].to_vec();
                ni.extend(&na);
                b.rewards[i] + 0.9 * q.forward(&ni).unwrap()[0]
            };
            want += (qv - target).powi(2) / 4.0;
        }
        assert!((loss - want).abs() < 1e-10);
    }

    #[test]
    fn buffer_too_small() {
        let buf = ReplayBuffer::new(10, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(4, &mut rng), Err(RlError::BufferTooSmall { have: 0, need: 4 })));
    }

    #[test]
    fn buffer_wraps_at_capacity() {
        let mut buf = ReplayBuffer::new(2, 1, 1);
        for i in 0..3 {
            buf.push(&[i as f64], &[0.0], i as f64, &[0.0], false);
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.rewards, vec![2.0, 1.0]);
    }

    #[test]
    fn soft_update_rates() {
        let (actor, q) = nets(3);
        let mut cfg = AlgoConfig { batch_size: 4, ..AlgoConfig::default() };
        let mut buf = ReplayBuffer::new(8, 3, 2);
        let b = batch([false; 4]);
        for i in 0..4 {
            buf.push(&b.obs[i * 3..i * 3 + 3], &b.actions[i * 2..i * 2 + 2], b.rewards[i], &b.next_obs[i * 3..i * 3 + 3], false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);

        cfg.ddpg_tau = 0.0;
        let mut agent = DdpgAgent::new(actor.clone(), q.clone(), &cfg);
        ddpg_update(&mut agent, &buf, &cfg, &mut rng).unwrap();
        assert_eq!(agent.actor_targ, actor);
        assert_eq!(agent.q_targ, q);
        assert_ne!(agent.actor, actor);

        cfg.ddpg_tau = 1.0;
        ddpg_update(&mut agent, &buf, &cfg, &mut rng).unwrap();
        assert_eq!(agent.actor_targ, agent.actor);
        assert_eq!(agent.q_targ, agent.q);
    }
}
