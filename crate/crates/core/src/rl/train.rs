//! Collection/update loops, deterministic evaluation and single-episode
//! rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Agent, Arch, Checkpoint, DdpgTargets};
use super::ddpg::{ddpg_update, DdpgAgent, ReplayBuffer};
use super::gae::compute_advantages;
use super::mlp::Mlp;
use super::onpolicy::{a2c_update, ppo_update, trpo_update, Batch, OnPolicyAgent};
use super::policy::{gaussian_log_prob, GaussianPolicy};
use super::{Algo, AlgoConfig, RlError};
use crate::env::{observe, Action, EnvSpec, EnvState, Simulator, ACTION_DIM, OBS_DIM};
use crate::mathcore::Pose;

/// Reset seed of evaluation episode 0; episode `i` uses `EVAL_SEED_BASE + i`.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

fn env_action(raw: &[f64], spec: &EnvSpec) -> Result<Action, RlError> {
    let clipped: Vec<f64> = raw.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    Ok(Action::from_policy(&clipped, spec)?)
}

/// Independent stream per worker, derived from the master seed.
fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64 + 1);
    rng
}

struct Worker {
    state: EnvState,
    rng: ChaCha8Rng,
    ep_return: f64,
}

impl Worker {
    fn new(sim: &Simulator, mut rng: ChaCha8Rng) -> Self {
        let state = sim.reset(rng.random());
        Self { state, rng, ep_return: 0.0 }
    }
}

#[derive(Default)]
struct Segment {
    obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    means: Vec<f64>,
    /// Steps cut by the time limit, with the observation reached.
    truncated: Vec<(usize, [f64; OBS_DIM])>,
    finished: Vec<f64>,
}

struct CurveLogger {
    interval: u64,
    next: u64,
    pending: Vec<f64>,
    curve: Vec<(u64, f64)>,
}

impl CurveLogger {
    fn new(interval: usize, start: u64, curve: Vec<(u64, f64)>) -> Self {
        let interval = interval as u64;
        Self { interval, next: start + interval, pending: Vec::new(), curve }
    }

    fn record(&mut self, returns: &[f64], steps: u64) {
        self.pending.extend(returns);
        if steps >= self.next {
            if !self.pending.is_empty() {
                let mean = self.pending.iter().sum::<f64>() / self.pending.len() as f64;
                self.curve.push((steps, mean));
                self.pending.clear();
            }
            while self.next <= steps {
                self.next += self.interval;
            }
        }
    }
}

fn collect(
    policy: &GaussianPolicy,
    value: &Mlp,
    sim: &Simulator,
    workers: &mut [Worker],
    nsteps: usize,
    cfg: &AlgoConfig,
) -> Result<(Batch, Vec<f64>), RlError> {
    let spec = sim.spec();
    let w = workers.len();
    let k = policy.act_dim();
    let log_std = policy.log_std().to_vec();
    let mut segs: Vec<Segment> = (0..w).map(|_| Segment::default()).collect();

    for t in 0..nsteps {
        let obs_all: Vec<f64> = workers.iter().flat_map(|wk| observe(&wk.state)).collect();
        let tape = policy.mean.forward_batch(&obs_all, w)?;
        let means = tape.output();
        workers
            .par_iter_mut()
            .zip(segs.par_iter_mut())
            .enumerate()
            .try_for_each(|(i, (wk, seg))| -> Result<(), RlError> {
                let mean = &means[i * k..(i + 1) * k];
                let action: Vec<f64> = mean
                    .iter()
                    .zip(&log_std)
                    .map(|(m, ls)| m + ls.exp() * wk.rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let lp = gaussian_log_prob(mean, &log_std, &action);
                let r = sim.step(&wk.state, &env_action(&action, spec)?);
                seg.obs.extend_from_slice(&obs_all[i * OBS_DIM..(i + 1) * OBS_DIM]);
                seg.actions.extend(&action);
                seg.log_probs.push(lp);
                seg.means.extend_from_slice(mean);
                seg.rewards.push(r.reward);
                seg.dones.push(r.done);
                wk.ep_return += r.reward;
                if r.done {
                    if !r.info.goal_reached {
                        seg.truncated.push((t, observe(&r.next_state)));
                    }
                    seg.finished.push(wk.ep_return);
                    wk.ep_return = 0.0;
                    wk.state = sim.reset(wk.rng.random());
                } else {
                    wk.state = r.next_state;
                }
                Ok(())
            })?;
    }

    let mut batch = Batch {
        obs_dim: OBS_DIM,
        act_dim: k,
        old_log_std: log_std,
        ..Batch::default()
    };
    let mut finished = Vec::new();
    for (wk, mut seg) in workers.iter().zip(segs) {
        let values = value.forward_batch(&seg.obs, nsteps)?.output().to_vec();
        let last_value = value.forward(&observe(&wk.state))?[0];
        if !seg.truncated.is_empty() {
            let tail: Vec<f64> = seg.truncated.iter().flat_map(|(_, o)| *o).collect();
            let boot = value.forward_batch(&tail, seg.truncated.len())?;
            for ((t, _), v) in seg.truncated.iter().zip(boot.output()) {
                seg.rewards[*t] += cfg.gamma * v;
            }
        }
        let (adv, ret) = compute_advantages(&seg.rewards, &values, &seg.dones, last_value, cfg.gamma, cfg.gae_lambda)?;
        batch.obs.extend(seg.obs);
        batch.actions.extend(seg.actions);
        batch.log_probs.extend(seg.log_probs);
        batch.old_means.extend(seg.means);
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        finished.extend(seg.finished);
    }
    Ok((batch, finished))
}

fn arch_for(cfg: &AlgoConfig) -> Arch {
    Arch { obs_dim: OBS_DIM, act_dim: ACTION_DIM, hidden: cfg.hidden.clone() }
}

fn check_init(init: &Checkpoint, algo: Algo, arch: &Arch) -> Result<(), RlError> {
    init.validate()?;
    if init.algo != algo {
        return Err(RlError::CheckpointMismatch(format!("checkpoint was trained with {}, not {algo}", init.algo)));
    }
    if &init.arch != arch {
        return Err(RlError::CheckpointMismatch(format!("architecture {:?} differs from {:?}", init.arch, arch)));
    }
    Ok(())
}

/// Trains `algo` on `spec` for `cfg.total_steps` environment steps,
/// optionally continuing from `init` (e.g. fine-tuning on a new variant).
pub fn train(algo: Algo, spec: &EnvSpec, cfg: &AlgoConfig, init: Option<&Checkpoint>) -> Result<Checkpoint, RlError> {
    cfg.validate()?;
    let sim = Simulator::new(spec.clone())?;
    let arch = arch_for(cfg);
    if let Some(ck) = init {
        check_init(ck, algo, &arch)?;
    }
    match algo {
        Algo::Ddpg => train_ddpg(&sim, cfg, arch, init),
        _ => train_on_policy(algo, &sim, cfg, arch, init),
    }
}

fn train_on_policy(algo: Algo, sim: &Simulator, cfg: &AlgoConfig, arch: Arch, init: Option<&Checkpoint>) -> Result<Checkpoint, RlError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (policy, value) = match init {
        Some(ck) => (
            GaussianPolicy::new(ck.weights.clone(), ck.log_std.clone().expect("validated"))?,
            ck.value_weights.clone().expect("validated"),
        ),
        None => {
            let policy = GaussianPolicy::init(&arch.policy_sizes(), cfg.init_log_std, &mut master);
            let value = Mlp::new(&arch.value_sizes(), 1.0, &mut master);
            (policy, value)
        }
    };
    let mut agent = OnPolicyAgent::new(policy, value, cfg);
    let start = init.map_or(0, |c| c.steps_trained);
    let mut log = CurveLogger::new(cfg.rollout_horizon, start, init.map_or_else(Vec::new, |c| c.curve.clone()));

    let w = cfg.num_workers;
    let mut workers: Vec<Worker> = (0..w).map(|i| Worker::new(sim, worker_rng(cfg.seed, i))).collect();
    let per_worker = match algo {
        Algo::A2c => cfg.a2c_nsteps,
        _ => cfg.rollout_horizon.div_ceil(w),
    };
    let mut done_steps: u64 = 0;
    while done_steps < cfg.total_steps {
        let remaining = (cfg.total_steps - done_steps).div_ceil(w as u64) as usize;
        let nsteps = per_worker.min(remaining);
        let (batch, finished) = collect(&agent.policy, &agent.value, sim, &mut workers, nsteps, cfg)?;
        match algo {
            Algo::A2c => a2c_update(&mut agent, &batch, cfg)?,
            Algo::Ppo => ppo_update(&mut agent, &batch, cfg, &mut master)?,
            Algo::Trpo => trpo_update(&mut agent, &batch, cfg, &mut master)?,
            Algo::Ddpg => unreachable!("handled by train_ddpg"),
        };
        done_steps += (nsteps * w) as u64;
        log.record(&finished, start + done_steps);
    }

    Ok(Checkpoint {
        algo,
        arch,
        log_std: Some(agent.policy.log_std().to_vec()),
        weights: agent.policy.mean,
        value_weights: Some(agent.value),
        q_weights: None,
        target_weights: None,
        config: cfg.clone(),
        env: sim.spec().clone(),
        steps_trained: start + done_steps,
        seed: cfg.seed,
        rng: master,
        curve: log.curve,
    })
}

fn train_ddpg(sim: &Simulator, cfg: &AlgoConfig, arch: Arch, init: Option<&Checkpoint>) -> Result<Checkpoint, RlError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = match init {
        Some(ck) => {
            let mut a = DdpgAgent::new(ck.weights.clone(), ck.q_weights.clone().expect("validated"), cfg);
            let t = ck.target_weights.clone().expect("validated");
            a.actor_targ = t.actor;
            a.q_targ = t.q;
            a
        }
        None => {
            let actor = Mlp::new(&arch.policy_sizes(), 0.01, &mut master);
            let q = Mlp::new(&arch.q_sizes(), 1.0, &mut master);
            DdpgAgent::new(actor, q, cfg)
        }
    };
    let spec = sim.spec();
    let start = init.map_or(0, |c| c.steps_trained);
    let mut log = CurveLogger::new(cfg.rollout_horizon, start, init.map_or_else(Vec::new, |c| c.curve.clone()));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, OBS_DIM, ACTION_DIM);
    let mut worker = Worker::new(sim, worker_rng(cfg.seed, 0));
    let updates = ((cfg.update_every as f64) * cfg.updates_per_step).round().max(1.0) as usize;

    for step in 1..=cfg.total_steps {
        let obs = observe(&worker.state);
        let action: Vec<f64> = agent
            .act(&obs)?
            .into_iter()
            .map(|a| (a + cfg.exploration_sigma * worker.rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0))
            .collect();
        let r = sim.step(&worker.state, &env_action(&action, spec)?);
        buffer.push(&obs, &action, r.reward, &observe(&r.next_state), r.info.goal_reached);
        worker.ep_return += r.reward;
        let mut finished = Vec::new();
        if r.done {
            finished.push(worker.ep_return);
            worker.ep_return = 0.0;
            worker.state = sim.reset(worker.rng.random());
        } else {
            worker.state = r.next_state;
        }
        if step as usize >= cfg.update_after && step as usize % cfg.update_every == 0 && buffer.len() >= cfg.batch_size {
            for _ in 0..updates {
                ddpg_update(&mut agent, &buffer, cfg, &mut master)?;
            }
        }
        log.record(&finished, start + step);
    }

    Ok(Checkpoint {
        algo: Algo::Ddpg,
        arch,
        weights: agent.actor,
        log_std: None,
        value_weights: None,
        q_weights: Some(agent.q),
        target_weights: Some(DdpgTargets { actor: agent.actor_targ, q: agent.q_targ }),
        config: cfg.clone(),
        env: spec.clone(),
        steps_trained: start + cfg.total_steps,
        seed: cfg.seed,
        rng: master,
        curve: log.curve,
    })
}

/// One noise-free episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub initial: EnvState,
    pub final_state: EnvState,
    /// Gripper pose after each step.
    pub gripper_poses: Vec<Pose>,
    pub total_reward: f64,
    pub goal_reached: bool,
    pub ik_failures: usize,
}

impl EpisodeRecord {
    pub fn final_distance(&self) -> f64 {
        self.final_state.box_pos.distance(self.final_state.goal_pos)
    }

    pub fn box_travel(&self) -> f64 {
        self.final_state.box_pos.distance(self.initial.box_pos)
    }
}

pub fn run_episode(agent: &Agent, sim: &Simulator, seed: u64) -> Result<EpisodeRecord, RlError> {
    let initial = sim.reset(seed);
    let mut state = initial.clone();
    let mut rec = EpisodeRecord {
        initial,
        final_state: state.clone(),
        gripper_poses: Vec::new(),
        total_reward: 0.0,
        goal_reached: false,
        ik_failures: 0,
    };
    loop {
        let a = agent.act_deterministic(&observe(&state))?;
        let r = sim.step(&state, &env_action(&a, sim.spec())?);
        rec.total_reward += r.reward;
        rec.ik_failures += usize::from(r.info.ik_failed);
        rec.gripper_poses.push(r.next_state.gripper_pose);
        state = r.next_state;
        if r.done {
            rec.goal_reached = r.info.goal_reached;
            break;
        }
    }
    rec.final_state = state;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_final_distance: f64,
    pub mean_travel: f64,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Noise-free evaluation over episodes seeded `EVAL_SEED_BASE + i`.
pub fn evaluate(ckpt: &Checkpoint, spec: &EnvSpec, episodes: usize) -> Result<EvalReport, RlError> {
    if episodes == 0 {
        return Err(RlError::Config("episodes must be at least 1".into()));
    }
    let sim = Simulator::new(spec.clone())?;
    let agent = ckpt.agent()?;
    let recs = (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(&agent, &sim, EVAL_SEED_BASE + i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let n = episodes as f64;
    Ok(EvalReport {
        episodes,
        mean_final_distance: recs.iter().map(EpisodeRecord::final_distance).sum::<f64>() / n,
        mean_travel: recs.iter().map(EpisodeRecord::box_travel).sum::<f64>() / n,
        success_rate: recs.iter().filter(|r| r.goal_reached).count() as f64 / n,
        mean_return: recs.iter().map(|r| r.total_reward).sum::<f64>() / n,
    })
}
