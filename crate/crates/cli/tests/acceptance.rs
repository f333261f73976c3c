//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run a subset with `cargo test --test acceptance -- 1 6`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use toolkin_core::env::{EnvSpec, EnvVariant};
use toolkin_core::kinematics::{solve_ik_tool, tooltip_offset, tooltip_position};
use toolkin_core::rl::*;
use toolkin_core::toolvision::{average_length, measure_length, synth_tool_image, DetectionSettings, MarkerSpec};
use toolkin_core::trajectory::{average_trajectory, record_rollouts, replay, retarget, smooth_filter, Trajectory};
use toolkin_core::{IkSettings, KinematicChain, Pose, Quat, Vec3};

const SEEDS: [u64; 3] = [1, 2, 3];
const TRAIN_STEPS: u64 = 150_000;
const FINE_TUNE_STEPS: u64 = 30_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn env1() -> EnvSpec {
    EnvSpec::with_variant(EnvVariant::Env1)
}

fn cfg(steps: u64, seed: u64) -> AlgoConfig {
    AlgoConfig { total_steps: steps, seed, ..AlgoConfig::default() }
}

/// Env1 PPO checkpoints for every seed, shared by criteria 3, 4 and 5.
fn ppo_env1() -> &'static [Checkpoint] {
    static CELL: OnceLock<Vec<Checkpoint>> = OnceLock::new();
    CELL.get_or_init(|| SEEDS.iter().map(|&s| train(Algo::Ppo, &env1(), &cfg(TRAIN_STEPS, s), None).unwrap()).collect())
}

// ---------------------------------------------------------------- 1

fn c1_extended_ik() -> Outcome {
    let start = Instant::now();
    let chain = KinematicChain::default();
    let settings = IkSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let targets: Vec<(Pose, f64)> = (0..500)
        .map(|i| {
            let gripper = chain.forward(&chain.random_angles(&mut rng));
            let l = if i % 2 == 0 { 0.125 } else { 0.175 };
            (Pose::new(tooltip_position(&gripper, l), gripper.orientation), l)
        })
        .collect();
    let errors: Vec<f64> = targets
        .par_iter()
        .map(|(t, l)| match solve_ik_tool(&chain, t, *l, &chain.home(), &settings) {
            Ok(q) => tooltip_position(&chain.forward(&q), *l).distance(t.position),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let worst_ik = errors.iter().copied().fold(0.0, f64::max);
    let failures = errors.iter().filter(|e| !e.is_finite()).count();
    let worst_identity = targets
        .iter()
        .map(|(t, l)| tooltip_position(&tooltip_offset(t, *l).unwrap(), *l).distance(t.position))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_ik < 1e-3 && worst_identity <= 1e-12 && secs < 60.0,
        format!("worst tooltip error {worst_ik:.2e} m ({failures} IK failures), offset identity {worst_identity:.1e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 2

fn c2_tool_length() -> Outcome {
    let start = Instant::now();
    let settings = DetectionSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_ratio = 0.0f64;
    let mut sum_err = 0.0;
    for triple in 0..50 {
        let length = rng.random_range(0.10..0.25);
        let mpp = rng.random_range(0.0003..0.0008);
        let px = length / mpp;
        let mut views = Vec::new();
        for view in 0..3 {
            let theta: f64 = rng.random_range(-0.6..0.6);
            let size = rng.random_range(12.0..24.0);
            let (dx, dy) = (px * theta.cos(), px * theta.sin());
            let a = (40.0 + rng.random::<f64>(), 40.0 + (-dy).max(0.0) + rng.random::<f64>());
            let b = (a.0 + dx, a.1 + dy);
            let w = (b.0 + 40.0).ceil() as usize;
            let h = (a.1.max(b.1) + 40.0).ceil() as usize;
            let (img, _) = synth_tool_image(
                w,
                h,
                MarkerSpec::new(a.0, a.1, size, size),
                MarkerSpec::new(b.0, b.1, size, size),
                [60, 70, 80],
                Some(triple * 3 + view),
            )
            .unwrap();
            views.push(measure_length(&img, &settings, mpp).unwrap());
        }
        let mean = average_length(&views).unwrap().length;
        let err = (mean - length).abs();
        sum_err += err;
        worst_ratio = worst_ratio.max(err / (2.0 * mpp).max(0.01 * length));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_ratio <= 1.0 && secs < 30.0,
        format!("mean error {:.2e} m, worst error / allowance {worst_ratio:.3}, {secs:.1}s", sum_err / 50.0),
    )
}

// ---------------------------------------------------------------- 3

fn c3_training() -> Outcome {
    let spec = env1();
    let ppo = ppo_env1();
    let others: Vec<(Algo, u64, EvalReport)> = [Algo::Trpo, Algo::A2c, Algo::Ddpg]
        .iter()
        .flat_map(|&a| SEEDS.iter().map(move |&s| (a, s)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(a, s)| {
            let ck = train(a, &spec, &cfg(TRAIN_STEPS, s), None).unwrap();
            (a, s, evaluate(&ck, &spec, 100).unwrap())
        })
        .collect();
    let ppo_eval: Vec<EvalReport> = ppo.iter().map(|ck| evaluate(ck, &spec, 100).unwrap()).collect();
    let dist = |a: Algo, i: usize| others.iter().find(|(x, s, _)| *x == a && *s == SEEDS[i]).unwrap().2.mean_final_distance;

    let mean_dist = ppo_eval.iter().map(|r| r.mean_final_distance).sum::<f64>() / 3.0;
    let mean_travel = ppo_eval.iter().map(|r| r.mean_travel).sum::<f64>() / 3.0;
    let a = mean_dist <= 0.15 && mean_travel >= 0.10;
    let b = (0..3).all(|i| ppo_eval[i].mean_final_distance < dist(Algo::A2c, i).min(dist(Algo::Ddpg, i)));
    let c_wins = (0..3).filter(|&i| ppo_eval[i].mean_final_distance <= dist(Algo::Trpo, i)).count();
    let c = c_wins >= 2;

    let mut detail = format!("(a) {} ppo dist {mean_dist:.3} m travel {mean_travel:.3} m; ", pf(a));
    detail += &format!("(b) {}; (c) {} ppo<=trpo on {c_wins}/3 | per seed dist", pf(b), pf(c));
    for i in 0..3 {
        detail += &format!(
            " s{}: ppo {:.3} trpo {:.3} a2c {:.3} ddpg {:.3};",
            SEEDS[i],
            ppo_eval[i].mean_final_distance,
            dist(Algo::Trpo, i),
            dist(Algo::A2c, i),
            dist(Algo::Ddpg, i)
        );
    }
    outcome(a && b && c, detail)
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "fail"
    }
}

// ---------------------------------------------------------------- 4

fn c4_tool_length_transfer() -> Outcome {
    let spec = env1();
    let ck = &ppo_env1()[0];
    let runs = record_rollouts(ck, &spec, 100, true).unwrap();
    let avg = average_trajectory(&runs).unwrap();
    let smooth = smooth_filter(&avg, 5, &spec.chain, spec.tool_length_sim, &IkSettings::default()).unwrap();
    let travel = |l: f64| {
        let t: Trajectory = retarget(&smooth, l).unwrap();
        replay(&t, &EnvSpec { tool_length_sim: l, ..spec.clone() }).unwrap()
    };
    let (long, short) = (travel(0.175), travel(0.125));
    let diff = (long.box_travel - short.box_travel).abs();
    let moved = retarget(&avg, 0.125).unwrap();
    let path_err = avg
        .tooltip_path()
        .iter()
        .zip(moved.tooltip_path())
        .map(|(a, b)| a.distance(b))
        .fold(0.0, f64::max);
    outcome(
        diff <= 0.01 && path_err <= 1e-12,
        format!(
            "travel L=0.175 {:.4} m, L=0.125 {:.4} m, |diff| {diff:.2e} m ({} waypoints); tooltip path error {path_err:.1e}",
            long.box_travel,
            short.box_travel,
            smooth.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn c5_fine_tuning() -> Outcome {
    let env3 = EnvSpec::with_variant(EnvVariant::Env3);
    let rows: Vec<(f64, f64, f64, f64)> = SEEDS
        .par_iter()
        .zip(ppo_env1())
        .map(|(&s, pre)| {
            let ft = train(Algo::Ppo, &env3, &cfg(FINE_TUNE_STEPS, s), Some(pre)).unwrap();
            let scratch = train(Algo::Ppo, &env3, &cfg(TRAIN_STEPS + FINE_TUNE_STEPS, s), None).unwrap();
            let last = |c: &Checkpoint| c.curve.last().map_or(f64::NAN, |p| p.1);
            (
                evaluate(&ft, &env3, 100).unwrap().mean_return,
                evaluate(&scratch, &env3, 100).unwrap().mean_return,
                last(&ft),
                last(&scratch),
            )
        })
        .collect();
    let wins = rows.iter().filter(|r| r.0 >= r.1).count();
    let mut detail = format!("fine-tuned >= scratch on {wins}/3 | env3 eval mean return (curve tail)");
    for (s, r) in SEEDS.iter().zip(&rows) {
        detail += &format!(" s{s}: ft {:.2} ({:.2}) scratch {:.2} ({:.2});", r.0, r.2, r.1, r.3);
    }
    outcome(wins >= 2, detail)
}

// ---------------------------------------------------------------- 6

const H: f64 = 1e-5;

/// Worst relative error between `analytic` and central differences of `f`.
fn fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        p[i] = x[i] + H;
        let up = f(&p);
        p[i] = x[i] - H;
        let down = f(&p);
        p[i] = x[i];
        let num = (up - down) / (2.0 * H);
        worst = worst.max((analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1e-6));
    }
    worst
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_policy(rng: &mut ChaCha8Rng, obs: usize, act: usize) -> GaussianPolicy {
    let mut mean = Mlp::new(&[obs, 6, 5, act], 1.0, rng);
    for p in mean.params_mut() {
        *p += 0.1 * rng.random_range(-1.0..1.0);
    }
    GaussianPolicy::new(mean, (0..act).map(|_| rng.random_range(-0.8..0.3)).collect()).unwrap()
}

fn on_policy_batch(policy: &GaussianPolicy, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let (od, ad) = (policy.obs_dim(), policy.act_dim());
    let mut b = Batch { obs_dim: od, act_dim: ad, old_log_std: policy.log_std().to_vec(), ..Batch::default() };
    b.obs = randn(rng, n * od);
    for i in 0..n {
        let o = &b.obs[i * od..(i + 1) * od];
        let (a, lp) = policy.sample(o, rng).unwrap();
        b.old_means.extend(policy.mean_action(o).unwrap());
        b.actions.extend(a);
        b.log_probs.push(lp);
        b.advantages.push(rng.sample(StandardNormal));
        b.returns.push(rng.sample(StandardNormal));
    }
    b
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut sizes = vec![rng.random_range(1..6)];
        sizes.extend((0..rng.random_range(0..3)).map(|_| rng.random_range(1..8)));
        sizes.push(rng.random_range(1..4));
        let net = Mlp::new(&sizes, 1.0, &mut rng);
        let x = randn(&mut rng, sizes[0]);
        let up = randn(&mut rng, *sizes.last().unwrap());
        let (g, d_in) = mlp_gradients(&net, &x, &up).unwrap();
        let dot = |n: &Mlp, x: &[f64]| n.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let mut probe = net.clone();
        worst = worst.max(fd_error(
            |p| {
                probe.params_mut().copy_from_slice(p);
                dot(&probe, &x)
            },
            net.params(),
            &g,
        ));
        worst = worst.max(fd_error(|xi| dot(&net, xi), &x, &d_in));
    }
    out.push(("mlp", worst));

    let policy = random_policy(&mut rng, 4, 3);
    let mut b = on_policy_batch(&policy, 12, &mut rng);
    let coeffs = randn(&mut rng, 12);
    let eval = policy.evaluate(&b.obs, &b.actions, 12).unwrap();
    let g = policy.log_prob_gradient(&eval, &b.actions, &coeffs);
    let mut probe = policy.clone();
    out.push((
        "log-prob",
        fd_error(
            |p| {
                probe.set_params(p);
                let e = probe.evaluate(&b.obs, &b.actions, 12).unwrap();
                e.log_probs.iter().zip(&coeffs).map(|(l, c)| l * c).sum()
            },
            &policy.params(),
            &g,
        ),
    ));

    let (_, g) = a2c_loss_and_gradient(&policy, &b, 0.01).unwrap();
    out.push((
        "a2c",
        fd_error(
            |p| {
                probe.set_params(p);
                a2c_loss_and_gradient(&probe, &b, 0.01).unwrap().0
            },
            &policy.params(),
            &g,
        ),
    ));

    for (i, lp) in b.log_probs.iter_mut().enumerate() {
        *lp += [0.5, 0.0, -0.5][i % 3];
    }
    let (_, g) = ppo_loss_and_gradient(&policy, &b, 0.2).unwrap();
    out.push((
        "ppo",
        fd_error(
            |p| {
                probe.set_params(p);
                ppo_loss_and_gradient(&probe, &b, 0.2).unwrap().0
            },
            &policy.params(),
            &g,
        ),
    ));

    let mut moved = policy.clone();
    moved.update_params(|p| p.iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0)));
    let (_, g) = moved.kl_and_gradient(&b.obs, &b.old_means, &b.old_log_std).unwrap();
    out.push((
        "kl",
        fd_error(
            |p| {
                probe.set_params(p);
                probe.kl_and_gradient(&b.obs, &b.old_means, &b.old_log_std).unwrap().0
            },
            &moved.params(),
            &g,
        ),
    ));

    let value = Mlp::new(&[4, 7, 1], 1.0, &mut rng);
    let (_, g) = value_loss_and_gradient(&value, &b.obs, &b.returns).unwrap();
    let mut vp = value.clone();
    out.push((
        "value",
        fd_error(
            |p| {
                vp.params_mut().copy_from_slice(p);
                value_loss_and_gradient(&vp, &b.obs, &b.returns).unwrap().0
            },
            value.params(),
            &g,
        ),
    ));

    let actor = Mlp::new(&[4, 6, 2], 1.0, &mut rng);
    let q = Mlp::new(&[6, 6, 1], 1.0, &mut rng);
    let n = 6;
    let batch = TransitionBatch {
        obs: randn(&mut rng, n * 4),
        actions: (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        rewards: randn(&mut rng, n),
        next_obs: randn(&mut rng, n * 4),
        dones: (0..n).map(|i| i % 3 == 0).collect(),
    };
    let y = critic_targets(&q, &actor, &batch, 0.99).unwrap();
    let (_, g) = critic_loss_and_gradient(&q, &batch, &y).unwrap();
    let mut qp = q.clone();
    out.push((
        "critic",
        fd_error(
            |p| {
                qp.params_mut().copy_from_slice(p);
                critic_loss_and_gradient(&qp, &batch, &y).unwrap().0
            },
            q.params(),
            &g,
        ),
    ));
    let (_, g) = actor_loss_and_gradient(&actor, &q, &batch.obs, n).unwrap();
    let mut ap = actor.clone();
    out.push((
        "actor",
        fd_error(
            |p| {
                ap.params_mut().copy_from_slice(p);
                actor_loss_and_gradient(&ap, &q, &batch.obs, n).unwrap().0
            },
            actor.params(),
            &g,
        ),
    ));
    out
}

fn quaternion_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if a.iter().map(|v| v * v).sum::<f64>() < 1e-3 {
            continue;
        }
        let q = Quat::from_array(a).unwrap();
        let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let [w, x, y, z] = q.to_array();
        let m = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)).to_rotation_matrix();
        let r = m * nalgebra::Vector3::new(v.x, v.y, v.z);
        worst = worst.max(q.rotate(v).distance(Vec3::new(r.x, r.y, r.z)));
    }
    worst
}

fn gae_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(68);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..80);
        let r = randn(&mut rng, n);
        let v = randn(&mut rng, n);
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last: f64 = rng.sample(StandardNormal);
        let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = compute_advantages(&r, &v, &d, last, g, l).unwrap();
        let next_v = |t: usize| if d[t] { 0.0 } else if t + 1 == n { last } else { v[t + 1] };
        for t in 0..n {
            let mut sum = 0.0;
            for k in t..n {
                sum += (g * l).powi((k - t) as i32) * (r[k] + g * next_v(k) - v[k]);
                if d[k] {
                    break;
                }
            }
            worst = worst.max((adv[t] - sum).abs());
        }
    }
    worst
}

/// (accepted steps, accepted steps with KL above δ).
fn trpo_trust_region() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(69);
    let cfg = AlgoConfig { minibatch: 16, ppo_epochs: 1, ..AlgoConfig::default() };
    let (mut accepted, mut violations) = (0, 0);
    for _ in 0..30 {
        let policy = random_policy(&mut rng, 4, 3);
        let b = on_policy_batch(&policy, 64, &mut rng);
        let mut agent = OnPolicyAgent::new(policy, Mlp::new(&[4, 5, 1], 1.0, &mut rng), &cfg);
        if trpo_update(&mut agent, &b, &cfg, &mut rng).unwrap().accepted {
            accepted += 1;
            let (kl, _) = agent.policy.kl_and_gradient(&b.obs, &b.old_means, &b.old_log_std).unwrap();
            violations += usize::from(kl > cfg.trpo_delta);
        }
    }
    (accepted, violations)
}

fn c6_numerical_core() -> Outcome {
    let grads = gradient_errors();
    let worst_grad = grads.iter().map(|g| g.1).fold(0.0, f64::max);
    let quat = quaternion_error();
    let gae = gae_error();
    let (accepted, violations) = trpo_trust_region();
    let names: Vec<String> = grads.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst_grad < 1e-4 && quat < 1e-9 && gae < 1e-10 && violations == 0 && accepted > 0,
        format!(
            "gradients [{}]; quaternion {quat:.1e}; gae {gae:.1e}; trpo {accepted} accepted, {violations} over δ",
            names.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_toolkin"))
        .env("TOOLKIN_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs every command in `dir` and returns all produced files in order.
fn cli_outputs(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    for (algo, steps) in [("a2c", "2000"), ("trpo", "4096"), ("ppo", "4096"), ("ddpg", "2000")] {
        run_cli(&["train", "--algo", algo, "--env", "env1", "--steps", steps, "--seed", "5", "--out", &p(&format!("{algo}.json"))], threads)?;
        run_cli(&["eval", "--ckpt", &p(&format!("{algo}.json")), "--episodes", "10", "--out", &p(&format!("{algo}.eval.csv"))], threads)?;
    }
    run_cli(&["train", "--algo", "ppo", "--env", "env3", "--steps", "2048", "--seed", "5", "--init", &p("ppo.json"), "--out", &p("ft.json")], threads)?;
    run_cli(&["export-traj", "--ckpt", &p("ppo.json"), "--episodes", "6", "--smooth-k", "5", "--out", &p("traj.csv")], threads)?;
    run_cli(&["retarget", "--traj", &p("traj.csv"), "--real-tool-length", "0.125", "--out", &p("short.csv")], threads)?;
    run_cli(&["replay", "--traj", &p("traj.csv"), "--env", "env1", "--report", &p("long.json")], threads)?;
    run_cli(&["replay", "--traj", &p("short.csv"), "--env", "env1", "--report", &p("short.json")], threads)?;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names.into_iter().map(|n| (n.clone(), std::fs::read(dir.join(&n)).unwrap())).collect())
}

fn c7_determinism() -> Outcome {
    let runs: Result<Vec<_>, String> = ["1", "1", "4"]
        .iter()
        .map(|threads| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            cli_outputs(dir.path(), threads)
        })
        .collect();
    match runs {
        Err(e) => outcome(false, e),
        Ok(runs) => {
            let differing: Vec<&str> = runs[0]
                .iter()
                .filter(|(name, bytes)| runs[1..].iter().any(|r| r.iter().find(|(n, _)| n == name).map(|x| &x.1) != Some(bytes)))
                .map(|(n, _)| n.as_str())
                .collect();
            let same_set = runs.iter().all(|r| r.len() == runs[0].len());
            outcome(
                differing.is_empty() && same_set,
                format!("{} files compared across 3 runs (1, 1 and 4 threads); differing: {differing:?}", runs[0].len()),
            )
        }
    }
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 7] = [
        (1, "extended IK accuracy", c1_extended_ik),
        (2, "tool length detection", c2_tool_length),
        (3, "desk-scale training", c3_training),
        (4, "variable tool length", c4_tool_length_transfer),
        (5, "fine-tuning", c5_fine_tuning),
        (6, "numerical core", c6_numerical_core),
        (7, "determinism", c7_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!result.pass);
        println!(
            "{} criterion {id} {name} [{:.0}s]: {}",
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
