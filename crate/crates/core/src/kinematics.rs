//! Forward kinematics, damped-least-squares inverse kinematics and the tool
//! tip extension for a 7-joint revolute chain.
//!
//! The tool is rigidly held along the gripper's local x-axis. Moving the tool
//! tip to a pose is done by moving the gripper to
//! `tip - q (L, 0, 0) q⁻¹` with the same orientation, see [`tooltip_offset`].

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathcore::{Pose, Quat, Vec3};

pub const NUM_JOINTS: usize = 7;

const DEFAULT_CHAIN_JSON: &str = include_str!("../config/chain.json");

// Damping schedule bounds for the accept/reject loop.
const MIN_DAMPING: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e6;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("chain config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("chain invariant violated: {0}")]
    InvariantViolation(String),
    #[error("tool length must be non-negative, got {0}")]
    NegativeLength(f64),
    #[error("target unreachable (best position error {pos_err:.3e} m, orientation error {ori_err:.3e} rad)")]
    Unreachable { pos_err: f64, ori_err: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Rotation axis in the parent frame.
    pub axis: Vec3,
    /// Translation from the parent joint, in the parent frame.
    pub offset: Vec3,
    pub limits: [f64; 2],
    /// Largest allowed change per simulator step, radians.
    pub max_speed: f64,
}

impl JointSpec {
    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.limits[0], self.limits[1])
    }
}

/// Joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub fn zeros() -> Self {
        JointVector([0.0; NUM_JOINTS])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainConfig {
    base_pose: Pose,
    joints: Vec<JointSpec>,
    gripper_offset: Vec3,
}

/// Seven-joint serial arm, validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainConfig", into = "ChainConfig")]
pub struct KinematicChain {
    base_pose: Pose,
    joints: [JointSpec; NUM_JOINTS],
    gripper_offset: Vec3,
}

impl TryFrom<ChainConfig> for KinematicChain {
    type Error = KinematicsError;

    fn try_from(cfg: ChainConfig) -> Result<Self, Self::Error> {
        let invalid = |m: String| Err(KinematicsError::InvariantViolation(m));
        if cfg.joints.len() != NUM_JOINTS {
            return invalid(format!("expected {NUM_JOINTS} joints, found {}", cfg.joints.len()));
        }
        let mut joints = [cfg.joints[0]; NUM_JOINTS];
        for (i, (slot, j)) in joints.iter_mut().zip(&cfg.joints).enumerate() {
            let n = j.axis.norm();
            if !j.axis.is_finite() || (n - 1.0).abs() > 1e-6 {
                return invalid(format!("joint {i}: axis must be unit length (norm {n})"));
            }
            if !j.offset.is_finite() {
                return invalid(format!("joint {i}: non-finite offset"));
            }
            let [lo, hi] = j.limits;
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return invalid(format!("joint {i}: limits must satisfy min < max, got [{lo}, {hi}]"));
            }
            if !(j.max_speed > 0.0) {
                return invalid(format!("joint {i}: max_speed must be positive"));
            }
            *slot = JointSpec { axis: j.axis / n, ..*j };
        }
        let chain = KinematicChain {
            base_pose: cfg.base_pose,
            joints,
            gripper_offset: cfg.gripper_offset,
        };
        if !cfg.gripper_offset.is_finite() || !(chain.reach() > 0.0) {
            return invalid("total reach must be positive".into());
        }
        Ok(chain)
    }
}

impl From<KinematicChain> for ChainConfig {
    fn from(c: KinematicChain) -> Self {
        ChainConfig {
            base_pose: c.base_pose,
            joints: c.joints.to_vec(),
            gripper_offset: c.gripper_offset,
        }
    }
}

impl Default for KinematicChain {
    fn default() -> Self {
        load_chain(DEFAULT_CHAIN_JSON).expect("shipped chain config is valid")
    }
}

/// Parses and validates a chain config.
pub fn load_chain(config_text: &str) -> Result<KinematicChain, KinematicsError> {
    let cfg: ChainConfig = serde_json::from_str(config_text)?;
    KinematicChain::try_from(cfg)
}

/// Per-joint world-frame data produced by forward kinematics.
#[derive(Debug, Clone, Copy)]
pub struct ChainFrames {
    pub joint_positions: [Vec3; NUM_JOINTS],
    pub joint_axes: [Vec3; NUM_JOINTS],
    pub gripper: Pose,
}

impl KinematicChain {
    pub fn base_pose(&self) -> Pose {
        self.base_pose
    }

    pub fn joints(&self) -> &[JointSpec; NUM_JOINTS] {
        &self.joints
    }

    pub fn gripper_offset(&self) -> Vec3 {
        self.gripper_offset
    }

    /// Sum of link offset lengths plus the gripper offset.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.offset.norm()).sum::<f64>() + self.gripper_offset.norm()
    }

    /// Zero angles, clamped into the limits.
    pub fn home(&self) -> JointVector {
        self.clamp(&JointVector::zeros())
    }

    pub fn clamp(&self, angles: &JointVector) -> JointVector {
        let mut out = *angles;
        for (a, j) in out.0.iter_mut().zip(&self.joints) {
            *a = j.clamp(*a);
        }
        out
    }

    pub fn random_angles<R: Rng>(&self, rng: &mut R) -> JointVector {
        let mut out = JointVector::zeros();
        for (a, j) in out.0.iter_mut().zip(&self.joints) {
            *a = rng.random_range(j.limits[0]..j.limits[1]);
        }
        out
    }

    pub fn frames(&self, angles: &JointVector) -> ChainFrames {
        let mut pos = self.base_pose.position;
        let mut rot = self.base_pose.orientation;
        let mut joint_positions = [Vec3::ZERO; NUM_JOINTS];
        let mut joint_axes = [Vec3::ZERO; NUM_JOINTS];
        for (i, (j, &theta)) in self.joints.iter().zip(&angles.0).enumerate() {
            pos += rot.rotate(j.offset);
            joint_positions[i] = pos;
            joint_axes[i] = rot.rotate(j.axis);
            rot = rot * Quat::from_axis_angle(j.axis, theta);
        }
        let gripper = Pose::new(pos + rot.rotate(self.gripper_offset), rot);
        ChainFrames { joint_positions, joint_axes, gripper }
    }

    /// Gripper pose for the given joint angles.
    pub fn forward(&self, angles: &JointVector) -> Pose {
        self.frames(angles).gripper
    }

    /// Geometric Jacobian in the world frame; rows 0..3 linear, 3..6 angular.
    pub fn jacobian(&self, angles: &JointVector) -> SMatrix<f64, 6, NUM_JOINTS> {
        let f = self.frames(angles);
        jacobian_from_frames(&f)
    }
}

fn jacobian_from_frames(f: &ChainFrames) -> SMatrix<f64, 6, NUM_JOINTS> {
    let mut jac = SMatrix::<f64, 6, NUM_JOINTS>::zeros();
    let tip = f.gripper.position;
    for i in 0..NUM_JOINTS {
        let a = f.joint_axes[i];
        let lin = a.cross(tip - f.joint_positions[i]);
        jac[(0, i)] = lin.x;
        jac[(1, i)] = lin.y;
        jac[(2, i)] = lin.z;
        jac[(3, i)] = a.x;
        jac[(4, i)] = a.y;
        jac[(5, i)] = a.z;
    }
    jac
}

/// 6-vector `[target.p - current.p ; rotvec(target.q current.q⁻¹)]`.
pub fn pose_error(current: &Pose, target: &Pose) -> SVector<f64, 6> {
    let dp = target.position - current.position;
    let dr = (target.orientation * current.orientation.inverse()).to_rotation_vector();
    SVector::<f64, 6>::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn split_error(e: &SVector<f64, 6>) -> (f64, f64) {
    let p = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let r = (e[3] * e[3] + e[4] * e[4] + e[5] * e[5]).sqrt();
    (p, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSettings {
    /// Initial damping λ.
    pub damping: f64,
    pub pos_tol: f64,
    pub ori_tol: f64,
    pub max_iters: usize,
    /// Random in-limit restarts after the seeded attempt stalls.
    pub restarts: usize,
    /// Seed for the restart generator.
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            damping: 0.1,
            pos_tol: 1e-4,
            ori_tol: 1e-3,
            max_iters: 200,
            restarts: 50,
            rng_seed: 0,
        }
    }
}

impl IkSettings {
    fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.damping > 0.0 && self.pos_tol > 0.0 && self.ori_tol > 0.0) {
            return Err(KinematicsError::InvariantViolation(
                "IK damping and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Damped least-squares step in which joints resting on a limit and pushed
/// further into it are frozen, so the remaining joints absorb the error.
fn limited_step(
    chain: &KinematicChain,
    angles: &JointVector,
    jac: &SMatrix<f64, 6, NUM_JOINTS>,
    err: &SVector<f64, 6>,
    lambda: f64,
) -> Option<SVector<f64, NUM_JOINTS>> {
    let mut j = *jac;
    let mut frozen = [false; NUM_JOINTS];
    loop {
        let jjt = j * j.transpose() + SMatrix::<f64, 6, 6>::identity() * (lambda * lambda);
        let dq = j.transpose() * jjt.cholesky()?.solve(err);
        let mut changed = false;
        for (i, spec) in chain.joints().iter().enumerate() {
            let a = angles.0[i];
            let pinned = (a <= spec.limits[0] && dq[i] < 0.0) || (a >= spec.limits[1] && dq[i] > 0.0);
            if pinned && !frozen[i] {
                frozen[i] = true;
                j.set_column(i, &SVector::<f64, 6>::zeros());
                changed = true;
            }
        }
        if !changed {
            return Some(dq);
        }
    }
}

/// Outcome of a single damped-least-squares descent.
#[derive(Debug, Clone, Copy)]
pub struct IkAttempt {
    pub angles: JointVector,
    pub pos_err: f64,
    pub ori_err: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// One damped-least-squares descent from `seed`, without restarts.
///
/// A step is accepted only when it does not increase the squared error norm;
/// on rejection the damping is doubled, on acceptance halved.
pub fn dls_descent(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    settings: &IkSettings,
) -> IkAttempt {
    let mut angles = chain.clamp(seed);
    let mut frames = chain.frames(&angles);
    let mut err = pose_error(&frames.gripper, target);
    let mut err_sq = err.norm_squared();
    let mut lambda = settings.damping;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        let (p, r) = split_error(&err);
        if p < settings.pos_tol && r < settings.ori_tol {
            return IkAttempt { angles, pos_err: p, ori_err: r, converged: true, iterations };
        }
        iterations += 1;
        let Some(dq) = limited_step(chain, &angles, &jacobian_from_frames(&frames), &err, lambda) else {
            lambda *= 2.0;
            continue;
        };
        let mut trial = angles;
        for (i, a) in trial.0.iter_mut().enumerate() {
            *a += dq[i];
        }
        let trial = chain.clamp(&trial);
        let trial_frames = chain.frames(&trial);
        let trial_err = pose_error(&trial_frames.gripper, target);
        let trial_sq = trial_err.norm_squared();
        if trial_sq <= err_sq {
            let progress = err_sq - trial_sq;
            angles = trial;
            frames = trial_frames;
            err = trial_err;
            err_sq = trial_sq;
            lambda = (lambda * 0.5).max(MIN_DAMPING);
            // Clamped against a limit with no measurable progress.
            if progress <= 1e-30 {
                break;
            }
        } else {
            lambda *= 2.0;
            if lambda > MAX_DAMPING {
                break;
            }
        }
    }
    let (p, r) = split_error(&err);
    IkAttempt {
        angles,
        pos_err: p,
        ori_err: r,
        converged: p < settings.pos_tol && r < settings.ori_tol,
        iterations,
    }
}

/// Joint angles placing the gripper at `target`.
///
/// Starts from `seed`; if that descent stalls, retries from uniformly random
/// in-limit angles up to `settings.restarts` times.
pub fn solve_ik(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    settings: &IkSettings,
) -> Result<JointVector, KinematicsError> {
    settings.validate()?;
    let first = dls_descent(chain, target, seed, settings);
    if first.converged {
        return Ok(first.angles);
    }
    let mut best = first;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
    for _ in 0..settings.restarts {
        let start = chain.random_angles(&mut rng);
        let attempt = dls_descent(chain, target, &start, settings);
        if attempt.converged {
            return Ok(attempt.angles);
        }
        if attempt.pos_err + attempt.ori_err < best.pos_err + best.ori_err {
            best = attempt;
        }
    }
    Err(KinematicsError::Unreachable { pos_err: best.pos_err, ori_err: best.ori_err })
}

/// Gripper pose that puts a tool of `tool_length` (along local x) at `target`.
pub fn tooltip_offset(target: &Pose, tool_length: f64) -> Result<Pose, KinematicsError> {
    if !(tool_length >= 0.0) {
        return Err(KinematicsError::NegativeLength(tool_length));
    }
    let v = target.orientation.rotate(Vec3::new(tool_length, 0.0, 0.0));
    Ok(Pose::new(target.position - v, target.orientation))
}

/// Tool tip position for a gripper pose; inverse of [`tooltip_offset`].
pub fn tooltip_position(gripper: &Pose, tool_length: f64) -> Vec3 {
    gripper.position + gripper.orientation.rotate(Vec3::new(tool_length, 0.0, 0.0))
}

/// [`solve_ik`] on the gripper pose that places the tool tip at `tooltip_target`.
pub fn solve_ik_tool(
    chain: &KinematicChain,
    tooltip_target: &Pose,
    tool_length: f64,
    seed: &JointVector,
    settings: &IkSettings,
) -> Result<JointVector, KinematicsError> {
    let gripper_target = tooltip_offset(tooltip_target, tool_length)?;
    solve_ik(chain, &gripper_target, seed, settings)
}

/// Whether the IK solver reaches `pose` from the home configuration.
pub fn reachable(chain: &KinematicChain, pose: &Pose, settings: &IkSettings) -> bool {
    solve_ik(chain, pose, &chain.home(), settings).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> KinematicChain {
        KinematicChain::default()
    }

    fn config_value() -> serde_json::Value {
        serde_json::from_str(DEFAULT_CHAIN_JSON).unwrap()
    }

    #[test]
    fn default_chain_loads() {
        let c = chain();
        assert_eq!(c.joints().len(), 7);
        // 0.25 + 0.05 + 0.2 + 0.15 + 0.2 + 0.1 + 0 + 0.05
        assert!((c.reach() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn six_joints_rejected() {
        let mut v = config_value();
        v["joints"].as_array_mut().unwrap().pop();
        let err = load_chain(&v.to_string()).unwrap_err();
        assert!(matches!(err, KinematicsError::InvariantViolation(_)), "{err}");
    }

    #[test]
    fn inverted_limits_rejected() {
        let mut v = config_value();
        v["joints"][3]["limits"] = serde_json::json!([1.0, 1.0]);
        assert!(matches!(
            load_chain(&v.to_string()),
            Err(KinematicsError::InvariantViolation(_))
        ));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(load_chain("{ joints: "), Err(KinematicsError::Parse(_))));
    }

    #[test]
    fn home_pose_hand_composed() {
        // All axes rotate by zero, so offsets simply add up along the base frame.
        let p = chain().forward(&JointVector::zeros());
        assert!((p.position - Vec3::new(0.75, 0.0, 0.25)).norm() < 1e-15);
        assert!(p.orientation.angle_to(Quat::IDENTITY) < 1e-12);
    }

    #[test]
    fn wrist_roll_about_gripper_axis_keeps_position() {
        let mut v = config_value();
        v["gripper_offset"] = serde_json::json!([0.0, 0.0, 0.05]);
        let c = load_chain(&v.to_string()).unwrap();
        let base = JointVector([0.3, -0.4, 0.2, 0.9, -0.1, 0.5, 0.0]);
        let mut rolled = base;
        rolled.0[6] = 1.1;
        let a = c.forward(&base);
        let b = c.forward(&rolled);
        assert!((a.position - b.position).norm() < 1e-12);
        assert!((a.orientation.angle_to(b.orientation) - 1.1).abs() < 1e-9);
    }

    #[test]
    fn first_joint_lipschitz() {
        let c = chain();
        let q = JointVector([0.2, 0.3, -0.5, 1.0, 0.4, -0.7, 0.1]);
        for &delta in &[1e-3, 0.05, 0.3] {
            let mut q2 = q;
            q2.0[0] += delta;
            let moved = c.forward(&q).position.distance(c.forward(&q2).position);
            assert!(moved <= c.reach() * delta + 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = chain();
        let q = JointVector([0.4, -0.6, 0.3, 1.2, -0.8, 0.5, 0.2]);
        let jac = c.jacobian(&q);
        let h = 1e-6;
        for i in 0..NUM_JOINTS {
            let mut qp = q;
            let mut qm = q;
            qp.0[i] += h;
            qm.0[i] -= h;
            let pp = c.forward(&qp);
            let pm = c.forward(&qm);
            let dp = (pp.position - pm.position) / (2.0 * h);
            let dr = (pp.orientation * pm.orientation.inverse()).to_rotation_vector() / (2.0 * h);
            let fd = [dp.x, dp.y, dp.z, dr.x, dr.y, dr.z];
            for (r, v) in fd.iter().enumerate() {
                assert!((jac[(r, i)] - v).abs() < 1e-7, "J[{r},{i}] {} vs {v}", jac[(r, i)]);
            }
        }
    }

    #[test]
    fn tooltip_offset_examples() {
        let id = Pose::new(Vec3::new(0.8, 0.0, 0.2), Quat::IDENTITY);
        let g = tooltip_offset(&id, 0.175).unwrap();
        assert!((g.position - Vec3::new(0.625, 0.0, 0.2)).norm() < 1e-15);
        assert_eq!(tooltip_offset(&id, 0.0).unwrap(), id);

        let rz = Pose::new(Vec3::new(0.6, 0.1, 0.1), Quat::from_axis_angle(Vec3::Z, FRAC_PI_2));
        let g = tooltip_offset(&rz, 0.125).unwrap();
        assert!((g.position - Vec3::new(0.6, -0.025, 0.1)).norm() < 1e-15);
        assert_eq!(g.orientation, rz.orientation);

        assert!(matches!(tooltip_offset(&id, -0.01), Err(KinematicsError::NegativeLength(_))));
    }

    #[test]
    fn ik_fixed_point() {
        let c = chain();
        let q0 = JointVector([0.1, -0.5, 0.3, 1.1, -0.2, 0.8, 0.4]);
        let target = c.forward(&q0);
        let sol = solve_ik(&c, &target, &q0, &IkSettings::default()).unwrap();
        assert_eq!(sol, q0);
    }

    #[test]
    fn ik_far_target_unreachable() {
        let c = chain();
        let target = Pose::new(Vec3::new(2.0 * c.reach(), 0.0, 0.0), Quat::IDENTITY);
        let settings = IkSettings { restarts: 2, ..IkSettings::default() };
        assert!(matches!(
            solve_ik(&c, &target, &c.home(), &settings),
            Err(KinematicsError::Unreachable { .. })
        ));
        assert!(!reachable(&c, &target, &settings));
    }

    #[test]
    fn ik_accepted_steps_never_increase_error() {
        let c = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let settings = IkSettings { max_iters: 1, ..IkSettings::default() };
        for _ in 0..50 {
            let target = c.forward(&c.random_angles(&mut rng));
            let mut q = c.random_angles(&mut rng);
            let mut prev = pose_error(&c.forward(&q), &target).norm_squared();
            for _ in 0..30 {
                q = dls_descent(&c, &target, &q, &settings).angles;
                let now = pose_error(&c.forward(&q), &target).norm_squared();
                assert!(now <= prev);
                prev = now;
            }
        }
    }

    #[test]
    fn ik_round_trip_on_500_fk_targets() {
        let c = chain();
        let s = IkSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let target = c.forward(&c.random_angles(&mut rng));
            let q = solve_ik(&c, &target, &c.home(), &s).unwrap();
            let got = c.forward(&q);
            assert!(got.position.distance(target.position) < 1e-3);
            assert!(got.orientation.angle_to(target.orientation) < 1e-2);
        }
    }

    #[test]
    fn reachable_home_and_determinism() {
        let c = chain();
        let s = IkSettings::default();
        assert!(reachable(&c, &c.forward(&c.home()), &s));
        let edge = Pose::new(Vec3::new(0.99 * c.reach(), 0.0, 0.0), Quat::IDENTITY);
        let first = reachable(&c, &edge, &s);
        for _ in 0..3 {
            assert_eq!(reachable(&c, &edge, &s), first);
        }
    }

    #[test]
    fn tool_with_zero_length_matches_plain_ik() {
        let c = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = c.forward(&c.random_angles(&mut rng));
        let s = IkSettings::default();
        let a = solve_ik(&c, &target, &c.home(), &s).unwrap();
        let b = solve_ik_tool(&c, &target, 0.0, &c.home(), &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_serializes_back_to_same_chain() {
        let c = chain();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(load_chain(&s).unwrap(), c);
    }
}
