//! Deterministic quasi-static box pushing with a rigidly held tool.
//!
//! The agent commands gripper pose deltas; an IK solve tracks the commanded
//! pose each step, the tool tip follows the gripper, and a planar
//! push resolution moves the box out of the tool. Physics is kinematic:
//! no inertia, no friction, no box rotation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    self, tooltip_position, IkSettings, JointVector, KinematicChain, KinematicsError, NUM_JOINTS,
};
use crate::mathcore::{Pose, Quat, Vec3};

pub const OBS_DIM: usize = 30;
pub const ACTION_DIM: usize = 7;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("start pose not solvable: {0}")]
    StartPose(#[from] KinematicsError),
    #[error("action must have {ACTION_DIM} components, got {0}")]
    ActionDimension(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvVariant {
    /// Reward `-(|x - x*| + |x - y|)`.
    Env1,
    /// Reward `-|x - x*|` only.
    Env2,
    /// As `Env1` with the goal a further 0.10 m along y.
    Env3,
}

impl std::str::FromStr for EnvVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "env1" => Ok(EnvVariant::Env1),
            "env2" => Ok(EnvVariant::Env2),
            "env3" => Ok(EnvVariant::Env3),
            other => Err(format!("unknown environment '{other}'")),
        }
    }
}

/// How the 4-component quaternion part of an action is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuatActionMode {
    /// `normalize(q + dq)`.
    #[default]
    Additive,
    /// `normalize(1 + dq0, dq1, dq2, dq3) ⊗ q`.
    Compose,
}

/// Extra goal distance of `Env3` along y, meters.
pub const ENV3_EXTRA_GOAL_Y: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub variant: EnvVariant,
    pub tool_length_sim: f64,
    /// Goal threshold on `|x - x*| + |x - y|`.
    pub alpha: f64,
    pub max_steps: usize,
    pub box_size: Vec3,
    pub table_height: f64,
    /// Nominal box center; z must rest the box on the table.
    pub box_start: Vec3,
    pub goal_offset_y: f64,
    /// Uniform jitter applied to box and goal x/y at reset.
    pub start_jitter: f64,
    /// Tool tip start position relative to `box_start`.
    pub tip_start_offset: Vec3,
    /// Gripper orientation at reset.
    pub start_orientation: Quat,
    pub max_dpos: f64,
    pub max_dangle: f64,
    pub tool_radius: f64,
    /// Meters per unit of policy output for the position part of an action.
    pub action_scale_pos: f64,
    /// Scale for the quaternion part of an action.
    pub action_scale_quat: f64,
    pub quat_mode: QuatActionMode,
    /// Solver settings for per-step tracking.
    pub ik: IkSettings,
    pub chain: KinematicChain,
}

impl Default for EnvSpec {
    fn default() -> Self {
        let box_size = Vec3::new(0.05, 0.05, 0.05);
        Self {
            variant: EnvVariant::Env1,
            tool_length_sim: 0.175,
            alpha: 0.05,
            max_steps: 100,
            box_size,
            table_height: 0.0,
            box_start: Vec3::new(0.55, -0.15, box_size.z / 2.0),
            goal_offset_y: 0.25,
            start_jitter: 0.01,
            tip_start_offset: Vec3::new(0.0, -0.07, -0.005),
            // Tool pointing straight down: local x onto world -z.
            start_orientation: Quat::from_axis_angle(Vec3::Y, std::f64::consts::FRAC_PI_2),
            max_dpos: 0.05,
            max_dangle: 0.2,
            tool_radius: 0.005,
            action_scale_pos: 0.02,
            action_scale_quat: 0.02,
            quat_mode: QuatActionMode::Additive,
            ik: IkSettings { max_iters: 50, restarts: 0, ..IkSettings::default() },
            chain: KinematicChain::default(),
        }
    }
}

impl EnvSpec {
    pub fn with_variant(variant: EnvVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidSpec(m.into()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.tool_length_sim >= 0.0) {
            return bad("tool_length_sim must be non-negative");
        }
        let s = self.box_size;
        if !(s.x > 0.0 && s.y > 0.0 && s.z > 0.0) {
            return bad("box dimensions must be positive");
        }
        if (self.box_start.z - (self.table_height + s.z / 2.0)).abs() > 1e-9 {
            return bad("box_start.z must rest the box on the table");
        }
        if !(self.max_dpos > 0.0 && self.max_dangle > 0.0) {
            return bad("max_dpos and max_dangle must be positive");
        }
        if !(self.tool_radius >= 0.0 && self.start_jitter >= 0.0) {
            return bad("tool_radius and start_jitter must be non-negative");
        }
        if !(self.action_scale_pos > 0.0 && self.action_scale_quat > 0.0) {
            return bad("action scales must be positive");
        }
        Ok(())
    }

    pub fn goal_offset(&self) -> Vec3 {
        let extra = match self.variant {
            EnvVariant::Env3 => ENV3_EXTRA_GOAL_Y,
            EnvVariant::Env1 | EnvVariant::Env2 => 0.0,
        };
        Vec3::new(0.0, self.goal_offset_y + extra, 0.0)
    }

    fn half_extents(&self) -> Vec3 {
        self.box_size * 0.5
    }

    /// Gripper pose at reset for the configured tool length.
    pub fn start_gripper_pose(&self) -> Pose {
        let tip = Pose::new(self.box_start + self.tip_start_offset, self.start_orientation);
        // tool_length_sim is validated non-negative.
        kinematics::tooltip_offset(&tip, self.tool_length_sim).expect("validated tool length")
    }
}

/// Position and quaternion delta for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dpos: Vec3,
    pub dquat: [f64; 4],
}

impl Action {
    pub fn from_slice(a: &[f64]) -> Result<Self, EnvError> {
        if a.len() != ACTION_DIM {
            return Err(EnvError::ActionDimension(a.len()));
        }
        Ok(Action { dpos: Vec3::new(a[0], a[1], a[2]), dquat: [a[3], a[4], a[5], a[6]] })
    }

    /// Maps a raw policy output through the spec's action scales.
    pub fn from_policy(a: &[f64], spec: &EnvSpec) -> Result<Self, EnvError> {
        let raw = Action::from_slice(a)?;
        let q = spec.action_scale_quat;
        Ok(Action {
            dpos: raw.dpos * spec.action_scale_pos,
            dquat: raw.dquat.map(|c| c * q),
        })
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let [a, b, c, d] = self.dquat;
        [self.dpos.x, self.dpos.y, self.dpos.z, a, b, c, d]
    }

    fn sanitized(&self) -> Action {
        let f = |v: f64| if v.is_finite() { v } else { 0.0 };
        Action {
            dpos: Vec3::new(f(self.dpos.x), f(self.dpos.y), f(self.dpos.z)),
            dquat: self.dquat.map(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub goal_pos: Vec3,
    pub box_pos: Vec3,
    pub tooltip_pos: Vec3,
    pub gripper_pose: Pose,
    pub joint_angles: JointVector,
    /// Per-step angle differences.
    pub joint_velocities: [f64; NUM_JOINTS],
    pub step_count: usize,
    /// Box position at reset, for travel accounting.
    pub box_origin: Vec3,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub goal_reached: bool,
    pub box_travel: f64,
    pub ik_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Step reward for the given variant.
pub fn reward(variant: EnvVariant, x: Vec3, x_goal: Vec3, y: Vec3) -> f64 {
    match variant {
        EnvVariant::Env1 | EnvVariant::Env3 => -(x.distance(x_goal) + x.distance(y)),
        EnvVariant::Env2 => -x.distance(x_goal),
    }
}

pub fn goal_reached(x: Vec3, x_goal: Vec3, y: Vec3, alpha: f64) -> bool {
    x.distance(x_goal) + x.distance(y) <= alpha
}

/// Fixed-order observation:
/// `[x*(3), x(3), y(3), gripper position(3), gripper quaternion wxyz(4),
///   joint angles(7), joint velocities(7)]`.
pub fn observe(state: &EnvState) -> [f64; OBS_DIM] {
    let mut o = [0.0; OBS_DIM];
    o[0..3].copy_from_slice(&state.goal_pos.to_array());
    o[3..6].copy_from_slice(&state.box_pos.to_array());
    o[6..9].copy_from_slice(&state.tooltip_pos.to_array());
    o[9..12].copy_from_slice(&state.gripper_pose.position.to_array());
    o[12..16].copy_from_slice(&state.gripper_pose.orientation.to_array());
    o[16..23].copy_from_slice(&state.joint_angles.0);
    o[23..30].copy_from_slice(&state.joint_velocities);
    o
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxAabb {
    pub center: Vec3,
    pub half_extents: Vec3,
}

/// Tool as a segment from the gripper point to the tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
}

impl Segment {
    fn at(&self, t: f64) -> Vec3 {
        self.start.lerp(self.end, t)
    }
}

type P2 = (f64, f64);

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

// Andrew's monotone chain, counter-clockwise, collinear points dropped.
fn convex_hull(mut pts: Vec<P2>) -> Vec<P2> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

// Outward unit normals and offsets (n·x <= c) of a CCW polygon.
fn half_planes(poly: &[P2]) -> Vec<(P2, f64)> {
    (0..poly.len())
        .filter_map(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let (dx, dy) = (q.0 - p.0, q.1 - p.1);
            let len = dx.hypot(dy);
            (len > 0.0).then(|| {
                let n = (dy / len, -dx / len);
                (n, n.0 * p.0 + n.1 * p.1)
            })
        })
        .collect()
}

/// Quasi-static planar push.
///
/// If the current tool segment penetrates the box (inflated by
/// `tool_radius`), the box slides horizontally along the tool's motion
/// direction just far enough to clear the tool. When the tool did not move
/// horizontally, the shortest horizontal exit is used. The box never moves
/// vertically and never rotates.
pub fn push_resolve(
    aabb: &BoxAabb,
    tool_radius: f64,
    prev: &Segment,
    now: &Segment,
) -> Vec3 {
    let h = aabb.half_extents + Vec3::new(tool_radius, tool_radius, tool_radius);
    let c = aabb.center;

    // Part of the tool within the box's vertical slab.
    let (z0, z1) = (c.z - h.z, c.z + h.z);
    let dz = now.end.z - now.start.z;
    let (t0, t1) = if dz.abs() < 1e-15 {
        if now.start.z > z0 && now.start.z < z1 {
            (0.0, 1.0)
        } else {
            return c;
        }
    } else {
        let ta = (z0 - now.start.z) / dz;
        let tb = (z1 - now.start.z) / dz;
        (ta.min(tb).max(0.0), ta.max(tb).min(1.0))
    };
    if t0 >= t1 && !(t0 == t1 && dz.abs() < 1e-15) {
        return c;
    }

    let a = now.at(t0) - c;
    let b = now.at(t1) - c;
    let mut pts = Vec::with_capacity(8);
    for p in [a, b] {
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            pts.push((p.x + sx * h.x, p.y + sy * h.y));
        }
    }
    let planes = half_planes(&convex_hull(pts));
    // Penetration depth: distance from the origin to the nearest edge.
    let Some(&(n_min, depth)) = planes.iter().min_by(|x, y| x.1.total_cmp(&y.1)) else {
        return c;
    };
    if depth <= 1e-12 {
        return c;
    }

    let tm = 0.5 * (t0 + t1);
    let motion = now.at(tm) - prev.at(tm);
    let u = (motion.x, motion.y);
    let u_len = u.0.hypot(u.1);
    let shift = if u_len > 1e-9 {
        let u = (u.0 / u_len, u.1 / u_len);
        let s = planes
            .iter()
            .filter_map(|&(n, off)| {
                let nu = n.0 * u.0 + n.1 * u.1;
                (nu > 1e-12).then(|| off / nu)
            })
            .fold(f64::INFINITY, f64::min);
        (u.0 * s, u.1 * s)
    } else {
        (n_min.0 * depth, n_min.1 * depth)
    };
    Vec3::new(c.x + shift.0, c.y + shift.1, c.z)
}

/// Environment instance: a validated spec plus cached home angles.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: EnvSpec,
    home: JointVector,
}

impl Simulator {
    pub fn new(spec: EnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let start = spec.start_gripper_pose();
        let home = kinematics::solve_ik(
            &spec.chain,
            &start,
            &spec.chain.home(),
            &IkSettings::default(),
        )?;
        Ok(Self { spec, home })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn home_angles(&self) -> JointVector {
        self.home
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = spec.start_jitter;
        let (jx, jy) = if j > 0.0 {
            (rng.random_range(-j..=j), rng.random_range(-j..=j))
        } else {
            (0.0, 0.0)
        };
        let box_pos = spec.box_start + Vec3::new(jx, jy, 0.0);
        let gripper_pose = spec.chain.forward(&self.home);
        EnvState {
            goal_pos: box_pos + spec.goal_offset(),
            box_pos,
            tooltip_pos: tooltip_position(&gripper_pose, spec.tool_length_sim),
            gripper_pose,
            joint_angles: self.home,
            joint_velocities: [0.0; NUM_JOINTS],
            step_count: 0,
            box_origin: box_pos,
            rng,
        }
    }

    /// Commanded gripper pose after clamping the action.
    pub fn desired_pose(&self, current: &Pose, action: &Action) -> Pose {
        let spec = &self.spec;
        let a = action.sanitized();
        let mut dpos = a.dpos;
        let n = dpos.norm();
        if n > spec.max_dpos {
            dpos = dpos * (spec.max_dpos / n);
        }
        let q = current.orientation;
        let [d0, d1, d2, d3] = a.dquat;
        let candidate = match spec.quat_mode {
            QuatActionMode::Additive => Quat::new(q.w() + d0, q.x() + d1, q.y() + d2, q.z() + d3),
            QuatActionMode::Compose => Quat::new(1.0 + d0, d1, d2, d3).map(|d| d * q),
        }
        .unwrap_or(q);
        let rel = (candidate * q.inverse()).to_rotation_vector();
        let angle = rel.norm();
        let orientation = if angle > spec.max_dangle {
            Quat::from_rotation_vector(rel * (spec.max_dangle / angle)) * q
        } else {
            candidate
        };
        Pose::new(current.position + dpos, orientation)
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> StepResult {
        let desired = self.desired_pose(&state.gripper_pose, action);
        self.step_to_pose(state, &desired)
    }

    /// Tracks `desired` with one IK solve, then resolves contact and scores.
    pub fn step_to_pose(&self, state: &EnvState, desired: &Pose) -> StepResult {
        let spec = &self.spec;
        let mut ik = spec.ik;
        let mut rng = state.rng.clone();
        if ik.restarts > 0 {
            ik.rng_seed = rng.random();
        }
        let (angles, ik_failed) =
            match kinematics::solve_ik(&spec.chain, desired, &state.joint_angles, &ik) {
                Ok(sol) => {
                    let mut out = state.joint_angles;
                    for ((a, s), j) in out.0.iter_mut().zip(sol.0).zip(spec.chain.joints()) {
                        *a += (s - *a).clamp(-j.max_speed, j.max_speed);
                    }
                    (out, false)
                }
                Err(_) => (state.joint_angles, true),
            };
        let gripper_pose = if angles == state.joint_angles {
            state.gripper_pose
        } else {
            spec.chain.forward(&angles)
        };
        let tooltip_pos = tooltip_position(&gripper_pose, spec.tool_length_sim);
        let mut joint_velocities = [0.0; NUM_JOINTS];
        for (v, (a, b)) in joint_velocities.iter_mut().zip(angles.0.iter().zip(&state.joint_angles.0)) {
            *v = a - b;
        }

        let box_pos = push_resolve(
            &BoxAabb { center: state.box_pos, half_extents: spec.half_extents() },
            spec.tool_radius,
            &Segment { start: state.gripper_pose.position, end: state.tooltip_pos },
            &Segment { start: gripper_pose.position, end: tooltip_pos },
        );

        let next_state = EnvState {
            goal_pos: state.goal_pos,
            box_pos,
            tooltip_pos,
            gripper_pose,
            joint_angles: angles,
            joint_velocities,
            step_count: state.step_count + 1,
            box_origin: state.box_origin,
            rng,
        };
        let reached = goal_reached(box_pos, state.goal_pos, tooltip_pos, spec.alpha);
        StepResult {
            reward: reward(spec.variant, box_pos, state.goal_pos, tooltip_pos),
            done: reached || next_state.step_count >= spec.max_steps,
            info: StepInfo {
                goal_reached: reached,
                box_travel: box_pos.distance(state.box_origin),
                ik_failed,
            },
            next_state,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(variant: EnvVariant) -> Simulator {
        Simulator::new(EnvSpec::with_variant(variant)).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let s = sim(EnvVariant::Env1);
        assert_eq!(s.reset(7), s.reset(7));
        assert_ne!(s.reset(7).box_pos, s.reset(8).box_pos);
    }

    #[test]
    fn goal_differs_only_along_y() {
        let s = sim(EnvVariant::Env1);
        let st = s.reset(3);
        let d = st.goal_pos - st.box_pos;
        assert_eq!((d.x, d.z), (0.0, 0.0));
        assert!((d.y - 0.25).abs() < 1e-15);
    }

    #[test]
    fn env3_goal_is_further() {
        let a = sim(EnvVariant::Env1).reset(5);
        let b = sim(EnvVariant::Env3).reset(5);
        assert!((b.goal_pos.y - (a.goal_pos.y + 0.10)).abs() < 1e-12);
        assert_eq!(a.box_pos, b.box_pos);
    }

    #[test]
    fn reset_places_tool_tip_at_start() {
        let s = sim(EnvVariant::Env1);
        let st = s.reset(0);
        let want = s.spec().box_start + s.spec().tip_start_offset;
        assert!(st.tooltip_pos.distance(want) < 2e-4);
    }

    #[test]
    fn zero_action_changes_nothing() {
        let s = sim(EnvVariant::Env1);
        let st = s.reset(1);
        let r = s.step(&st, &Action::default());
        assert_eq!(r.next_state.gripper_pose, st.gripper_pose);
        assert_eq!(r.next_state.box_pos, st.box_pos);
        assert_eq!(r.reward, reward(EnvVariant::Env1, st.box_pos, st.goal_pos, st.tooltip_pos));
        assert!(!r.info.ik_failed);
    }

    #[test]
    fn reward_examples() {
        let o = Vec3::new(0.5, 0.1, 0.02);
        assert_eq!(reward(EnvVariant::Env1, o, o, o), 0.0);
        let goal = o + Vec3::new(0.0, 0.2, 0.0);
        let tip = o - Vec3::new(0.0, 0.05, 0.0);
        assert!((reward(EnvVariant::Env1, o, goal, tip) + 0.25).abs() < 1e-15);
        assert!((reward(EnvVariant::Env3, o, goal, tip) + 0.25).abs() < 1e-15);
        assert!((reward(EnvVariant::Env2, o, goal, tip) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn goal_threshold_examples() {
        let o = Vec3::ZERO;
        assert!(goal_reached(o, o, o, 0.05));
        let g = Vec3::new(0.0, 0.030, 0.0);
        assert!(goal_reached(o, g, Vec3::new(0.019, 0.0, 0.0), 0.05));
        assert!(!goal_reached(o, g, Vec3::new(0.021, 0.0, 0.0), 0.05));
    }

    fn unit_box() -> BoxAabb {
        BoxAabb { center: Vec3::new(0.5, 0.0, 0.025), half_extents: Vec3::new(0.025, 0.025, 0.025) }
    }

    fn vertical_tool(x: f64, y: f64) -> Segment {
        Segment { start: Vec3::new(x, y, 0.2), end: Vec3::new(x, y, 0.02) }
    }

    #[test]
    fn push_without_contact() {
        let b = unit_box();
        let moved = push_resolve(&b, 0.005, &vertical_tool(0.5, -0.2), &vertical_tool(0.5, -0.15));
        assert_eq!(moved, b.center);
    }

    #[test]
    fn push_along_plus_y_by_penetration_depth() {
        // Inflated -y face sits at y = -0.03; the tool advances to -0.01.
        let b = unit_box();
        let moved = push_resolve(&b, 0.005, &vertical_tool(0.5, -0.04), &vertical_tool(0.5, -0.01));
        assert!((moved - Vec3::new(0.5, 0.02, 0.025)).norm() < 1e-15, "{moved:?}");
    }

    #[test]
    fn push_tangential_slide_does_not_move() {
        let b = unit_box();
        // Touching the inflated -y face exactly while sliding along x.
        let moved = push_resolve(&b, 0.005, &vertical_tool(0.48, -0.03), &vertical_tool(0.51, -0.03));
        assert_eq!(moved, b.center);
    }

    #[test]
    fn push_ignores_tool_above_box() {
        let b = unit_box();
        let high = |y| Segment { start: Vec3::new(0.5, y, 0.3), end: Vec3::new(0.5, y, 0.07) };
        assert_eq!(push_resolve(&b, 0.005, &high(-0.04), &high(0.0)), b.center);
    }

    #[test]
    fn push_without_motion_uses_shortest_exit() {
        let b = unit_box();
        let seg = vertical_tool(0.5, -0.025);
        let moved = push_resolve(&b, 0.005, &seg, &seg);
        assert!((moved - Vec3::new(0.5, 0.005, 0.025)).norm() < 1e-15, "{moved:?}");
    }

    #[test]
    fn observation_layout() {
        let s = sim(EnvVariant::Env1);
        let st = s.reset(2);
        let o = observe(&st);
        assert_eq!(o.len(), OBS_DIM);
        assert_eq!(&o[0..3], &st.goal_pos.to_array());
        assert_eq!(&o[12..16], &st.gripper_pose.orientation.to_array());
        let r = s.step(&st, &Action::from_slice(&[0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        assert_ne!(observe(&r.next_state), o);
    }

    #[test]
    fn far_gripper_does_not_move_box() {
        let s = sim(EnvVariant::Env1);
        let mut st = s.reset(4);
        // Lift the tool well clear of the box first.
        for _ in 0..10 {
            st = s.step(&st, &Action { dpos: Vec3::new(0.0, 0.0, 0.05), ..Default::default() }).next_state;
        }
        let before = st.box_pos;
        for a in [Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.0, 0.01, 0.0), Vec3::new(0.0, 0.0, -0.01)] {
            st = s.step(&st, &Action { dpos: a, ..Default::default() }).next_state;
            assert_eq!(st.box_pos, before);
        }
    }

    #[test]
    fn scripted_push_reaches_goal() {
        let s = sim(EnvVariant::Env1);
        let mut st = s.reset(9);
        let mut done = false;
        let mut steps = 0;
        while !done {
            let r = s.step(&st, &Action { dpos: Vec3::new(0.0, 0.02, 0.0), ..Default::default() });
            assert!(!r.info.ik_failed);
            let tip_err = r.next_state.tooltip_pos.distance(tooltip_position(
                &r.next_state.gripper_pose,
                s.spec().tool_length_sim,
            ));
            assert!(tip_err < 1e-9);
            done = r.done;
            st = r.next_state;
            steps += 1;
            if done {
                assert!(r.info.goal_reached, "box {:?} goal {:?}", st.box_pos, st.goal_pos);
            }
        }
        assert!(steps < 30);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = EnvSpec::with_variant(EnvVariant::Env3);
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: EnvSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let partial: EnvSpec = serde_json::from_str(r#"{"variant": "env2", "alpha": 0.04}"#).unwrap();
        assert_eq!(partial.variant, EnvVariant::Env2);
        assert_eq!(partial.alpha, 0.04);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = EnvSpec { alpha: 0.0, ..EnvSpec::default() };
        assert!(matches!(Simulator::new(spec), Err(EnvError::InvalidSpec(_))));
        let spec = EnvSpec { box_start: Vec3::new(0.5, 0.0, 0.2), ..EnvSpec::default() };
        assert!(matches!(Simulator::new(spec), Err(EnvError::InvalidSpec(_))));
    }
}
