//! Recorded gripper trajectories: averaging over episodes, subsampling with
//! a reachability filter, retargeting to another tool length, and replay
//! through the simulator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvSpec, Simulator};
use crate::kinematics::{self, tooltip_position, IkSettings, KinematicChain};
use crate::mathcore::{Pose, Quat, Vec3};
use crate::rl::{run_episode, Checkpoint, RlError};

/// Samples per averaged trajectory.
pub const AVERAGE_SAMPLES: usize = 100;
/// Reset seed of recorded episode 0.
pub const RECORD_SEED_BASE: u64 = 2_000_000;
/// Episodes attempted per requested trajectory before giving up.
pub const RECORD_RETRY_FACTOR: usize = 10;
/// Reset seed used by [`replay`].
pub const REPLAY_SEED: u64 = 3_000_000;
/// Gripper position error under which a replayed waypoint counts as reached.
pub const REACHED_TOL: f64 = 1e-3;

const UNIT_QUAT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("no trajectories given")]
    EmptyList,
    #[error("trajectory has no waypoints")]
    NoWaypoints,
    #[error("every waypoint was filtered out")]
    AllWaypointsFiltered,
    #[error("tool length must be non-negative, got {0}")]
    NegativeLength(f64),
    #[error("subsample step must be at least 1")]
    InvalidSubsample,
    #[error("trajectories disagree on tool length")]
    MixedToolLengths,
    #[error("trajectory tool length {traj} differs from environment tool length {env}")]
    ToolLengthMismatch { traj: f64, env: f64 },
    #[error("only {found} of {wanted} episodes completed after {attempts} attempts")]
    InsufficientCompleteEpisodes { wanted: usize, found: usize, attempts: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing '# tool_length=<meters>' line")]
    MissingToolLength,
    #[error("line {line}: quaternion is not unit-norm")]
    NonUnitQuaternion { line: usize },
    #[error("line {line}: time index does not increase")]
    NonMonotoneTime { line: usize },
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: u64,
    /// Gripper pose.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tool_length: f64,
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    /// Builds a trajectory with `t = 0, 1, …`.
    pub fn from_poses(tool_length: f64, poses: impl IntoIterator<Item = Pose>) -> Self {
        let waypoints = poses.into_iter().enumerate().map(|(t, pose)| Waypoint { t: t as u64, pose }).collect();
        Self { tool_length, waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn tooltip_path(&self) -> Vec<Vec3> {
        self.waypoints.iter().map(|w| tooltip_position(&w.pose, self.tool_length)).collect()
    }
}

/// Noise-free policy rollouts, one trajectory of post-step gripper poses
/// per episode. With `complete_only`, episodes that miss the goal are
/// skipped and further seeds are tried, up to `n · RECORD_RETRY_FACTOR`
/// episodes in total.
pub fn record_rollouts(
    ckpt: &Checkpoint,
    spec: &EnvSpec,
    n: usize,
    complete_only: bool,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    if n == 0 {
        return Err(TrajectoryError::EmptyList);
    }
    let sim = Simulator::new(spec.clone())?;
    let agent = ckpt.agent()?;
    let cap = if complete_only { n * RECORD_RETRY_FACTOR } else { n };
    let mut out = Vec::with_capacity(n);
    let mut next = 0;
    while out.len() < n && next < cap {
        let chunk = (n - out.len()).min(cap - next);
        let recs = (next..next + chunk)
            .into_par_iter()
            .map(|i| run_episode(&agent, &sim, RECORD_SEED_BASE + i as u64))
            .collect::<Result<Vec<_>, _>>()?;
        next += chunk;
        out.extend(
            recs.into_iter()
                .filter(|r| !complete_only || r.goal_reached)
                .map(|r| Trajectory::from_poses(spec.tool_length_sim, r.gripper_poses)),
        );
    }
    out.truncate(n);
    if out.len() < n {
        return Err(TrajectoryError::InsufficientCompleteEpisodes { wanted: n, found: out.len(), attempts: next });
    }
    Ok(out)
}

/// Resamples to `AVERAGE_SAMPLES` points over normalized phase: positions
/// by linear interpolation, orientations by nearest neighbor.
fn resample(traj: &Trajectory) -> Vec<(Vec3, Quat)> {
    let w = &traj.waypoints;
    let last = (w.len() - 1) as f64;
    (0..AVERAGE_SAMPLES)
        .map(|i| {
            let u = i as f64 / (AVERAGE_SAMPLES - 1) as f64 * last;
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(w.len() - 1);
            let pos = w[lo].pose.position.lerp(w[hi].pose.position, u - lo as f64);
            (pos, w[u.round() as usize].pose.orientation)
        })
        .collect()
}

/// How episodes of different lengths are aligned before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageMode {
    /// Resample every episode to [`AVERAGE_SAMPLES`] points over normalized phase.
    #[default]
    Phase,
    /// Average per absolute step, truncated to the shortest episode.
    Timestep,
}

impl std::str::FromStr for AverageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phase" => Ok(Self::Phase),
            "timestep" => Ok(Self::Timestep),
            _ => Err(format!("unknown average mode '{s}' (expected phase or timestep)")),
        }
    }
}

/// Phase-normalized mean of several episodes.
pub fn average_trajectory(trajs: &[Trajectory]) -> Result<Trajectory, TrajectoryError> {
    average_trajectory_with(trajs, AverageMode::Phase)
}

pub fn average_trajectory_with(trajs: &[Trajectory], mode: AverageMode) -> Result<Trajectory, TrajectoryError> {
    let first = trajs.first().ok_or(TrajectoryError::EmptyList)?;
    if trajs.iter().any(|t| t.tool_length != first.tool_length) {
        return Err(TrajectoryError::MixedToolLengths);
    }
    if trajs.iter().any(Trajectory::is_empty) {
        return Err(TrajectoryError::NoWaypoints);
    }
    let samples: Vec<Vec<(Vec3, Quat)>> = match mode {
        AverageMode::Phase => trajs.iter().map(resample).collect(),
        AverageMode::Timestep => {
            let shortest = trajs.iter().map(Trajectory::len).min().unwrap_or(0);
            trajs
                .iter()
                .map(|t| t.waypoints[..shortest].iter().map(|w| (w.pose.position, w.pose.orientation)).collect())
                .collect()
        }
    };
    let n = trajs.len() as f64;
    let poses = (0..samples[0].len()).map(|i| {
        let pos = samples.iter().fold(Vec3::ZERO, |acc, s| acc + s[i].0) / n;
        let qs: Vec<Quat> = samples.iter().map(|s| s[i].1).collect();
        // Opposite-sign averages cannot cancel after alignment to the first.
        let q = Quat::average(&qs).unwrap_or(qs[0]);
        Pose::new(pos, q)
    });
    Ok(Trajectory::from_poses(first.tool_length, poses.collect::<Vec<_>>()))
}

/// Keeps waypoints `0, k, 2k, …` and the last one, then drops any whose
/// tool-extended pose the chain cannot reach. Time is re-indexed.
pub fn smooth_filter(
    traj: &Trajectory,
    subsample_k: usize,
    chain: &KinematicChain,
    tool_length: f64,
    ik: &IkSettings,
) -> Result<Trajectory, TrajectoryError> {
    if subsample_k == 0 {
        return Err(TrajectoryError::InvalidSubsample);
    }
    if !(tool_length >= 0.0) {
        return Err(TrajectoryError::NegativeLength(tool_length));
    }
    let n = traj.len();
    if n == 0 {
        return Err(TrajectoryError::NoWaypoints);
    }
    let mut idx: Vec<usize> = (0..n).step_by(subsample_k).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    let keep: Vec<bool> = idx
        .par_iter()
        .map(|&i| {
            let pose = traj.waypoints[i].pose;
            let tip = Pose::new(tooltip_position(&pose, tool_length), pose.orientation);
            let gripper = kinematics::tooltip_offset(&tip, tool_length).expect("length checked");
            kinematics::reachable(chain, &gripper, ik)
        })
        .collect();
    let poses: Vec<Pose> = idx.iter().zip(keep).filter(|(_, k)| *k).map(|(&i, _)| traj.waypoints[i].pose).collect();
    if poses.is_empty() {
        return Err(TrajectoryError::AllWaypointsFiltered);
    }
    Ok(Trajectory::from_poses(traj.tool_length, poses))
}

/// Moves every waypoint along its local x-axis so a tool of
/// `real_tool_length` traces the same tooltip path.
pub fn retarget(traj: &Trajectory, real_tool_length: f64) -> Result<Trajectory, TrajectoryError> {
    if !(real_tool_length >= 0.0) {
        return Err(TrajectoryError::NegativeLength(real_tool_length));
    }
    if real_tool_length == traj.tool_length {
        return Ok(traj.clone());
    }
    let waypoints = traj
        .waypoints
        .iter()
        .map(|w| {
            let tip = tooltip_position(&w.pose, traj.tool_length);
            let q = w.pose.orientation;
            Waypoint { t: w.t, pose: Pose::new(tip - q.rotate(Vec3::new(real_tool_length, 0.0, 0.0)), q) }
        })
        .collect();
    Ok(Trajectory { tool_length: real_tool_length, waypoints })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub box_travel: f64,
    pub final_box_goal_distance: f64,
    pub waypoints_attempted: usize,
    pub waypoints_reached: usize,
    pub ik_failures: usize,
}

/// Drives the simulator through the waypoints, one IK-tracked step each.
pub fn replay(traj: &Trajectory, spec: &EnvSpec) -> Result<ReplayReport, TrajectoryError> {
    replay_with_seed(traj, spec, REPLAY_SEED)
}

pub fn replay_with_seed(traj: &Trajectory, spec: &EnvSpec, seed: u64) -> Result<ReplayReport, TrajectoryError> {
    if spec.tool_length_sim != traj.tool_length {
        return Err(TrajectoryError::ToolLengthMismatch { traj: traj.tool_length, env: spec.tool_length_sim });
    }
    let sim = Simulator::new(spec.clone())?;
    let start = sim.reset(seed);
    let mut state = start.clone();
    let mut report = ReplayReport {
        box_travel: 0.0,
        final_box_goal_distance: 0.0,
        waypoints_attempted: 0,
        waypoints_reached: 0,
        ik_failures: 0,
    };
    for w in &traj.waypoints {
        let r = sim.step_to_pose(&state, &w.pose);
        report.waypoints_attempted += 1;
        report.ik_failures += usize::from(r.info.ik_failed);
        if !r.info.ik_failed && r.next_state.gripper_pose.position.distance(w.pose.position) <= REACHED_TOL {
            report.waypoints_reached += 1;
        }
        state = r.next_state;
    }
    report.box_travel = state.box_pos.distance(start.box_pos);
    report.final_box_goal_distance = state.box_pos.distance(state.goal_pos);
    Ok(report)
}

/// CSV with a `# tool_length=` line, a header and 9-significant-digit floats.
pub fn export_csv(traj: &Trajectory) -> String {
    let mut s = format!("# tool_length={}\nt,px,py,pz,qw,qx,qy,qz\n", traj.tool_length);
    for w in &traj.waypoints {
        let p = w.pose.position;
        let [qw, qx, qy, qz] = w.pose.orientation.to_array();
        s.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            w.t, p.x, p.y, p.z, qw, qx, qy, qz
        ));
    }
    s
}

pub fn import_csv(text: &str) -> Result<Trajectory, TrajectoryError> {
    let mut tool_length = None;
    let mut header_seen = false;
    let mut waypoints: Vec<Waypoint> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("tool_length=") {
                let l: f64 = v.trim().parse().map_err(|_| TrajectoryError::Parse {
                    line: line_no,
                    msg: format!("bad tool length '{v}'"),
                })?;
                if !(l >= 0.0) {
                    return Err(TrajectoryError::NegativeLength(l));
                }
                tool_length = Some(l);
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"] {
                return Err(TrajectoryError::Parse { line: line_no, msg: format!("unexpected header '{line}'") });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(TrajectoryError::Parse { line: line_no, msg: format!("expected 8 fields, found {}", fields.len()) });
        }
        let t: u64 = fields[0].parse().map_err(|_| TrajectoryError::Parse {
            line: line_no,
            msg: format!("bad time index '{}'", fields[0]),
        })?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| TrajectoryError::Parse {
                line: line_no,
                msg: format!("bad number '{f}'"),
            })?;
        }
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(TrajectoryError::NonUnitQuaternion { line: line_no });
        }
        let q = Quat::new(v[3], v[4], v[5], v[6]).map_err(|_| TrajectoryError::NonUnitQuaternion { line: line_no })?;
        if waypoints.last().is_some_and(|w| w.t >= t) {
            return Err(TrajectoryError::NonMonotoneTime { line: line_no });
        }
        waypoints.push(Waypoint { t, pose: Pose::new(Vec3::new(v[0], v[1], v[2]), q) });
    }
    if !header_seen && tool_length.is_some() {
        return Err(TrajectoryError::Parse { line: 0, msg: "missing header".into() });
    }
    let tool_length = tool_length.ok_or(TrajectoryError::MissingToolLength)?;
    Ok(Trajectory { tool_length, waypoints })
}
