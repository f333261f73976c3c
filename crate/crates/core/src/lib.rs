//! Core library: pose math, tool-extended inverse kinematics, tool length
//! measurement, the box-pushing simulator, policy optimization and trajectory
//! retargeting.

pub mod env;
pub mod kinematics;
pub mod mathcore;
pub mod rl;
pub mod toolvision;
pub mod trajectory;

pub use kinematics::{IkSettings, JointSpec, JointVector, KinematicChain};
pub use mathcore::{Pose, Quat, Vec3};
