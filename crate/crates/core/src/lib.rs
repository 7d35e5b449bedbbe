//! Core library of the motion studio: a simulated serial arm that can be
//! teleoperated, choreographed on a keyframe timeline, executed under PD
//! tracking and analysed for its effort qualities.

pub mod archetypes;
pub mod arm_model;
pub mod error;
pub mod moa_metrics;
pub mod protocol;
pub mod session;
pub mod sim_exec;
pub mod teleop;
pub mod timeline;
pub mod trajlog;

pub use arm_model::{IkOptions, IkResult, JointSpec, JointVector, Pose, RobotModel, TaskSpace};
pub use error::{Error, Result};
pub use teleop::{BindingMap, FaultKind, InputEvent, TeleopConfig, TeleopMode, TeleopState};
pub use timeline::{Channel, Frame, Handle, Interp, Keyframe, Sequence, Target};
pub use trajlog::{LogRow, TrajectoryLog};
