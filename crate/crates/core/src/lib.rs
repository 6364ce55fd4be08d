//! Proprioceptive state estimation for quadruped robots.
//!
//! The crate fuses IMU, joint-encoder, joint-torque, and foot contact-force
//! readings into body pose/velocity estimates. Its centerpiece is a dual
//! filter: a statics-based UKF that calibrates per-leg calf lengths online
//! from torques and contact forces alone, feeding a robust state filter
//! whose divergence-based objective saturates on measurement outliers such
//! as foot slippage. Classical baselines (quaternion EKF, UKF with
//! Mahalanobis outlier rejection) share the same models, and a deterministic
//! trot-gait simulator plus trajectory metrics make the whole comparison
//! reproducible from a single config file.

pub mod beta;
pub mod config;
pub mod dual;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod io;
pub mod kinematics;
pub mod measurement;
pub mod process;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{LegId, NoiseConfig, Quat, RobotState, SensorFrame};
