//! Training-free trajectory optimization by model-based diffusion, with a
//! shielded rollout that keeps every sampled and executed trajectory inside
//! the safe set.
//!
//! Layout:
//! - [`trajectory`]: states, controls, the dynamics contract and rollouts.
//! - [`systems`]: double integrator and the two tractor-trailer models.
//! - [`environment`]: obstacles, the safety margin `g`, invariant set, cost.
//! - [`shield`]: backup policies, validity, shielded rollout, certification.
//! - [`diffusion`]: noise schedule, candidate strategies, denoising and the
//!   receding-horizon planner.
//! - [`registry`]: name-keyed lookup of systems and candidate strategies.

pub mod diffusion;
pub mod environment;
pub mod error;
pub mod registry;
pub mod shield;
pub mod systems;
pub mod trajectory;

pub use environment::{CostSpec, Goal, Obstacle, SafeSet, SafetySpec, Scenario};
pub use error::{CoreError, Result};
pub use shield::{BackupPolicy, CertificationReport, ShieldOutcome};
pub use systems::{Aabb, BodyPose, Vehicle};
pub use trajectory::{Control, ControlSequence, DynamicsModel, Policy, State, StateTrajectory};
