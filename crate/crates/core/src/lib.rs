//! Riemannian Newtonian mechanics on a single coordinate chart.

pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod holonomic;
pub mod integrator;
pub mod nonholonomic;
pub mod parallel;
pub mod system;

pub use error::{Error, Result};
pub use dynamics::{PhaseState, Trajectory};
pub use integrator::{IntegratorConfig, Method};
pub use parallel::ExecMode;
pub use system::{ConstraintKind, System, SystemBuilder};
