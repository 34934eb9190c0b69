//! Voltage-realizable acceleration bounds for a single revolute joint driven
//! by a voltage-limited PMSM.
//!
//! The crate is organised bottom-up:
//!
//! - [`actuator`]: motor and joint parameters, dq voltage and inverse dynamics.
//! - [`feasibility`]: per-step realizable current and acceleration sets.
//! - [`envelope`]: position, viability and velocity acceleration envelopes.
//! - [`pipeline`]: the voltage-aware controller and the viability baselines.
//! - [`plant`]: an RK4 plant with inner PI current loop and voltage saturation.
//! - [`episode`], [`trace`], [`scenario`], [`metrics`], [`suite`]: the
//!   experiment harness.

pub mod actuator;
pub mod envelope;
pub mod episode;
pub mod error;
pub mod feasibility;
pub mod interval;
pub mod metrics;
pub mod pipeline;
pub mod plant;
pub mod scenario;
pub mod suite;
pub mod trace;

pub use actuator::{JointParams, JointState, MotorParams, Preset};
pub use episode::{run_episode, run_episode_with};
pub use error::{Error, Result};
pub use interval::Interval;
pub use metrics::MetricsReport;
pub use pipeline::{Controller, ControllerKind, PipelineConfig, StepCommand, StepFlags};
pub use scenario::{load_scenario, Scenario};
pub use trace::{Trace, TraceRow};
