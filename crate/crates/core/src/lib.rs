//! Simulation core for distributed secondary control of an islanded AC
//! microgrid under false-data-injection attacks.
//!
//! The crate models a droop-controlled multi-inverter microgrid as a
//! quasi-static phasor network, closes the loop with a cooperative
//! secondary control layer (leader-follower consensus over a sparse
//! communication graph), and layers two defenses on top:
//!
//! * a control-barrier-function safety filter that keeps frequency and
//!   voltage inside configured bands by clamping the nominal control, and
//! * a fully distributed adaptive compensator that cancels polynomially
//!   unbounded attack injections on the control input channels.
//!
//! Scenarios are described by [`config::ScenarioConfig`] (usually read
//! from a TOML file), run by [`engine::run`], and post-processed with the
//! [`metrics`] module.

pub mod attack;
pub mod comm_graph;
pub mod compensator;
pub mod config;
pub mod consensus;
pub mod engine;
pub mod error;
pub mod log;
pub mod metrics;
pub mod plant;
pub mod safety;

pub use config::ScenarioConfig;
pub use engine::run;
pub use error::{Result, SimError};
pub use log::SimLog;
