//! Routine timing and profile tables.

mod integrated;
mod table;
mod timer;
mod unit;

use thiserror::Error;

use crate::graph::GraphError;
use crate::optimizer::OptimizerError;
use crate::runtime::RuntimeError;

pub use integrated::{filter_top_k, integrated_profile, IntegratedConfig, IntegratedProfile};
pub use table::{load_profile, profile_from_str, profile_to_string, save_profile, AdaptCostEntry, ProfileEntry, ProfileTable};
pub use timer::{hashed_cost, FakeTimer, Probe, Stats, Timer, WallTimer, Work};
pub use unit::{measure, seeded_inputs, time_routine, unit_profile, MeasureConfig, UnitConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfilerError {
    #[error("malformed profile: {0}")]
    MalformedProfile(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl From<GraphError> for ProfilerError {
    fn from(e: GraphError) -> Self {
        ProfilerError::Runtime(e.into())
    }
}
