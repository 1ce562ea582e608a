//! Routine selection: the DPRS dynamic program, the exhaustive oracle and
//! recursive tuning across childnets.

mod cost;
mod dprs;
mod oracle;
mod path;
mod problem;
mod tune;

use thiserror::Error;

use crate::graph::GraphError;

pub use cost::{CostEntry, CostModel};
pub use dprs::{dprs, dprs_with, fastest, DprsOptions, DprsResult, DprsStats};
pub use oracle::{brute_force_optimal, brute_force_optimal_with_bound, DEFAULT_ORACLE_BOUND};
pub use path::{
    load_path, path_from_str, path_to_string, render_selection_table, save_path, AdaptChoice, ChildPath,
    LayerChoice, RoutinePath,
};
pub use tune::{default_path, tune, tune_mode, tune_with, TuneMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("no feasible schema at layer `{layer}`")]
    AllInfeasible { layer: String },
    #[error("missing adapt cost {from} -> {to} on edge {edge:?}")]
    MissingAdaptCost {
        edge: (String, String),
        from: String,
        to: String,
    },
    #[error("search space of {size} assignments exceeds the bound {bound}")]
    TooLarge { size: u128, bound: u128 },
    #[error("empty schema set")]
    EmptySchemaSet,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("internal optimizer error: {0}")]
    Internal(String),
    #[error("malformed routine path: {0}")]
    MalformedPath(String),
    #[error("io error: {0}")]
    Io(String),
}
