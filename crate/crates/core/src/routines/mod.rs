//! Routine descriptors, parameter grids and the routine registry.

mod childnet;
mod descriptor;
mod grid;
mod registry;

pub use childnet::{build_childnet, childnet_scope, dense_conv_childnet, expand_childnets, winograd_childnet};
pub use descriptor::{RoutineDescriptor, RoutineError, Schema};
pub use grid::{render_params, render_params_compact, ParamAssignment, ParamGrid};
pub use registry::{AdaptKind, AdaptRoutine, ChildnetKind, Registry, Routine, RoutineImpl};
