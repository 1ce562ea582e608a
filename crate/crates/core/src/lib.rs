pub mod graph;
pub mod kernels;
pub mod optimizer;
pub mod profiler;
pub mod routines;
pub mod runtime;
pub mod scalar;
pub mod tensor;
pub mod zoo;
