//! Reverse-mode autodiff substrate: tensors, the computation tape, and
//! finite-difference gradient verification.

pub mod check;
pub mod graph;
pub mod tensor;

pub use check::{
    build_fd_case, finite_difference_check, primitive_fd_suite, FdCase, FdReport, FD_EPSILON,
    PRIMITIVES,
};
pub use graph::{Graph, NodeId, LN_EPS};
pub use tensor::{ParamRegistry, Tensor};
