//! Differentiable computation substrate: tape graph, operations, and the
//! finite-difference gradient gate.

pub mod gradcheck;
pub mod graph;

pub use gradcheck::{
    analytic_grads, fd_compare, grad_check, relative_error, GradCheckReport, ProbeMode, ProbeResult,
};
pub use graph::{BnBatchStats, Graph, Mode, NodeId};
