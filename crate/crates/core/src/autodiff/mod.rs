//! Reverse-mode differentiation, parameter storage and the Adam optimiser.

mod adam;
mod check;
mod graph;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{analytic_gradient, grad_check, max_relative_error, numeric_gradient};
pub use graph::{BackwardRule, Gradients, Graph, Matrix, Var};
pub(crate) use graph::{log_softmax_row_values, softmax_jacobian_apply, softmax_row_values};
pub use params::{Bound, ParamId, ParamStore};
