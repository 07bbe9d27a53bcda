//! Small differentiable numeric core used by the animation and pose models.
//!
//! Values are `f64` tensors recorded on a [`Tape`]; gradients flow back to
//! the named leaves of a [`ParameterSet`], which [`AdamState`] updates.
//! [`gradcheck`] verifies any forward closure against central differences.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, finite_diff_check_smooth, GradCheck};
pub use layers::{graph_conv, lstm_cell, LstmWeights, LEAKY_SLOPE};
pub use params::{Bound, Initializer, Param, ParameterSet};
pub use tape::{Adjacency, Grads, Tape, Var};
pub use tensor::Tensor;
