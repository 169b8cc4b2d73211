//! Offline actor-critic training with pluggable actor regularizers.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`graph`]), MLP
//! builders ([`networks`]), the regularizer zoo ([`regularizers`]), ReBRAC- and
//! IQL-style trainers ([`algorithms`]), synthetic point-mass environments and
//! datasets ([`data`]), actor diagnostics ([`diagnostics`]) and the evaluation
//! statistics used to compare runs ([`stats`]).

pub mod adam;
pub mod algorithms;
mod binio;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod networks;
pub mod par;
pub mod regularizers;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use error::{ComputeError, Error, FormatError, Result};
pub use graph::{Graph, Var};
pub use rng::Rng;
pub use tensor::Tensor;
