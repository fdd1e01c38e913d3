//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns
//! [`Gradients`] for every node that depends on a leaf created with
//! [`Graph::param`]. Leaves created with [`Graph::constant`] (and anything
//! passed through [`Var::detach`]) never receive gradient.
//!
//! The operation set is the one needed by small convolutional classifiers and
//! generators: dense and convolutional layers, batch-norm building blocks,
//! pooling, up-sampling, softmax helpers and a handful of element-wise maps.

mod conv;
mod graph;
mod ops;
pub mod optim;

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;

pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, ParamMap, Sgd};

/// Dynamic-rank tensor used for every value on the tape.
pub type Tensor = ndarray::ArrayD<f64>;
