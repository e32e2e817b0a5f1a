//! Reverse-mode automatic differentiation and the Adam optimizer.
//!
//! Deliberately minimal: dense f64 tensors, a define-by-run tape, and just
//! the operations the neural fields, the analytic spatial-gradient graph,
//! and the training losses need.

mod adam;
mod graph;
pub mod kernels;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Tensor};

/// A named, persistent parameter array. Parameter values live outside any
/// graph; each training iteration copies them onto a fresh tape as trainable
/// leaves and applies the resulting gradients back here.
#[derive(Clone, Debug)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        ParamArray {
            name: name.into(),
            shape,
            data,
        }
    }
}
