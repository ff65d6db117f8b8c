//! Minimal reverse-mode autodiff sized for the models in this crate.
//!
//! Everything runs on CPU over `ndarray`, generic over f32/f64. The engine is
//! deterministic at any thread count: see [`graph`] for the ordering rules.

pub mod adam;
pub mod graph;
pub mod layers;
pub mod params;
pub mod real;

pub use adam::{AdamW, ScalarAdam};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use real::Real;
