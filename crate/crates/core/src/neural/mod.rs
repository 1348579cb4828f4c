//! Minimal f64 neural-network toolkit: layers, sequential networks with
//! reverse-mode gradients, Adam, and binary parameter files.

pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod params;
pub mod shape;

pub use layers::{LayerSpec, Mode};
pub use network::{Backward, ForwardPass, Gradients, Network};
pub use optim::Adam;
pub use params::{Param, ParameterStore};
pub use shape::Shape;
