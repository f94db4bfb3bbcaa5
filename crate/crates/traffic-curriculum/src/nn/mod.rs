//! A small deterministic neural-network toolkit: named parameter store,
//! reverse-mode tape, layer builders, and Adam. Everything runs on f64 so
//! checkpoints and training traces reproduce bit-exactly across runs.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;
pub mod testutil;

pub use adam::Adam;
pub use params::{ParameterStore, Tensor};
pub use tape::{Gradients, Tape, ValueId};
