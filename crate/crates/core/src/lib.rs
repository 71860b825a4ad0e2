//! RGB-D camouflaged object detection network with hierarchical texture and
//! geometry enhancement and adaptive cross-modal fusion, plus the losses,
//! COD metrics and data tooling needed to train and evaluate it.

pub mod checkpoint;
pub mod data;
pub mod enhancement;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tape, Tensor, Var};
