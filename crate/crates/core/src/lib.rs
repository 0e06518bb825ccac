pub mod cli;
pub mod datasets;
pub mod error;
pub mod geom;
pub mod graph;
pub mod model;
pub mod structio;
pub mod tasks;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tasks::{LabelDims, TaskId};
