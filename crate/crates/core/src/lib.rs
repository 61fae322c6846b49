pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod kinematics;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
