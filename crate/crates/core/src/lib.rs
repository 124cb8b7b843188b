pub mod acoustics;
pub mod audio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod meta;
pub mod model;
pub mod nn;
pub mod rng;
pub mod run;
pub mod scene;
pub mod srir;

pub use error::{Error, Result};
