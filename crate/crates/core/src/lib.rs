pub mod ctc;
pub mod dsp;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod training;
pub mod video;
pub mod vocoder;

pub use error::{Error, Result};
