// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod datasynth;
pub mod deepfilter;
pub mod error;
pub mod losses;
pub mod model;
pub mod network;
pub mod neurons;
pub mod profiler;
pub mod spectral;
pub mod subband;
pub mod tensor;
pub mod trainer;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
