//! Streaming P-phase arrival picker: a cheap multi-band trigger, a stacked
//! ensemble classifier over hand-crafted window features, and AIC refinement
//! with multi-station association. Also training, evaluation, synthetic data
//! and benchmarking support.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basemodels;
pub mod dsp;
pub mod error;
pub mod evalbench;
pub mod features;
pub mod pipeline;
pub mod refiner;
pub mod stacking;
pub mod synth;
pub mod trigger;
pub mod waveform;

pub use error::{Error, Result};
