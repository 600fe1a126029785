//! Time-series classification with Fisher-information-constrained training.

pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sharpness;
pub mod shift;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod toy;
