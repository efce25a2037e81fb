//! Lightweight user-response-prediction toolkit.
//!
//! Day-stamped tabular data is audited feature by feature for train/test
//! shift, then engineered (lattice quantization, leakage-free encodings)
//! before a leaf-wise histogram GBDT is trained on it. See [`pipeline`] for
//! the end-to-end driver.

pub mod advval;
pub mod denoise;
pub mod encoders;
pub mod gbdt;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod table;
