//! Keyword-spotting embedding toolkit: generalized end-to-end training,
//! a triplet baseline, streaming encoders, 8-bit quantization and a
//! enrollment/verification evaluation protocol with DET, AUC and EER.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod frontend;
pub mod loss;
pub mod ndmath;
pub mod quant;
pub mod runtime;
pub mod train;

pub use error::{Error, Result};
