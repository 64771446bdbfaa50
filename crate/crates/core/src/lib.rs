//! Models, DP-SGD, synthetic pretraining, feature preprocessing and the
//! three-phase training pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dp_optimizer;
pub mod error;
pub mod experiment;
pub mod feature_preproc;
pub mod models;
pub mod pipeline;
pub mod random_prior;
pub mod rng;
pub mod tensor_io;

pub use error::{CoreError, Result};
