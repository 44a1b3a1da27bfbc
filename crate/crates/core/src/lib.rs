//! Zero-shot inference of additive-noise structural causal models.
//!
//! A dataset encoder summarizes observations and their causal graph; a
//! conditional fixed-point decoder turns that summary into a functional
//! model of the mechanisms, which the inference engine uses for noise
//! abduction, observational generation and interventions.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod engine;
pub mod eval;
pub mod gradcheck;
pub mod kv;
pub mod model;
pub mod rng;
pub mod sim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use tape::{Mask, Normalizer, Tape, Var};
pub use tensor::{ParamStore, Real, Tensor, TensorError};
