//! Online hashing with Hadamard target codes.
//!
//! Pipeline: [`data`] loads and streams samples, [`trainer`] learns the
//! projection from the stream, [`codec`] turns features into packed binary
//! codes and [`eval`] scores Hamming-ranked retrieval.

mod binio;
pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod hadamard;
pub mod kernelize;
pub mod projector;
pub mod rng;
pub mod trainer;

pub use codec::{encode, encode_features, BinaryCodeMatrix};
pub use error::{Error, Result};
pub use hadamard::{HadamardCodebook, TargetCode};
pub use trainer::{train_stream, HashModel, MaskMode, Sample, StreamBatch, TrainConfig};
