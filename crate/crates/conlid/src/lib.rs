//! Language identification over hashed character n-grams.
//!
//! The crate trains linear classifiers on labeled text, optionally
//! sharpening class boundaries with a supervised contrastive objective fed
//! by a FIFO memory bank and script/domain-aware negative mining. It also
//! covers the surrounding workflow: corpus splitting and downsampling,
//! prediction with two-model ensembling, recovery of usable documents from
//! an unknown-language bucket, and stratified evaluation reports.
//!
//! Typical flow: load a corpus ([`corpus::load_dataset`]), train a model
//! ([`trainer::train`]), then predict ([`inference`]) and score
//! ([`evaluation`]).

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod matrix;
pub mod model;
pub mod objective;
pub mod sampler;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
