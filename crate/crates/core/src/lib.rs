//! Response-time reciprocity analysis for donated chat exports.
//!
//! The crate turns WhatsApp and Instagram exports into anonymized message
//! records, cleans and filters them, derives response times, and compares
//! how quickly the two sides of each dyadic chat answer each other.

pub mod cleanse;
pub mod error;
pub mod filterpipe;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod stability;
pub mod store;
pub mod synth;
pub mod timing;

pub use error::{Error, Result};
pub use ingest::{Donation, MessageRecord, Source};
pub use num::Real;

pub type RtDistribution = metrics::RtDistribution<f64>;
pub type SimilarityScore = metrics::SimilarityScore<f64>;
pub type ChatRpPair = metrics::ChatRpPair<f64>;
pub type LmmFit = inference::LmmFit<f64>;
