//! Interactive retrieval over uncertain spoken queries.
//!
//! The crate is organized after the parts of a telephone search system:
//!
//! * [`corpus`]: ingestion, tokenization and the inverted index
//! * [`pirs`]: probabilistic ranking, relevance feedback, misrecognition detection
//! * [`dss`]: query-biased sentence-extraction summaries
//! * [`vdm_sim`]: a seeded word-error simulator standing in for speech recognizers
//! * [`session`]: the dialog state machine driving a search session
//! * [`dds`]: user profiles, rendering and document delivery
//! * [`eval`]: precision/recall/average-precision and report tables
//! * [`synth`]: a synthetic desk-scale corpus for experiments
//! * [`experiments`]: recognition-error retrieval experiments

pub mod corpus;
pub mod dds;
pub mod dss;
mod edit;
pub mod eval;
pub mod experiments;
pub mod pirs;
pub mod session;
pub mod synth;
pub mod vdm_sim;

pub use edit::{levenshtein, normalized_similarity};
