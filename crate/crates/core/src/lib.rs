//! Neighborhood-claim extraction and analysis for rental-listing corpora.
//!
//! The crate is organized as a set of stages that communicate through plain
//! files (JSON Lines, CSV, GeoJSON):
//!
//! - [`corpus`]: ingest, clean and de-duplicate raw listings
//! - [`gazetteer`]: neighborhood registry with alias patterns and spelling fixes
//! - [`claims`]: string-match labeler and the title → body → field cascade
//! - [`llm`]: chat-completion labeler with response caching and post-processing
//! - [`evaluation`]: multiclass precision / recall / F1 against a gold set
//! - [`geo`]: boundary polygons, social centers, distances, representation
//! - [`topics`]: tokenization, collapsed Gibbs LDA and NPMI coherence
//! - [`regression`]: ordinary least squares with classical inference
//! - [`pipeline`]: config, staged outputs, manifests and reports for the CLI

pub mod claims;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gazetteer;
pub mod geo;
pub mod llm;
pub mod pipeline;
pub mod regression;
pub mod topics;

pub use error::{Error, Result};

/// Label used when no neighborhood claim could be established.
pub const UNKNOWN: &str = "unknown";
