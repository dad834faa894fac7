//! Turns OCR dumps of a historical encyclopedia into a geocoded gazetteer.
//!
//! The pipeline has five stages, each backed by a module here:
//!
//! 1. [`corpus`] segments raw page text into entries and truncates their
//!    definitions; [`dataset`] persists them as line-delimited JSON records.
//! 2. [`classifier`] fits a logistic-regression location classifier over
//!    [`embedding`] vectors and labels every entry.
//! 3. [`wikidata`] retrieves up to five candidate items per location headword.
//! 4. [`linker`] ranks candidates by cosine similarity between the entry
//!    definition and each candidate's description, and picks the best one.
//! 5. [`geo`] turns the linked coordinates into GeoJSON, a distance
//!    histogram and an SVG scatter map.
//!
//! [`pipeline`] wires the stages together on top of a [`config::PipelineConfig`].
//! Data-parallel loops go through [`exec::Execution`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod exec;
pub mod geo;
pub mod http;
pub mod http_cache;
pub mod linker;
pub mod pipeline;
pub mod wikidata;

pub use classifier::{EvalReport, Hyperparams, LogisticModel};
pub use corpus::{CorpusStats, Entry, RawPage};
pub use embedding::{EmbeddingProvider, EmbeddingVector, HashingEmbedder};
pub use exec::Execution;
pub use geo::{GeoPoint, LinkedPlace};
pub use linker::{LinkResult, ScoredCandidate};
pub use wikidata::{CoordinateRecord, Qid, WikidataCandidate, WikidataClient};
