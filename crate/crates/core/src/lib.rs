//! Concept-level fusion of medical report and image indexes.
//!
//! Both media are indexed with UMLS concept identifiers carrying a fuzzy
//! weight. The crate aligns the two media, fuses them per elementary case
//! with a fuzzy aggregation operator, clusters the fused dictionaries with
//! fuzzy min-max hyper-boxes and ranks cases against a query with sparse
//! similarity functions. The evaluation module scores runs the way
//! `trec_eval` does.
//!
//! The pipeline, stage by stage:
//!
//! ```text
//! ingest -> alignment -> fusion -> clustering (off-line)
//!                               -> retrieval -> evaluation
//! ```

pub mod alignment;
pub mod clustering;
pub mod concept;
pub mod corpusgen;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod ingest;
pub mod retrieval;
pub mod sparse;

pub use concept::{
    compute_lambda, decompose_case, ConceptId, ElementaryCase, FusedCase, FusedEntry, MediaIndex, Medium, Provenance,
    WeightedConcept,
};
pub use error::{Error, Result};
pub use sparse::SparseVector;
