//! Synthetic-user personalization testbed.
//!
//! Users are Dirichlet-weighted mixtures of base reward models scored over a
//! fixed prompt/response corpus. On top of that sit population diversity
//! analyses, opinion-survey representativeness, interaction-history
//! simulation, user and prompt retrieval, ICL policies and their evaluation.

pub mod bench;
pub mod cli;
pub mod corpus;
pub mod diversity;
pub mod error;
pub mod interactions;
pub mod opinion;
pub mod persona;
pub mod policies;
pub mod retrieval;
pub mod rng;
pub mod synth;

pub use corpus::{Corpus, EmbeddingTable, NormalizationMode, SplitSpec};
pub use error::{Error, Result};
pub use persona::{Persona, Population};
