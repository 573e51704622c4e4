//! Search for maximally misleading object-hallucination probes and score
//! vision-language models against them.
//!
//! The pipeline runs in stages, each a pure function of its inputs:
//!
//! 1. [`corpus`] ingests annotations into a canonical shape and filters them.
//! 2. [`stats`] counts category co-occurrence; [`embed`] serves precomputed
//!    unit-norm embeddings.
//! 3. [`scorers`] turns both into hallucination scores, and [`search`] picks
//!    the top-k distractors per image.
//! 4. [`prompt`] and [`qa`] render probes into question/answer items.
//! 5. [`evaluator`] collects model responses; [`judge`] parses and scores them.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embed;
pub mod error;
pub mod evaluator;
pub mod judge;
pub mod manifest;
pub mod prompt;
pub mod qa;
pub mod scorers;
pub mod search;
pub mod seeding;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
