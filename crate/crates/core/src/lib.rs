//! Two-party collaborative prediction.
//!
//! Alice and Bob each see a disjoint block of features and exchange only
//! predictions (or actions). This crate implements the online protocol and
//! its learner stack, the batch boosting pipeline with replayable model
//! transcripts, the action-exchange protocol with its calibration audits,
//! exact Bayesian simulation on finite priors, the weak-learning extraction
//! for bounded linear classes, and checkers for the constructions showing
//! when aggregation fails.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod bayes;
pub mod datagen;
pub mod decisions;
pub mod error;
pub mod grid;
pub mod learners;
pub mod metrics;
pub mod protocol;
pub mod regression;
pub mod types;
pub mod weaklearn;

pub use error::{Error, Result};
pub use types::{
    BucketingSpec, ConversationTranscript, LabeledExample, RegretReport, SequenceDataset, Side,
};
