//! Unsupervised spoken term discovery on pseudo-transcribed speech.
//!
//! The pipeline discovers repeated subword sequences with local alignment,
//! groups them with leader clustering, mines weakly labelled matched and
//! mismatched examples from the purest clusters, trains a convolutional
//! segment embedding with a contrastive or triplet objective, and finally
//! re-clusters every segment embedding with HDBSCAN.
//!
//! Modules map one-to-one onto pipeline stages:
//!
//! - [`corpus`]: utterances, segments, gold annotations and their file formats.
//! - [`synthgen`]: ground-truthed synthetic corpora with planted terms.
//! - [`seqmatch`]: Levenshtein kernels and local alignment segment discovery.
//! - [`baseline`]: leader clustering of discovered segments.
//! - [`mining`]: cluster purity/contrast statistics and training-pair sampling.
//! - [`embednet`]: the CNN embedding, its losses, backprop and training loop.
//! - [`recluster`]: HDBSCAN with excess-of-mass and epsilon-hybrid extraction.
//! - [`eval`]: grouping/token/type/boundary scores, NED and coverage.
//! - [`pipeline`]: configuration, stage orchestration and artifact caching.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod corpus;
pub mod embednet;
pub mod error;
pub mod eval;
pub mod mining;
pub mod pipeline;
pub mod recluster;
pub mod rng;
pub mod seqmatch;
pub mod synthgen;

pub use error::{Error, Result};
