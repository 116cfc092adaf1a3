//! Lottery-ticket experiments on a toy multilingual transformer.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] - dense linear algebra, counter-based RNG, gradient checks
//! * [`corpus`] - synthetic multilingual grammar and the MLM / tagging / classification tasks
//! * [`model`] - maskable transformer encoder with analytic gradients and the trainer
//! * [`masks`] - packed binary masks, sparsity accounting and Jaccard overlap
//! * [`pruning`] - iterative magnitude pruning with rewind, diff-from-init and Fisher pruning
//! * [`transfer`] - winning-ticket verdicts and cross-language / cross-task transfer
//! * [`similarity`] - CCA, SVCCA, PWCCA and margin-based parallel sentence retrieval

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod masks;
pub mod model;
pub mod numerics;
pub mod pruning;
pub mod similarity;
pub mod transfer;

pub use error::{Error, Result};
