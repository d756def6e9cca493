//! Corpus recycling toolkit: quality filtering, budget-driven selection,
//! rephrase reward computation and a small GRPO lab.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bertscore;
pub mod clients;
pub mod config;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod grpo;
pub mod par;
pub mod reward;

pub use error::{Error, Result};
pub use par::Exec;
