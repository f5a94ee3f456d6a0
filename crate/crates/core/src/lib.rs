//! Zero-shot video action differencing.
//!
//! Given two videos of the same action, the pipeline proposes candidate
//! differences with an LLM, localizes the frames where each difference is
//! visible by aligning frames to a sub-action transcript, and asks a
//! vision-language model which video shows each difference more. The
//! evaluator scores predictions on the closed (given statements) and open
//! (generated statements) benchmark tasks.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod differencer;
pub mod error;
pub mod evaluator;
pub mod localizer;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod proposer;
pub mod report;
pub mod providers;
pub mod synthetic;

pub use error::{Error, ProviderError, Result};
