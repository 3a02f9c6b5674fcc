//! Emotion-intent joint understanding for multimodal conversations.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape, and a finite-difference
//!   gradient checker.
//! - [`nn`]: linear, LSTM, GRU, TextCNN, multi-head attention and
//!   transformer blocks, plus the `EIUP` parameter checkpoint format.
//! - [`model`]: the emotion-intent interaction network with its ablation
//!   switches.
//! - [`train`]: focal loss, Adam, the learning-rate schedule, two-phase
//!   training, WAF evaluation and the ablation suite.
//! - [`corpus`]: annotation CSV, `EIUF` feature files, conversation assembly
//!   and subtitle parsing.
//! - [`tools`]: majority voting, Fleiss's kappa, corpus splitting,
//!   correlation matrices, corpus statistics and the synthetic corpus
//!   generator.

pub mod corpus;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod tools;
pub mod train;

pub use error::{Error, Result};
