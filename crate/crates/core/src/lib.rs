//! Core library for a language-conditioned video reward model at desk scale.
//!
//! The pipeline: a procedural 2D manipulation world ([`taskworld`]) produces
//! captioned demonstration videos and uncaptioned failures; [`dataio`] persists
//! and samples them; [`critic`] scores (video prefix, caption) pairs with one of
//! several temporal aggregation strategies; [`objective`] defines the
//! contrastive and sequence-ranking losses; [`trainer`] fits the critic;
//! [`reward_adapter`] turns critic scores into shaped RL rewards; [`rl`] trains
//! soft actor-critic policies against either the sparse task reward or the
//! learned dense reward; [`evalsuite`] measures ranking accuracy, monotonicity
//! and robustness.

pub mod critic;
pub mod dataio;
pub mod error;
pub mod evalsuite;
pub mod nn;
pub mod objective;
pub mod reward_adapter;
pub mod rl;
pub mod runconfig;
pub mod seeds;
pub mod taskworld;
pub mod trainer;

pub use error::{Error, Result};
