//! The reward model: text encoder, per-frame visual encoder, and
//! interchangeable temporal aggregation strategies producing per-prefix
//! similarity scores.

pub mod aggregator;
pub mod config;
pub mod model;
pub mod vocab;

pub use aggregator::{make_aggregator, PairScores, TemporalAggregator, AGGREGATOR_NAMES};
pub use config::CriticConfig;
pub use model::{
    load_checkpoint, load_weights, save_checkpoint, save_weights, CachedScorer, CheckpointMeta,
    CriticModel, PrefixScores,
};
pub use vocab::{tokenize, TokenizedCaption, Vocab, CLS_ID, UNK_ID};
