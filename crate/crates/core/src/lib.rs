//! Speculative decoding with one-pass draft logits, token-conditioned tree
//! expansion and reuse of draft logits left over after a rejection.
//!
//! The models are small synthetic recurrences; everything else (tree
//! construction, pruning, verification, the decode loop) is model-agnostic.

pub mod drafting;
pub mod engine;
pub mod error;
pub mod models;
pub mod numerics;
pub mod token_info;
pub mod verification;

pub use drafting::{
    beam_tree, build_tree, build_tree_with, prune_tree, resample, resample_with, DraftTree, LogitChain, Origin,
    TokenFusion, TreeNode,
};
pub use engine::{
    conditional_acceptance, decode, decode_logged, DecodeMetrics, Engine, EngineConfig, EngineState, Event, PassKind,
};
pub use error::{Error, Result};
pub use models::{
    composite_loss, one_pass_logits, ChainState, DraftModel, Drafter, HiddenState, ModelSpec, TargetModel, TokenId,
};
pub use numerics::Matrix;
pub use token_info::{
    collapse, default_keep, fit_factors, hot_token_stats, prune_table, residual_samples, FrequencyStats, Precision, TokenInfoFactors,
    TokenInfoTable,
};
pub use verification::{fuse_trees, linearize, verify_tree, LinearizedTree, VerifyOutcome};
