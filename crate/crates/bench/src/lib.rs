//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use draftreuse_core::numerics::seeded_matrix;
use draftreuse_core::{
    collapse, one_pass_logits, DraftModel, Drafter, LogitChain, ModelSpec, TargetModel, TokenInfoFactors,
    TokenInfoTable,
};

/// A target, its draft, a collapsed table and one drafted logit chain.
pub struct Fixture {
    pub target: Arc<TargetModel>,
    pub draft: DraftModel,
    pub factors: TokenInfoFactors,
    pub table: TokenInfoTable,
    pub states: Vec<Vec<f32>>,
    pub chain: LogitChain,
}

impl Fixture {
    pub fn new(vocab: usize, hidden: usize, steps: usize) -> Self {
        let target = Arc::new(
            TargetModel::synthetic(&ModelSpec {
                vocab,
                hidden,
                ..ModelSpec::default()
            })
            .expect("valid model spec"),
        );
        let draft = DraftModel::perturbed(target.clone(), 0.3, 0).expect("valid draft");
        let rank = (hidden / 4).max(1);
        let factors = TokenInfoFactors::new(
            seeded_matrix(hidden, rank, 1, 0.5).unwrap(),
            seeded_matrix(rank, vocab, 2, 0.5).unwrap(),
        )
        .expect("matching factor dims");
        let table = collapse(target.embed(), &factors).expect("matching dims");
        let prefix = target.prefill(&[1, 2, 3]).expect("prompt in vocabulary");
        let states = draft
            .chain(&prefix.hidden, prefix.last_token, steps)
            .expect("draft chain");
        let chain = LogitChain::new(one_pass_logits(&states, target.head()).unwrap()).unwrap();
        Self {
            target,
            draft,
            factors,
            table,
            states,
            chain,
        }
    }
}
