//! The decode loop: draft a hidden-state chain, turn it into logits in one
//! pass, build and prune a token tree, verify it, and reuse the leftover
//! logits after a rejection.

use std::fmt;
use std::str::FromStr;

use crate::drafting::{build_tree_with, prune_tree, resample_with, DraftTree, LogitChain, TokenFusion};
use crate::error::{check_dim, contract, Error, Result};
use crate::models::{one_pass_logits, ChainState, Drafter, TargetModel, TokenId};
use crate::token_info::TokenInfoTable;
use crate::verification::{fuse_trees, linearize, verify_tree, VerifyOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Speculative steps `N` (draft chain length).
    pub steps: usize,
    /// Branch factor `k`.
    pub branch: usize,
    /// Verification budget `B` for the fresh tree.
    pub budget: usize,
    /// Extra budget `B_r` granted to a resampled tree.
    pub resample_budget: usize,
    /// Resample only when more than this many logits remain.
    pub resample_threshold: usize,
    pub resample: bool,
    pub fusion: bool,
    /// σ of the paired draft model, echoed into reports.
    pub draft_noise: f32,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub token_fusion: TokenFusion,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            branch: 4,
            budget: 12,
            resample_budget: 4,
            resample_threshold: 1,
            resample: true,
            fusion: true,
            draft_noise: 0.0,
            seed: 0,
            max_new_tokens: 64,
            token_fusion: TokenFusion::Additive,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("steps", self.steps),
            ("branch", self.branch),
            ("budget", self.budget),
            ("max_new_tokens", self.max_new_tokens),
        ] {
            if v == 0 {
                return Err(contract(format!("{name} must be >= 1")));
            }
        }
        if !(self.draft_noise >= 0.0) {
            return Err(contract("draft_noise must be >= 0"));
        }
        if self.fusion && !self.resample {
            return Err(contract("fusion requires resampling"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub emitted: Vec<TokenId>,
    /// Verified prefix; its last token roots the next tree.
    pub prefix: ChainState,
    pub pending: Option<DraftTree>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeMetrics {
    /// Verification passes through the target.
    pub target_forwards: u64,
    pub draft_steps: u64,
    pub tokens_emitted: u64,
    /// Accepted draft tokens per speculative step (index 0 is step 1), over
    /// regular draft passes.
    pub per_step_accepted: Vec<u64>,
    /// Times step `i` was offered with step `i-1` accepted.
    pub per_step_offered: Vec<u64>,
    /// Emitted tokens that came from a resampled tree.
    pub resampled_accepted: u64,
    /// Accepted tokens from dedicated resample passes (fusion off).
    pub resample_pass_accepted: u64,
    /// Surplus tokens dropped by the final iteration.
    pub discarded: u64,
    pub iterations: u64,
    pub fused_iterations: u64,
    pub resampled_trees: u64,
    /// Extra tokens accepted thanks to fusion, measured against a shadow
    /// verification of the fresh tree alone.
    pub fusion_gain: u64,
}

impl DecodeMetrics {
    pub fn mean_accept_length(&self) -> f64 {
        if self.target_forwards == 0 {
            0.0
        } else {
            self.tokens_emitted as f64 / self.target_forwards as f64
        }
    }

    /// `accepted / offered` per step, `None` where nothing was offered.
    pub fn conditional_acceptance(&self) -> Vec<Option<f64>> {
        conditional_acceptance(self)
    }

    /// Merges another run's counters into this one.
    pub fn absorb(&mut self, other: &DecodeMetrics) {
        self.target_forwards += other.target_forwards;
        self.draft_steps += other.draft_steps;
        self.tokens_emitted += other.tokens_emitted;
        add_into(&mut self.per_step_accepted, &other.per_step_accepted);
        add_into(&mut self.per_step_offered, &other.per_step_offered);
        self.resampled_accepted += other.resampled_accepted;
        self.resample_pass_accepted += other.resample_pass_accepted;
        self.discarded += other.discarded;
        self.iterations += other.iterations;
        self.fused_iterations += other.fused_iterations;
        self.resampled_trees += other.resampled_trees;
        self.fusion_gain += other.fusion_gain;
    }

    fn record_step(&mut self, step: usize, accepted: bool) {
        if self.per_step_offered.len() <= step {
            self.per_step_offered.resize(step + 1, 0);
            self.per_step_accepted.resize(step + 1, 0);
        }
        self.per_step_offered[step] += 1;
        if accepted {
            self.per_step_accepted[step] += 1;
        }
    }
}

fn add_into(acc: &mut Vec<u64>, other: &[u64]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), 0);
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Per-step conditional acceptance rates.
pub fn conditional_acceptance(m: &DecodeMetrics) -> Vec<Option<f64>> {
    m.per_step_offered
        .iter()
        .zip(&m.per_step_accepted)
        .map(|(&o, &a)| (o > 0).then(|| a as f64 / o as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassKind {
    Draft,
    Resample,
}

/// One line of the event log, written per verification pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub iteration: usize,
    pub kind: PassKind,
    /// Whether step `i` was offered (a child existed below an accepted node).
    pub offered: Vec<bool>,
    pub accepted: usize,
    pub rejected_at: Option<usize>,
    /// A resampled tree was produced after this pass.
    pub resampled: bool,
    /// The verified tree included a resampled tree.
    pub fused: bool,
    /// Tokens actually appended after truncation.
    pub emitted: usize,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let offered: Vec<&str> = self.offered.iter().map(|&o| if o { "1" } else { "0" }).collect();
        write!(
            f,
            "iter={} pass={} offered={} accepted={} rejected={} resampled={} fused={} emitted={}",
            self.iteration,
            match self.kind {
                PassKind::Draft => "draft",
                PassKind::Resample => "resample",
            },
            if offered.is_empty() { "-".to_string() } else { offered.join(",") },
            self.accepted,
            self.rejected_at.map_or("-".to_string(), |r| r.to_string()),
            self.resampled as u8,
            self.fused as u8,
            self.emitted,
        )
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "event log line",
            reason,
        };
        let mut fields = std::collections::HashMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("no '=' in {part:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|e| bad(format!("{k}: {e}")))
        };
        let flag = |k: &str| -> Result<bool> {
            match get(k)? {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(bad(format!("{k}: {v:?}"))),
            }
        };
        let offered = match get("offered")? {
            "-" => Vec::new(),
            s => s
                .split(',')
                .map(|o| match o {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(bad(format!("offered: {o:?}"))),
                })
                .collect::<Result<_>>()?,
        };
        Ok(Event {
            iteration: num("iter")?,
            kind: match get("pass")? {
                "draft" => PassKind::Draft,
                "resample" => PassKind::Resample,
                p => return Err(bad(format!("pass: {p:?}"))),
            },
            offered,
            accepted: num("accepted")?,
            rejected_at: match get("rejected")? {
                "-" => None,
                _ => Some(num("rejected")?),
            },
            resampled: flag("resampled")?,
            fused: flag("fused")?,
            emitted: num("emitted")?,
        })
    }
}

/// A single decoding session.
pub struct Engine<'a, D: Drafter + ?Sized> {
    cfg: EngineConfig,
    target: &'a TargetModel,
    drafter: &'a D,
    table: &'a TokenInfoTable,
    state: EngineState,
    metrics: DecodeMetrics,
    events: Option<Vec<Event>>,
}

impl<'a, D: Drafter + ?Sized> Engine<'a, D> {
    pub fn new(
        cfg: EngineConfig,
        target: &'a TargetModel,
        drafter: &'a D,
        table: &'a TokenInfoTable,
        prompt: &[TokenId],
    ) -> Result<Self> {
        cfg.validate()?;
        check_dim("token-info table vocab", target.vocab_size(), table.vocab_size())?;
        if cfg.branch > target.vocab_size() {
            return Err(contract("branch factor exceeds vocabulary"));
        }
        let prefix = target.prefill(prompt)?;
        Ok(Self {
            cfg,
            target,
            drafter,
            table,
            state: EngineState {
                emitted: Vec::new(),
                prefix,
                pending: None,
                iteration: 0,
            },
            metrics: DecodeMetrics::default(),
            events: None,
        })
    }

    /// Records one [`Event`] per verification pass.
    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn metrics(&self) -> &DecodeMetrics {
        &self.metrics
    }

    pub fn events(&self) -> &[Event] {
        self.events.as_deref().unwrap_or_default()
    }

    pub fn is_done(&self) -> bool {
        self.state.emitted.len() >= self.cfg.max_new_tokens
    }

    /// Appends a verification result, truncating at `max_new_tokens`.
    /// Returns how many tokens were taken.
    fn commit(&mut self, outcome: &VerifyOutcome, resampled_origin: &[bool]) -> usize {
        let produced = outcome.emitted();
        let room = self.cfg.max_new_tokens - self.state.emitted.len();
        let taken = produced.len().min(room);
        self.state.emitted.extend_from_slice(&produced[..taken]);
        self.metrics.tokens_emitted += taken as u64;
        self.metrics.discarded += (produced.len() - taken) as u64;
        self.metrics.resampled_accepted += resampled_origin
            .iter()
            .take(taken)
            .filter(|&&r| r)
            .count() as u64;
        self.state.prefix = ChainState {
            position: self.state.prefix.position + 1 + outcome.accepted_len(),
            last_token: outcome.bonus_token,
            hidden: outcome.final_state.clone(),
        };
        taken
    }

    fn log(&mut self, event: Event) {
        if let Some(events) = &mut self.events {
            events.push(event);
        }
    }

    /// One draft-verify iteration.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let cfg = self.cfg.clone();
        let root = self.state.prefix.last_token;

        let chain = self.drafter.chain(&self.state.prefix.hidden, root, cfg.steps)?;
        check_dim("draft chain length", cfg.steps, chain.len())?;
        self.metrics.draft_steps += cfg.steps as u64;
        let logits = LogitChain::new(one_pass_logits(&chain, self.target.head())?)?;

        let fresh = build_tree_with(&logits, root, cfg.branch, self.table, cfg.token_fusion)?;
        let fresh = prune_tree(&fresh, cfg.budget)?;

        let pending = self.state.pending.take();
        let fused = pending.is_some();
        let tree = match &pending {
            Some(resampled) => {
                if resampled.root().token != root {
                    return Err(Error::Invariant("pending tree rooted at a stale token".into()));
                }
                prune_tree(&fuse_trees(&fresh, resampled)?, cfg.budget + cfg.resample_budget)?
            }
            None => fresh.clone(),
        };
        let lin = linearize(&tree);
        let outcome = verify_tree(self.target, &self.state.prefix, &lin)?;
        self.metrics.target_forwards += 1;
        self.metrics.iterations += 1;

        if fused {
            self.metrics.fused_iterations += 1;
            let shadow = verify_tree(self.target, &self.state.prefix, &linearize(&fresh))?;
            if outcome.accepted_len() < shadow.accepted_len() {
                return Err(Error::Invariant(format!(
                    "fused tree accepted {} < fresh tree {}",
                    outcome.accepted_len(),
                    shadow.accepted_len()
                )));
            }
            self.metrics.fusion_gain += (outcome.accepted_len() - shadow.accepted_len()) as u64;
        }

        // Per-step offers along the accepted path.
        let mut offered = Vec::new();
        let mut cur = 0usize;
        for step in 0.. {
            if lin.children(cur).is_empty() {
                break;
            }
            let accepted = step < outcome.accepted_len();
            self.metrics.record_step(step, accepted);
            offered.push(true);
            if !accepted {
                break;
            }
            cur = outcome.accepted_node_indices[step];
        }

        let origin: Vec<bool> = outcome
            .accepted_node_indices
            .iter()
            .map(|&i| lin.nodes[i].origin == crate::drafting::Origin::Resampled)
            .collect();
        let taken = self.commit(&outcome, &origin);

        let mut resampled_tree = None;
        if cfg.resample && cfg.resample_budget > 0 && !self.is_done() {
            if let Some(rejected) = outcome.rejected_at_step {
                let remaining = logits.tail(rejected + 1);
                let tree = resample_with(
                    outcome.bonus_token,
                    &remaining,
                    cfg.branch,
                    cfg.resample_threshold,
                    self.table,
                    cfg.token_fusion,
                )?;
                if tree.non_root_count() > 0 {
                    resampled_tree = Some(prune_tree(&tree, cfg.resample_budget)?);
                }
            }
        }

        let iteration = self.state.iteration;
        self.log(Event {
            iteration,
            kind: PassKind::Draft,
            offered,
            accepted: outcome.accepted_len(),
            rejected_at: outcome.rejected_at_step,
            resampled: resampled_tree.is_some(),
            fused,
            emitted: taken,
        });

        if let Some(tree) = resampled_tree {
            self.metrics.resampled_trees += 1;
            if cfg.fusion {
                self.state.pending = Some(tree);
            } else {
                self.verify_resampled(&tree, iteration)?;
            }
        }
        self.state.iteration += 1;
        Ok(())
    }

    /// Verifies a resampled tree in its own target pass.
    fn verify_resampled(&mut self, tree: &DraftTree, iteration: usize) -> Result<()> {
        let lin = linearize(tree);
        let outcome = verify_tree(self.target, &self.state.prefix, &lin)?;
        self.metrics.target_forwards += 1;
        self.metrics.resample_pass_accepted += outcome.accepted_len() as u64;
        let origin = vec![true; outcome.accepted_len()];
        let taken = self.commit(&outcome, &origin);
        self.log(Event {
            iteration,
            kind: PassKind::Resample,
            offered: Vec::new(),
            accepted: outcome.accepted_len(),
            rejected_at: outcome.rejected_at_step,
            resampled: false,
            fused: false,
            emitted: taken,
        });
        Ok(())
    }

    /// Runs until `max_new_tokens` are emitted.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<TokenId>, DecodeMetrics, Vec<Event>) {
        (self.state.emitted, self.metrics, self.events.unwrap_or_default())
    }
}

/// Decodes `max_new_tokens` tokens after `prompt`.
pub fn decode<D: Drafter + ?Sized>(
    cfg: &EngineConfig,
    target: &TargetModel,
    drafter: &D,
    table: &TokenInfoTable,
    prompt: &[TokenId],
) -> Result<(Vec<TokenId>, DecodeMetrics)> {
    let mut engine = Engine::new(cfg.clone(), target, drafter, table, prompt)?;
    engine.run()?;
    let (tokens, metrics, _) = engine.into_parts();
    Ok((tokens, metrics))
}

/// Like [`decode`] but also returns the event log.
pub fn decode_logged<D: Drafter + ?Sized>(
    cfg: &EngineConfig,
    target: &TargetModel,
    drafter: &D,
    table: &TokenInfoTable,
    prompt: &[TokenId],
) -> Result<(Vec<TokenId>, DecodeMetrics, Vec<Event>)> {
    let mut engine = Engine::new(cfg.clone(), target, drafter, table, prompt)?.with_event_log();
    engine.run()?;
    Ok(engine.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::models::{DraftModel, HiddenState, ModelSpec};

    fn setup(seed: u64, noise: f32) -> (Arc<TargetModel>, DraftModel) {
        let m = Arc::new(
            TargetModel::synthetic(&ModelSpec {
                vocab: 16,
                hidden: 8,
                seed,
                ..ModelSpec::default()
            })
            .unwrap(),
        );
        let d = DraftModel::perturbed(m.clone(), noise, seed).unwrap();
        (m, d)
    }

    /// Drafts the target's own greedy trajectory.
    struct Oracle<'a>(&'a TargetModel);

    impl Drafter for Oracle<'_> {
        fn chain(&self, h0: &[f32], t1: TokenId, steps: usize) -> Result<Vec<HiddenState>> {
            let mut h = self.0.step(h0, t1)?;
            let mut out = vec![h.clone()];
            while out.len() < steps {
                let t = self.0.next_token(&h)?;
                h = self.0.step(&h, t)?;
                out.push(h.clone());
            }
            Ok(out)
        }
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let bad = EngineConfig {
            fusion: true,
            resample: false,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(EngineConfig { steps: 0, ..EngineConfig::default() }.validate().is_err());
        assert!(EngineConfig { draft_noise: -1.0, ..EngineConfig::default() }.validate().is_err());
    }

    #[test]
    fn chain_speculation_is_lossless() {
        let (m, d) = setup(1, 0.0);
        let cfg = EngineConfig {
            steps: 1,
            branch: 1,
            budget: 1,
            resample: false,
            fusion: false,
            max_new_tokens: 30,
            ..EngineConfig::default()
        };
        let table = TokenInfoTable::zero(16);
        let (out, metrics) = decode(&cfg, &m, &d, &table, &[1, 2, 3]).unwrap();
        assert_eq!(out, m.greedy_decode(&[1, 2, 3], 30).unwrap());
        assert!(metrics.mean_accept_length() >= 1.0);
    }

    #[test]
    fn perfect_draft_accepts_every_step() {
        let (m, _) = setup(2, 0.0);
        let table = TokenInfoTable::zero(16);
        let cfg = EngineConfig {
            steps: 4,
            branch: 1,
            budget: 4,
            max_new_tokens: 50,
            ..EngineConfig::default()
        };
        let (out, metrics) = decode(&cfg, &m, &Oracle(&m), &table, &[5]).unwrap();
        assert_eq!(out, m.greedy_decode(&[5], 50).unwrap());
        assert_eq!(metrics.mean_accept_length(), 5.0);
        assert!(conditional_acceptance(&metrics).iter().all(|r| *r == Some(1.0)));
        assert_eq!(metrics.resampled_trees, 0);
    }

    #[test]
    fn no_resample_means_no_pending_tree() {
        let (m, d) = setup(3, 0.5);
        let cfg = EngineConfig {
            resample: false,
            fusion: false,
            steps: 5,
            ..EngineConfig::default()
        };
        let table = TokenInfoTable::zero(16);
        let mut e = Engine::new(cfg, &m, &d, &table, &[1]).unwrap();
        while !e.is_done() {
            e.step().unwrap();
            assert!(e.state().pending.is_none());
        }
        assert_eq!(e.metrics().resampled_trees, 0);
    }

    #[test]
    fn full_acceptance_clears_pending_tree() {
        let (m, _) = setup(4, 0.0);
        let table = TokenInfoTable::zero(16);
        let cfg = EngineConfig {
            steps: 3,
            branch: 1,
            budget: 3,
            max_new_tokens: 40,
            ..EngineConfig::default()
        };
        let oracle = Oracle(&m);
        let mut e = Engine::new(cfg, &m, &oracle, &table, &[7]).unwrap();
        while !e.is_done() {
            e.step().unwrap();
            assert!(e.state().pending.is_none());
        }
    }

    #[test]
    fn fusion_only_changes_forward_counts() {
        let (m, d) = setup(5, 0.6);
        let table = TokenInfoTable::zero(16);
        let on = EngineConfig {
            steps: 5,
            branch: 3,
            budget: 10,
            max_new_tokens: 200,
            ..EngineConfig::default()
        };
        let off = EngineConfig { fusion: false, ..on.clone() };
        let (a, ma) = decode(&on, &m, &d, &table, &[2, 9]).unwrap();
        let (b, mb) = decode(&off, &m, &d, &table, &[2, 9]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.greedy_decode(&[2, 9], 200).unwrap());
        assert!(mb.resampled_trees > 0);
        assert!(mb.target_forwards > mb.iterations);
        assert_eq!(ma.target_forwards, ma.iterations);
    }

    #[test]
    fn metrics_are_conserved() {
        for (resample, fusion) in [(false, false), (true, false), (true, true)] {
            let (m, d) = setup(6, 0.4);
            let cfg = EngineConfig {
                steps: 4,
                branch: 2,
                budget: 6,
                resample,
                fusion,
                max_new_tokens: 97,
                ..EngineConfig::default()
            };
            let (out, metrics, events) = decode_logged(&cfg, &m, &d, &TokenInfoTable::zero(16), &[3]).unwrap();
            assert_eq!(out.len(), 97);
            let accepted: u64 = metrics.per_step_accepted.iter().sum();
            assert_eq!(
                metrics.tokens_emitted,
                accepted + metrics.resample_pass_accepted + metrics.target_forwards - metrics.discarded
            );
            assert_eq!(events.len() as u64, metrics.target_forwards);
            assert_eq!(events.iter().map(|e| e.emitted as u64).sum::<u64>(), metrics.tokens_emitted);
            for ev in &events {
                assert_eq!(ev.to_string().parse::<Event>().unwrap(), *ev);
            }
        }
    }

    #[test]
    fn event_line_format() {
        let ev = Event {
            iteration: 3,
            kind: PassKind::Draft,
            offered: vec![true, true],
            accepted: 1,
            rejected_at: Some(1),
            resampled: true,
            fused: false,
            emitted: 2,
        };
        assert_eq!(
            ev.to_string(),
            "iter=3 pass=draft offered=1,1 accepted=1 rejected=1 resampled=1 fused=0 emitted=2"
        );
        assert!("iter=x".parse::<Event>().is_err());
    }
}
