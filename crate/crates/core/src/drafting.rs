//! Draft token trees built from a chain of logits.
//!
//! Every node at depth `i` samples from the same raw logits `l_i`; what makes
//! siblings' child distributions differ is the token-info bias of the node's
//! own token. Expansion is level by level with a global frontier of the `k`
//! nodes of highest joint probability.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{check_dim, contract, Error, Result};
use crate::models::TokenId;
use crate::numerics::{rmsnorm, softmax_unchecked, top_k};
use crate::token_info::TokenInfoTable;

/// Raw (pre token-info) logits for each speculative step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogitChain {
    steps: Vec<Vec<f32>>,
}

impl LogitChain {
    pub fn new(steps: Vec<Vec<f32>>) -> Result<Self> {
        if let Some(first) = steps.first() {
            for s in &steps {
                check_dim("LogitChain step", first.len(), s.len())?;
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(contract("logits must be finite"));
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, i: usize) -> &[f32] {
        &self.steps[i]
    }

    pub fn steps(&self) -> &[Vec<f32>] {
        &self.steps
    }

    /// Logits from step index `start` (0-based) to the end.
    pub fn tail(&self, start: usize) -> LogitChain {
        LogitChain {
            steps: self.steps.get(start..).unwrap_or_default().to_vec(),
        }
    }
}

/// How a token-info row enters the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenFusion {
    /// `l + E'(t)`.
    #[default]
    Additive,
    /// `l + RMSNorm(E'(t))`.
    RmsNorm,
}

/// Where a node was drafted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Fresh,
    Resampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub token: TokenId,
    pub prob: f64,
    pub joint_prob: f64,
    /// `ln(joint_prob)`; comparisons use this to stay exact for deep trees.
    pub log_joint: f64,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub origin: Origin,
}

/// Arena-backed draft tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
    steps: usize,
    branch: usize,
}

impl DraftTree {
    /// Root-only tree `{token, 1, 1, ∅}`.
    pub fn single(token: TokenId, origin: Origin) -> Self {
        Self {
            nodes: vec![TreeNode {
                token,
                prob: 1.0,
                joint_prob: 1.0,
                log_joint: 0.0,
                depth: 0,
                parent: None,
                children: Vec::new(),
                origin,
            }],
            steps: 0,
            branch: 0,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn non_root_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn branch(&self) -> usize {
        self.branch
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Tokens from the root's first child down to node `i`.
    pub fn path(&self, mut i: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.nodes[i].depth);
        while let Some(p) = self.nodes[i].parent {
            out.push(self.nodes[i].token);
            i = p;
        }
        out.reverse();
        out
    }

    /// Child of `i` carrying `token`, if any.
    pub fn child_with_token(&self, i: usize, token: TokenId) -> Option<usize> {
        self.nodes[i]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].token == token)
    }

    /// Node indices in pre-order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        out
    }

    /// One line per node in pre-order: `depth token prob jointProb`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for i in self.preorder() {
            let n = &self.nodes[i];
            let _ = writeln!(s, "{} {} {:.9} {:.9}", n.depth, n.token, n.prob, n.joint_prob);
        }
        s
    }

    pub(crate) fn push_child(&mut self, parent: usize, token: TokenId, prob: f64, log_joint: f64, origin: Origin) -> usize {
        let idx = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode {
            token,
            prob,
            joint_prob: log_joint.exp(),
            log_joint,
            depth,
            parent: Some(parent),
            children: Vec::new(),
            origin,
        });
        self.nodes[parent].children.push(idx);
        idx
    }

    pub(crate) fn node_mut(&mut self, i: usize) -> &mut TreeNode {
        &mut self.nodes[i]
    }

    pub(crate) fn widen(&mut self, other: &DraftTree) {
        self.steps = self.steps.max(other.steps);
        self.branch = self.branch.max(other.branch);
    }

    /// Re-sorts every child list by descending prob, then ascending token.
    pub(crate) fn sort_children(&mut self) {
        for i in 0..self.nodes.len() {
            let mut kids = std::mem::take(&mut self.nodes[i].children);
            kids.sort_by(|&a, &b| {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                nb.prob.total_cmp(&na.prob).then(na.token.cmp(&nb.token))
            });
            self.nodes[i].children = kids;
        }
    }
}

/// Token conditioning applied while expanding a node.
#[derive(Clone, Copy)]
enum Conditioning<'a> {
    Raw,
    TokenInfo(&'a TokenInfoTable, TokenFusion),
}

fn expand(
    chain: &LogitChain,
    root: TokenId,
    k: usize,
    cond: Conditioning<'_>,
    origin: Origin,
) -> Result<DraftTree> {
    if chain.is_empty() {
        return Err(contract("cannot build a tree from an empty logit chain"));
    }
    if k == 0 {
        return Err(contract("branch factor must be >= 1"));
    }
    let vocab = chain.step(0).len();
    if let Conditioning::TokenInfo(table, _) = cond {
        check_dim("token-info table vocab", vocab, table.vocab_size())?;
    }
    let mut tree = DraftTree::single(root, origin);
    tree.steps = chain.len();
    tree.branch = k;

    let mut frontier = vec![0usize];
    let mut normed;
    for logits in chain.steps() {
        let mut next = Vec::with_capacity(frontier.len() * k);
        for &node in &frontier {
            let token = tree.nodes[node].token;
            let bias: Option<&[f32]> = match cond {
                Conditioning::Raw => None,
                Conditioning::TokenInfo(table, fusion) => {
                    if table.is_hot(token) {
                        let row = table.lookup(token)?;
                        match fusion {
                            TokenFusion::Additive => Some(row),
                            TokenFusion::RmsNorm => {
                                normed = rmsnorm(row)?;
                                Some(&normed)
                            }
                        }
                    } else {
                        // Cold tokens contribute the zero bias.
                        table.lookup(token)?;
                        None
                    }
                }
            };
            let probs = match bias {
                Some(b) => softmax_unchecked(logits.iter().zip(b).map(|(&l, &r)| l as f64 + r as f64)),
                None => softmax_unchecked(logits.iter().map(|&l| l as f64)),
            };
            let parent_log = tree.nodes[node].log_joint;
            for (tok, p) in top_k(&probs, k)? {
                next.push(tree.push_child(node, tok as TokenId, p, parent_log + p.ln(), origin));
            }
        }
        // Stable sort: equal joint and token keep parent order.
        next.sort_by(|&a, &b| {
            let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
            nb.log_joint.total_cmp(&na.log_joint).then(na.token.cmp(&nb.token))
        });
        next.truncate(k);
        frontier = next;
    }
    Ok(tree)
}

/// Token-info sampling: each frontier node draws its top-`k` children from
/// `softmax(l_i + E'(token))`.
pub fn build_tree(chain: &LogitChain, t0: TokenId, k: usize, table: &TokenInfoTable) -> Result<DraftTree> {
    build_tree_with(chain, t0, k, table, TokenFusion::Additive)
}

pub fn build_tree_with(
    chain: &LogitChain,
    t0: TokenId,
    k: usize,
    table: &TokenInfoTable,
    fusion: TokenFusion,
) -> Result<DraftTree> {
    expand(chain, t0, k, Conditioning::TokenInfo(table, fusion), Origin::Fresh)
}

/// Beam-sampling baseline: like [`build_tree`] but every node at step `i`
/// samples from the same `softmax(l_i)`.
pub fn beam_tree(chain: &LogitChain, t0: TokenId, k: usize) -> Result<DraftTree> {
    expand(chain, t0, k, Conditioning::Raw, Origin::Fresh)
}

/// Re-samples a tree rooted at the verified bonus token from the logits left
/// over after a rejection. Only worth it when more than `threshold` steps
/// remain; otherwise the result is the bare root.
pub fn resample(
    t_gt: TokenId,
    remaining: &LogitChain,
    k: usize,
    threshold: usize,
    table: &TokenInfoTable,
) -> Result<DraftTree> {
    resample_with(t_gt, remaining, k, threshold, table, TokenFusion::Additive)
}

pub fn resample_with(
    t_gt: TokenId,
    remaining: &LogitChain,
    k: usize,
    threshold: usize,
    table: &TokenInfoTable,
    fusion: TokenFusion,
) -> Result<DraftTree> {
    if remaining.len() > threshold {
        expand(remaining, t_gt, k, Conditioning::TokenInfo(table, fusion), Origin::Resampled)
    } else {
        Ok(DraftTree::single(t_gt, Origin::Resampled))
    }
}

/// Order used to rank non-root nodes for pruning: joint probability, then
/// shallower first, then token id, then parent index.
fn prune_order(tree: &DraftTree, a: usize, b: usize) -> Ordering {
    let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
    nb.log_joint
        .total_cmp(&na.log_joint)
        .then(na.depth.cmp(&nb.depth))
        .then(na.token.cmp(&nb.token))
        .then(na.parent.cmp(&nb.parent))
        .then(a.cmp(&b))
}

/// Keeps the root plus the `budget` nodes of highest joint probability.
pub fn prune_tree(tree: &DraftTree, budget: usize) -> Result<DraftTree> {
    if budget == 0 {
        return Err(contract("verification budget must be >= 1"));
    }
    if budget >= tree.non_root_count() {
        return Ok(tree.clone());
    }
    let mut ranked: Vec<usize> = (1..tree.nodes.len()).collect();
    ranked.sort_by(|&a, &b| prune_order(tree, a, b));
    let mut keep = vec![false; tree.nodes.len()];
    keep[0] = true;
    for &i in &ranked[..budget] {
        keep[i] = true;
    }

    let mut out = DraftTree::single(tree.root().token, tree.root().origin);
    out.steps = tree.steps;
    out.branch = tree.branch;
    let mut stack = vec![(0usize, 0usize)];
    while let Some((src, dst)) = stack.pop() {
        for &c in tree.nodes[src].children.iter().rev() {
            if keep[c] {
                let n = &tree.nodes[c];
                let idx = out.push_child(dst, n.token, n.prob, n.log_joint, n.origin);
                stack.push((c, idx));
            }
        }
    }
    // Children were pushed in reverse; restore their order.
    for node in &mut out.nodes {
        node.children.reverse();
    }
    if out.non_root_count() != budget {
        return Err(Error::Invariant(format!(
            "pruned tree disconnected: kept {} of {budget} nodes",
            out.non_root_count()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_matrix, Matrix};

    fn chain(steps: usize, vocab: usize, seed: u64) -> LogitChain {
        LogitChain::new(
            (0..steps)
                .map(|i| seeded_matrix(1, vocab, seed * 31 + i as u64, 3.0).unwrap().into_data())
                .collect(),
        )
        .unwrap()
    }

    fn table(vocab: usize, seed: u64) -> TokenInfoTable {
        TokenInfoTable::from_dense(&seeded_matrix(vocab, vocab, seed, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn k1_is_a_greedy_chain() {
        let c = chain(4, 10, 1);
        let t = table(10, 2);
        let tree = build_tree(&c, 3, 1, &t).unwrap();
        assert_eq!(tree.len(), 5);
        let mut node = 0;
        for i in 0..4 {
            let kids = &tree.node(node).children;
            assert_eq!(kids.len(), 1);
            let tok = tree.node(node).token;
            let l: Vec<f32> = c.step(i).iter().zip(t.lookup(tok).unwrap()).map(|(a, b)| a + b).collect();
            assert_eq!(tree.node(kids[0]).token as usize, crate::numerics::argmax(&l));
            node = kids[0];
        }
    }

    #[test]
    fn rejects_bad_input() {
        let t = table(6, 1);
        assert!(build_tree(&LogitChain::default(), 0, 2, &t).is_err());
        assert!(build_tree(&chain(2, 6, 1), 0, 0, &t).is_err());
        assert!(build_tree(&chain(2, 6, 1), 0, 7, &t).is_err());
        assert!(build_tree(&chain(2, 5, 1), 0, 2, &t).is_err());
        assert!(prune_tree(&beam_tree(&chain(2, 6, 1), 0, 2).unwrap(), 0).is_err());
    }

    #[test]
    fn zero_table_equals_beam() {
        for seed in 0..20 {
            let c = chain(4, 12, seed);
            let z = TokenInfoTable::zero(12);
            assert_eq!(build_tree(&c, 1, 3, &z).unwrap(), beam_tree(&c, 1, 3).unwrap());
        }
    }

    #[test]
    fn joint_is_product_of_path_probs() {
        let tree = build_tree(&chain(5, 16, 4), 2, 3, &table(16, 5)).unwrap();
        for (i, n) in tree.nodes().iter().enumerate() {
            let mut prod = 1.0;
            let mut j = i;
            while let Some(p) = tree.node(j).parent {
                prod *= tree.node(j).prob;
                j = p;
            }
            assert!((n.joint_prob - prod).abs() <= 1e-9);
            assert!(n.joint_prob > 0.0 && n.joint_prob <= 1.0);
        }
        assert!(tree.len() <= 1 + 5 * 9);
    }

    #[test]
    fn prune_examples() {
        let tree = build_tree(&chain(3, 10, 6), 0, 3, &table(10, 7)).unwrap();
        assert_eq!(prune_tree(&tree, tree.non_root_count()).unwrap(), tree);
        assert_eq!(prune_tree(&tree, 100).unwrap(), tree);
        let one = prune_tree(&tree, 1).unwrap();
        assert_eq!(one.len(), 2);
        let best = tree.nodes()[1..].iter().max_by(|a, b| a.log_joint.total_cmp(&b.log_joint)).unwrap();
        assert_eq!(one.node(1).token, best.token);
        assert_eq!(one.node(1).depth, 1);
    }

    #[test]
    fn resample_examples() {
        let t = table(8, 3);
        let single = resample(5, &chain(1, 8, 2), 2, 1, &t).unwrap();
        assert_eq!(single, DraftTree::single(5, Origin::Resampled));
        let empty = resample(5, &LogitChain::default(), 2, 0, &t).unwrap();
        assert_eq!(empty.len(), 1);

        let c = chain(2, 8, 9);
        let r = resample(5, &c, 2, 1, &t).unwrap();
        let mut b = build_tree(&c, 5, 2, &t).unwrap();
        assert!(r.nodes().iter().all(|n| n.origin == Origin::Resampled));
        for n in &mut b.nodes {
            n.origin = Origin::Resampled;
        }
        assert_eq!(r, b);
    }

    #[test]
    fn rms_fusion_normalises_bias() {
        // A tiny bias is amplified to unit RMS, so it changes the argmax.
        let c = LogitChain::new(vec![vec![0.5, 0.0, 0.0]]).unwrap();
        let mut rows = Matrix::zeros(3, 3);
        rows.set(0, 1, 0.01);
        rows.set(0, 0, -0.01);
        let t = TokenInfoTable::from_dense(&rows).unwrap();
        let add = build_tree_with(&c, 0, 1, &t, TokenFusion::Additive).unwrap();
        let rms = build_tree_with(&c, 0, 1, &t, TokenFusion::RmsNorm).unwrap();
        assert_eq!(add.node(1).token, 0);
        assert_eq!(rms.node(1).token, 1);
    }

    #[test]
    fn dump_is_preorder() {
        let c = LogitChain::new(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let tree = beam_tree(&c, 2, 2).unwrap();
        let dump = tree.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines[0], "0 2 1.000000000 1.000000000");
        assert!(lines[1].starts_with("1 1 "));
        assert!(lines[2].starts_with("2 0 "));
        assert_eq!(lines.len(), tree.len());
    }
}
