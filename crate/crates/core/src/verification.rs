//! Greedy tree verification against the target model.

use crate::drafting::{DraftTree, Origin};
use crate::error::{contract, Result};
use crate::models::{ChainState, HiddenState, TargetModel, TokenId};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearNode {
    pub token: TokenId,
    pub parent: Option<usize>,
    pub depth: usize,
    pub origin: Origin,
}

/// Pre-order flattening of a tree with ancestor-only visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedTree {
    pub nodes: Vec<LinearNode>,
    /// Ancestor indices of each node, root first.
    pub visibility: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl LinearizedTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Dense attention mask: `mask[i][j]` is true when node `i` may attend to
    /// node `j` (its ancestors and itself).
    pub fn attention_mask(&self) -> Vec<Vec<bool>> {
        (0..self.len())
            .map(|i| {
                let mut row = vec![false; self.len()];
                for &a in &self.visibility[i] {
                    row[a] = true;
                }
                row[i] = true;
                row
            })
            .collect()
    }
}

pub fn linearize(tree: &DraftTree) -> LinearizedTree {
    let order = tree.preorder();
    let mut position = vec![0usize; tree.len()];
    for (pos, &i) in order.iter().enumerate() {
        position[i] = pos;
    }
    let mut nodes = Vec::with_capacity(order.len());
    let mut visibility: Vec<Vec<usize>> = Vec::with_capacity(order.len());
    let mut children = vec![Vec::new(); order.len()];
    for &i in &order {
        let n = tree.node(i);
        let parent = n.parent.map(|p| position[p]);
        let vis = match parent {
            Some(p) => {
                let mut v = visibility[p].clone();
                v.push(p);
                children[p].push(nodes.len());
                v
            }
            None => Vec::new(),
        };
        nodes.push(LinearNode {
            token: n.token,
            parent,
            depth: n.depth,
            origin: n.origin,
        });
        visibility.push(vis);
    }
    LinearizedTree {
        nodes,
        visibility,
        children,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    /// Accepted draft tokens, root excluded.
    pub accepted_tokens: Vec<TokenId>,
    pub bonus_token: TokenId,
    /// Depth at which no child matched, `None` when a leaf was reached.
    pub rejected_at_step: Option<usize>,
    /// Linearized indices of the accepted nodes, root excluded.
    pub accepted_node_indices: Vec<usize>,
    /// How many accepted nodes came only from a resampled tree.
    pub resampled_accepted: usize,
    /// Target state after the deepest accepted node (the state the bonus
    /// token was read from).
    pub final_state: HiddenState,
    /// Target state at every linearized node.
    pub node_states: Vec<HiddenState>,
}

impl VerifyOutcome {
    pub fn accepted_len(&self) -> usize {
        self.accepted_tokens.len()
    }

    /// Accepted tokens followed by the bonus token.
    pub fn emitted(&self) -> Vec<TokenId> {
        let mut v = self.accepted_tokens.clone();
        v.push(self.bonus_token);
        v
    }
}

/// Verifies a tree rooted at `prefix.last_token`.
///
/// Every node's target state is computed from its parent's, then the tree is
/// descended greedily: the target's argmax after each accepted node either
/// matches a child (accepted) or becomes the bonus token.
pub fn verify_tree(model: &TargetModel, prefix: &ChainState, tree: &LinearizedTree) -> Result<VerifyOutcome> {
    let root = tree
        .nodes
        .first()
        .ok_or_else(|| contract("cannot verify an empty tree"))?;
    if root.token != prefix.last_token {
        return Err(contract(format!(
            "tree root {} does not match prefix token {}",
            root.token, prefix.last_token
        )));
    }
    let mut states: Vec<HiddenState> = Vec::with_capacity(tree.len());
    states.push(model.step(&prefix.hidden, root.token)?);
    for node in &tree.nodes[1..] {
        let parent = node.parent.ok_or_else(|| contract("non-root node without parent"))?;
        let next = model.step(&states[parent], node.token)?;
        states.push(next);
    }

    let mut cur = 0usize;
    let mut accepted_tokens = Vec::new();
    let mut accepted_node_indices = Vec::new();
    let mut resampled_accepted = 0;
    loop {
        let want = model.next_token(&states[cur])?;
        let kids = tree.children(cur);
        match kids.iter().copied().find(|&c| tree.nodes[c].token == want) {
            Some(c) => {
                accepted_tokens.push(want);
                accepted_node_indices.push(c);
                if tree.nodes[c].origin == Origin::Resampled {
                    resampled_accepted += 1;
                }
                cur = c;
            }
            None => {
                let rejected_at_step = (!kids.is_empty()).then_some(accepted_tokens.len());
                return Ok(VerifyOutcome {
                    accepted_tokens,
                    bonus_token: want,
                    rejected_at_step,
                    accepted_node_indices,
                    resampled_accepted,
                    final_state: states[cur].clone(),
                    node_states: states,
                });
            }
        }
    }
}

/// Path-set union of two trees sharing a root. Where both trees contain the
/// same root path the node with the larger joint probability wins.
pub fn fuse_trees(fresh: &DraftTree, resampled: &DraftTree) -> Result<DraftTree> {
    if fresh.root().token != resampled.root().token {
        return Err(contract(format!(
            "cannot fuse trees rooted at {} and {}",
            fresh.root().token,
            resampled.root().token
        )));
    }
    let mut out = fresh.clone();
    out.widen(resampled);
    let mut stack = vec![(0usize, 0usize)];
    while let Some((src, dst)) = stack.pop() {
        for &c in &resampled.node(src).children {
            let n = resampled.node(c);
            let target = match out.child_with_token(dst, n.token) {
                Some(existing) => {
                    if n.log_joint > out.node(existing).log_joint {
                        let e = out.node_mut(existing);
                        e.prob = n.prob;
                        e.log_joint = n.log_joint;
                        e.joint_prob = n.joint_prob;
                    }
                    existing
                }
                None => out.push_child(dst, n.token, n.prob, n.log_joint, n.origin),
            };
            stack.push((c, target));
        }
    }
    out.sort_children();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drafting::{beam_tree, prune_tree, LogitChain};
    use crate::models::ModelSpec;
    use crate::numerics::seeded_matrix;

    fn model(seed: u64) -> TargetModel {
        TargetModel::synthetic(&ModelSpec {
            vocab: 12,
            hidden: 6,
            seed,
            ..ModelSpec::default()
        })
        .unwrap()
    }

    /// Builds a chain-shaped tree from explicit tokens.
    fn chain_tree(root: TokenId, tokens: &[TokenId], vocab: usize) -> DraftTree {
        let steps: Vec<Vec<f32>> = tokens
            .iter()
            .map(|&t| {
                let mut l = vec![0.0; vocab];
                l[t as usize] = 10.0;
                l
            })
            .collect();
        beam_tree(&LogitChain::new(steps).unwrap(), root, 1).unwrap()
    }

    #[test]
    fn linearize_examples() {
        let t = chain_tree(1, &[2, 3, 4], 6);
        let lin = linearize(&t);
        for (i, n) in lin.nodes.iter().enumerate().skip(1) {
            assert_eq!(n.parent, Some(i - 1));
        }
        let single = linearize(&DraftTree::single(0, Origin::Fresh));
        assert_eq!(single.len(), 1);
        assert!(single.visibility[0].is_empty());
        let mask = lin.attention_mask();
        assert!(mask[3][0] && mask[3][2] && mask[3][3]);
        assert!(!mask[1][2]);
    }

    #[test]
    fn perfect_draft_is_fully_accepted() {
        let m = model(1);
        let prompt = [3, 1, 4];
        let greedy = m.greedy_decode(&prompt, 5).unwrap();
        let prefix = m.prefill(&prompt).unwrap();
        let tree = chain_tree(4, &greedy[..4], 12);
        let out = verify_tree(&m, &prefix, &linearize(&tree)).unwrap();
        assert_eq!(out.accepted_tokens, greedy[..4]);
        assert_eq!(out.bonus_token, greedy[4]);
        assert_eq!(out.rejected_at_step, None);
    }

    #[test]
    fn immediate_rejection_yields_bonus() {
        let m = model(2);
        let prompt = [5, 6];
        let next = m.greedy_decode(&prompt, 1).unwrap()[0];
        let wrong = (next + 1) % 12;
        let prefix = m.prefill(&prompt).unwrap();
        let out = verify_tree(&m, &prefix, &linearize(&chain_tree(6, &[wrong, 2], 12))).unwrap();
        assert!(out.accepted_tokens.is_empty());
        assert_eq!(out.bonus_token, next);
        assert_eq!(out.rejected_at_step, Some(0));
    }

    #[test]
    fn fuse_examples() {
        let steps = (0..3).map(|i| seeded_matrix(1, 10, 60 + i, 2.0).unwrap().into_data()).collect();
        let fresh = prune_tree(&beam_tree(&LogitChain::new(steps).unwrap(), 2, 2).unwrap(), 5).unwrap();
        assert_eq!(fuse_trees(&fresh, &DraftTree::single(2, Origin::Resampled)).unwrap(), fresh);
        assert_eq!(fuse_trees(&fresh, &fresh).unwrap(), fresh);
        assert!(fuse_trees(&fresh, &DraftTree::single(3, Origin::Resampled)).is_err());
    }

    #[test]
    fn root_mismatch_is_rejected() {
        let m = model(3);
        let prefix = m.prefill(&[1, 2]).unwrap();
        assert!(verify_tree(&m, &prefix, &linearize(&DraftTree::single(3, Origin::Fresh))).is_err());
    }

    #[test]
    fn node_states_follow_root_paths() {
        let m = model(4);
        let prefix = m.prefill(&[7, 8, 9]).unwrap();
        let steps = (0..3).map(|i| seeded_matrix(1, 12, 40 + i, 2.0).unwrap().into_data()).collect();
        let tree = beam_tree(&LogitChain::new(steps).unwrap(), 9, 3).unwrap();
        let lin = linearize(&tree);
        let out = verify_tree(&m, &prefix, &lin).unwrap();
        for (i, state) in out.node_states.iter().enumerate() {
            let mut path = vec![i];
            while let Some(p) = lin.nodes[*path.last().unwrap()].parent {
                path.push(p);
            }
            let mut h = prefix.hidden.clone();
            for &j in path.iter().rev() {
                h = m.step(&h, lin.nodes[j].token).unwrap();
            }
            for (a, b) in state.iter().zip(&h) {
                assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
