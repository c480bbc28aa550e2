//! Dynamic solution graph: scored proposal nodes, typed edges, branch
//! bookkeeping, stagnation detection, and score backpropagation.
//!
//! The graph generalizes an MCTS tree: primary-parent edges form a tree and
//! carry credit; cross-branch and aggregation reference edges add a DAG of
//! informational links that never affect visit counts or rewards. Credit
//! flows only along the primary ancestral path, so multi-source proposals
//! never double-count.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::similarity;
use crate::types::{Evaluation, Id, Solution};

/// How a node was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorTag {
    Root,
    Primary,
    IntraBranch,
    CrossBranch,
    Aggregation,
}

impl OperatorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorTag::Root => "root",
            OperatorTag::Primary => "primary",
            OperatorTag::IntraBranch => "intra_branch",
            OperatorTag::CrossBranch => "cross_branch",
            OperatorTag::Aggregation => "aggregation",
        }
    }
}

impl fmt::Display for OperatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One candidate solution plus its search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionNode {
    pub id: Id,
    pub solution: Solution,
    /// Set once the node has been evaluated; `None` for pending or failed
    /// nodes.
    pub score: Option<Evaluation>,
    pub visits: u64,
    pub total_reward: f64,
    /// Primary parent; `None` only for the root.
    pub parent: Option<Id>,
    pub operator_tag: OperatorTag,
    /// Informational edges to reference nodes (cross-branch sources or
    /// aggregation inputs). Never part of the credit path.
    pub ref_edges: Vec<Id>,
    /// The branch this node belongs to; `None` only for the root, which
    /// predates every branch.
    pub branch: Option<Id>,
    /// Primary children in creation order.
    pub children: Vec<Id>,
    /// True when evaluation failed; the node stays for audit but is inert:
    /// never selected, never ranked, never backpropagated through.
    pub failed: bool,
}

impl SolutionNode {
    pub fn is_evaluated(&self) -> bool {
        self.score.is_some()
    }

    pub fn score_value(&self) -> Option<f64> {
        self.score.as_ref().map(|e| e.score)
    }

    /// Mean backpropagated reward; 0.0 before the first visit.
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_reward / self.visits as f64
        }
    }
}

/// Upper bound on per-branch evaluation history kept for stagnation checks.
/// Windows larger than this cannot be answered and report "not stagnant".
pub const RECENT_SCORES_CAP: usize = 1024;

/// One recorded branch evaluation: the score and the branch best as it stood
/// immediately before this evaluation (`None` for the branch's first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecentEval {
    pub score: f64,
    pub best_before: Option<f64>,
}

/// Lineage rooted at one child of the graph root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: Id,
    pub root_child: Id,
    /// Best evaluation seen in this branch; `None` until the first one.
    pub best_score: Option<f64>,
    /// Most recent evaluations, oldest first, capped at
    /// [`RECENT_SCORES_CAP`].
    pub recent: VecDeque<RecentEval>,
    pub total_evals: u64,
    /// Evaluations since the branch last set a new best (0 right after an
    /// improvement). Unlike `recent`, never truncated.
    #[serde(default)]
    pub fruitless: u64,
}

/// The solution graph. Single-writer: all mutations go through `&mut self`;
/// queries are read-only and may be shared freely between mutations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGraph {
    nodes: Vec<SolutionNode>,
    index: BTreeMap<Id, usize>,
    branches: Vec<Branch>,
    branch_index: BTreeMap<Id, usize>,
    ids: Rng,
}

impl SolutionGraph {
    /// `id_stream` is a dedicated RNG stream for node and branch ids; it is
    /// part of graph state so checkpointed graphs keep allocating ids
    /// deterministically.
    pub fn new(id_stream: Rng) -> Self {
        SolutionGraph {
            nodes: Vec::new(),
            index: BTreeMap::new(),
            branches: Vec::new(),
            branch_index: BTreeMap::new(),
            ids: id_stream,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_id(&self) -> Option<Id> {
        self.nodes.first().map(|n| n.id)
    }

    pub fn node(&self, id: Id) -> Result<&SolutionNode> {
        self.index
            .get(&id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    fn node_mut(&mut self, id: Id) -> Result<&mut SolutionNode> {
        match self.index.get(&id) {
            Some(&i) => Ok(&mut self.nodes[i]),
            None => Err(Error::UnknownNode(id.to_string())),
        }
    }

    /// Nodes in creation order.
    pub fn nodes(&self) -> impl Iterator<Item = &SolutionNode> {
        self.nodes.iter()
    }

    /// Branches in creation order.
    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter()
    }

    pub fn branch(&self, id: Id) -> Result<&Branch> {
        self.branch_index
            .get(&id)
            .map(|&i| &self.branches[i])
            .ok_or_else(|| Error::UnknownNode(format!("branch {id}")))
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn evaluated_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_evaluated()).count()
    }

    /// Creates the root from the baseline solution and its evaluation.
    pub fn add_root(&mut self, solution: Solution, evaluation: Evaluation) -> Result<Id> {
        if !self.nodes.is_empty() {
            return Err(Error::invalid("solution graph already has a root"));
        }
        let id = rng::make_id(&mut self.ids);
        let total_reward = evaluation.score;
        self.insert_node(SolutionNode {
            id,
            solution,
            score: Some(evaluation),
            visits: 1,
            total_reward,
            parent: None,
            operator_tag: OperatorTag::Root,
            ref_edges: Vec::new(),
            branch: None,
            children: Vec::new(),
            failed: false,
        });
        Ok(id)
    }

    /// Adds an unevaluated child under `parent`. Children of the root start
    /// a new branch; everyone else inherits the parent's branch. `refs` are
    /// required for cross-branch and aggregation children and forbidden for
    /// the single-source operators.
    pub fn add_child(
        &mut self,
        parent: Id,
        proposal: Solution,
        tag: OperatorTag,
        refs: &[Id],
    ) -> Result<Id> {
        if tag == OperatorTag::Root {
            return Err(Error::invalid("children cannot carry the root tag"));
        }
        let parent_branch = self.node(parent)?.branch;
        match tag {
            OperatorTag::CrossBranch | OperatorTag::Aggregation if refs.is_empty() => {
                return Err(Error::invalid(format!(
                    "{tag} children require at least one reference edge"
                )));
            }
            OperatorTag::Primary | OperatorTag::IntraBranch if !refs.is_empty() => {
                return Err(Error::invalid(format!(
                    "{tag} children take no reference edges"
                )));
            }
            _ => {}
        }
        // A reference to the child itself is unrepresentable here — the id
        // is minted below — so existence checks are the whole self/descendant
        // guard.
        for (i, r) in refs.iter().enumerate() {
            self.node(*r)?;
            if *r == parent {
                return Err(Error::invalid(
                    "reference edge duplicates the primary parent edge",
                ));
            }
            if refs[..i].contains(r) {
                return Err(Error::invalid(format!("duplicate reference edge {r}")));
            }
        }

        let id = rng::make_id(&mut self.ids);
        let branch = match parent_branch {
            Some(b) => b,
            None => {
                // Child of the root: open a new branch.
                let branch_id = rng::make_id(&mut self.ids);
                self.branch_index.insert(branch_id, self.branches.len());
                self.branches.push(Branch {
                    id: branch_id,
                    root_child: id,
                    best_score: None,
                    recent: VecDeque::new(),
                    total_evals: 0,
                    fruitless: 0,
                });
                branch_id
            }
        };
        self.insert_node(SolutionNode {
            id,
            solution: proposal,
            score: None,
            visits: 0,
            total_reward: 0.0,
            parent: Some(parent),
            operator_tag: tag,
            ref_edges: refs.to_vec(),
            branch: Some(branch),
            children: Vec::new(),
            failed: false,
        });
        self.node_mut(parent)
            .expect("parent existence checked above")
            .children
            .push(id);
        Ok(id)
    }

    fn insert_node(&mut self, node: SolutionNode) {
        self.index.insert(node.id, self.nodes.len());
        self.nodes.push(node);
    }

    /// Records the full evaluation on a pending node. Backpropagation is a
    /// separate step so failed evaluations can be recorded without touching
    /// statistics.
    pub fn record_evaluation(&mut self, id: Id, evaluation: Evaluation) -> Result<()> {
        let node = self.node_mut(id)?;
        if node.failed {
            return Err(Error::invalid("cannot evaluate a failed node"));
        }
        if node.score.is_some() {
            return Err(Error::invalid("node is already evaluated"));
        }
        node.score = Some(evaluation);
        Ok(())
    }

    /// Marks a pending node's evaluation as failed. The node remains in the
    /// graph for audit but is excluded from selection, ranking, and credit.
    pub fn mark_failed(&mut self, id: Id) -> Result<()> {
        let node = self.node_mut(id)?;
        if node.score.is_some() {
            return Err(Error::invalid("cannot fail an evaluated node"));
        }
        node.failed = true;
        Ok(())
    }

    /// The primary-parent path from `id` (inclusive) up to the root.
    pub fn ancestors(&self, id: Id) -> Result<Vec<Id>> {
        let mut path = Vec::new();
        let mut cursor = self.node(id)?;
        loop {
            path.push(cursor.id);
            match cursor.parent {
                Some(p) => cursor = self.node(p)?,
                None => return Ok(path),
            }
        }
    }

    /// Adds one visit and `score` reward to every node on the ancestral
    /// path, records the node's score if it has none, and updates its
    /// branch's best/recent history.
    pub fn backpropagate(&mut self, id: Id, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::invalid(format!(
                "backpropagated score must be finite, got {score}"
            )));
        }
        if self.node(id)?.failed {
            return Err(Error::invalid("cannot backpropagate through a failed node"));
        }
        for ancestor in self.ancestors(id)? {
            let n = self.node_mut(ancestor).expect("ancestor exists");
            n.visits += 1;
            n.total_reward += score;
        }
        let branch = {
            let node = self.node_mut(id).expect("checked above");
            if node.score.is_none() {
                node.score =
                    Some(Evaluation::from_score(score).expect("score checked finite above"));
            }
            node.branch
        };
        if let Some(branch_id) = branch {
            let i = self.branch_index[&branch_id];
            let b = &mut self.branches[i];
            let best_before = b.best_score;
            b.recent.push_back(RecentEval { score, best_before });
            if b.recent.len() > RECENT_SCORES_CAP {
                b.recent.pop_front();
            }
            b.total_evals += 1;
            let improved = best_before.is_none_or(|prev| score > prev);
            b.fruitless = if improved { 0 } else { b.fruitless + 1 };
            b.best_score = Some(best_before.map_or(score, |prev| prev.max(score)));
        }
        Ok(())
    }

    /// Evaluated nodes ranked by score descending, ties by earlier creation.
    /// May return fewer than `k`.
    pub fn top_nodes(&self, k: usize) -> Vec<Id> {
        let evaluated: Vec<&SolutionNode> =
            self.nodes.iter().filter(|n| n.is_evaluated()).collect();
        similarity::topk(&evaluated, k, |n| {
            n.score_value().expect("filtered to evaluated")
        })
        .into_iter()
        .map(|(i, _)| evaluated[i].id)
        .collect()
    }

    /// True iff the branch has at least `window` evaluations and none of the
    /// last `window` of them beat the branch best recorded before that
    /// window started.
    pub fn is_stagnant(&self, branch: Id, window: usize) -> Result<bool> {
        if window == 0 {
            return Err(Error::invalid("stagnation window must be positive"));
        }
        let b = self.branch(branch)?;
        if b.total_evals < window as u64 || b.recent.len() < window {
            // Either too young, or the window outruns the retained history
            // (RECENT_SCORES_CAP); without evidence we call it not stagnant.
            return Ok(false);
        }
        let start = b.recent.len() - window;
        let Some(prior_best) = b.recent[start].best_before else {
            // The window spans the branch's whole history: its first
            // evaluation had no prior best to fail against.
            return Ok(false);
        };
        Ok(!b
            .recent
            .iter()
            .skip(start)
            .any(|e| e.score > prior_best))
    }

    /// Evaluations the branch has recorded since it last set a new best.
    pub fn fruitless_evals(&self, branch: Id) -> Result<u64> {
        Ok(self.branch(branch)?.fruitless)
    }

    /// Export view: nodes in creation order plus explicit edge lists typed
    /// by how the child was produced.
    pub fn snapshot(&self) -> GraphSnapshot {
        let mut edges = EdgeLists::default();
        for n in &self.nodes {
            if let Some(p) = n.parent {
                edges.primary.push((n.id, p));
            }
            let list = match n.operator_tag {
                OperatorTag::CrossBranch => &mut edges.cross_branch_refs,
                OperatorTag::Aggregation => &mut edges.aggregation_sources,
                _ => continue,
            };
            for r in &n.ref_edges {
                list.push((n.id, *r));
            }
        }
        GraphSnapshot {
            nodes: self.nodes.clone(),
            edges,
        }
    }
}

/// Edge lists for [`GraphSnapshot`], as `(from, to)` pairs pointing from the
/// produced node to its parent/reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeLists {
    pub primary: Vec<(Id, Id)>,
    pub cross_branch_refs: Vec<(Id, Id)>,
    pub aggregation_sources: Vec<(Id, Id)>,
}

/// Serializable export of the whole graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<SolutionNode>,
    pub edges: EdgeLists,
}
