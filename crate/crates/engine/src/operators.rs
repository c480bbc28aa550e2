//! The four expansion operators: context construction for proposal
//! generation.
//!
//! Each operator assembles a different slice of the solution graph into a
//! [`GenerationContext`] — the only thing a [`ProposalGenerator`] ever sees.
//! Generators never touch the graph directly, which keeps them swappable
//! between the deterministic bitstring mutator shipped here and a remote
//! model adapter.
//!
//! - Primary Expansion: just the parent.
//! - Intra-branch Evolution: the parent plus its recent ancestral
//!   trajectory, each step judged against its own parent.
//! - Cross-branch Reference: the parent plus top-scoring nodes from other
//!   branches (the escape hatch for stagnant lineages).
//! - Multi-branch Aggregation: top nodes across branches, diversity-capped,
//!   synthesized into one proposal under the best source as primary parent.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::similarity;
use crate::solution_graph::{OperatorTag, SolutionGraph, SolutionNode};
use crate::types::{Evaluation, Id, Solution, SolutionKind};

/// Ancestors included in an intra-branch trajectory when the caller has no
/// stronger opinion. Deep enough that evidence of load-bearing structure
/// (see [`BitstringGenerator`]) survives long stretches of plateau walking
/// instead of expiring a handful of steps after each judged event.
pub const DEFAULT_TRAJECTORY_DEPTH: usize = 32;

/// How a step's score compares to its own parent's score (strict
/// comparison; equal scores are `Unchanged`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Improved,
    Regressed,
    Unchanged,
}

impl Judgment {
    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Improved => "improved",
            Judgment::Regressed => "regressed",
            Judgment::Unchanged => "unchanged",
        }
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strictly compares a score against the baseline it evolved from.
pub fn judge(score: f64, baseline: f64) -> Judgment {
    if score > baseline {
        Judgment::Improved
    } else if score < baseline {
        Judgment::Regressed
    } else {
        Judgment::Unchanged
    }
}

/// One step of an intra-branch trajectory, nearest ancestor first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub solution: Solution,
    pub score: f64,
    pub judgment: Judgment,
}

/// A cross-branch or aggregation source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub node: Id,
    pub solution: Solution,
    pub score: f64,
}

/// Everything a generator is allowed to know when producing a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub operator_tag: OperatorTag,
    /// The node the new proposal will attach to as a primary child.
    pub parent_id: Id,
    pub parent_solution: Solution,
    pub parent_evaluation: Evaluation,
    /// Intra-branch only: recent ancestry, nearest first.
    pub trajectory: Vec<TrajectoryStep>,
    /// Cross-branch / aggregation only: source nodes, best first.
    pub references: Vec<Reference>,
    pub task_objective: String,
    /// Filled in by the memory layer before generation; empty otherwise.
    pub memory_hints: Vec<String>,
}

impl GenerationContext {
    /// Reference ids to record as informational edges when the child is
    /// added — every reference except the one doubling as primary parent.
    pub fn edge_refs(&self) -> Vec<Id> {
        self.references
            .iter()
            .map(|r| r.node)
            .filter(|id| *id != self.parent_id)
            .collect()
    }

    /// Shape invariants per operator tag.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.operator_tag {
            OperatorTag::Root => false,
            OperatorTag::Primary => self.trajectory.is_empty() && self.references.is_empty(),
            OperatorTag::IntraBranch => self.references.is_empty(),
            OperatorTag::CrossBranch => self.trajectory.is_empty() && !self.references.is_empty(),
            OperatorTag::Aggregation => self.trajectory.is_empty() && !self.references.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "malformed {} generation context",
                self.operator_tag
            )))
        }
    }
}

/// Produces a new candidate solution from a context. Implementations must be
/// deterministic given the context and the RNG stream handed to them, and
/// must not consult any state beyond those two inputs.
pub trait ProposalGenerator: Send + Sync {
    fn generate(&self, context: &GenerationContext, rng: &mut Rng) -> Result<Solution>;
}

fn evaluated_node<'g>(graph: &'g SolutionGraph, id: Id) -> Result<&'g SolutionNode> {
    let node = graph.node(id)?;
    if !node.is_evaluated() {
        return Err(Error::invalid(format!(
            "node {id} is not evaluated and cannot seed a generation context"
        )));
    }
    Ok(node)
}

fn base_context(
    tag: OperatorTag,
    parent: &SolutionNode,
    objective: &str,
) -> GenerationContext {
    GenerationContext {
        operator_tag: tag,
        parent_id: parent.id,
        parent_solution: parent.solution.clone(),
        parent_evaluation: parent.score.clone().expect("caller checked evaluation"),
        trajectory: Vec::new(),
        references: Vec::new(),
        task_objective: objective.to_string(),
        memory_hints: Vec::new(),
    }
}

/// Context holding only the immediate parent.
pub fn build_primary_context(
    graph: &SolutionGraph,
    parent: Id,
    objective: &str,
) -> Result<GenerationContext> {
    let node = evaluated_node(graph, parent)?;
    Ok(base_context(OperatorTag::Primary, node, objective))
}

/// Context holding the parent plus up to `max_depth` evaluated ancestors
/// (nearest first), each judged against its own parent's score. The root is
/// never part of a trajectory: it belongs to no branch and has no baseline
/// of its own to be judged against.
pub fn build_intra_branch_context(
    graph: &SolutionGraph,
    parent: Id,
    objective: &str,
    max_depth: usize,
) -> Result<GenerationContext> {
    let node = evaluated_node(graph, parent)?;
    let mut ctx = base_context(OperatorTag::IntraBranch, node, objective);
    let mut cursor = node;
    while ctx.trajectory.len() < max_depth {
        let Some(parent_id) = cursor.parent else {
            break; // reached the root
        };
        let above = graph.node(parent_id)?;
        let (Some(score), Some(parent_score)) = (cursor.score_value(), above.score_value())
        else {
            break; // unevaluated link: the contiguous trajectory ends here
        };
        ctx.trajectory.push(TrajectoryStep {
            solution: cursor.solution.clone(),
            score,
            judgment: judge(score, parent_score),
        });
        if above.parent.is_none() {
            break; // `above` is the root; do not include it
        }
        cursor = above;
    }
    Ok(ctx)
}

/// Ranks the evaluated branch nodes for which `keep` holds by score
/// descending, creation order on ties.
fn ranked_branch_nodes<'g>(
    graph: &'g SolutionGraph,
    keep: impl Fn(&SolutionNode) -> bool,
) -> Vec<&'g SolutionNode> {
    let candidates: Vec<&SolutionNode> = graph
        .nodes()
        .filter(|n| n.is_evaluated() && n.branch.is_some() && keep(n))
        .collect();
    similarity::topk(&candidates, candidates.len(), |n| {
        n.score_value().expect("filtered to evaluated")
    })
    .into_iter()
    .map(|(i, _)| candidates[i])
    .collect()
}

fn reference(node: &SolutionNode) -> Reference {
    Reference {
        node: node.id,
        solution: node.solution.clone(),
        score: node.score_value().expect("references are evaluated"),
    }
}

/// Context holding the parent plus the top-`k` evaluated nodes from other
/// branches. `NotApplicable` when no such node exists — the caller is
/// expected to fall back to intra-branch evolution.
pub fn build_cross_branch_context(
    graph: &SolutionGraph,
    parent: Id,
    objective: &str,
    k: usize,
) -> Result<GenerationContext> {
    if k == 0 {
        return Err(Error::invalid("cross-branch reference count must be positive"));
    }
    let node = evaluated_node(graph, parent)?;
    let home = node.branch;
    let outside = ranked_branch_nodes(graph, |n| n.branch != home);
    if outside.is_empty() {
        return Err(Error::NotApplicable(
            "no evaluated node outside the parent's branch",
        ));
    }
    let mut ctx = base_context(OperatorTag::CrossBranch, node, objective);
    ctx.references = outside.into_iter().take(k).map(reference).collect();
    Ok(ctx)
}

/// Context synthesizing the top-`k` nodes across branches, with at most
/// `ceil(k/2)` drawn from any single branch so no lineage dominates. The
/// best reference doubles as the primary parent. `NotApplicable` unless at
/// least two branches hold evaluated nodes.
pub fn build_aggregation_context(
    graph: &SolutionGraph,
    objective: &str,
    k: usize,
) -> Result<GenerationContext> {
    if k == 0 {
        return Err(Error::invalid("aggregation reference count must be positive"));
    }
    let ranked = ranked_branch_nodes(graph, |_| true);
    let mut branches: Vec<Id> = ranked.iter().filter_map(|n| n.branch).collect();
    branches.sort_by_key(|id| id.raw());
    branches.dedup();
    if branches.len() < 2 {
        return Err(Error::NotApplicable(
            "aggregation needs evaluated nodes in at least two branches",
        ));
    }

    let per_branch_cap = k.div_ceil(2);
    let mut taken_per_branch: Vec<(Id, usize)> = Vec::new();
    let mut sources = Vec::new();
    for node in ranked {
        if sources.len() == k {
            break;
        }
        let branch = node.branch.expect("branch nodes only");
        let slot = taken_per_branch.iter_mut().find(|(b, _)| *b == branch);
        match slot {
            Some((_, count)) if *count >= per_branch_cap => continue,
            Some((_, count)) => *count += 1,
            None => taken_per_branch.push((branch, 1)),
        }
        sources.push(node);
    }

    let best = sources[0];
    let mut ctx = base_context(OperatorTag::Aggregation, best, objective);
    ctx.references = sources.into_iter().map(reference).collect();
    Ok(ctx)
}

/// Deterministic bitstring mutator: the desk-scale stand-in for a model
/// generator. Per operator:
///
/// - primary: flip one random bit of the parent;
/// - intra-branch: flip one random bit, avoiding flips that would re-make
///   a `regressed` trajectory step's change or undo an `improved` step's
///   (repairs of damage the parent still carries stay open) when any
///   alternative exists. Judged steps also mark the quarter they changed
///   as load-bearing: while the parent still carries that quarter exactly
///   as the step's winning side had it, the whole quarter is off-limits,
///   which concentrates mutation on the regions the walk has not yet
///   gotten right;
/// - cross-branch: splice one contiguous quarter of one random reference
///   into the parent, chosen among the quarters where the two disagree
///   (degenerating to a plain flip when the donor matches everywhere);
/// - aggregation: uniform per-position crossover among the references.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BitstringGenerator;

impl BitstringGenerator {
    fn payload_bits(solution: &Solution, len: usize) -> Result<Vec<u8>> {
        if solution.kind != SolutionKind::Bitstring {
            return Err(Error::invalid(format!(
                "bitstring generator received a {:?} solution",
                solution.kind
            )));
        }
        let bytes = solution.payload.as_bytes();
        if bytes.len() != len {
            return Err(Error::invalid(format!(
                "bitstring length mismatch: expected {len}, got {}",
                bytes.len()
            )));
        }
        if let Some(bad) = bytes.iter().find(|b| **b != b'0' && **b != b'1') {
            return Err(Error::invalid(format!(
                "bitstring contains invalid byte {:?}",
                *bad as char
            )));
        }
        Ok(bytes.to_vec())
    }

    /// Positions where flipping the parent's bit would re-make a change a
    /// `regressed` trajectory step already made, or would undo a change an
    /// `improved` step earned. Each judged step is diffed against the step
    /// it evolved from (only consecutive entries can be diffed; the
    /// deepest entry's parent is outside the context). A differing
    /// position is off-limits only while the parent still carries the
    /// value worth keeping — the pre-regression bit, or the improvement's
    /// bit. Where damage is still present, flipping it back is a repair
    /// and stays open.
    ///
    /// Judged steps carry a second, coarser lesson: the score moved when
    /// this region changed, so the region is load-bearing. Each quarter a
    /// judged step touched is guarded wholesale while the parent holds
    /// that quarter exactly as the step's winning side (the pre-regression
    /// state, or the improved state) had it. A quarter that has since
    /// drifted is not guarded — per-position rules keep repairs open.
    fn guarded_positions(
        trajectory: &[TrajectoryStep],
        current: &[u8],
        len: usize,
    ) -> Result<Vec<bool>> {
        let mut avoid = vec![false; len];
        let quarter = |q: usize| (q * len / 4)..((q + 1) * len / 4);
        for pair in trajectory.windows(2) {
            if pair[0].judgment == Judgment::Unchanged {
                continue;
            }
            let child = Self::payload_bits(&pair[0].solution, len)?;
            let parent = Self::payload_bits(&pair[1].solution, len)?;
            let winning = match pair[0].judgment {
                Judgment::Improved => &child,  // the step earned its change
                Judgment::Regressed => &parent, // the prior step had it right
                Judgment::Unchanged => unreachable!(),
            };
            for (i, flag) in avoid.iter_mut().enumerate() {
                if child[i] != parent[i] && current[i] == winning[i] {
                    *flag = true;
                }
            }
            for q in 0..4 {
                let range = quarter(q);
                if range.is_empty() {
                    continue;
                }
                let touched = range.clone().any(|i| child[i] != parent[i]);
                if touched && current[range.clone()] == winning[range.clone()] {
                    for flag in &mut avoid[range] {
                        *flag = true;
                    }
                }
            }
        }
        Ok(avoid)
    }

    fn flip(bits: &mut [u8], index: usize) {
        bits[index] = if bits[index] == b'0' { b'1' } else { b'0' };
    }
}

impl ProposalGenerator for BitstringGenerator {
    fn generate(&self, context: &GenerationContext, rng: &mut Rng) -> Result<Solution> {
        context.validate()?;
        let len = context.parent_solution.payload.len();
        let mut bits = Self::payload_bits(&context.parent_solution, len)?;

        match context.operator_tag {
            OperatorTag::Root => unreachable!("validate rejects root contexts"),
            OperatorTag::Primary => {
                Self::flip(&mut bits, rng.index(len));
            }
            OperatorTag::IntraBranch => {
                let avoid = Self::guarded_positions(&context.trajectory, &bits, len)?;
                let allowed: Vec<usize> =
                    (0..len).filter(|i| !avoid[*i]).collect();
                let index = if allowed.is_empty() {
                    rng.index(len)
                } else {
                    allowed[rng.index(allowed.len())]
                };
                Self::flip(&mut bits, index);
            }
            OperatorTag::CrossBranch => {
                // Splice a quarter where the donor actually disagrees with
                // the parent — a matching quarter would duplicate the
                // parent and waste the evaluation. A donor identical to
                // the parent degenerates to a plain flip.
                let source = &context.references[rng.index(context.references.len())];
                let donor = Self::payload_bits(&source.solution, len)?;
                let differing: Vec<usize> = (0..4)
                    .filter(|q| {
                        let (s, e) = (q * len / 4, (q + 1) * len / 4);
                        bits[s..e] != donor[s..e]
                    })
                    .collect();
                if differing.is_empty() {
                    Self::flip(&mut bits, rng.index(len));
                } else {
                    let quarter = differing[rng.index(differing.len())];
                    let start = quarter * len / 4;
                    let end = (quarter + 1) * len / 4;
                    bits[start..end].copy_from_slice(&donor[start..end]);
                }
            }
            OperatorTag::Aggregation => {
                let donors: Vec<Vec<u8>> = context
                    .references
                    .iter()
                    .map(|r| Self::payload_bits(&r.solution, len))
                    .collect::<Result<_>>()?;
                for (i, bit) in bits.iter_mut().enumerate() {
                    *bit = donors[rng.index(donors.len())][i];
                }
            }
        }

        Solution::new(
            String::from_utf8(bits).expect("bitstrings are ASCII"),
            SolutionKind::Bitstring,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn bits(s: &str) -> Solution {
        Solution::bitstring(s).unwrap()
    }

    fn eval(score: f64) -> Evaluation {
        Evaluation::from_score(score).unwrap()
    }

    /// root(0.2) -> a(0.5) -> b(0.4), all in one branch.
    fn chain() -> (SolutionGraph, Id, Id, Id) {
        let mut g = SolutionGraph::new(Rng::seeded(3));
        let root = g.add_root(bits("0000"), eval(0.2)).unwrap();
        let a = g.add_child(root, bits("0001"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(a, 0.5).unwrap();
        let b = g.add_child(a, bits("0011"), OperatorTag::IntraBranch, &[]).unwrap();
        g.backpropagate(b, 0.4).unwrap();
        (g, root, a, b)
    }

    /// Two branches: A holds 0.9 and 0.8, B holds 0.7.
    fn two_branches() -> (SolutionGraph, Id, Id, Id, Id) {
        let mut g = SolutionGraph::new(Rng::seeded(5));
        let root = g.add_root(bits("0000"), eval(0.1)).unwrap();
        let a1 = g.add_child(root, bits("1000"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(a1, 0.9).unwrap();
        let a2 = g.add_child(a1, bits("1100"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(a2, 0.8).unwrap();
        let b1 = g.add_child(root, bits("0010"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(b1, 0.7).unwrap();
        (g, root, a1, a2, b1)
    }

    #[test]
    fn primary_context_holds_only_the_parent() {
        let (g, root, _, b) = chain();
        let ctx = build_primary_context(&g, root, "obj").unwrap();
        assert_eq!(ctx.parent_solution, bits("0000"));
        assert!(ctx.trajectory.is_empty());
        assert!(ctx.references.is_empty());
        ctx.validate().unwrap();

        // Deep parents do not leak ancestry into a primary context.
        let deep = build_primary_context(&g, b, "obj").unwrap();
        assert!(deep.trajectory.is_empty());
        assert!(deep.references.is_empty());
    }

    #[test]
    fn primary_context_requires_an_evaluated_parent() {
        let (mut g, root, _, _) = chain();
        let pending = g.add_child(root, bits("0100"), OperatorTag::Primary, &[]).unwrap();
        assert!(build_primary_context(&g, pending, "obj").is_err());
    }

    #[test]
    fn intra_branch_trajectory_is_judged_against_each_parent() {
        let (g, _, _, b) = chain();
        let ctx = build_intra_branch_context(&g, b, "obj", 2).unwrap();
        assert_eq!(ctx.trajectory.len(), 2);
        assert_eq!(ctx.trajectory[0].solution, bits("0011"));
        assert_eq!(ctx.trajectory[0].score, 0.4);
        assert_eq!(ctx.trajectory[0].judgment, Judgment::Regressed);
        assert_eq!(ctx.trajectory[1].solution, bits("0001"));
        assert_eq!(ctx.trajectory[1].judgment, Judgment::Improved);
        ctx.validate().unwrap();
    }

    #[test]
    fn intra_branch_excludes_the_root_and_respects_depth() {
        let (g, root, _, b) = chain();
        // Depth larger than the chain: the root still never appears.
        let ctx = build_intra_branch_context(&g, b, "obj", 10).unwrap();
        assert_eq!(ctx.trajectory.len(), 2);
        assert!(ctx.trajectory.iter().all(|s| s.solution != bits("0000")));

        // Depth 0 degenerates to a primary-shaped context.
        let flat = build_intra_branch_context(&g, b, "obj", 0).unwrap();
        assert!(flat.trajectory.is_empty());

        // The root as parent has no branch history at all.
        let at_root = build_intra_branch_context(&g, root, "obj", 4).unwrap();
        assert!(at_root.trajectory.is_empty());
    }

    #[test]
    fn equal_scores_judge_as_unchanged() {
        assert_eq!(judge(0.5, 0.5), Judgment::Unchanged);
        assert_eq!(judge(0.6, 0.5), Judgment::Improved);
        assert_eq!(judge(0.4, 0.5), Judgment::Regressed);
    }

    #[test]
    fn cross_branch_draws_only_from_other_branches() {
        let (g, _, a1, a2, b1) = two_branches();
        let ctx = build_cross_branch_context(&g, b1, "obj", 3).unwrap();
        let refs: Vec<Id> = ctx.references.iter().map(|r| r.node).collect();
        assert_eq!(refs, vec![a1, a2]);
        ctx.validate().unwrap();

        // k smaller than the pool truncates from the top.
        let tight = build_cross_branch_context(&g, b1, "obj", 1).unwrap();
        assert_eq!(tight.references.len(), 1);
        assert_eq!(tight.references[0].node, a1);
    }

    #[test]
    fn cross_branch_on_single_branch_is_not_applicable() {
        let (g, _, _, b) = chain();
        assert!(matches!(
            build_cross_branch_context(&g, b, "obj", 3),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn aggregation_caps_per_branch_and_parents_the_best() {
        let (g, _, a1, a2, b1) = two_branches();
        // k=3: cap is 2 per branch, so A contributes both nodes and B one.
        let ctx = build_aggregation_context(&g, "obj", 3).unwrap();
        let refs: Vec<Id> = ctx.references.iter().map(|r| r.node).collect();
        assert_eq!(refs, vec![a1, a2, b1]);
        assert_eq!(ctx.parent_id, a1);
        // The parent is not repeated as an informational edge.
        assert_eq!(ctx.edge_refs(), vec![a2, b1]);
        ctx.validate().unwrap();
    }

    #[test]
    fn aggregation_cap_forces_branch_diversity() {
        let (g, _, a1, _, b1) = two_branches();
        // k=2: cap is 1 per branch, so the second-best node of A is skipped.
        let ctx = build_aggregation_context(&g, "obj", 2).unwrap();
        let refs: Vec<Id> = ctx.references.iter().map(|r| r.node).collect();
        assert_eq!(refs, vec![a1, b1]);
    }

    #[test]
    fn aggregation_needs_two_branches() {
        let (g, _, _, _) = chain();
        assert!(matches!(
            build_aggregation_context(&g, "obj", 3),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn primary_generation_flips_exactly_one_bit() {
        let (g, root, _, _) = chain();
        let ctx = build_primary_context(&g, root, "obj").unwrap();
        let mut rng = Rng::seeded(42);
        let out = BitstringGenerator.generate(&ctx, &mut rng).unwrap();
        let distance: usize = out
            .payload
            .bytes()
            .zip(ctx.parent_solution.payload.bytes())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(distance, 1);
    }

    #[test]
    fn generation_is_deterministic_for_equal_rng_state() {
        let (g, root, _, _) = chain();
        let ctx = build_primary_context(&g, root, "obj").unwrap();
        let a = BitstringGenerator.generate(&ctx, &mut Rng::seeded(9)).unwrap();
        let b = BitstringGenerator.generate(&ctx, &mut Rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregation_crossover_can_compose_complementary_halves() {
        let mut g = SolutionGraph::new(Rng::seeded(8));
        let root = g.add_root(bits("0000"), eval(0.0)).unwrap();
        let a = g.add_child(root, bits("1100"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(a, 0.5).unwrap();
        let b = g.add_child(root, bits("0011"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(b, 0.5).unwrap();
        let ctx = build_aggregation_context(&g, "obj", 2).unwrap();

        let reachable = (0..64).any(|seed| {
            let out = BitstringGenerator
                .generate(&ctx, &mut Rng::seeded(seed))
                .unwrap();
            out.payload == "1111"
        });
        assert!(reachable, "crossover never produced the composed solution");
    }

    #[test]
    fn aggregation_positions_always_come_from_references() {
        let (g, ..) = two_branches();
        let ctx = build_aggregation_context(&g, "obj", 3).unwrap();
        for seed in 0..32 {
            let out = BitstringGenerator
                .generate(&ctx, &mut Rng::seeded(seed))
                .unwrap();
            for (i, bit) in out.payload.bytes().enumerate() {
                let matched = ctx
                    .references
                    .iter()
                    .any(|r| r.solution.payload.as_bytes()[i] == bit);
                assert!(matched, "position {i} matches no reference");
            }
        }
    }

    #[test]
    fn cross_branch_splice_stays_within_one_quarter() {
        let mut g = SolutionGraph::new(Rng::seeded(12));
        let root = g.add_root(bits("00000000"), eval(0.0)).unwrap();
        let a = g.add_child(root, bits("00000001"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(a, 0.2).unwrap();
        let b = g.add_child(root, bits("11111111"), OperatorTag::Primary, &[]).unwrap();
        g.backpropagate(b, 0.6).unwrap();

        let ctx = build_cross_branch_context(&g, a, "obj", 1).unwrap();
        let donor = &ctx.references[0].solution.payload;
        for seed in 0..32 {
            let out = BitstringGenerator
                .generate(&ctx, &mut Rng::seeded(seed))
                .unwrap();
            let parent = &ctx.parent_solution.payload;
            let quarters: Vec<bool> = (0..4)
                .map(|q| {
                    let (s, e) = (q * 8 / 4, (q + 1) * 8 / 4);
                    out.payload[s..e] == donor[s..e]
                        && (0..8).all(|i| {
                            (s..e).contains(&i)
                                || out.payload.as_bytes()[i] == parent.as_bytes()[i]
                        })
                })
                .collect();
            assert!(
                quarters.iter().any(|ok| *ok),
                "seed {seed}: splice crossed quarter boundaries"
            );
        }
    }

    #[test]
    fn intra_branch_leaves_repairs_open() {
        // Trajectory: b "0011" (regressed) evolved from a "0001" — bit 2
        // carries the damage. Flipping it back from b undoes the mistake,
        // so the position must stay eligible.
        let (g, _, _, b) = chain();
        let ctx = build_intra_branch_context(&g, b, "obj", 2).unwrap();
        assert_eq!(ctx.trajectory[0].judgment, Judgment::Regressed);
        let repaired = (0..64).any(|seed| {
            let out = BitstringGenerator
                .generate(&ctx, &mut Rng::seeded(seed))
                .unwrap();
            out.payload.as_bytes()[2] != ctx.parent_solution.payload.as_bytes()[2]
        });
        assert!(repaired, "no seed ever flipped the damaged bit back");
    }

    #[test]
    fn intra_branch_avoids_remaking_a_regressed_change() {
        // Extend the chain with c "0001", which repaired bit 2 after b's
        // regression. Proposals from c must not flip bit 2 again — that
        // would re-make b's mistake — while every other bit stays open.
        let (mut g, _, _, b) = chain();
        let c = g.add_child(b, bits("0001"), OperatorTag::IntraBranch, &[]).unwrap();
        g.backpropagate(c, 0.5).unwrap();
        let ctx = build_intra_branch_context(&g, c, "obj", 3).unwrap();
        assert_eq!(ctx.trajectory.len(), 3);
        assert_eq!(ctx.trajectory[1].judgment, Judgment::Regressed);
        let mut others_flipped = [false; 4];
        for seed in 0..64 {
            let out = BitstringGenerator
                .generate(&ctx, &mut Rng::seeded(seed))
                .unwrap();
            for i in 0..4 {
                let changed = out.payload.as_bytes()[i]
                    != ctx.parent_solution.payload.as_bytes()[i];
                if i == 2 {
                    assert!(!changed, "seed {seed}: re-made the regressed change");
                } else if changed {
                    others_flipped[i] = true;
                }
            }
        }
        assert_eq!(others_flipped, [true, true, false, true]);
    }

    #[test]
    fn generator_rejects_mixed_lengths_and_foreign_kinds() {
        let (g, root, _, _) = chain();
        let mut ctx = build_primary_context(&g, root, "obj").unwrap();
        ctx.parent_solution = Solution::new("01x0", SolutionKind::Bitstring).unwrap();
        assert!(BitstringGenerator.generate(&ctx, &mut Rng::seeded(1)).is_err());

        let mut text_ctx = build_primary_context(&g, root, "obj").unwrap();
        text_ctx.parent_solution = Solution::new("prose", SolutionKind::Text).unwrap();
        assert!(BitstringGenerator.generate(&text_ctx, &mut Rng::seeded(1)).is_err());

        let mut short = build_primary_context(&g, root, "obj").unwrap();
        short.operator_tag = OperatorTag::CrossBranch;
        short.references = vec![Reference {
            node: root,
            solution: bits("01"),
            score: 0.5,
        }];
        assert!(BitstringGenerator.generate(&short, &mut Rng::seeded(1)).is_err());
    }
}
