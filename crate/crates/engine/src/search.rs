//! The campaign loop: tree-guided selection over the solution graph,
//! operator scheduling, proposal generation, evaluation, and credit
//! backpropagation.
//!
//! One *step* is select → choose operator → build context → generate →
//! evaluate → backpropagate, emitting a [`StepEvent`] either way. A
//! [`Campaign`] drives steps until the evaluation budget is exhausted,
//! optionally evaluating several proposals per round when
//! `worker_count > 1`. Every random choice flows from labeled splits of
//! one seeded generator, so a campaign is a pure function of its config —
//! replays and resumes reproduce the event log byte for byte.

use serde::{Deserialize, Serialize};
use std::fmt;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::CampaignConfig;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::memory::{MemoryStore, TraceOutcome, TraceStep};
use crate::operators::{
    build_aggregation_context, build_cross_branch_context, build_intra_branch_context,
    build_primary_context, GenerationContext, ProposalGenerator, DEFAULT_TRAJECTORY_DEPTH,
};
use crate::rng::Rng;
use crate::solution_graph::{OperatorTag, SolutionGraph};
use crate::types::{Evaluation, Id, Solution};

// ---------------------------------------------------------------------------
// Selection

/// Walks from the root toward a frontier node, balancing exploitation and
/// exploration at every junction.
///
/// At each node, the node itself and its live children compete as one
/// sibling set: their mean rewards jointly set the normalization bounds,
/// `norm(x) = (x - min) / (max - min)` when the means differ, else 0 for
/// all. Each live child scores `norm(mean) + c * sqrt(ln(parent.visits) /
/// child.visits)`; the node scores `norm(own mean) + c * sqrt(ln(visits) /
/// visits)`. Descent continues into the best child — ties break toward
/// earlier creation — unless the node strictly beats every child, in which
/// case selection stops there and the step widens the frontier with a new
/// sibling. An unvisited live child is taken immediately. Failed children
/// are invisible to selection.
pub fn select(graph: &SolutionGraph, c_explore: f64) -> Result<Id> {
    let mut current = graph
        .root_id()
        .ok_or_else(|| Error::invalid("cannot select from an empty graph"))?;
    loop {
        let node = graph.node(current)?;
        let mut live = Vec::with_capacity(node.children.len());
        for &child_id in &node.children {
            let child = graph.node(child_id)?;
            if !child.failed {
                live.push((child_id, child));
            }
        }
        if live.is_empty() {
            return Ok(current);
        }
        if let Some((unvisited, _)) = live.iter().find(|(_, c)| c.visits == 0) {
            return Ok(*unvisited);
        }

        // The node competes against its children as one more sibling: its
        // own mean joins the normalization bounds. A lineage whose mean
        // sinks below the node's own gets parked here and the frontier
        // widens with a fresh sibling instead.
        let means: Vec<f64> = live.iter().map(|(_, c)| c.mean_reward()).collect();
        let self_mean = node.mean_reward();
        let min = means.iter().copied().fold(self_mean, f64::min);
        let max = means.iter().copied().fold(self_mean, f64::max);
        let norm = |x: f64| if max > min { (x - min) / (max - min) } else { 0.0 };
        let parent_visits = node.visits as f64;

        let mut best_child = live[0].0;
        let mut best_uct = f64::NEG_INFINITY;
        for ((child_id, child), mean) in live.iter().zip(&means) {
            let uct = norm(*mean)
                + c_explore * (parent_visits.ln() / child.visits as f64).sqrt();
            if uct > best_uct {
                best_uct = uct;
                best_child = *child_id;
            }
        }

        let self_uct = norm(self_mean)
            + c_explore * (parent_visits.ln() / parent_visits).sqrt();
        if self_uct > best_uct {
            return Ok(current);
        }
        current = best_child;
    }
}

// ---------------------------------------------------------------------------
// Operator scheduling

/// Decides which expansion operator a step should apply.
pub trait OperatorPolicy: Send + Sync {
    fn choose(
        &self,
        graph: &SolutionGraph,
        selected: Id,
        step_index: u64,
        config: &CampaignConfig,
    ) -> OperatorTag;
}

/// The shipped schedule, checked in order:
///
/// 1. every `aggregation_period`-th step combines branches, when at least
///    two branches hold evaluated nodes;
/// 2. a stagnant branch reaches across to another branch, when one exists;
/// 3. nodes at depth two or more refine their own lineage;
/// 4. everything else extends the frontier with a fresh proposal.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultPolicy;

/// Always extends with a fresh proposal — the plain tree-search baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrimaryOnlyPolicy;

impl OperatorPolicy for DefaultPolicy {
    fn choose(
        &self,
        graph: &SolutionGraph,
        selected: Id,
        step_index: u64,
        config: &CampaignConfig,
    ) -> OperatorTag {
        if step_index % config.aggregation_period == 0 && has_multi_branch_pool(graph) {
            return OperatorTag::Aggregation;
        }
        if let Ok(node) = graph.node(selected) {
            if let Some(branch) = node.branch {
                // Stagnation is a trigger, not a standing state: one
                // injection per `stagnation_window` fruitless evaluations,
                // with refinement resuming in between. Firing on every
                // stagnant step would replace the branch's own search with
                // recombination until the budget ran out.
                let stagnant = graph
                    .is_stagnant(branch, config.stagnation_window)
                    .unwrap_or(false);
                let due = graph
                    .fruitless_evals(branch)
                    .map(|f| f % config.stagnation_window as u64 == 0)
                    .unwrap_or(false);
                if stagnant && due && has_external_reference(graph, selected) {
                    return OperatorTag::CrossBranch;
                }
            }
            if let Ok(chain) = graph.ancestors(selected) {
                if chain.len() >= 3 {
                    return OperatorTag::IntraBranch;
                }
            }
        }
        OperatorTag::Primary
    }
}

impl OperatorPolicy for PrimaryOnlyPolicy {
    fn choose(&self, _: &SolutionGraph, _: Id, _: u64, _: &CampaignConfig) -> OperatorTag {
        OperatorTag::Primary
    }
}

/// True when evaluated nodes span at least two branches — the precondition
/// for combining branches.
fn has_multi_branch_pool(graph: &SolutionGraph) -> bool {
    let mut first: Option<Id> = None;
    for node in graph.nodes() {
        if !node.is_evaluated() {
            continue;
        }
        let Some(branch) = node.branch else { continue };
        match first {
            None => first = Some(branch),
            Some(seen) if seen != branch => return true,
            Some(_) => {}
        }
    }
    false
}

/// True when some evaluated node lives in a different branch than `from` —
/// the precondition for a cross-branch reference.
fn has_external_reference(graph: &SolutionGraph, from: Id) -> bool {
    let own = match graph.node(from) {
        Ok(node) => node.branch,
        Err(_) => return false,
    };
    graph
        .nodes()
        .any(|n| n.is_evaluated() && n.branch.is_some() && n.branch != own)
}

// ---------------------------------------------------------------------------
// Step events

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    GenerationFailed,
    EvaluationFailed,
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepStatus::Ok => "ok",
            StepStatus::GenerationFailed => "generation_failed",
            StepStatus::EvaluationFailed => "evaluation_failed",
        })
    }
}

/// One line of the campaign event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: u64,
    pub selected: Id,
    pub operator: OperatorTag,
    pub child: Option<Id>,
    pub score: Option<f64>,
    pub best_score: f64,
    pub evals_used: u64,
    pub status: StepStatus,
}

impl StepEvent {
    /// The event as one JSON line (no trailing newline).
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

// ---------------------------------------------------------------------------
// Campaign state and driver

/// Everything a campaign needs to continue from where it stopped, minus
/// the pluggable components. Serializable as a checkpoint section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub graph: SolutionGraph,
    pub rng: Rng,
    pub step_index: u64,
    pub evals_used: u64,
    pub best_node: Id,
    pub best_score: f64,
}

/// A planned but uncommitted step.
enum PlannedSlot {
    Generated {
        step: u64,
        selected: Id,
        context: GenerationContext,
        proposal: Solution,
    },
    GenerationFailed {
        step: u64,
        selected: Id,
        operator: OperatorTag,
        reason: String,
    },
}

/// Drives one campaign over pluggable generator, environment, policy, and
/// optional memory.
pub struct Campaign<'a> {
    state: SearchState,
    config: &'a CampaignConfig,
    generator: &'a dyn ProposalGenerator,
    env: &'a dyn Environment,
    policy: &'a dyn OperatorPolicy,
    memory: Option<&'a mut MemoryStore>,
}

impl<'a> Campaign<'a> {
    /// Seeds a fresh campaign: evaluates the environment baseline and roots
    /// the graph with it. The root evaluation does not count against the
    /// budget.
    pub fn new(
        config: &'a CampaignConfig,
        generator: &'a dyn ProposalGenerator,
        env: &'a dyn Environment,
        policy: &'a dyn OperatorPolicy,
        memory: Option<&'a mut MemoryStore>,
    ) -> Result<Self> {
        let rng = Rng::seeded(config.task.seed);
        let mut graph = SolutionGraph::new(rng.split("ids")?);
        let baseline = env.baseline();
        let evaluation = env.evaluate(&baseline)?;
        let best_score = evaluation.score;
        let best_node = graph.add_root(baseline, evaluation)?;
        Ok(Campaign {
            state: SearchState {
                graph,
                rng,
                step_index: 0,
                evals_used: 0,
                best_node,
                best_score,
            },
            config,
            generator,
            env,
            policy,
            memory,
        })
    }

    /// Continues a checkpointed campaign. The caller is responsible for
    /// passing the same pluggable components the original run used.
    pub fn resume(
        state: SearchState,
        config: &'a CampaignConfig,
        generator: &'a dyn ProposalGenerator,
        env: &'a dyn Environment,
        policy: &'a dyn OperatorPolicy,
        memory: Option<&'a mut MemoryStore>,
    ) -> Self {
        Campaign {
            state,
            config,
            generator,
            env,
            policy,
            memory,
        }
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn best(&self) -> (Id, f64) {
        (self.state.best_node, self.state.best_score)
    }

    pub fn best_solution(&self) -> Result<Solution> {
        Ok(self.state.graph.node(self.state.best_node)?.solution.clone())
    }

    /// Step attempts left in the budget.
    pub fn remaining(&self) -> u64 {
        self.config.task.budget.saturating_sub(self.state.evals_used)
    }

    /// Plans, evaluates, and commits one round of steps — a single step
    /// normally, up to `worker_count` when configured — and returns their
    /// events in step order. An exhausted budget yields no events.
    pub fn step(&mut self) -> Result<Vec<StepEvent>> {
        let width = (self.remaining() as usize).min(self.config.worker_count.max(1));
        if width == 0 {
            return Ok(Vec::new());
        }

        let mut slots = Vec::with_capacity(width);
        for offset in 0..width {
            let step = self.state.step_index + 1 + offset as u64;
            slots.push(self.plan_slot(step)?);
        }

        let proposals: Vec<Option<&Solution>> = slots
            .iter()
            .map(|slot| match slot {
                PlannedSlot::Generated { proposal, .. } => Some(proposal),
                PlannedSlot::GenerationFailed { .. } => None,
            })
            .collect();
        let evaluations = evaluate_batch(self.env, &proposals);

        let mut events = Vec::with_capacity(width);
        for (slot, evaluation) in slots.into_iter().zip(evaluations) {
            events.push(self.commit(slot, evaluation)?);
        }
        Ok(events)
    }

    /// Runs rounds until the budget is exhausted.
    pub fn run_to_end(&mut self) -> Result<Vec<StepEvent>> {
        let mut events = Vec::new();
        loop {
            let round = self.step()?;
            if round.is_empty() {
                return Ok(events);
            }
            events.extend(round);
        }
    }

    /// Dissolves the driver into its serializable state and the memory
    /// borrow (for post-run bookkeeping by the caller).
    pub fn into_parts(self) -> (SearchState, Option<&'a mut MemoryStore>) {
        (self.state, self.memory)
    }

    fn plan_slot(&self, step: u64) -> Result<PlannedSlot> {
        let selected = select(&self.state.graph, self.config.c_explore)?;
        let tag = self
            .policy
            .choose(&self.state.graph, selected, step, self.config);
        let mut context = self.build_context(selected, tag)?;
        if let Some(memory) = self.memory.as_deref() {
            context.memory_hints = memory.hints_for_context(
                &context,
                self.config.k_retrieve,
                self.config.alpha_hybrid,
                crate::memory::DEFAULT_HINT_CAP,
            )?;
        }
        let mut gen_rng = self.state.rng.split(&format!("gen-{step}"))?;
        match self.generator.generate(&context, &mut gen_rng) {
            Ok(proposal) => Ok(PlannedSlot::Generated {
                step,
                selected,
                context,
                proposal,
            }),
            Err(err) => Ok(PlannedSlot::GenerationFailed {
                step,
                selected,
                operator: context.operator_tag,
                reason: err.to_string(),
            }),
        }
    }

    /// Builds the generation context for `tag`, degrading along
    /// aggregation → cross-branch → intra-branch → primary whenever the
    /// graph cannot support the requested operator.
    fn build_context(&self, selected: Id, tag: OperatorTag) -> Result<GenerationContext> {
        let graph = &self.state.graph;
        let objective = &self.config.task.objective_text;
        let mut tag = tag;
        loop {
            let attempt = match tag {
                OperatorTag::Primary => build_primary_context(graph, selected, objective),
                OperatorTag::IntraBranch => build_intra_branch_context(
                    graph,
                    selected,
                    objective,
                    DEFAULT_TRAJECTORY_DEPTH,
                ),
                OperatorTag::CrossBranch => {
                    build_cross_branch_context(graph, selected, objective, self.config.topk_refs)
                }
                OperatorTag::Aggregation => {
                    build_aggregation_context(graph, objective, self.config.topk_refs)
                }
                OperatorTag::Root => {
                    return Err(Error::invalid("root is not an expansion operator"))
                }
            };
            match attempt {
                Ok(context) => return Ok(context),
                Err(Error::NotApplicable(_)) => {
                    tag = match tag {
                        OperatorTag::Aggregation => OperatorTag::CrossBranch,
                        OperatorTag::CrossBranch => OperatorTag::IntraBranch,
                        _ => OperatorTag::Primary,
                    };
                }
                Err(other) => return Err(other),
            }
        }
    }

    fn commit(
        &mut self,
        slot: PlannedSlot,
        evaluation: Option<Result<Evaluation>>,
    ) -> Result<StepEvent> {
        match slot {
            PlannedSlot::GenerationFailed {
                step,
                selected,
                operator,
                reason,
            } => {
                log::warn!("step {step}: generation failed: {reason}");
                self.state.step_index = step;
                self.state.evals_used += 1;
                Ok(StepEvent {
                    step,
                    selected,
                    operator,
                    child: None,
                    score: None,
                    best_score: self.state.best_score,
                    evals_used: self.state.evals_used,
                    status: StepStatus::GenerationFailed,
                })
            }
            PlannedSlot::Generated {
                step,
                selected,
                context,
                proposal,
            } => {
                let child = self.state.graph.add_child(
                    context.parent_id,
                    proposal,
                    context.operator_tag,
                    &context.edge_refs(),
                )?;
                let evaluation =
                    evaluation.expect("generated slots always carry an evaluation result");
                self.state.step_index = step;
                self.state.evals_used += 1;
                match evaluation {
                    Ok(result) => {
                        let score = result.score;
                        let detail = result.detail.clone();
                        self.state.graph.record_evaluation(child, result)?;
                        self.state.graph.backpropagate(child, score)?;
                        if let Some(memory) = self.memory.as_deref_mut() {
                            let payload =
                                self.state.graph.node(child)?.solution.payload.clone();
                            memory.record_episode(
                                payload,
                                score,
                                context.parent_evaluation.score,
                                &detail,
                            )?;
                        }
                        if score > self.state.best_score {
                            self.state.best_score = score;
                            self.state.best_node = child;
                        }
                        Ok(StepEvent {
                            step,
                            selected,
                            operator: context.operator_tag,
                            child: Some(child),
                            score: Some(score),
                            best_score: self.state.best_score,
                            evals_used: self.state.evals_used,
                            status: StepStatus::Ok,
                        })
                    }
                    Err(err) => {
                        log::warn!("step {step}: evaluation failed: {err}");
                        self.state.graph.mark_failed(child)?;
                        Ok(StepEvent {
                            step,
                            selected,
                            operator: context.operator_tag,
                            child: Some(child),
                            score: None,
                            best_score: self.state.best_score,
                            evals_used: self.state.evals_used,
                            status: StepStatus::EvaluationFailed,
                        })
                    }
                }
            }
        }
    }
}

/// Evaluates one round of proposals, in parallel when the `parallel`
/// feature is on and the round holds more than one. Results come back in
/// slot order either way, so commit order — and thus the event log — does
/// not depend on scheduling.
fn evaluate_batch(
    env: &dyn Environment,
    proposals: &[Option<&Solution>],
) -> Vec<Option<Result<Evaluation>>> {
    #[cfg(feature = "parallel")]
    {
        if proposals.len() > 1 {
            return proposals
                .par_iter()
                .map(|slot| slot.map(|solution| env.evaluate(solution)))
                .collect();
        }
    }
    proposals
        .iter()
        .map(|slot| slot.map(|solution| env.evaluate(solution)))
        .collect()
}

// ---------------------------------------------------------------------------
// Campaign entry point

/// A finished campaign: the champion, the full event log, and the final
/// state (checkpointable by the caller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub best_node: Id,
    pub solution: Solution,
    pub score: f64,
    pub events: Vec<StepEvent>,
    pub state: SearchState,
}

/// Runs a whole campaign from a config. With a zero budget the root
/// baseline is returned untouched. When memory is attached, each
/// successful evaluation is recorded as an episode and the finished
/// campaign is distilled into one trajectory signature.
pub fn run(
    config: &CampaignConfig,
    generator: &dyn ProposalGenerator,
    env: &dyn Environment,
    policy: &dyn OperatorPolicy,
    memory: Option<&mut MemoryStore>,
) -> Result<RunOutcome> {
    let mut campaign = Campaign::new(config, generator, env, policy, memory)?;
    let events = campaign.run_to_end()?;
    let (best_node, score) = campaign.best();
    let solution = campaign.best_solution()?;
    let (state, memory) = campaign.into_parts();
    if let Some(memory) = memory {
        if !events.is_empty() {
            let baseline = state
                .graph
                .root_id()
                .and_then(|id| state.graph.node(id).ok())
                .and_then(|root| root.score_value())
                .unwrap_or(0.0);
            record_campaign_signature(memory, &config.task.id, &events, baseline, score)?;
        }
    }
    Ok(RunOutcome {
        best_node,
        solution,
        score,
        events,
        state,
    })
}

/// Distills an event log into one stored trajectory signature: each step
/// becomes a trace token of its operator and outcome, and the campaign
/// counts as a success when it beat the baseline.
pub fn record_campaign_signature(
    memory: &mut MemoryStore,
    task_id: &str,
    events: &[StepEvent],
    baseline_score: f64,
    best_score: f64,
) -> Result<Id> {
    if events.is_empty() {
        return Err(Error::invalid("cannot distill an empty event log"));
    }
    let mut previous_best = baseline_score;
    let trace: Vec<TraceStep> = events
        .iter()
        .map(|event| {
            let outcome = match event.status {
                StepStatus::Ok if event.best_score > previous_best => "improved",
                StepStatus::Ok => "steady",
                _ => "failed",
            };
            previous_best = event.best_score;
            TraceStep::new(event.operator.as_str(), "mcts", outcome)
        })
        .collect();
    let outcome = if best_score > baseline_score {
        TraceOutcome::Success
    } else {
        TraceOutcome::Failure
    };
    let summary = format!(
        "campaign {}: best {:.4} from {} steps (baseline {:.4})",
        task_id,
        best_score,
        events.len(),
        baseline_score
    );
    memory.spm_store(&trace, summary, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::BitstringEnv;
    use crate::operators::BitstringGenerator;
    use crate::similarity::HashEncoder;
    use crate::types::Task;

    fn eval(score: f64) -> Evaluation {
        Evaluation::from_score(score).unwrap()
    }

    fn bits(payload: &str) -> Solution {
        Solution::bitstring(payload).unwrap()
    }

    fn config(target_len: usize, budget: u64, seed: u64) -> CampaignConfig {
        CampaignConfig::new(Task {
            id: "test".into(),
            objective_text: format!("match a hidden {target_len}-bit string"),
            budget,
            seed,
        })
    }

    /// Root plus two visited children with chosen means and visit counts.
    /// The root's baseline evaluation and any extra reinforcements needed
    /// to lift its visit count to `root_visits` all land at `root_level`,
    /// steering where the root's own mean sits relative to its children.
    fn two_child_graph(
        spec: &[(f64, u64)],
        root_visits: u64,
        root_level: f64,
    ) -> (SolutionGraph, Id, Vec<Id>) {
        let mut graph = SolutionGraph::new(Rng::seeded(9));
        let root = graph.add_root(bits("0000"), eval(root_level)).unwrap();
        let mut children = Vec::new();
        for (i, (mean, visits)) in spec.iter().enumerate() {
            let payload = format!("{:04b}", i + 1);
            let child = graph
                .add_child(root, bits(&payload), OperatorTag::Primary, &[])
                .unwrap();
            for _ in 0..*visits {
                graph.backpropagate(child, *mean).unwrap();
            }
            children.push(child);
        }
        let so_far = graph.node(root).unwrap().visits;
        for _ in so_far..root_visits {
            graph.backpropagate(root, root_level).unwrap();
        }
        (graph, root, children)
    }

    #[test]
    fn select_single_root() {
        let mut graph = SolutionGraph::new(Rng::seeded(1));
        let root = graph.add_root(bits("01"), eval(0.5)).unwrap();
        assert_eq!(select(&graph, 1.4).unwrap(), root);
    }

    #[test]
    fn select_takes_an_unvisited_live_child_first() {
        let mut graph = SolutionGraph::new(Rng::seeded(1));
        let root = graph.add_root(bits("00"), eval(0.5)).unwrap();
        let first = graph
            .add_child(root, bits("01"), OperatorTag::Primary, &[])
            .unwrap();
        let second = graph
            .add_child(root, bits("10"), OperatorTag::Primary, &[])
            .unwrap();
        let _ = second;
        assert_eq!(select(&graph, 1.4).unwrap(), first, "creation order wins");
    }

    #[test]
    fn select_prefers_the_less_visited_better_child() {
        // Children (mean 0.5, 5 visits) and (mean 0.6, 2 visits) under a
        // parent with 10 visits whose own mean sits between them:
        // normalized means 0 and 1, exploration terms ~0.96 and ~1.52 —
        // the second child wins on both (1 + 1.5169 > 0 + 0.9597).
        let (graph, _, children) = two_child_graph(&[(0.5, 5), (0.6, 2)], 10, 0.55);
        assert_eq!(select(&graph, 1.41421356).unwrap(), children[1]);
    }

    #[test]
    fn select_stops_at_a_node_that_beats_its_children() {
        // Two well-explored weak children under a root whose own mean, fed
        // by many strong reinforcements, tops the joint normalization: the
        // root wins and selection parks there.
        let mut graph = SolutionGraph::new(Rng::seeded(4));
        let root = graph.add_root(bits("0000"), eval(1.0)).unwrap();
        for (payload, score) in [("0001", 0.1), ("0010", 0.2)] {
            let child = graph
                .add_child(root, bits(payload), OperatorTag::Primary, &[])
                .unwrap();
            for _ in 0..30 {
                graph.backpropagate(child, score).unwrap();
            }
        }
        for _ in 0..100 {
            graph.backpropagate(root, 0.95).unwrap();
        }
        assert_eq!(select(&graph, 1.41421356).unwrap(), root);
    }

    #[test]
    fn select_widens_past_a_single_child_that_fell_behind() {
        // The bootstrap case for progressive widening: one lineage whose
        // mean has sunk below the node's own gets parked, and selection
        // stops at the node so the step can open a sibling lineage.
        let mut graph = SolutionGraph::new(Rng::seeded(7));
        let root = graph.add_root(bits("0000"), eval(0.5)).unwrap();
        let child = graph
            .add_child(root, bits("0001"), OperatorTag::Primary, &[])
            .unwrap();
        for _ in 0..2 {
            graph.backpropagate(child, 0.1).unwrap();
        }
        // Bounds {0.233…, 0.1}: root normalizes to 1, the child to 0;
        // 1 + 1.414·sqrt(ln 3 / 3) beats 0 + 1.414·sqrt(ln 3 / 2).
        assert_eq!(select(&graph, 1.41421356).unwrap(), root);

        // While the lineage still leads, descent continues instead.
        let mut improving = SolutionGraph::new(Rng::seeded(8));
        let r = improving.add_root(bits("0000"), eval(0.5)).unwrap();
        let c = improving
            .add_child(r, bits("0001"), OperatorTag::Primary, &[])
            .unwrap();
        for _ in 0..2 {
            improving.backpropagate(c, 0.9).unwrap();
        }
        assert_eq!(select(&improving, 1.41421356).unwrap(), c);
    }

    #[test]
    fn select_ignores_failed_children() {
        let mut graph = SolutionGraph::new(Rng::seeded(5));
        let root = graph.add_root(bits("00"), eval(0.5)).unwrap();
        let doomed = graph
            .add_child(root, bits("01"), OperatorTag::Primary, &[])
            .unwrap();
        graph.mark_failed(doomed).unwrap();
        let live = graph
            .add_child(root, bits("10"), OperatorTag::Primary, &[])
            .unwrap();
        assert_eq!(select(&graph, 1.4).unwrap(), live);

        graph.backpropagate(live, 0.4).unwrap();
        let only_failed = {
            let mut g = SolutionGraph::new(Rng::seeded(6));
            let r = g.add_root(bits("00"), eval(0.5)).unwrap();
            let d = g.add_child(r, bits("01"), OperatorTag::Primary, &[]).unwrap();
            g.mark_failed(d).unwrap();
            select(&g, 1.4).unwrap() == r
        };
        assert!(only_failed, "a node whose children all failed is a leaf");
    }

    #[test]
    fn equal_child_means_fall_back_to_exploration_only() {
        // Every competitor (root included) sits at the same mean:
        // normalization degenerates to zero for all, so the less-visited
        // child wins on exploration.
        let (graph, _, children) = two_child_graph(&[(0.5, 6), (0.5, 2)], 10, 0.5);
        assert_eq!(select(&graph, 1.41421356).unwrap(), children[1]);
    }

    fn two_branch_graph() -> (SolutionGraph, Id, Id, Id) {
        let mut graph = SolutionGraph::new(Rng::seeded(11));
        let root = graph.add_root(bits("0000"), eval(0.1)).unwrap();
        let a = graph
            .add_child(root, bits("0001"), OperatorTag::Primary, &[])
            .unwrap();
        graph.backpropagate(a, 0.7).unwrap();
        let b = graph
            .add_child(root, bits("0010"), OperatorTag::Primary, &[])
            .unwrap();
        graph.backpropagate(b, 0.3).unwrap();
        (graph, root, a, b)
    }

    #[test]
    fn policy_aggregates_on_schedule_when_branches_exist() {
        let (graph, _, a, _) = two_branch_graph();
        let cfg = config(4, 100, 1);
        let policy = DefaultPolicy;
        assert_eq!(
            policy.choose(&graph, a, 8, &cfg),
            OperatorTag::Aggregation,
            "period boundary with two evaluated branches"
        );
        assert_ne!(policy.choose(&graph, a, 9, &cfg), OperatorTag::Aggregation);
    }

    #[test]
    fn policy_skips_aggregation_with_a_single_branch() {
        let mut graph = SolutionGraph::new(Rng::seeded(12));
        let root = graph.add_root(bits("0000"), eval(0.1)).unwrap();
        let a = graph
            .add_child(root, bits("0001"), OperatorTag::Primary, &[])
            .unwrap();
        graph.backpropagate(a, 0.5).unwrap();
        let cfg = config(4, 100, 1);
        assert_eq!(
            DefaultPolicy.choose(&graph, a, 8, &cfg),
            OperatorTag::Primary,
            "one branch cannot aggregate; depth-1 node extends instead"
        );
    }

    #[test]
    fn policy_reaches_across_when_its_branch_stalls() {
        let (mut graph, _, a, _) = two_branch_graph();
        // Stall branch A: a declining run of scores never beating 0.7.
        let mut tip = a;
        for (payload, score) in [("0011", 0.6), ("0100", 0.6), ("0101", 0.5)] {
            tip = graph
                .add_child(tip, bits(payload), OperatorTag::Primary, &[])
                .unwrap();
            graph.backpropagate(tip, score).unwrap();
        }
        let cfg = config(4, 100, 1);
        assert_eq!(
            DefaultPolicy.choose(&graph, tip, 9, &cfg),
            OperatorTag::CrossBranch
        );
    }

    #[test]
    fn policy_refines_deep_nodes_and_extends_shallow_ones() {
        let (mut graph, _, a, b) = two_branch_graph();
        // Push branch A deeper without stalling it (improving scores).
        let deep = graph
            .add_child(a, bits("0011"), OperatorTag::Primary, &[])
            .unwrap();
        graph.backpropagate(deep, 0.8).unwrap();
        let cfg = config(4, 100, 1);
        assert_eq!(
            DefaultPolicy.choose(&graph, deep, 3, &cfg),
            OperatorTag::IntraBranch,
            "depth 2 refines its lineage"
        );
        assert_eq!(
            DefaultPolicy.choose(&graph, b, 3, &cfg),
            OperatorTag::Primary,
            "depth 1 extends"
        );
    }

    #[test]
    fn campaign_replay_is_byte_identical() {
        let cfg = config(8, 30, 5);
        let env = BitstringEnv::new("10101010").unwrap();
        let run_once = || {
            run(
                &cfg,
                &BitstringGenerator::default(),
                &env,
                &DefaultPolicy,
                None,
            )
            .unwrap()
        };
        let first = run_once();
        let second = run_once();
        assert_eq!(first, second);
        let lines: Vec<String> = first
            .events
            .iter()
            .map(|e| e.to_json_line().unwrap())
            .collect();
        let lines_again: Vec<String> = second
            .events
            .iter()
            .map(|e| e.to_json_line().unwrap())
            .collect();
        assert_eq!(lines, lines_again);
    }

    #[test]
    fn budget_accounting_in_a_clean_campaign() {
        let cfg = config(8, 40, 3);
        let env = BitstringEnv::new("11001100").unwrap();
        let outcome = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        assert_eq!(outcome.events.len(), 40);
        assert!(outcome.events.iter().all(|e| e.status == StepStatus::Ok));
        assert_eq!(outcome.state.evals_used, 40);
        let root = outcome.state.graph.root_id().unwrap();
        assert_eq!(outcome.state.graph.node(root).unwrap().visits, 41);
        // Steps number 1..=40 and the running eval count matches.
        for (i, event) in outcome.events.iter().enumerate() {
            assert_eq!(event.step, i as u64 + 1);
            assert_eq!(event.evals_used, i as u64 + 1);
        }
    }

    #[test]
    fn best_score_is_monotone_and_final() {
        let cfg = config(8, 60, 7);
        let env = BitstringEnv::new("11110000").unwrap();
        let outcome = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        let mut last = f64::NEG_INFINITY;
        for event in &outcome.events {
            assert!(event.best_score >= last);
            last = event.best_score;
        }
        assert_eq!(outcome.score, last);
        assert_eq!(
            outcome.score,
            outcome
                .state
                .graph
                .node(outcome.best_node)
                .unwrap()
                .score_value()
                .unwrap()
        );
    }

    #[test]
    fn zero_budget_returns_the_baseline() {
        let cfg = config(4, 0, 1);
        let env = BitstringEnv::new("1010").unwrap();
        let outcome = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        assert!(outcome.events.is_empty());
        assert_eq!(outcome.solution.payload, "0000");
        assert_eq!(outcome.state.graph.len(), 1);
    }

    /// Succeeds only on the exact baseline payload; everything else
    /// reports an evaluation failure.
    struct BaselineOnlyEnv {
        inner: BitstringEnv,
        baseline: String,
    }

    impl BaselineOnlyEnv {
        fn new(target: &str) -> Self {
            let inner = BitstringEnv::new(target).unwrap();
            let baseline = inner.baseline().payload.clone();
            BaselineOnlyEnv { inner, baseline }
        }
    }

    impl Environment for BaselineOnlyEnv {
        fn kind(&self) -> crate::types::SolutionKind {
            self.inner.kind()
        }
        fn baseline(&self) -> Solution {
            self.inner.baseline()
        }
        fn evaluate(&self, solution: &Solution) -> Result<Evaluation> {
            if solution.payload == self.baseline {
                self.inner.evaluate(solution)
            } else {
                Err(Error::eval_failed("instrument offline"))
            }
        }
    }

    #[test]
    fn failed_evaluations_leave_tombstones_and_root_untouched() {
        let cfg = config(8, 5, 2);
        let env = BaselineOnlyEnv::new("10101010");
        let outcome = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        assert_eq!(outcome.events.len(), 5);
        for event in &outcome.events {
            assert_eq!(event.status, StepStatus::EvaluationFailed);
            assert!(event.child.is_some(), "failed children are recorded");
            assert_eq!(event.score, None);
        }
        let graph = &outcome.state.graph;
        let root = graph.root_id().unwrap();
        assert_eq!(graph.node(root).unwrap().visits, 1, "no credit flowed");
        assert_eq!(graph.len(), 6);
        assert_eq!(graph.evaluated_count(), 1, "only the root has a score");
        assert_eq!(outcome.best_node, root);
    }

    /// Delegates to the bitstring generator but fails whenever its stream
    /// flips a coin to heads — a deterministic mix of failures.
    struct FlakyGenerator;

    impl ProposalGenerator for FlakyGenerator {
        fn generate(&self, context: &GenerationContext, rng: &mut Rng) -> Result<Solution> {
            if rng.chance(0.4) {
                return Err(Error::GenerationFailed("sampler returned nothing".into()));
            }
            BitstringGenerator::default().generate(context, rng)
        }
    }

    #[test]
    fn generation_failures_consume_budget_without_touching_the_graph() {
        let cfg = config(8, 30, 9);
        let env = BitstringEnv::new("01010101").unwrap();
        let outcome = run(&cfg, &FlakyGenerator, &env, &DefaultPolicy, None).unwrap();
        assert_eq!(outcome.events.len(), 30);
        let failures = outcome
            .events
            .iter()
            .filter(|e| e.status == StepStatus::GenerationFailed)
            .count();
        let successes = outcome
            .events
            .iter()
            .filter(|e| e.status == StepStatus::Ok)
            .count();
        assert!(failures > 0, "the coin should come up heads sometimes");
        assert!(successes > 0, "and tails sometimes");
        for event in &outcome.events {
            if event.status == StepStatus::GenerationFailed {
                assert_eq!(event.child, None);
                assert_eq!(event.score, None);
            }
        }
        // Only successful generations added nodes.
        assert_eq!(outcome.state.graph.len(), 1 + successes);
        assert_eq!(outcome.state.evals_used, 30);
        // Replay reproduces the same mix.
        let again = run(&cfg, &FlakyGenerator, &env, &DefaultPolicy, None).unwrap();
        assert_eq!(outcome, again);
    }

    #[test]
    fn wide_rounds_reproduce_and_respect_the_budget() {
        let mut cfg = config(8, 10, 6);
        cfg.worker_count = 4;
        let env = BitstringEnv::new("11011010").unwrap();
        let first = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        let second = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            None,
        )
        .unwrap();
        assert_eq!(first, second);
        assert_eq!(first.events.len(), 10, "4 + 4 + 2");
        assert_eq!(first.state.evals_used, 10);
        let steps: Vec<u64> = first.events.iter().map(|e| e.step).collect();
        assert_eq!(steps, (1..=10).collect::<Vec<u64>>());
    }

    #[test]
    fn memory_attaches_episodes_and_a_signature() {
        let cfg = config(8, 25, 4);
        let env = BitstringEnv::new("10011001").unwrap();
        let mut memory = MemoryStore::new(HashEncoder::default(), Rng::seeded(99));
        let outcome = run(
            &cfg,
            &BitstringGenerator::default(),
            &env,
            &DefaultPolicy,
            Some(&mut memory),
        )
        .unwrap();
        let successes = outcome
            .events
            .iter()
            .filter(|e| e.status == StepStatus::Ok)
            .count();
        assert_eq!(memory.episodes().len(), successes);
        assert_eq!(memory.signatures().len(), 1);
        assert_eq!(memory.signatures()[0].outcome, TraceOutcome::Success);
    }

    #[test]
    fn stored_state_resumes_into_the_same_trajectory() {
        let cfg = config(8, 50, 13);
        let env = BitstringEnv::new("11100111").unwrap();
        let generator = BitstringGenerator::default();

        let full = run(&cfg, &generator, &env, &DefaultPolicy, None).unwrap();

        // Stop after 20 steps, serialize, resume, and finish.
        let mut campaign = Campaign::new(&cfg, &generator, &env, &DefaultPolicy, None).unwrap();
        let mut head = Vec::new();
        while campaign.state().evals_used < 20 {
            head.extend(campaign.step().unwrap());
        }
        let frozen = serde_json::to_string(campaign.state()).unwrap();
        drop(campaign);

        let state: SearchState = serde_json::from_str(&frozen).unwrap();
        let mut resumed = Campaign::resume(state, &cfg, &generator, &env, &DefaultPolicy, None);
        let tail = resumed.run_to_end().unwrap();

        let mut stitched = head;
        stitched.extend(tail);
        assert_eq!(stitched, full.events);
        assert_eq!(resumed.state(), &full.state);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Credit conservation: the root's total reward is its own
            /// score plus every successfully backpropagated score, and its
            /// visit count is one plus the number of successes.
            #[test]
            fn conservation_after_random_campaigns(seed in 0u64..5000, budget in 1u64..60) {
                let cfg = config(8, budget, seed);
                let env = BitstringEnv::new("10110001").unwrap();
                let outcome = run(&cfg, &FlakyGenerator, &env, &DefaultPolicy, None).unwrap();
                let graph = &outcome.state.graph;
                let root = graph.root_id().unwrap();
                let root_node = graph.node(root).unwrap();
                let root_score = root_node.score_value().unwrap();
                let ok_events: Vec<&StepEvent> = outcome
                    .events
                    .iter()
                    .filter(|e| e.status == StepStatus::Ok)
                    .collect();
                let expected: f64 =
                    root_score + ok_events.iter().map(|e| e.score.unwrap()).sum::<f64>();
                prop_assert!((root_node.total_reward - expected).abs() < 1e-9);
                prop_assert_eq!(root_node.visits, 1 + ok_events.len() as u64);
                prop_assert_eq!(outcome.state.evals_used, budget);
            }

            /// Two runs of the same config are indistinguishable.
            #[test]
            fn campaigns_are_pure_functions_of_their_config(
                seed in 0u64..5000,
                budget in 1u64..40,
                workers in 1usize..4,
            ) {
                let mut cfg = config(8, budget, seed);
                cfg.worker_count = workers;
                let env = BitstringEnv::new("01101001").unwrap();
                let a = run(&cfg, &BitstringGenerator::default(), &env, &DefaultPolicy, None).unwrap();
                let b = run(&cfg, &BitstringGenerator::default(), &env, &DefaultPolicy, None).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
