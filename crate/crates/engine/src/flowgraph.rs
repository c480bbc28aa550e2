//! The research-flow DAG: typed subtask nodes, dependency edges,
//! incremental planning, dependency-aware execution, and multi-pathway
//! answer synthesis.
//!
//! A flow starts as a single *answer* node holding the objective. A
//! [`Planner`] grows it with *search* and *solve* nodes wired by typed
//! edges; only `requires_result_from` edges gate execution order (the
//! other two relations deliver context without blocking). Executors fill
//! node contexts; failures are recorded in node state and propagate along
//! mandatory edges rather than unwinding the caller. Synthesis runs last:
//! the executor produces up to three pathway answers for the objective and
//! a vote (with a documented fallback chain) picks the final one.
//!
//! Every mutation preserves acyclicity — cyclic edges are rejected with
//! the offending path, and planner batches apply all-or-nothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::Id;

/// Planning/execution rounds a flow may take before it must converge.
pub const DEFAULT_MAX_ROUNDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Search,
    Solve,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Pending,
    Ready,
    Running,
    Done,
    Failed,
}

impl NodeState {
    pub fn is_terminal(self) -> bool {
        matches!(self, NodeState::Done | NodeState::Failed)
    }

    fn as_str(self) -> &'static str {
        match self {
            NodeState::Pending => "pending",
            NodeState::Ready => "ready",
            NodeState::Running => "running",
            NodeState::Done => "done",
            NodeState::Failed => "failed",
        }
    }
}

/// One research subtask: what kind of work it is, what it should do, where
/// it stands, and — once done — what it learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNode {
    pub id: Id,
    pub node_type: NodeType,
    pub description: String,
    pub state: NodeState,
    /// Result knowledge; non-empty exactly when the node is done.
    pub context: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    RequiresResultFrom,
    ProvidesEvidenceFor,
    ConstrainsReasoningOf,
}

impl Relation {
    /// Only this relation gates readiness and carries failure.
    pub fn is_mandatory(self) -> bool {
        matches!(self, Relation::RequiresResultFrom)
    }
}

/// A typed dependency: data flows `from` the producer `to` the consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub from: Id,
    pub to: Id,
    pub relation: Relation,
}

/// One line of the execution trace: the state a node entered, stamped with
/// a logical clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub node: Id,
    pub transition: String,
    pub timestamp_ordinal: u64,
}

/// Contexts delivered to an executor, split by how binding they are.
/// `mandatory` inputs come from done `requires_result_from` predecessors
/// (execution order guarantees they exist); the other two collect whatever
/// advisory predecessors happen to be done. All lists follow node creation
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeInputs {
    pub mandatory: Vec<(Id, String)>,
    pub evidence: Vec<(Id, String)>,
    pub constraints: Vec<(Id, String)>,
}

/// Up to three answers for the same query, produced along complementary
/// pathways: straight from the input, augmented with retrieved evidence,
/// and via internal retrieval and refinement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathwayAnswers {
    pub direct: Option<String>,
    pub search_augmented: Option<String>,
    pub self_driven: Option<String>,
}

/// Which aggregation rule picked the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    Majority,
    PreferSearchAugmented,
    PreferSelfDriven,
    PreferDirect,
}

/// The synthesized final answer and the rule that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub answer: String,
    pub rule: VoteRule,
}

/// Runs one node's work. `execute` fills a node's context from its inputs;
/// `pathway_answers` produces the final-answer candidates at synthesis
/// time. An empty or whitespace-only context counts as a failure — done
/// nodes must know something.
pub trait NodeExecutor: Send + Sync {
    fn execute(&self, node: &FlowNode, inputs: &NodeInputs) -> Result<String>;
    fn pathway_answers(&self, objective: &str, inputs: &NodeInputs) -> PathwayAnswers;
}

/// A node to add in a plan batch (answer nodes cannot be planned — each
/// flow has exactly one, created with it).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedNode {
    pub node_type: NodeType,
    pub description: String,
}

/// An edge endpoint in a plan batch: an existing node or an index into the
/// batch's own node list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeEnd {
    Existing(Id),
    New(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedEdge {
    pub from: EdgeEnd,
    pub to: EdgeEnd,
    pub relation: Relation,
}

/// One transactional unit of growth: all of it lands or none of it does.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanBatch {
    pub nodes: Vec<PlannedNode>,
    pub edges: Vec<PlannedEdge>,
}

/// Proposes flow growth. Returning no batches signals that the flow
/// already covers the objective.
pub trait Planner: Send + Sync {
    fn expand(&self, flow: &FlowGraph) -> Vec<PlanBatch>;
}

/// The knowledge-flow DAG plus its execution trace and (eventually) the
/// synthesized answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGraph {
    objective: String,
    nodes: Vec<FlowNode>,
    index: BTreeMap<Id, usize>,
    edges: Vec<FlowEdge>,
    root: Id,
    ids: Rng,
    trace: Vec<TraceEvent>,
    ordinal: u64,
    synthesis: Option<SynthesisOutcome>,
}

impl FlowGraph {
    /// A fresh flow: one pending answer node carrying the objective.
    pub fn new(objective: impl Into<String>, id_stream: Rng) -> Result<Self> {
        let objective = objective.into();
        if objective.trim().is_empty() {
            return Err(Error::invalid("flow objective must be non-empty"));
        }
        let mut flow = FlowGraph {
            objective: objective.clone(),
            nodes: Vec::new(),
            index: BTreeMap::new(),
            edges: Vec::new(),
            root: Id::new(0),
            ids: id_stream,
            trace: Vec::new(),
            ordinal: 0,
            synthesis: None,
        };
        flow.root = flow.insert_node(NodeType::Answer, objective);
        Ok(flow)
    }

    pub fn objective(&self) -> &str {
        &self.objective
    }

    pub fn root_id(&self) -> Id {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: Id) -> Result<&FlowNode> {
        self.index
            .get(&id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &FlowNode> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> &[FlowEdge] {
        &self.edges
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn synthesis(&self) -> Option<&SynthesisOutcome> {
        self.synthesis.as_ref()
    }

    /// Adds a search or solve node (flows hold exactly one answer node).
    pub fn add_node(&mut self, node_type: NodeType, description: impl Into<String>) -> Result<Id> {
        if node_type == NodeType::Answer {
            return Err(Error::invalid(
                "a flow has exactly one answer node, created with the flow",
            ));
        }
        let description = description.into();
        if description.trim().is_empty() {
            return Err(Error::invalid("node description must be non-empty"));
        }
        Ok(self.insert_node(node_type, description))
    }

    fn insert_node(&mut self, node_type: NodeType, description: String) -> Id {
        let id = rng::make_id(&mut self.ids);
        self.index.insert(id, self.nodes.len());
        self.nodes.push(FlowNode {
            id,
            node_type,
            description,
            state: NodeState::Pending,
            context: String::new(),
        });
        self.record(id, NodeState::Pending);
        id
    }

    /// Adds a typed edge, preserving acyclicity. Duplicates are idempotent
    /// no-ops; a cyclic edge is rejected naming the existing path that
    /// would close the loop; self-edges are rejected outright.
    pub fn add_edge(&mut self, from: Id, to: Id, relation: Relation) -> Result<()> {
        self.node(from)?;
        self.node(to)?;
        if from == to {
            return Err(Error::invalid("self-edges are not allowed"));
        }
        let candidate = FlowEdge { from, to, relation };
        if self.edges.contains(&candidate) {
            return Ok(());
        }
        if let Some(path) = self.find_path(to, from) {
            return Err(Error::Cycle {
                path: path.into_iter().map(|id| id.to_string()).collect(),
            });
        }
        self.edges.push(candidate);
        Ok(())
    }

    /// Depth-first path from `start` to `goal` along existing edges (any
    /// relation), in edge creation order. `Some(path)` includes both ends.
    fn find_path(&self, start: Id, goal: Id) -> Option<Vec<Id>> {
        let mut stack = vec![vec![start]];
        let mut seen = std::collections::BTreeSet::new();
        while let Some(path) = stack.pop() {
            let last = *path.last().expect("paths start non-empty");
            if last == goal {
                return Some(path);
            }
            if !seen.insert(last) {
                continue;
            }
            // Reverse push keeps creation-order exploration under a stack.
            for edge in self.edges.iter().rev() {
                if edge.from == last && !seen.contains(&edge.to) {
                    let mut next = path.clone();
                    next.push(edge.to);
                    stack.push(next);
                }
            }
        }
        None
    }

    /// Pending search/solve nodes whose every mandatory predecessor is
    /// done, in creation order. The answer node never appears — it is
    /// driven by [`FlowGraph::synthesize`] instead.
    pub fn ready_nodes(&self) -> Vec<Id> {
        self.nodes
            .iter()
            .filter(|n| {
                n.node_type != NodeType::Answer
                    && n.state == NodeState::Pending
                    && self.mandatory_predecessors_done(n.id)
            })
            .map(|n| n.id)
            .collect()
    }

    fn mandatory_predecessors_done(&self, id: Id) -> bool {
        self.edges
            .iter()
            .filter(|e| e.to == id && e.relation.is_mandatory())
            .all(|e| self.node(e.from).map(|n| n.state == NodeState::Done).unwrap_or(false))
    }

    /// Contexts available to `id` right now, split by edge relation.
    fn gather_inputs(&self, id: Id) -> NodeInputs {
        let mut inputs = NodeInputs::default();
        // Creation order: walk nodes, then find the connecting edge.
        for node in &self.nodes {
            for edge in &self.edges {
                if edge.to != id || edge.from != node.id {
                    continue;
                }
                if node.state != NodeState::Done {
                    continue;
                }
                let entry = (node.id, node.context.clone());
                match edge.relation {
                    Relation::RequiresResultFrom => inputs.mandatory.push(entry),
                    Relation::ProvidesEvidenceFor => inputs.evidence.push(entry),
                    Relation::ConstrainsReasoningOf => inputs.constraints.push(entry),
                }
            }
        }
        inputs
    }

    fn record(&mut self, node: Id, state: NodeState) {
        self.ordinal += 1;
        self.trace.push(TraceEvent {
            node,
            transition: state.as_str().to_string(),
            timestamp_ordinal: self.ordinal,
        });
    }

    fn set_state(&mut self, id: Id, next: NodeState) -> Result<()> {
        let position = *self
            .index
            .get(&id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let current = self.nodes[position].state;
        let legal = matches!(
            (current, next),
            (NodeState::Pending, NodeState::Ready)
                | (NodeState::Pending, NodeState::Failed)
                | (NodeState::Ready, NodeState::Running)
                | (NodeState::Running, NodeState::Done)
                | (NodeState::Running, NodeState::Failed)
        );
        if !legal {
            return Err(Error::invalid(format!(
                "illegal state transition {} -> {}",
                current.as_str(),
                next.as_str()
            )));
        }
        self.nodes[position].state = next;
        self.record(id, next);
        Ok(())
    }

    /// Runs one ready node to a terminal state. Executor failure (or an
    /// empty context, which would leave a done node knowing nothing) marks
    /// the node failed and spreads the failure to every dependent reachable
    /// over mandatory edges — recorded in states, never raised. Returns
    /// the node's final state.
    pub fn execute_node(&mut self, id: Id, executor: &dyn NodeExecutor) -> Result<NodeState> {
        let node = self.node(id)?;
        if node.node_type == NodeType::Answer {
            return Err(Error::invalid(
                "the answer node is synthesized, not executed",
            ));
        }
        if node.state != NodeState::Pending || !self.mandatory_predecessors_done(id) {
            return Err(Error::invalid(format!(
                "node {id} is not ready (state {})",
                node.state.as_str()
            )));
        }
        self.set_state(id, NodeState::Ready)?;
        self.set_state(id, NodeState::Running)?;

        let inputs = self.gather_inputs(id);
        let position = self.index[&id];
        let outcome = executor.execute(&self.nodes[position], &inputs);
        match outcome {
            Ok(context) if !context.trim().is_empty() => {
                self.nodes[position].context = context;
                self.set_state(id, NodeState::Done)?;
                Ok(NodeState::Done)
            }
            Ok(_) => {
                log::warn!("node {id}: executor produced an empty context; marking failed");
                self.fail_with_dependents(id)?;
                Ok(NodeState::Failed)
            }
            Err(err) => {
                log::warn!("node {id}: executor failed: {err}");
                self.fail_with_dependents(id)?;
                Ok(NodeState::Failed)
            }
        }
    }

    /// Marks `id` failed, then every non-terminal dependent reachable over
    /// mandatory edges, breadth-first in creation order.
    fn fail_with_dependents(&mut self, id: Id) -> Result<()> {
        self.set_state(id, NodeState::Failed)?;
        let mut queue = std::collections::VecDeque::from([id]);
        while let Some(current) = queue.pop_front() {
            let dependents: Vec<Id> = self
                .edges
                .iter()
                .filter(|e| e.from == current && e.relation.is_mandatory())
                .map(|e| e.to)
                .collect();
            for dependent in dependents {
                let state = self.node(dependent)?.state;
                if !state.is_terminal() {
                    self.set_state(dependent, NodeState::Failed)?;
                    queue.push_back(dependent);
                }
            }
        }
        Ok(())
    }

    /// Applies the planner's proposals, each batch all-or-nothing, and
    /// returns how many nodes were added. Zero signals convergence. A
    /// batch whose edges would break acyclicity (or reference unknown
    /// endpoints) is rejected whole, leaving the flow byte-identical.
    pub fn plan_round(&mut self, planner: &dyn Planner) -> usize {
        let mut added = 0;
        for batch in planner.expand(self) {
            let mut scratch = self.clone();
            match scratch.apply_batch(&batch) {
                Ok(count) => {
                    *self = scratch;
                    added += count;
                }
                Err(err) => {
                    log::warn!("plan batch rejected: {err}");
                }
            }
        }
        added
    }

    fn apply_batch(&mut self, batch: &PlanBatch) -> Result<usize> {
        let mut minted = Vec::with_capacity(batch.nodes.len());
        for planned in &batch.nodes {
            minted.push(self.add_node(planned.node_type, planned.description.clone())?);
        }
        let resolve = |end: &EdgeEnd| -> Result<Id> {
            match end {
                EdgeEnd::Existing(id) => Ok(*id),
                EdgeEnd::New(i) => minted.get(*i).copied().ok_or_else(|| {
                    Error::invalid(format!("edge references batch node {i} of {}", minted.len()))
                }),
            }
        };
        for planned in &batch.edges {
            let from = resolve(&planned.from)?;
            let to = resolve(&planned.to)?;
            self.add_edge(from, to, planned.relation)?;
        }
        Ok(minted.len())
    }

    /// Produces the final answer. The root's mandatory dependencies must
    /// all be done; if any mandatory ancestor failed, synthesis is blocked
    /// and the error lists them. Re-synthesis after success is idempotent.
    pub fn synthesize(&mut self, executor: &dyn NodeExecutor) -> Result<SynthesisOutcome> {
        if let Some(existing) = &self.synthesis {
            return Ok(existing.clone());
        }
        let failed = self.failed_mandatory_ancestors(self.root);
        if !failed.is_empty() || self.node(self.root)?.state == NodeState::Failed {
            return Err(Error::SynthesisBlocked {
                failed: failed.into_iter().map(|id| id.to_string()).collect(),
            });
        }
        if !self.mandatory_predecessors_done(self.root) {
            return Err(Error::invalid(
                "the root's mandatory dependencies have not finished",
            ));
        }

        self.set_state(self.root, NodeState::Ready)?;
        self.set_state(self.root, NodeState::Running)?;
        let inputs = self.gather_inputs(self.root);
        let answers = executor.pathway_answers(&self.objective, &inputs);
        match aggregate_answers(
            answers.direct.as_deref(),
            answers.search_augmented.as_deref(),
            answers.self_driven.as_deref(),
        ) {
            Ok((answer, rule)) => {
                let position = self.index[&self.root];
                self.nodes[position].context = answer.clone();
                self.set_state(self.root, NodeState::Done)?;
                let outcome = SynthesisOutcome { answer, rule };
                self.synthesis = Some(outcome.clone());
                Ok(outcome)
            }
            Err(err) => {
                self.set_state(self.root, NodeState::Failed)?;
                Err(err)
            }
        }
    }

    /// Failed nodes in the root's transitive mandatory ancestry, creation
    /// order.
    fn failed_mandatory_ancestors(&self, of: Id) -> Vec<Id> {
        let mut seen = std::collections::BTreeSet::new();
        let mut queue = std::collections::VecDeque::from([of]);
        while let Some(current) = queue.pop_front() {
            for edge in &self.edges {
                if edge.to == current && edge.relation.is_mandatory() && seen.insert(edge.from) {
                    queue.push_back(edge.from);
                }
            }
        }
        self.nodes
            .iter()
            .filter(|n| seen.contains(&n.id) && n.state == NodeState::Failed)
            .map(|n| n.id)
            .collect()
    }

    /// The execution trace as JSON lines.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for event in &self.trace {
            out.push_str(&serde_json::to_string(event)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Scheduler-safety audit over the recorded trace: a node must never
    /// enter `running` before each mandatory predecessor logged `done`.
    /// Returns one description per violation; empty means safe.
    pub fn schedule_violations(&self) -> Vec<String> {
        let mut done_at: BTreeMap<Id, u64> = BTreeMap::new();
        for event in &self.trace {
            if event.transition == "done" {
                done_at.entry(event.node).or_insert(event.timestamp_ordinal);
            }
        }
        let mut violations = Vec::new();
        for event in &self.trace {
            if event.transition != "running" {
                continue;
            }
            for edge in &self.edges {
                if edge.to != event.node || !edge.relation.is_mandatory() {
                    continue;
                }
                match done_at.get(&edge.from) {
                    Some(&t) if t < event.timestamp_ordinal => {}
                    _ => violations.push(format!(
                        "node {} ran at ordinal {} before dependency {} was done",
                        event.node, event.timestamp_ordinal, edge.from
                    )),
                }
            }
        }
        violations
    }
}

/// Normalized exact-match majority vote over the present answers; with no
/// majority the search-augmented answer wins, then the self-driven one,
/// then the direct one. Blank answers count as absent. The winning
/// answer's original text is returned alongside the rule that fired.
pub fn aggregate_answers(
    direct: Option<&str>,
    search_augmented: Option<&str>,
    self_driven: Option<&str>,
) -> Result<(String, VoteRule)> {
    fn normalize(text: &str) -> String {
        text.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    }
    // Pathway order fixes all tie-breaking below.
    let present: Vec<(&str, VoteRule)> = [
        (search_augmented, VoteRule::PreferSearchAugmented),
        (self_driven, VoteRule::PreferSelfDriven),
        (direct, VoteRule::PreferDirect),
    ]
    .into_iter()
    .filter_map(|(answer, rule)| answer.map(|a| (a, rule)))
    .filter(|(answer, _)| !normalize(answer).is_empty())
    .collect();
    if present.is_empty() {
        return Err(Error::invalid("no pathway produced an answer"));
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (answer, _) in &present {
        *counts.entry(normalize(answer)).or_insert(0) += 1;
    }
    if let Some((majority, _)) = counts.iter().find(|(_, &count)| count >= 2) {
        let (winner, _) = present
            .iter()
            .find(|(answer, _)| &normalize(answer) == majority)
            .expect("majority came from the present answers");
        return Ok((winner.to_string(), VoteRule::Majority));
    }
    let (answer, rule) = present[0];
    Ok((answer.to_string(), rule))
}

/// Alternates planning and execution until the planner converges and all
/// worker nodes are terminal, then synthesizes the final answer. Bounded
/// by `max_rounds`; a flow that keeps growing past the bound is an error.
pub fn run_flow(
    flow: &mut FlowGraph,
    planner: &dyn Planner,
    executor: &dyn NodeExecutor,
    max_rounds: usize,
) -> Result<SynthesisOutcome> {
    for _ in 0..max_rounds {
        let added = flow.plan_round(planner);
        loop {
            let ready = flow.ready_nodes();
            if ready.is_empty() {
                break;
            }
            for id in ready {
                flow.execute_node(id, executor)?;
            }
        }
        let settled = flow
            .nodes()
            .filter(|n| n.node_type != NodeType::Answer)
            .all(|n| n.state.is_terminal());
        if added == 0 && settled {
            return flow.synthesize(executor);
        }
    }
    Err(Error::invalid(format!(
        "flow did not converge within {max_rounds} rounds"
    )))
}

/// Deterministic template planner for model-free runs: one round that
/// splits the objective on " and " into search nodes, funnels them into a
/// solve node, and wires the solve node into the root (searches attach to
/// the root as evidence). Converged thereafter.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConjunctionPlanner;

impl Planner for ConjunctionPlanner {
    fn expand(&self, flow: &FlowGraph) -> Vec<PlanBatch> {
        if flow.len() > 1 {
            return Vec::new();
        }
        let clauses: Vec<&str> = flow
            .objective()
            .split(" and ")
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        let mut nodes: Vec<PlannedNode> = clauses
            .iter()
            .map(|clause| PlannedNode {
                node_type: NodeType::Search,
                description: format!("gather material on {clause}"),
            })
            .collect();
        let solve_index = nodes.len();
        nodes.push(PlannedNode {
            node_type: NodeType::Solve,
            description: format!("work out: {}", flow.objective()),
        });
        let mut edges = Vec::new();
        for i in 0..solve_index {
            edges.push(PlannedEdge {
                from: EdgeEnd::New(i),
                to: EdgeEnd::New(solve_index),
                relation: Relation::RequiresResultFrom,
            });
            edges.push(PlannedEdge {
                from: EdgeEnd::New(i),
                to: EdgeEnd::Existing(flow.root_id()),
                relation: Relation::ProvidesEvidenceFor,
            });
        }
        edges.push(PlannedEdge {
            from: EdgeEnd::New(solve_index),
            to: EdgeEnd::Existing(flow.root_id()),
            relation: Relation::RequiresResultFrom,
        });
        vec![PlanBatch { nodes, edges }]
    }
}
