//! Tiered campaign memory: procedural signatures, task episodes, and
//! distilled cross-session knowledge.
//!
//! Three stores with different lifetimes and retrieval keys:
//!
//! - **SPM** (strategy-procedural): compact feature vectors over execution
//!   traces, retrieved by trace similarity — "how did runs like this one
//!   proceed?"
//! - **TEM** (task-episodic): per-attempt records (method, metrics,
//!   improvement judgment), retrieved by hybrid dense+sparse similarity to
//!   a hypothesis — "what happened last time something like this was
//!   tried?"
//! - **SKM** (semantic-knowledge): pairwise-distilled insights plus an idea
//!   graph scoring the novelty of candidate objectives.
//!
//! Retrieval is exhaustive and exact; every ranking ties back to the
//! similarity primitives in [`crate::similarity`], so brute-force oracles
//! can verify each one.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{read_json, read_jsonl, write_jsonl};

use crate::error::{Error, Result};
use crate::operators::{GenerationContext, Judgment};
use crate::rng::{self, Rng};
use crate::similarity::{
    cosine, hash_features, hybrid_sim, sparse_features, token_ngrams, topk, topk_auto,
    DenseVector, Encoder, HashEncoder, SparseVector,
};
use crate::types::Id;

/// Most hints ever injected into one generation context.
pub const DEFAULT_HINT_CAP: usize = 8;

/// Nearest neighbors linked to a new idea-graph entry.
const IDEA_LINK_COUNT: usize = 3;

/// Snapshot format version written to the memory manifest.
const MEMORY_FORMAT_VERSION: u32 = 1;

/// One step of an execution trace: what ran, with what, and how it ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: String,
    pub tool: String,
    pub outcome: String,
}

impl TraceStep {
    pub fn new(
        kind: impl Into<String>,
        tool: impl Into<String>,
        outcome: impl Into<String>,
    ) -> Self {
        TraceStep {
            kind: kind.into(),
            tool: tool.into(),
            outcome: outcome.into(),
        }
    }

    fn token(&self) -> String {
        format!("{}:{}:{}", self.kind, self.tool, self.outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Success,
    Failure,
}

impl fmt::Display for TraceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceOutcome::Success => "success",
            TraceOutcome::Failure => "failure",
        })
    }
}

/// A stored trajectory signature (one SPM record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcSignature {
    pub trajectory_id: Id,
    pub features: DenseVector,
    pub summary: String,
    pub outcome: TraceOutcome,
}

/// One attempted method with its measurements (one TEM record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: Id,
    pub method: String,
    pub metrics: BTreeMap<String, f64>,
    pub judgment: Judgment,
    pub dense: DenseVector,
    pub sparse: SparseVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightLevel {
    Principle,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

/// A distilled insight with the method pair that supports it (one SKM
/// library record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub id: Id,
    pub insight: String,
    pub level: InsightLevel,
    pub method_a: String,
    pub method_b: String,
    pub winner: Winner,
    pub embedding: DenseVector,
}

/// One explored objective in the idea graph, linked to its nearest
/// neighbors at insert time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaGraphEntry {
    pub id: Id,
    pub objective: String,
    pub embedding: DenseVector,
    pub links: Vec<(Id, f64)>,
}

/// An insight proposal produced by a [`Distiller`] for one method pair; the
/// store turns drafts into full [`ExperienceEntry`] records.
#[derive(Debug, Clone, PartialEq)]
pub struct InsightDraft {
    pub insight: String,
    pub level: InsightLevel,
    pub winner: Winner,
}

/// Turns a pair of scored methods into zero, one, or two insight drafts.
pub trait Distiller: Send + Sync {
    fn distill(&self, a: &(String, f64), b: &(String, f64)) -> Vec<InsightDraft>;
}

/// Default distiller: one heuristic per pair naming the higher-scoring
/// method as winner (ties are recorded as ties, not dropped).
#[derive(Debug, Clone, Copy, Default)]
pub struct ComparativeDistiller;

impl Distiller for ComparativeDistiller {
    fn distill(&self, a: &(String, f64), b: &(String, f64)) -> Vec<InsightDraft> {
        let (insight, winner) = if a.1 > b.1 {
            (
                format!("prefer '{}' over '{}' ({:.4} vs {:.4})", a.0, b.0, a.1, b.1),
                Winner::A,
            )
        } else if b.1 > a.1 {
            (
                format!("prefer '{}' over '{}' ({:.4} vs {:.4})", b.0, a.0, b.1, a.1),
                Winner::B,
            )
        } else {
            (
                format!("'{}' and '{}' performed equally ({:.4})", a.0, b.0, a.1),
                Winner::Tie,
            )
        };
        vec![InsightDraft {
            insight,
            level: InsightLevel::Heuristic,
            winner,
        }]
    }
}

/// Hashed n-gram features of a trace: each step becomes a
/// `kind:tool:outcome` token, and unigrams plus adjacent bigrams are hashed
/// into `dim` buckets, l2-normalized. Supply the same `dim` as the
/// campaign encoder so trace features and text embeddings stay comparable
/// in storage (they are never mixed in one similarity).
pub fn f_proc(trace: &[TraceStep], dim: usize) -> Result<DenseVector> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot fingerprint an empty trace"));
    }
    let tokens: Vec<String> = trace.iter().map(TraceStep::token).collect();
    Ok(hash_features(token_ngrams(&tokens), dim))
}

/// All three memory tiers plus the idea graph, with one id stream and one
/// text encoder shared across them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    encoder: HashEncoder,
    ids: Rng,
    signatures: Vec<ProcSignature>,
    episodes: Vec<Episode>,
    library: Vec<ExperienceEntry>,
    ideas: Vec<IdeaGraphEntry>,
}

impl MemoryStore {
    /// `id_stream` mints record ids; hand each store its own split stream.
    pub fn new(encoder: HashEncoder, id_stream: Rng) -> Self {
        MemoryStore {
            encoder,
            ids: id_stream,
            signatures: Vec::new(),
            episodes: Vec::new(),
            library: Vec::new(),
            ideas: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn signatures(&self) -> &[ProcSignature] {
        &self.signatures
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn library(&self) -> &[ExperienceEntry] {
        &self.library
    }

    pub fn ideas(&self) -> &[IdeaGraphEntry] {
        &self.ideas
    }

    // ------------------------------------------------------------------
    // SPM

    /// Stores a trajectory signature and returns its id.
    pub fn spm_store(
        &mut self,
        trace: &[TraceStep],
        summary: impl Into<String>,
        outcome: TraceOutcome,
    ) -> Result<Id> {
        let features = f_proc(trace, self.encoder.dim())?;
        let trajectory_id = rng::make_id(&mut self.ids);
        self.signatures.push(ProcSignature {
            trajectory_id,
            features,
            summary: summary.into(),
            outcome,
        });
        Ok(trajectory_id)
    }

    /// Top-k stored signatures by cosine similarity of trace features.
    pub fn spm_retrieve(
        &self,
        query_trace: &[TraceStep],
        k: usize,
    ) -> Result<Vec<(&ProcSignature, f64)>> {
        if self.signatures.is_empty() {
            return Ok(Vec::new());
        }
        let q = f_proc(query_trace, self.encoder.dim())?;
        Ok(topk_auto(&self.signatures, k, |s| {
            cosine(&q, &s.features).expect("stored features share the encoder dim")
        })
        .into_iter()
        .map(|(i, sim)| (&self.signatures[i], sim))
        .collect())
    }

    // ------------------------------------------------------------------
    // TEM

    /// Records one attempt. The judgment is computed here against the
    /// parent score so the stored episode is self-contained; `score` is
    /// folded into the metrics map under `"score"`.
    pub fn record_episode(
        &mut self,
        method: impl Into<String>,
        score: f64,
        parent_score: f64,
        extra_metrics: &BTreeMap<String, f64>,
    ) -> Result<Id> {
        let method = method.into();
        let mut metrics = extra_metrics.clone();
        metrics.insert("score".to_string(), score);
        for (key, value) in &metrics {
            if !value.is_finite() {
                return Err(Error::invalid(format!(
                    "episode metric {key:?} must be finite, got {value}"
                )));
            }
        }
        let id = rng::make_id(&mut self.ids);
        self.episodes.push(Episode {
            id,
            dense: self.encoder.encode(&method),
            sparse: sparse_features(&method),
            method,
            metrics,
            judgment: crate::operators::judge(score, parent_score),
        });
        Ok(id)
    }

    /// Top-k episodes by hybrid similarity between the hypothesis text and
    /// each stored method.
    pub fn tem_retrieve(&self, hypothesis: &str, k: usize, alpha: f64) -> Result<Vec<(&Episode, f64)>> {
        let q_dense = self.encoder.encode(hypothesis);
        let q_sparse = sparse_features(hypothesis);
        // Validate alpha once instead of per candidate.
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(topk_auto(&self.episodes, k, |e| {
            hybrid_sim(&q_dense, &q_sparse, &e.dense, &e.sparse, alpha)
                .expect("alpha validated above")
        })
        .into_iter()
        .map(|(i, sim)| (&self.episodes[i], sim))
        .collect())
    }

    // ------------------------------------------------------------------
    // SKM

    /// Runs the distiller over every unordered pair of the batch, stores
    /// the resulting entries, and returns them. The shipped
    /// [`ComparativeDistiller`] yields exactly C(n, 2) entries.
    pub fn skm_distill(
        &mut self,
        batch: &[(String, f64)],
        distiller: &dyn Distiller,
    ) -> Result<Vec<ExperienceEntry>> {
        if batch.len() < 2 {
            return Err(Error::invalid("distillation needs at least two methods"));
        }
        let mut stored = Vec::new();
        for i in 0..batch.len() {
            for j in i + 1..batch.len() {
                for draft in distiller.distill(&batch[i], &batch[j]) {
                    let entry = ExperienceEntry {
                        id: rng::make_id(&mut self.ids),
                        embedding: self.encoder.encode(&draft.insight),
                        insight: draft.insight,
                        level: draft.level,
                        method_a: batch[i].0.clone(),
                        method_b: batch[j].0.clone(),
                        winner: draft.winner,
                    };
                    self.library.push(entry.clone());
                    stored.push(entry);
                }
            }
        }
        Ok(stored)
    }

    /// Top-k library insights by cosine similarity to the goal text.
    pub fn skm_retrieve(&self, goal: &str, k: usize) -> Vec<(&ExperienceEntry, f64)> {
        let q = self.encoder.encode(goal);
        topk_auto(&self.library, k, |e| {
            cosine(&q, &e.embedding).expect("stored embeddings share the encoder dim")
        })
        .into_iter()
        .map(|(i, sim)| (&self.library[i], sim))
        .collect()
    }

    // ------------------------------------------------------------------
    // Idea graph

    /// Adds an explored objective, linking it to its nearest stored
    /// neighbors.
    pub fn idea_store(&mut self, objective: impl Into<String>) -> Id {
        let objective = objective.into();
        let embedding = self.encoder.encode(&objective);
        let links = topk(&self.ideas, IDEA_LINK_COUNT, |entry| {
            cosine(&embedding, &entry.embedding).expect("shared encoder dim")
        })
        .into_iter()
        .map(|(i, sim)| (self.ideas[i].id, sim))
        .collect();
        let id = rng::make_id(&mut self.ids);
        self.ideas.push(IdeaGraphEntry {
            id,
            objective,
            embedding,
            links,
        });
        id
    }

    /// `1 − max` cosine similarity between the candidate and every stored
    /// idea; an empty idea graph scores 1.0 (maximally novel). Under the
    /// non-negative hashed encoder all similarities lie in [0, 1], so the
    /// novelty does too.
    pub fn novelty(&self, candidate: &str) -> f64 {
        let q = self.encoder.encode(candidate);
        let max_sim = self
            .ideas
            .iter()
            .map(|entry| cosine(&q, &entry.embedding).expect("shared encoder dim"))
            .fold(0.0_f64, f64::max);
        1.0 - max_sim
    }

    // ------------------------------------------------------------------
    // Hint assembly

    /// Builds the hint strings injected into a generation context: top-k
    /// episodes for the parent hypothesis, then top-k insights for the task
    /// objective, then top-k procedural summaries, truncated to `cap`.
    pub fn hints_for_context(
        &self,
        context: &GenerationContext,
        k: usize,
        alpha: f64,
        cap: usize,
    ) -> Result<Vec<String>> {
        let mut hints = Vec::new();
        for (episode, _) in self.tem_retrieve(&context.parent_solution.payload, k, alpha)? {
            hints.push(format!(
                "past attempt [{}]: {}",
                episode.judgment, episode.method
            ));
        }
        for (entry, _) in self.skm_retrieve(&context.task_objective, k) {
            hints.push(format!("insight: {}", entry.insight));
        }
        for (signature, _) in self.rank_signatures_by_text(&context.task_objective, k) {
            hints.push(format!(
                "procedure [{}]: {}",
                signature.outcome, signature.summary
            ));
        }
        hints.truncate(cap);
        Ok(hints)
    }

    /// SPM summaries ranked by text similarity between the query and each
    /// signature's summary. Trace-feature retrieval needs a query trace;
    /// hint assembly only has text, so summaries are compared in text
    /// space.
    pub fn rank_signatures_by_text(&self, query: &str, k: usize) -> Vec<(&ProcSignature, f64)> {
        let q = self.encoder.encode(query);
        topk_auto(&self.signatures, k, |s| {
            cosine(&q, &self.encoder.encode(&s.summary)).expect("same encoder")
        })
        .into_iter()
        .map(|(i, sim)| (&self.signatures[i], sim))
        .collect()
    }

    // ------------------------------------------------------------------
    // Snapshots

    /// Writes the store as one JSONL file per tier plus a manifest, into
    /// `dir` (created if missing).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("spm.jsonl"), &self.signatures)?;
        write_jsonl(&dir.join("tem.jsonl"), &self.episodes)?;
        write_jsonl(&dir.join("skm_library.jsonl"), &self.library)?;
        write_jsonl(&dir.join("skm_ideas.jsonl"), &self.ideas)?;
        let manifest = MemoryManifest {
            version: MEMORY_FORMAT_VERSION,
            dim: self.encoder.dim(),
            ids: self.ids.clone(),
            tiers: vec![
                "spm.jsonl".into(),
                "tem.jsonl".into(),
                "skm_library.jsonl".into(),
                "skm_ideas.jsonl".into(),
            ],
        };
        let body = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), body)?;
        Ok(())
    }

    /// Loads a store previously written by [`MemoryStore::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: MemoryManifest = read_json(&dir.join("manifest.json"))
            .map_err(|e| e.in_section("memory manifest"))?;
        if manifest.version > MEMORY_FORMAT_VERSION {
            return Err(Error::config(format!(
                "memory snapshot version {} is newer than supported {}",
                manifest.version, MEMORY_FORMAT_VERSION
            )));
        }
        Ok(MemoryStore {
            encoder: HashEncoder::new(manifest.dim)?,
            ids: manifest.ids,
            signatures: read_jsonl(&dir.join("spm.jsonl")).map_err(|e| e.in_section("spm"))?,
            episodes: read_jsonl(&dir.join("tem.jsonl")).map_err(|e| e.in_section("tem"))?,
            library: read_jsonl(&dir.join("skm_library.jsonl"))
                .map_err(|e| e.in_section("skm library"))?,
            ideas: read_jsonl(&dir.join("skm_ideas.jsonl"))
                .map_err(|e| e.in_section("skm ideas"))?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MemoryManifest {
    version: u32,
    dim: usize,
    ids: Rng,
    tiers: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> MemoryStore {
        MemoryStore::new(HashEncoder::default(), Rng::seeded(17))
    }

    fn trace(steps: &[(&str, &str, &str)]) -> Vec<TraceStep> {
        steps
            .iter()
            .map(|(k, t, o)| TraceStep::new(*k, *t, *o))
            .collect()
    }

    #[test]
    fn f_proc_is_deterministic_and_order_sensitive() {
        let a = trace(&[("solve", "grep", "ok"), ("solve", "calc", "ok")]);
        let b = trace(&[("solve", "calc", "ok"), ("solve", "grep", "ok")]);
        let fa = f_proc(&a, 256).unwrap();
        assert_eq!(fa, f_proc(&a, 256).unwrap());
        // Same steps, different order: bigrams separate them.
        assert_ne!(fa, f_proc(&b, 256).unwrap());
        assert!((fa.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_proc_distinguishes_outcomes_and_rejects_empty() {
        let ok = f_proc(&trace(&[("solve", "grep", "ok")]), 256).unwrap();
        let fail = f_proc(&trace(&[("solve", "grep", "error")]), 256).unwrap();
        assert_ne!(ok, fail);
        assert!(f_proc(&[], 256).is_err());
    }

    #[test]
    fn spm_retrieves_the_identical_trace_first() {
        let mut m = store();
        let stored = trace(&[("search", "web", "ok"), ("solve", "calc", "ok")]);
        m.spm_store(&stored, "search then calculate", TraceOutcome::Success)
            .unwrap();
        m.spm_store(
            &trace(&[("solve", "calc", "error")]),
            "calculator misfire",
            TraceOutcome::Failure,
        )
        .unwrap();

        let hits = m.spm_retrieve(&stored, 2).unwrap();
        assert_eq!(hits[0].0.summary, "search then calculate");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spm_empty_store_returns_nothing() {
        let m = store();
        assert!(m
            .spm_retrieve(&trace(&[("solve", "x", "ok")]), 5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn episodes_carry_judgments_computed_at_store_time() {
        let mut m = store();
        m.record_episode("increase learning rate", 0.7, 0.5, &BTreeMap::new())
            .unwrap();
        m.record_episode("decrease batch size", 0.4, 0.5, &BTreeMap::new())
            .unwrap();
        m.record_episode("swap optimizer", 0.5, 0.5, &BTreeMap::new())
            .unwrap();
        let judgments: Vec<Judgment> = m.episodes().iter().map(|e| e.judgment).collect();
        assert_eq!(
            judgments,
            vec![Judgment::Improved, Judgment::Regressed, Judgment::Unchanged]
        );
        assert_eq!(m.episodes()[0].metrics["score"], 0.7);
    }

    #[test]
    fn episode_metrics_must_be_finite() {
        let mut m = store();
        let mut metrics = BTreeMap::new();
        metrics.insert("loss".to_string(), f64::NAN);
        assert!(m.record_episode("m", 0.5, 0.5, &metrics).is_err());
    }

    #[test]
    fn tem_retrieves_the_matching_method_first() {
        let mut m = store();
        m.record_episode("tune the cache eviction policy", 0.6, 0.5, &BTreeMap::new())
            .unwrap();
        m.record_episode("rewrite the parser in one pass", 0.4, 0.5, &BTreeMap::new())
            .unwrap();
        let hits = m
            .tem_retrieve("tune the cache eviction policy", 2, 0.5)
            .unwrap();
        assert_eq!(hits[0].0.method, "tune the cache eviction policy");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tem_alpha_one_equals_dense_only_ranking() {
        let mut m = store();
        for text in ["alpha beta gamma", "delta epsilon", "alpha delta", "zeta"] {
            m.record_episode(text, 0.5, 0.5, &BTreeMap::new()).unwrap();
        }
        let hybrid = m.tem_retrieve("alpha beta", 4, 1.0).unwrap();
        let q = m.encoder.encode("alpha beta");
        let dense_oracle = topk(&m.episodes, 4, |e| cosine(&q, &e.dense).unwrap());
        for (got, want) in hybrid.iter().zip(dense_oracle) {
            assert_eq!(got.0.id, m.episodes[want.0].id);
            assert!((got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn tem_rejects_alpha_out_of_range() {
        let m = store();
        assert!(m.tem_retrieve("q", 3, 1.5).is_err());
    }

    #[test]
    fn distillation_covers_every_pair() {
        let mut m = store();
        let batch: Vec<(String, f64)> = [
            ("greedy decode", 0.9),
            ("beam search", 0.4),
            ("sampling", 0.4),
            ("lookahead", 0.7),
        ]
        .into_iter()
        .map(|(s, v)| (s.to_string(), v))
        .collect();
        let entries = m.skm_distill(&batch, &ComparativeDistiller).unwrap();
        assert_eq!(entries.len(), 6); // C(4,2)
        assert_eq!(m.library().len(), 6);

        // (0.9, 0.4) names the first method the winner.
        assert_eq!(entries[0].winner, Winner::A);
        // beam search vs sampling tie at 0.4.
        let tie = entries
            .iter()
            .find(|e| e.method_a == "beam search" && e.method_b == "sampling")
            .unwrap();
        assert_eq!(tie.winner, Winner::Tie);
    }

    #[test]
    fn distillation_needs_a_pair() {
        let mut m = store();
        assert!(m
            .skm_distill(&[("only one".to_string(), 0.5)], &ComparativeDistiller)
            .is_err());
    }

    #[test]
    fn skm_retrieves_verbatim_goal_first() {
        let mut m = store();
        let batch: Vec<(String, f64)> = [("route around the cache", 0.9), ("disable the cache", 0.2)]
            .into_iter()
            .map(|(s, v)| (s.to_string(), v))
            .collect();
        let entries = m.skm_distill(&batch, &ComparativeDistiller).unwrap();
        let hits = m.skm_retrieve(&entries[0].insight, 1);
        assert_eq!(hits[0].0.id, entries[0].id);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);

        let empty = store();
        assert!(empty.skm_retrieve("anything", 3).is_empty());
    }

    #[test]
    fn novelty_follows_the_stated_conventions() {
        let mut m = store();
        assert_eq!(m.novelty("entirely fresh idea"), 1.0);

        m.idea_store("optimize the scheduler with lookahead");
        assert!(m.novelty("optimize the scheduler with lookahead") < 1e-9);

        // An unrelated candidate scores markedly more novel than one that
        // shares tokens with the stored idea (exact values depend on which
        // hash buckets the texts land in, so compare rather than pin).
        let unrelated = m.novelty("quantize vision embeddings");
        let related = m.novelty("optimize the scheduler differently");
        assert!(unrelated > related);
        assert!(unrelated > 0.5);
    }

    #[test]
    fn novelty_never_increases_as_ideas_accumulate() {
        let mut m = store();
        let candidate = "prune the search frontier adaptively";
        let mut last = m.novelty(candidate);
        for text in [
            "prune dead branches",
            "adaptive frontier scheduling",
            "prune the search frontier adaptively",
            "unrelated biology protocol",
        ] {
            m.idea_store(text);
            let now = m.novelty(candidate);
            assert!(now <= last + 1e-12);
            last = now;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn idea_links_point_to_nearest_neighbors() {
        let mut m = store();
        let a = m.idea_store("tune cache eviction");
        let _b = m.idea_store("unrelated wet lab assay");
        let c = m.idea_store("tune cache eviction policy");
        let entry = m.ideas().iter().find(|e| e.id == c).unwrap();
        assert_eq!(entry.links.len(), 2);
        // The similar objective ranks above the unrelated one.
        assert_eq!(entry.links[0].0, a);
        assert!(entry.links[0].1 > entry.links[1].1);
    }

    #[test]
    fn hints_are_ordered_tem_skm_spm_and_capped() {
        use crate::solution_graph::SolutionGraph;
        use crate::types::{Evaluation, Solution};

        let mut m = store();
        m.record_episode("flip high bits first", 0.8, 0.5, &BTreeMap::new())
            .unwrap();
        let batch: Vec<(String, f64)> = [("flip high bits first", 0.8), ("flip low bits", 0.3)]
            .into_iter()
            .map(|(s, v)| (s.to_string(), v))
            .collect();
        m.skm_distill(&batch, &ComparativeDistiller).unwrap();
        m.spm_store(
            &trace(&[("solve", "mutator", "ok")]),
            "mutate then re-evaluate",
            TraceOutcome::Success,
        )
        .unwrap();

        let mut g = SolutionGraph::new(Rng::seeded(2));
        let root = g
            .add_root(
                Solution::bitstring("0101").unwrap(),
                Evaluation::from_score(0.5).unwrap(),
            )
            .unwrap();
        let ctx = crate::operators::build_primary_context(&g, root, "maximize bit agreement")
            .unwrap();

        let hints = m.hints_for_context(&ctx, 2, 0.5, DEFAULT_HINT_CAP).unwrap();
        assert_eq!(hints.len(), 3);
        assert!(hints[0].starts_with("past attempt [improved]"));
        assert!(hints[1].starts_with("insight:"));
        assert!(hints[2].starts_with("procedure [success]"));

        let capped = m.hints_for_context(&ctx, 2, 0.5, 1).unwrap();
        assert_eq!(capped.len(), 1);
        assert!(capped[0].starts_with("past attempt"), "TEM hints come first");
    }

    #[test]
    fn empty_stores_yield_no_hints() {
        use crate::solution_graph::SolutionGraph;
        use crate::types::{Evaluation, Solution};

        let m = store();
        let mut g = SolutionGraph::new(Rng::seeded(2));
        let root = g
            .add_root(
                Solution::bitstring("01").unwrap(),
                Evaluation::from_score(0.5).unwrap(),
            )
            .unwrap();
        let ctx = crate::operators::build_primary_context(&g, root, "objective").unwrap();
        assert!(m
            .hints_for_context(&ctx, 3, 0.5, DEFAULT_HINT_CAP)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn snapshot_roundtrip_preserves_retrieval_behavior() {
        let mut m = store();
        m.spm_store(
            &trace(&[("search", "web", "ok")]),
            "single web search",
            TraceOutcome::Success,
        )
        .unwrap();
        m.record_episode("anneal the threshold", 0.6, 0.4, &BTreeMap::new())
            .unwrap();
        let batch: Vec<(String, f64)> = [("anneal", 0.6), ("step decay", 0.5)]
            .into_iter()
            .map(|(s, v)| (s.to_string(), v))
            .collect();
        m.skm_distill(&batch, &ComparativeDistiller).unwrap();
        m.idea_store("threshold annealing study");

        let dir = tempfile::tempdir().unwrap();
        m.save_dir(dir.path()).unwrap();
        let restored = MemoryStore::load_dir(dir.path()).unwrap();
        assert_eq!(restored, m);

        // The restored id stream continues identically.
        let mut a = m.clone();
        let mut b = restored;
        assert_eq!(a.idea_store("next idea"), b.idea_store("next idea"));
    }

    #[test]
    fn loading_a_future_version_fails_loudly() {
        let mut m = store();
        m.idea_store("x");
        let dir = tempfile::tempdir().unwrap();
        m.save_dir(dir.path()).unwrap();

        let manifest_path = dir.path().join("manifest.json");
        let body = fs::read_to_string(&manifest_path).unwrap();
        let mut manifest: serde_json::Value = serde_json::from_str(&body).unwrap();
        manifest["version"] = serde_json::json!(99);
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

        let err = MemoryStore::load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
