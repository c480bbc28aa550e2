//! Cross-disciplinary knowledge graph: typed scientific entities, open-
//! vocabulary relations, and hybrid retrieval.
//!
//! Ingestion consumes pre-extracted records (entities plus relations) and
//! upserts them by `(label, kind)` identity, so re-ingesting a record is a
//! no-op. Retrieval combines two views of the graph: `graph_search`
//! enumerates simple paths outward from label-matched seeds (edges are
//! traversed in both directions — connectivity matters, not direction),
//! while `dense_retrieve` ranks nodes by embedding similarity regardless
//! of linkage. `merge_rank` fuses both into deduplicated, path-structured
//! evidence chains scored by member similarity with a per-hop length
//! penalty.
//!
//! Everything is exhaustively enumerable on purpose: small stores, exact
//! rankings, deterministic order — so brute-force oracles can check every
//! result.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::rng::{self, Rng};
use crate::similarity::{cosine, topk_auto, DenseVector, Encoder, HashEncoder};
use crate::types::Id;

/// Per-hop multiplier in a chain's score: longer chains must earn their
/// length through member relevance.
pub const DEFAULT_LENGTH_PENALTY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Document,
    Concept,
    Method,
    Dataset,
    EmpiricalSetting,
    ProblemStatement,
}

/// One scientific entity with its embedding (computed at ingest from the
/// entity text, or the label when no text was extracted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgNode {
    pub id: Id,
    pub kind: NodeKind,
    pub label: String,
    pub text: String,
    pub embedding: DenseVector,
}

/// A typed, provenance-stamped relation. The vocabulary is open — tags
/// like `cites` or `by_product` are conventions, not an enum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgEdge {
    pub from: Id,
    pub to: Id,
    pub relation: String,
    pub provenance: String,
}

/// One extracted entity before it is resolved into the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDraft {
    pub label: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub text: String,
}

/// One extracted relation; endpoints name entities listed in the same
/// record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDraft {
    pub from_label: String,
    pub to_label: String,
    pub relation: String,
}

/// The output contract of an extraction workflow: everything one source
/// document contributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub source_id: String,
    pub entities: Vec<EntityDraft>,
    pub relations: Vec<RelationDraft>,
}

impl ExtractionRecord {
    /// Structural validity: non-empty identifiers and every relation
    /// endpoint naming a listed entity.
    pub fn validate(&self) -> Result<()> {
        if self.source_id.trim().is_empty() {
            return Err(Error::invalid("extraction record needs a source id"));
        }
        for entity in &self.entities {
            if entity.label.trim().is_empty() {
                return Err(Error::invalid("entity labels must be non-empty"));
            }
        }
        let labels: BTreeSet<&str> = self.entities.iter().map(|e| e.label.as_str()).collect();
        for relation in &self.relations {
            if relation.relation.trim().is_empty() {
                return Err(Error::invalid("relation tags must be non-empty"));
            }
            for endpoint in [&relation.from_label, &relation.to_label] {
                if !labels.contains(endpoint.as_str()) {
                    return Err(Error::invalid(format!(
                        "relation endpoint {endpoint:?} names no listed entity"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A ranked, path-structured piece of evidence: the walk, its per-hop
/// relation tags, and the merged relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceChain {
    pub path: Vec<Id>,
    pub relations: Vec<String>,
    pub score: f64,
}

impl EvidenceChain {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

/// Mean member similarity damped per hop — the chain scoring rule.
pub(crate) fn score_path(member_sims: &[f64], hops: usize, penalty: f64) -> f64 {
    if member_sims.is_empty() {
        return 0.0;
    }
    let mean = member_sims.iter().sum::<f64>() / member_sims.len() as f64;
    mean * penalty.powi(hops as i32)
}

/// The store: plain node and edge arrays, scanned linearly — stores stay
/// small enough that exactness beats indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    encoder: HashEncoder,
    ids: Rng,
    nodes: Vec<KgNode>,
    edges: Vec<KgEdge>,
}

impl KnowledgeGraph {
    pub fn new(encoder: HashEncoder, id_stream: Rng) -> Self {
        KnowledgeGraph {
            encoder,
            ids: id_stream,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[KgEdge] {
        &self.edges
    }

    pub fn node(&self, id: Id) -> Result<&KgNode> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Exact-identity lookup: label (case-sensitive) plus kind.
    pub fn find(&self, label: &str, kind: NodeKind) -> Option<&KgNode> {
        self.nodes
            .iter()
            .find(|n| n.kind == kind && n.label == label)
    }

    /// Folds one record into the graph and reports `(nodes added, edges
    /// added)`. Entities upsert by `(label, kind)` — the first ingest of
    /// an identity wins, later ones are no-ops — and duplicate
    /// `(from, to, relation)` edges are skipped, so repeating a record
    /// changes nothing. An invalid record is rejected whole.
    pub fn ingest(&mut self, record: &ExtractionRecord) -> Result<(usize, usize)> {
        record.validate()?;
        let mut nodes_added = 0;
        for entity in &record.entities {
            if self.find(&entity.label, entity.kind).is_none() {
                let source = if entity.text.trim().is_empty() {
                    &entity.label
                } else {
                    &entity.text
                };
                let node = KgNode {
                    id: rng::make_id(&mut self.ids),
                    kind: entity.kind,
                    label: entity.label.clone(),
                    text: entity.text.clone(),
                    embedding: self.encoder.encode(source),
                };
                self.nodes.push(node);
                nodes_added += 1;
            }
        }
        let mut edges_added = 0;
        for relation in &record.relations {
            let from = self.resolve_in_record(record, &relation.from_label)?;
            let to = self.resolve_in_record(record, &relation.to_label)?;
            let duplicate = self.edges.iter().any(|e| {
                e.from == from && e.to == to && e.relation == relation.relation
            });
            if !duplicate {
                self.edges.push(KgEdge {
                    from,
                    to,
                    relation: relation.relation.clone(),
                    provenance: record.source_id.clone(),
                });
                edges_added += 1;
            }
        }
        Ok((nodes_added, edges_added))
    }

    /// A relation endpoint resolves to the record's first entity with that
    /// label (records listing one label under two kinds bind to the
    /// earlier one).
    fn resolve_in_record(&self, record: &ExtractionRecord, label: &str) -> Result<Id> {
        let entity = record
            .entities
            .iter()
            .find(|e| e.label == label)
            .ok_or_else(|| Error::invalid(format!("unlisted endpoint {label:?}")))?;
        self.find(&entity.label, entity.kind)
            .map(|n| n.id)
            .ok_or_else(|| Error::invalid(format!("entity {label:?} was not ingested")))
    }

    /// All simple paths of at most `max_hops` edges starting at any node
    /// whose label equals a seed (case-insensitive), traversing edges in
    /// both directions, sorted lexicographically by the node ids along
    /// each path. Single-node paths are included — a matched seed is
    /// itself evidence. Unknown seeds simply contribute nothing.
    pub fn graph_search(&self, seed_labels: &[&str], max_hops: usize) -> Result<Vec<Vec<Id>>> {
        if max_hops == 0 {
            return Err(Error::invalid("max_hops must be at least 1"));
        }
        let wanted: Vec<String> = seed_labels.iter().map(|s| s.to_lowercase()).collect();
        let seeds: Vec<Id> = self
            .nodes
            .iter()
            .filter(|n| wanted.iter().any(|w| n.label.to_lowercase() == *w))
            .map(|n| n.id)
            .collect();

        let mut paths: Vec<Vec<Id>> = Vec::new();
        let mut frontier: Vec<Vec<Id>> = seeds.into_iter().map(|s| vec![s]).collect();
        while let Some(path) = frontier.pop() {
            if path.len() <= max_hops {
                for neighbor in self.neighbors(*path.last().expect("paths are non-empty")) {
                    if !path.contains(&neighbor) {
                        let mut longer = path.clone();
                        longer.push(neighbor);
                        frontier.push(longer);
                    }
                }
            }
            paths.push(path);
        }
        paths.sort();
        paths.dedup();
        Ok(paths)
    }

    /// Distinct neighbors over both edge directions, ascending by id.
    fn neighbors(&self, of: Id) -> BTreeSet<Id> {
        let mut out = BTreeSet::new();
        for edge in &self.edges {
            if edge.from == of {
                out.insert(edge.to);
            }
            if edge.to == of {
                out.insert(edge.from);
            }
        }
        out
    }

    /// Top-k nodes by embedding similarity to the query. Exhaustive and
    /// exact; an empty store returns nothing.
    pub fn dense_retrieve(&self, query: &str, k: usize) -> Result<Vec<(&KgNode, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.encoder.encode(query);
        Ok(topk_auto(&self.nodes, k, |n| {
            cosine(&q, &n.embedding).expect("stored embeddings share the encoder dim")
        })
        .into_iter()
        .map(|(i, sim)| (&self.nodes[i], sim))
        .collect())
    }

    /// Fuses graph paths and dense hits into top-k evidence chains.
    ///
    /// Each path scores `mean(member similarity to the query) ×
    /// penalty^hops`; each dense hit becomes a single-node chain scored by
    /// its own similarity. Chains covering the same node *set* collapse to
    /// one. Ranking is by score, then fewer hops, then lexicographic ids.
    pub fn merge_rank(
        &self,
        query: &str,
        paths: &[Vec<Id>],
        dense_hits: &[(Id, f64)],
        k: usize,
    ) -> Result<Vec<EvidenceChain>> {
        self.merge_rank_with_penalty(query, paths, dense_hits, k, DEFAULT_LENGTH_PENALTY)
    }

    pub fn merge_rank_with_penalty(
        &self,
        query: &str,
        paths: &[Vec<Id>],
        dense_hits: &[(Id, f64)],
        k: usize,
        penalty: f64,
    ) -> Result<Vec<EvidenceChain>> {
        let q = self.encoder.encode(query);
        let mut chains = Vec::with_capacity(paths.len() + dense_hits.len());
        for path in paths {
            if path.is_empty() {
                continue;
            }
            let mut sims = Vec::with_capacity(path.len());
            for &id in path {
                sims.push(cosine(&q, &self.node(id)?.embedding)?);
            }
            let relations = self.hop_relations(path)?;
            chains.push(EvidenceChain {
                path: path.clone(),
                relations,
                score: score_path(&sims, path.len() - 1, penalty),
            });
        }
        for &(id, sim) in dense_hits {
            self.node(id)?;
            chains.push(EvidenceChain {
                path: vec![id],
                relations: Vec::new(),
                score: sim,
            });
        }

        chains.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.path.len().cmp(&b.path.len()))
                .then(a.path.cmp(&b.path))
        });
        let mut seen: Vec<BTreeSet<Id>> = Vec::new();
        let mut merged = Vec::new();
        for chain in chains {
            let node_set: BTreeSet<Id> = chain.path.iter().copied().collect();
            if seen.contains(&node_set) {
                continue;
            }
            seen.push(node_set);
            merged.push(chain);
            if merged.len() == k {
                break;
            }
        }
        Ok(merged)
    }

    /// Per-hop relation tags for a path: the first stored edge connecting
    /// each consecutive pair, in either direction.
    fn hop_relations(&self, path: &[Id]) -> Result<Vec<String>> {
        let mut relations = Vec::with_capacity(path.len().saturating_sub(1));
        for pair in path.windows(2) {
            let edge = self
                .edges
                .iter()
                .find(|e| {
                    (e.from == pair[0] && e.to == pair[1])
                        || (e.from == pair[1] && e.to == pair[0])
                })
                .ok_or_else(|| {
                    Error::invalid(format!("path hop {} -> {} has no edge", pair[0], pair[1]))
                })?;
            relations.push(edge.relation.clone());
        }
        Ok(relations)
    }

    /// Whether a chain is grounded in this store: every hop is a stored
    /// edge (in either direction) and the tag counts line up.
    pub fn verify_chain(&self, chain: &EvidenceChain) -> bool {
        if chain.path.is_empty() || chain.relations.len() + 1 != chain.path.len() {
            return false;
        }
        if !chain.score.is_finite() {
            return false;
        }
        for &id in &chain.path {
            if self.node(id).is_err() {
                return false;
            }
        }
        chain.path.windows(2).zip(&chain.relations).all(|(pair, tag)| {
            self.edges.iter().any(|e| {
                e.relation == *tag
                    && ((e.from == pair[0] && e.to == pair[1])
                        || (e.from == pair[1] && e.to == pair[0]))
            })
        })
    }

    /// Snapshot the whole store (nodes and edges arrays plus bookkeeping)
    /// as pretty JSON.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        jsonl::read_json(path)
    }
}

/// Reads extraction records from a JSONL file, one record per line.
pub fn records_from_jsonl(path: &Path) -> Result<Vec<ExtractionRecord>> {
    jsonl::read_jsonl(path)
}

/// Writes extraction records as JSONL, one record per line.
pub fn records_to_jsonl(path: &Path, records: &[ExtractionRecord]) -> Result<()> {
    jsonl::write_jsonl(path, records)
}
