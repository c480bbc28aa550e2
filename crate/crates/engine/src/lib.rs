//! Discovery-campaign engine: graph-augmented search over candidate
//! solutions, a dependency-aware research flow planner, tiered campaign
//! memory, and hybrid knowledge retrieval.
//!
//! The crate is organized bottom-up:
//!
//! - [`rng`], [`types`], [`config`], [`error`]: deterministic randomness,
//!   core value types, campaign configuration, and the error taxonomy.
//! - [`similarity`]: dense/sparse encodings, hybrid scoring, top-k.
//! - [`solution_graph`]: the dynamic graph of scored candidate solutions.
//! - [`operators`]: the four expansion operators that grow the graph.
//! - [`search`]: selection, simulation, backpropagation, and the campaign
//!   driver that ties generation, verification, and evolution together.
//! - [`flowgraph`]: typed research-flow DAG, scheduling, and synthesis.
//! - [`knowledge`]: typed knowledge graph with hybrid evidence retrieval.
//! - [`memory`]: procedural/episodic/distilled campaign memory.
//! - [`env`]: the environment and model-adapter traits plus the built-in
//!   deterministic environments and generators used for testing and
//!   benchmarking.
//! - [`harness`]: checkpointing and resume.
//!
//! Everything model-shaped sits behind the traits in [`env`]; the engine
//! itself is pure, deterministic, and runs at desk scale.

pub mod config;
pub mod env;
pub mod error;
pub mod flowgraph;
pub mod harness;
mod jsonl;
pub mod knowledge;
pub mod memory;
pub mod operators;
pub mod rng;
pub mod search;
pub mod similarity;
pub mod solution_graph;
pub mod types;

pub use config::CampaignConfig;
pub use error::{Error, Result};
pub use types::{Evaluation, Id, Solution, SolutionKind, Task};
