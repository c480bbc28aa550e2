//! Campaign configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Task;

pub const DEFAULT_C_EXPLORE: f64 = 1.41421356;
pub const DEFAULT_STAGNATION_WINDOW: usize = 3;
pub const DEFAULT_AGGREGATION_PERIOD: u64 = 8;
pub const DEFAULT_TOPK_REFS: usize = 3;
pub const DEFAULT_ALPHA_HYBRID: f64 = 0.5;
pub const DEFAULT_K_RETRIEVE: usize = 5;
pub const DEFAULT_WORKER_COUNT: usize = 1;

/// Everything one campaign needs besides its environment, generator, and
/// policy bindings. Serializes to a flat JSON object; every field except
/// `task` has a documented default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub task: Task,
    /// UCT exploration constant.
    #[serde(default = "default_c_explore")]
    pub c_explore: f64,
    /// Evaluations without improvement before a branch counts as stagnant.
    #[serde(default = "default_stagnation_window")]
    pub stagnation_window: usize,
    /// Steps between multi-branch aggregation attempts.
    #[serde(default = "default_aggregation_period")]
    pub aggregation_period: u64,
    /// References consumed by cross-branch and aggregation operators.
    #[serde(default = "default_topk_refs")]
    pub topk_refs: usize,
    /// Dense weight in hybrid similarity; sparse gets `1 - alpha_hybrid`.
    #[serde(default = "default_alpha_hybrid")]
    pub alpha_hybrid: f64,
    /// Records fetched per memory tier when building hints.
    #[serde(default = "default_k_retrieve")]
    pub k_retrieve: usize,
    /// Concurrent simulations. Determinism is only guaranteed at 1.
    #[serde(default = "default_worker_count")]
    pub worker_count: usize,
}

fn default_c_explore() -> f64 {
    DEFAULT_C_EXPLORE
}
fn default_stagnation_window() -> usize {
    DEFAULT_STAGNATION_WINDOW
}
fn default_aggregation_period() -> u64 {
    DEFAULT_AGGREGATION_PERIOD
}
fn default_topk_refs() -> usize {
    DEFAULT_TOPK_REFS
}
fn default_alpha_hybrid() -> f64 {
    DEFAULT_ALPHA_HYBRID
}
fn default_k_retrieve() -> usize {
    DEFAULT_K_RETRIEVE
}
fn default_worker_count() -> usize {
    DEFAULT_WORKER_COUNT
}

impl CampaignConfig {
    pub fn new(task: Task) -> Self {
        CampaignConfig {
            task,
            c_explore: DEFAULT_C_EXPLORE,
            stagnation_window: DEFAULT_STAGNATION_WINDOW,
            aggregation_period: DEFAULT_AGGREGATION_PERIOD,
            topk_refs: DEFAULT_TOPK_REFS,
            alpha_hybrid: DEFAULT_ALPHA_HYBRID,
            k_retrieve: DEFAULT_K_RETRIEVE,
            worker_count: DEFAULT_WORKER_COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if !self.c_explore.is_finite() || self.c_explore < 0.0 {
            return Err(Error::config("c_explore must be a non-negative finite real"));
        }
        if self.stagnation_window < 1 {
            return Err(Error::config("stagnation_window must be >= 1"));
        }
        if self.aggregation_period < 1 {
            return Err(Error::config("aggregation_period must be >= 1"));
        }
        if self.topk_refs < 1 {
            return Err(Error::config("topk_refs must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha_hybrid) {
            return Err(Error::config("alpha_hybrid must lie in [0, 1]"));
        }
        if self.k_retrieve < 1 {
            return Err(Error::config("k_retrieve must be >= 1"));
        }
        if self.worker_count < 1 {
            return Err(Error::config("worker_count must be >= 1"));
        }
        Ok(())
    }
}
