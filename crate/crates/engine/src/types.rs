//! Shared domain vocabulary: tasks, candidate solutions, and evaluations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Opaque identifier. Serializes as a 16-digit hex string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id(u64);

impl Id {
    pub fn new(raw: u64) -> Self {
        Id(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Id {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(Id)
            .map_err(|_| Error::invalid(format!("malformed id {s:?}")))
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One optimization task: what to improve, how many evaluations are allowed,
/// and the seed every random decision derives from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub objective_text: String,
    pub budget: u64,
    pub seed: u64,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::config("task budget must be >= 1"));
        }
        Ok(())
    }
}

/// Representation of a candidate solution's payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Bitstring,
    NumericVector,
    Text,
    External,
}

/// A candidate solution. The payload is opaque to the engine and interpreted
/// by the environment the campaign binds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub payload: String,
    pub kind: SolutionKind,
}

impl Solution {
    pub fn new(payload: impl Into<String>, kind: SolutionKind) -> Result<Self> {
        let payload = payload.into();
        if payload.is_empty() {
            return Err(Error::invalid("solution payload must be non-empty"));
        }
        Ok(Solution { payload, kind })
    }

    pub fn bitstring(payload: impl Into<String>) -> Result<Self> {
        Solution::new(payload, SolutionKind::Bitstring)
    }
}

/// Outcome of evaluating a solution. Scores are higher-is-better everywhere;
/// environments whose native metric is a loss negate it at the adapter
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub detail: BTreeMap<String, f64>,
    pub wall_time: f64,
}

impl Evaluation {
    /// Construct an evaluation, rejecting NaN and infinite scores.
    pub fn new(score: f64, detail: BTreeMap<String, f64>, wall_time: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::invalid(format!("evaluation score must be finite, got {score}")));
        }
        Ok(Evaluation { score, detail, wall_time })
    }

    pub fn from_score(score: f64) -> Result<Self> {
        Evaluation::new(score, BTreeMap::new(), 0.0)
    }
}
