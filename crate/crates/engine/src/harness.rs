//! Campaign persistence and the remote model adapter.
//!
//! A checkpoint is a self-contained directory: configuration, search
//! state, the event log so far, and optional memory and flow snapshots,
//! all described by a versioned manifest. Saving is atomic (everything is
//! staged in a temp directory, then renamed into place), loading names the
//! section that failed, and a manifest from a newer format version is
//! refused outright rather than half-read. Because a [`SearchState`] only
//! exists between steps, checkpoints land on step boundaries by
//! construction — there is never in-flight evaluation state to lose.
//!
//! The remote adapter turns a [`GenerationContext`] into a versioned JSON
//! prompt envelope, posts it to a chat-completion-style endpoint, and
//! parses the first text block back into a [`Solution`]. The auth token is
//! read from an environment variable at request time; the serializable
//! spec carries only the variable's *name*, so no secret can ever reach a
//! checkpoint or a log line.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::error::{Error, Result};
use crate::flowgraph::FlowGraph;
use crate::jsonl;
use crate::memory::MemoryStore;
use crate::operators::{GenerationContext, ProposalGenerator};
use crate::rng::Rng;
use crate::search::{SearchState, StepEvent};
use crate::types::{Solution, SolutionKind};

/// Bumped whenever the on-disk layout changes shape.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_REQUEST_TIMEOUT_SECS: u64 = 30;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_BACKOFF_MS: u64 = 250;

// ---------------------------------------------------------------------------
// Checkpoints

const MANIFEST_FILE: &str = "manifest.json";
const CONFIG_FILE: &str = "config.json";
const STATE_FILE: &str = "search_state.json";
const EVENTS_FILE: &str = "events.jsonl";
const FLOW_FILE: &str = "flow.json";
const MEMORY_DIR: &str = "memory";

/// What a checkpoint directory contains, written last so a torn save is
/// never mistaken for a complete one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// Events already in the log; a resumed campaign appends after this.
    pub event_log_offset: u64,
    pub has_memory: bool,
    pub has_flow: bool,
}

/// A fully loaded checkpoint. Everything a campaign needs to continue
/// except the pluggable components (environment, generator, policy).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub config: CampaignConfig,
    pub state: SearchState,
    pub events: Vec<StepEvent>,
    pub memory: Option<MemoryStore>,
    pub flow: Option<FlowGraph>,
}

/// Writes a complete checkpoint directory atomically: every section is
/// staged under a temporary sibling directory which is renamed over `dir`
/// only once all writes succeeded. An existing checkpoint at `dir` is
/// replaced.
pub fn save_checkpoint(
    dir: &Path,
    config: &CampaignConfig,
    state: &SearchState,
    events: &[StepEvent],
    memory: Option<&MemoryStore>,
    flow: Option<&FlowGraph>,
) -> Result<CheckpointManifest> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(parent) = parent {
        std::fs::create_dir_all(parent)?;
    }
    let stage = tempfile::Builder::new()
        .prefix(".checkpoint-stage-")
        .tempdir_in(parent.unwrap_or(Path::new(".")))?;

    std::fs::write(
        stage.path().join(CONFIG_FILE),
        serde_json::to_string_pretty(config)?,
    )?;
    std::fs::write(
        stage.path().join(STATE_FILE),
        serde_json::to_string_pretty(state)?,
    )?;
    jsonl::write_jsonl(&stage.path().join(EVENTS_FILE), events)?;
    if let Some(memory) = memory {
        let memory_dir = stage.path().join(MEMORY_DIR);
        std::fs::create_dir(&memory_dir)?;
        memory.save_dir(&memory_dir)?;
    }
    if let Some(flow) = flow {
        std::fs::write(
            stage.path().join(FLOW_FILE),
            serde_json::to_string_pretty(flow)?,
        )?;
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_FORMAT_VERSION,
        event_log_offset: events.len() as u64,
        has_memory: memory.is_some(),
        has_flow: flow.is_some(),
    };
    std::fs::write(
        stage.path().join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    let staged: PathBuf = stage.keep();
    std::fs::rename(&staged, dir)?;
    Ok(manifest)
}

/// Loads a checkpoint directory, naming the failing section on error. A
/// manifest written by a newer build is refused before anything else is
/// touched.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest =
        jsonl::read_json(&dir.join(MANIFEST_FILE)).map_err(|e| e.in_section("manifest"))?;
    if manifest.version > CHECKPOINT_FORMAT_VERSION {
        return Err(Error::config(format!(
            "checkpoint format version {} is newer than this build understands (version {})",
            manifest.version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let config: CampaignConfig =
        jsonl::read_json(&dir.join(CONFIG_FILE)).map_err(|e| e.in_section("config"))?;
    config.validate()?;
    let state: SearchState = jsonl::read_json(&dir.join(STATE_FILE))
        .map_err(|e| e.in_section("search_state"))?;
    let events: Vec<StepEvent> =
        jsonl::read_jsonl(&dir.join(EVENTS_FILE)).map_err(|e| e.in_section("events"))?;
    if events.len() as u64 != manifest.event_log_offset {
        return Err(Error::invalid(format!(
            "event log holds {} lines but the manifest recorded {}",
            events.len(),
            manifest.event_log_offset
        )));
    }
    let memory = if manifest.has_memory {
        Some(MemoryStore::load_dir(&dir.join(MEMORY_DIR))?)
    } else {
        None
    };
    let flow = if manifest.has_flow {
        Some(jsonl::read_json(&dir.join(FLOW_FILE)).map_err(|e| e.in_section("flow"))?)
    } else {
        None
    };
    Ok(Checkpoint {
        manifest,
        config,
        state,
        events,
        memory,
        flow,
    })
}

// ---------------------------------------------------------------------------
// Remote model adapter

/// How to reach a chat-completion-style model endpoint. `auth_env` names
/// the environment variable holding the bearer token — the token itself
/// is looked up per request and never stored, so serializing the spec (in
/// a config file or a checkpoint) cannot leak it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteModelSpec {
    pub endpoint: String,
    pub model: String,
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    DEFAULT_REQUEST_TIMEOUT_SECS
}
fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_backoff_ms() -> u64 {
    DEFAULT_BACKOFF_MS
}

impl RemoteModelSpec {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        auth_env: impl Into<String>,
    ) -> Self {
        RemoteModelSpec {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_env: auth_env.into(),
            timeout_secs: DEFAULT_REQUEST_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff_ms: DEFAULT_BACKOFF_MS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::config("remote endpoint URL must be non-empty"));
        }
        if self.model.trim().is_empty() {
            return Err(Error::config("remote model name must be non-empty"));
        }
        if self.auth_env.trim().is_empty() {
            return Err(Error::config(
                "auth_env must name the environment variable holding the token",
            ));
        }
        if self.timeout_secs == 0 {
            return Err(Error::config("timeout_secs must be at least 1"));
        }
        Ok(())
    }
}

/// The versioned prompt envelope sent as the user message. Alternate
/// backends can be swapped in as long as they accept this shape.
fn prompt_envelope(context: &GenerationContext) -> serde_json::Value {
    serde_json::json!({
        "version": 1,
        "operator": context.operator_tag,
        "objective": context.task_objective,
        "parent": {
            "payload": context.parent_solution.payload,
            "score": context.parent_evaluation.score,
        },
        "trajectory": context
            .trajectory
            .iter()
            .map(|step| {
                serde_json::json!({
                    "payload": step.solution.payload,
                    "score": step.score,
                    "judgment": step.judgment,
                })
            })
            .collect::<Vec<_>>(),
        "references": context
            .references
            .iter()
            .map(|r| serde_json::json!({ "payload": r.solution.payload, "score": r.score }))
            .collect::<Vec<_>>(),
        "hints": context.memory_hints,
    })
}

fn transient(status: u16) -> bool {
    status == 429 || status >= 500
}

/// Extracts the proposal from a chat-completion-style response body:
/// the first choice's message content, as text.
fn parse_completion(body: &str) -> Result<Solution> {
    let malformed = || {
        log::warn!("malformed completion response: {body}");
        Error::GenerationFailed("model response held no text block".into())
    };
    let value: serde_json::Value = serde_json::from_str(body).map_err(|_| malformed())?;
    let content = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(malformed)?;
    Solution::new(content, SolutionKind::Text)
}

/// Posts the context to the endpoint and returns the proposed solution.
/// Transport errors and 429/5xx statuses are retried with exponential
/// backoff up to `spec.max_retries`; other statuses and malformed bodies
/// fail immediately as generation failures. A missing token variable is a
/// configuration error, surfaced before any request is made.
pub fn remote_generate(spec: &RemoteModelSpec, context: &GenerationContext) -> Result<Solution> {
    spec.validate()?;
    let token = std::env::var(&spec.auth_env).map_err(|_| {
        Error::config(format!(
            "environment variable {} (auth token) is not set",
            spec.auth_env
        ))
    })?;
    let request = serde_json::json!({
        "model": spec.model,
        "messages": [{ "role": "user", "content": prompt_envelope(context).to_string() }],
    });
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(spec.timeout_secs))
        .build();

    let mut attempt: u32 = 0;
    loop {
        let outcome = agent
            .post(&spec.endpoint)
            .set("authorization", &format!("Bearer {token}"))
            .set("content-type", "application/json")
            .send_json(request.clone());
        let error = match outcome {
            Ok(response) => {
                let body = response.into_string()?;
                return parse_completion(&body);
            }
            Err(ureq::Error::Status(status, response)) if !transient(status) => {
                let body = response.into_string().unwrap_or_default();
                log::warn!("model endpoint rejected the request ({status}): {body}");
                return Err(Error::GenerationFailed(format!(
                    "endpoint answered status {status}"
                )));
            }
            Err(error) => error,
        };
        if attempt >= spec.max_retries {
            return Err(Error::GenerationFailed(format!(
                "retries exhausted after {} attempts: {error}",
                attempt + 1
            )));
        }
        let delay = spec.backoff_ms.saturating_mul(1 << attempt.min(16));
        std::thread::sleep(Duration::from_millis(delay));
        attempt += 1;
    }
}

/// [`ProposalGenerator`] backed by a remote model. The engine's RNG is
/// untouched — determinism of a remote campaign is the endpoint's
/// business, not ours.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    pub spec: RemoteModelSpec,
}

impl RemoteGenerator {
    pub fn new(spec: RemoteModelSpec) -> Self {
        RemoteGenerator { spec }
    }
}

impl ProposalGenerator for RemoteGenerator {
    fn generate(&self, context: &GenerationContext, _rng: &mut Rng) -> Result<Solution> {
        remote_generate(&self.spec, context)
    }
}
