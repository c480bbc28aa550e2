//! Engine-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad campaign or environment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown node {0}")]
    UnknownNode(String),

    /// An operator cannot run on the current graph; callers fall back to
    /// another operator rather than treating this as a failure.
    #[error("operator {0} is not applicable to the current graph")]
    NotApplicable(&'static str),

    /// An edge insertion would close a cycle; `path` walks the offending loop.
    #[error("edge would create a cycle through [{}]", path.join(" -> "))]
    Cycle { path: Vec<String> },

    /// Final synthesis cannot run because mandatory dependencies failed.
    #[error("synthesis blocked; failed dependencies: [{}]", failed.join(", "))]
    SynthesisBlocked { failed: Vec<String> },

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    /// An environment could not produce a score. Recorded against the node,
    /// not raised out of the search loop.
    #[error("evaluation failed: {reason}{}{}", if *timeout { " [timeout]" } else { "" }, if *parse_failure { " [parse]" } else { "" })]
    EvaluationFailed { reason: String, timeout: bool, parse_failure: bool },

    /// A checkpoint section failed to load; names the section so corrupt
    /// files are diagnosable.
    #[error("checkpoint section '{section}' failed: {source}")]
    Checkpoint {
        section: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("http error: {0}")]
    Http(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn eval_failed(reason: impl Into<String>) -> Self {
        Error::EvaluationFailed { reason: reason.into(), timeout: false, parse_failure: false }
    }

    pub fn in_section(self, section: impl Into<String>) -> Self {
        Error::Checkpoint { section: section.into(), source: Box::new(self) }
    }
}
