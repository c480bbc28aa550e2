//! Evaluation environments: the pluggable objective functions campaigns
//! optimize against.
//!
//! Two synthetic environments make the engine testable and benchmarkable
//! without any external dependency, and [`CommandEnv`] bridges to real
//! workloads by scoring solutions through an external program. Synthetic
//! environments are pure functions; identical inputs always produce
//! identical [`Evaluation`]s.

use std::collections::BTreeMap;
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Evaluation, Solution, SolutionKind};

/// An objective function over candidate solutions. `evaluate` must never
/// mutate the solution; synthetic implementations must be deterministic.
pub trait Environment: Send + Sync {
    /// The solution kind this environment can score.
    fn kind(&self) -> SolutionKind;

    /// The starting solution a campaign's root is seeded with.
    fn baseline(&self) -> Solution;

    fn evaluate(&self, solution: &Solution) -> Result<Evaluation>;
}

fn require_bitstring(solution: &Solution, length: usize) -> Result<&[u8]> {
    if solution.kind != SolutionKind::Bitstring {
        return Err(Error::invalid(format!(
            "environment scores bitstrings, got {:?}",
            solution.kind
        )));
    }
    let bytes = solution.payload.as_bytes();
    if bytes.len() != length {
        return Err(Error::invalid(format!(
            "solution length {} does not match environment length {length}",
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn validate_target(target: &str) -> Result<()> {
    if target.is_empty() {
        return Err(Error::config("target bitstring must be non-empty"));
    }
    if target.bytes().any(|b| b != b'0' && b != b'1') {
        return Err(Error::config("target must contain only '0' and '1'"));
    }
    Ok(())
}

/// Per-position match fraction against a hidden target bitstring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitstringEnv {
    target: String,
}

impl BitstringEnv {
    pub fn new(target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        validate_target(&target)?;
        Ok(BitstringEnv { target })
    }

    pub fn length(&self) -> usize {
        self.target.len()
    }
}

impl Environment for BitstringEnv {
    fn kind(&self) -> SolutionKind {
        SolutionKind::Bitstring
    }

    fn baseline(&self) -> Solution {
        Solution::bitstring("0".repeat(self.length())).expect("length is positive")
    }

    fn evaluate(&self, solution: &Solution) -> Result<Evaluation> {
        let bytes = require_bitstring(solution, self.length())?;
        let matches = bytes
            .iter()
            .zip(self.target.as_bytes())
            .filter(|(a, b)| a == b)
            .count();
        let mut detail = BTreeMap::new();
        detail.insert("matches".to_string(), matches as f64);
        Evaluation::new(matches as f64 / self.length() as f64, detail, 0.0)
    }
}

/// All-or-nothing segment credit against a hidden target: the target splits
/// into equal segments and a segment only scores once every one of its bits
/// is correct.
///
/// The plateau this creates is deliberate. Single-bit search inside one
/// branch stalls at partially-correct segments (no gradient inside a wrong
/// segment), while different branches tend to complete *different* segments
/// — so composing complementary branches is the efficient route to a
/// perfect score. This is the desk-scale probe for multi-branch
/// aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCompositionEnv {
    target: String,
    segments: usize,
}

impl SegmentCompositionEnv {
    pub fn new(target: impl Into<String>, segments: usize) -> Result<Self> {
        let target = target.into();
        validate_target(&target)?;
        if segments < 2 {
            return Err(Error::config("segment count must be at least 2"));
        }
        if target.len() % segments != 0 {
            return Err(Error::config(format!(
                "segment count {segments} must divide target length {}",
                target.len()
            )));
        }
        Ok(SegmentCompositionEnv { target, segments })
    }

    pub fn length(&self) -> usize {
        self.target.len()
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    fn segment_width(&self) -> usize {
        self.target.len() / self.segments
    }
}

impl Environment for SegmentCompositionEnv {
    fn kind(&self) -> SolutionKind {
        SolutionKind::Bitstring
    }

    fn baseline(&self) -> Solution {
        Solution::bitstring("0".repeat(self.length())).expect("length is positive")
    }

    fn evaluate(&self, solution: &Solution) -> Result<Evaluation> {
        let bytes = require_bitstring(solution, self.length())?;
        let width = self.segment_width();
        let mut detail = BTreeMap::new();
        let mut correct = 0usize;
        for s in 0..self.segments {
            let range = s * width..(s + 1) * width;
            let hit = bytes[range.clone()] == self.target.as_bytes()[range];
            if hit {
                correct += 1;
            }
            detail.insert(format!("segment_{s}"), if hit { 1.0 } else { 0.0 });
        }
        Evaluation::new(correct as f64 / self.segments as f64, detail, 0.0)
    }
}

/// Scores solutions by running an external program.
///
/// The solution payload is written to a file inside a fresh working
/// directory, every `{solution}` placeholder in the argv template is
/// replaced with that file's path, and the program must print a single JSON
/// object to stdout and exit 0. The score is read from `score_path`
/// (dot-separated keys into the JSON object). No sandboxing is applied —
/// the command runs with the caller's privileges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEnv {
    /// Argv template; element 0 is the program.
    pub command: Vec<String>,
    pub timeout_secs: f64,
    /// Dot-separated path to the score in the program's JSON output.
    pub score_path: String,
    /// Baseline solution for seeding a campaign root.
    pub baseline: Solution,
}

/// How often a running child is polled for completion.
const CHILD_POLL_INTERVAL: Duration = Duration::from_millis(10);

impl CommandEnv {
    pub fn new(
        command: Vec<String>,
        timeout_secs: f64,
        score_path: impl Into<String>,
        baseline: Solution,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::config("command template must not be empty"));
        }
        if !(timeout_secs > 0.0) || !timeout_secs.is_finite() {
            return Err(Error::config("timeout must be a positive number of seconds"));
        }
        let score_path = score_path.into();
        if score_path.is_empty() {
            return Err(Error::config("score path must not be empty"));
        }
        Ok(CommandEnv {
            command,
            timeout_secs,
            score_path,
            baseline,
        })
    }

    fn extract_score(&self, stdout: &str) -> Result<f64> {
        let parse_err = |reason: String| Error::EvaluationFailed {
            reason,
            timeout: false,
            parse_failure: true,
        };
        let value: serde_json::Value = serde_json::from_str(stdout.trim())
            .map_err(|e| parse_err(format!("output is not a JSON object: {e}")))?;
        let mut cursor = &value;
        for key in self.score_path.split('.') {
            cursor = cursor
                .get(key)
                .ok_or_else(|| parse_err(format!("missing key '{key}' on score path")))?;
        }
        let score = cursor
            .as_f64()
            .ok_or_else(|| parse_err(format!("score at '{}' is not a number", self.score_path)))?;
        if !score.is_finite() {
            return Err(parse_err(format!("score {score} is not finite")));
        }
        Ok(score)
    }
}

impl Environment for CommandEnv {
    fn kind(&self) -> SolutionKind {
        self.baseline.kind
    }

    fn baseline(&self) -> Solution {
        self.baseline.clone()
    }

    fn evaluate(&self, solution: &Solution) -> Result<Evaluation> {
        let start = Instant::now();
        let workdir = tempfile::tempdir()?;
        let solution_path = workdir.path().join("solution.txt");
        std::fs::write(&solution_path, &solution.payload)?;
        let path_str = solution_path.to_string_lossy();

        let argv: Vec<String> = self
            .command
            .iter()
            .map(|a| a.replace("{solution}", &path_str))
            .collect();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(workdir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::eval_failed(format!("failed to spawn '{}': {e}", argv[0])))?;

        // Drain stdout on a separate thread so a chatty child can never
        // deadlock against a full pipe while we wait for it.
        let mut stdout_pipe = child.stdout.take().expect("stdout was piped");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout_pipe.read_to_string(&mut buf);
            buf
        });

        let deadline = start + Duration::from_secs_f64(self.timeout_secs);
        let status = loop {
            match child.try_wait()? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    child.kill()?;
                    child.wait()?;
                    // Deliberately do not join the reader: a grandchild that
                    // inherited the pipe could hold it open past the kill,
                    // and the detached thread exits when the pipe closes.
                    drop(reader);
                    return Err(Error::EvaluationFailed {
                        reason: format!("timed out after {}s", self.timeout_secs),
                        timeout: true,
                        parse_failure: false,
                    });
                }
                None => std::thread::sleep(CHILD_POLL_INTERVAL),
            }
        };
        let stdout = reader.join().unwrap_or_default();
        let wall_time = start.elapsed().as_secs_f64();

        if !status.success() {
            return Err(Error::eval_failed(format!(
                "command exited with {status}"
            )));
        }
        let score = self.extract_score(&stdout)?;
        let mut detail = BTreeMap::new();
        detail.insert("exit_code".to_string(), 0.0);
        Evaluation::new(score, detail, wall_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Solution {
        Solution::bitstring(s).unwrap()
    }

    #[test]
    fn bitstring_scores_match_fraction() {
        let env = BitstringEnv::new("1010").unwrap();
        assert_eq!(env.evaluate(&bits("1010")).unwrap().score, 1.0);
        assert_eq!(env.evaluate(&bits("0101")).unwrap().score, 0.0);
        assert_eq!(env.evaluate(&bits("1000")).unwrap().score, 0.75);
    }

    #[test]
    fn bitstring_env_validates_inputs() {
        assert!(BitstringEnv::new("").is_err());
        assert!(BitstringEnv::new("10a0").is_err());
        let env = BitstringEnv::new("1010").unwrap();
        assert!(env.evaluate(&bits("10")).is_err());
        assert!(env
            .evaluate(&Solution::new("1010", SolutionKind::Text).unwrap())
            .is_err());
    }

    #[test]
    fn bitstring_env_is_deterministic() {
        let env = BitstringEnv::new("110010").unwrap();
        let s = bits("100110");
        assert_eq!(env.evaluate(&s).unwrap(), env.evaluate(&s).unwrap());
    }

    #[test]
    fn baseline_matches_environment_shape() {
        let env = BitstringEnv::new("1010").unwrap();
        let baseline = env.baseline();
        assert_eq!(baseline.payload, "0000");
        env.evaluate(&baseline).unwrap();
    }

    #[test]
    fn segment_credit_is_all_or_nothing() {
        let env = SegmentCompositionEnv::new("1111", 2).unwrap();
        assert_eq!(env.evaluate(&bits("1111")).unwrap().score, 1.0);
        assert_eq!(env.evaluate(&bits("1100")).unwrap().score, 0.5);

        // First segment correct plus one stray correct bit elsewhere still
        // scores a single segment.
        let env4 = SegmentCompositionEnv::new("11111111", 4).unwrap();
        let e = env4.evaluate(&bits("11001000")).unwrap();
        assert_eq!(e.score, 0.25);
        assert_eq!(e.detail["segment_0"], 1.0);
        assert_eq!(e.detail["segment_1"], 0.0);
    }

    #[test]
    fn segment_env_validates_configuration() {
        assert!(SegmentCompositionEnv::new("1111", 1).is_err());
        assert!(SegmentCompositionEnv::new("11111", 2).is_err());
        assert!(SegmentCompositionEnv::new("", 2).is_err());
    }

    #[test]
    fn complementary_branches_can_compose_perfection() {
        // Branch A solved segments 0 and 1; branch B solved 2 and 3. A
        // per-position crossover choosing A for the first half and B for
        // the second reaches the full target.
        let target = "10110100";
        let env = SegmentCompositionEnv::new(target, 4).unwrap();
        let a = "10110011"; // segments 0,1 correct
        let b = "01000100"; // segments 2,3 correct
        assert_eq!(env.evaluate(&bits(a)).unwrap().score, 0.5);
        assert_eq!(env.evaluate(&bits(b)).unwrap().score, 0.5);
        let composable = target
            .bytes()
            .enumerate()
            .all(|(i, t)| a.as_bytes()[i] == t || b.as_bytes()[i] == t);
        assert!(composable);
    }

    #[test]
    fn command_env_reads_score_from_stdout() {
        let env = CommandEnv::new(
            vec![
                "/bin/sh".into(),
                "-c".into(),
                r#"cat {solution} > /dev/null && echo '{"score": 0.5}'"#.into(),
            ],
            5.0,
            "score",
            bits("0000"),
        )
        .unwrap();
        let e = env.evaluate(&bits("1010")).unwrap();
        assert_eq!(e.score, 0.5);
        assert!(e.wall_time > 0.0);
    }

    #[test]
    fn command_env_follows_dotted_score_paths() {
        let env = CommandEnv::new(
            vec![
                "/bin/sh".into(),
                "-c".into(),
                r#"echo '{"metrics": {"accuracy": 0.7}}'"#.into(),
            ],
            5.0,
            "metrics.accuracy",
            bits("0000"),
        )
        .unwrap();
        assert_eq!(env.evaluate(&bits("1010")).unwrap().score, 0.7);
    }

    #[test]
    fn command_env_flags_failures_distinctly() {
        let fail = CommandEnv::new(
            vec!["/bin/sh".into(), "-c".into(), "exit 1".into()],
            5.0,
            "score",
            bits("0000"),
        )
        .unwrap();
        match fail.evaluate(&bits("0000")) {
            Err(Error::EvaluationFailed { timeout, parse_failure, .. }) => {
                assert!(!timeout);
                assert!(!parse_failure);
            }
            other => panic!("expected evaluation failure, got {other:?}"),
        }

        let garbled = CommandEnv::new(
            vec!["/bin/sh".into(), "-c".into(), "echo not-json".into()],
            5.0,
            "score",
            bits("0000"),
        )
        .unwrap();
        match garbled.evaluate(&bits("0000")) {
            Err(Error::EvaluationFailed { parse_failure, .. }) => assert!(parse_failure),
            other => panic!("expected parse failure, got {other:?}"),
        }
    }

    #[test]
    fn command_env_kills_on_timeout() {
        let env = CommandEnv::new(
            vec!["/bin/sh".into(), "-c".into(), "sleep 30".into()],
            0.3,
            "score",
            bits("0000"),
        )
        .unwrap();
        let start = Instant::now();
        match env.evaluate(&bits("0000")) {
            Err(Error::EvaluationFailed { timeout, .. }) => assert!(timeout),
            other => panic!("expected timeout failure, got {other:?}"),
        }
        // The child must not outlive the timeout by more than scheduling
        // slack; far below the 30s sleep proves the kill landed.
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn command_env_validates_configuration() {
        assert!(CommandEnv::new(vec![], 1.0, "score", bits("0")).is_err());
        assert!(CommandEnv::new(vec!["true".into()], 0.0, "score", bits("0")).is_err());
        assert!(CommandEnv::new(vec!["true".into()], 1.0, "", bits("0")).is_err());
    }
}
