//! The Task-LM boundary: a remote completion client for real models and a
//! deterministic synthetic oracle for desk-scale verification.
//!
//! The oracle reads the column names serialized in the prompt's test
//! example and answers correctly when its "informative" columns are all
//! present (and, if order-sensitive, in the specified relative order).
//! All of its randomness comes from a seeded hash of the prompt bytes, so
//! replays are identical. This makes column-order sensitivity a
//! constructible, testable phenomenon.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::RenderedPrompt;
use crate::tabular::Table;

#[derive(Debug, Error)]
pub enum TaskLmError {
    #[error("prompt length {len} exceeds max_prompt_chars {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error("completion request failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("oracle cannot identify the test row (no test_row_id on the prompt)")]
    UnidentifiableTestRow,
    #[error("oracle backend selected but no oracle spec configured")]
    MissingOracle,
    #[error("transcript write failed: {0}")]
    Transcript(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLmBackend {
    Remote,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskLmConfig {
    pub backend: TaskLmBackend,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
    pub max_prompt_chars: usize,
}

impl Default for TaskLmConfig {
    fn default() -> Self {
        TaskLmConfig {
            backend: TaskLmBackend::Oracle,
            endpoint: None,
            timeout_secs: 60,
            retries: 3,
            max_in_flight: 4,
            max_prompt_chars: 32_768,
        }
    }
}

/// Ground truth and behavior of the synthetic oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpec {
    pub gold_table: Table,
    /// Column of `gold_table` holding the expected answer per row.
    pub gold_column: String,
    /// Columns that must be serialized in the test example for the oracle
    /// to answer correctly.
    pub informative_columns: Vec<String>,
    /// When true, the informative columns must also appear in the given
    /// relative order.
    pub order_sensitive: bool,
    pub p_correct_satisfied: f64,
    pub p_correct_otherwise: f64,
    /// Few-shot sensitivity knob: when set, a correct answer additionally
    /// requires some few-shot example to share this column's value with
    /// the test row.
    pub fewshot_overlap_column: Option<String>,
    pub seed: u64,
}

impl OracleSpec {
    pub fn new(gold_table: Table, gold_column: &str, informative: &[&str]) -> Self {
        OracleSpec {
            gold_table,
            gold_column: gold_column.to_string(),
            informative_columns: informative.iter().map(|s| s.to_string()).collect(),
            order_sensitive: true,
            p_correct_satisfied: 1.0,
            p_correct_otherwise: 0.0,
            fewshot_overlap_column: None,
            seed: 0,
        }
    }
}

/// Column names in serialization order for one "name: value; ..." line.
fn parse_pair_names(line: &str) -> Vec<String> {
    line.split("; ")
        .filter_map(|pair| pair.split_once(": ").map(|(name, _)| name.to_string()))
        .collect()
}

fn parse_pairs(line: &str) -> Vec<(String, String)> {
    line.split("; ")
        .filter_map(|pair| {
            pair.split_once(": ")
                .map(|(name, value)| (name.to_string(), value.to_string()))
        })
        .collect()
}

/// Uniform f64 in [0, 1) from a seeded hash of the prompt bytes.
fn seeded_uniform(prompt_text: &str, seed: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(prompt_text.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes) as f64 / (u64::MAX as f64 + 1.0)
}

/// Deterministic oracle completion. See module docs.
pub fn oracle_complete(
    prompt: &RenderedPrompt,
    spec: &OracleSpec,
) -> Result<String, TaskLmError> {
    let row_id = prompt
        .test_row_id
        .ok_or(TaskLmError::UnidentifiableTestRow)?;
    let test_line = prompt
        .text
        .lines()
        .find_map(|l| l.strip_prefix("Test Example: "))
        .unwrap_or("");
    let names = parse_pair_names(test_line);

    let mut satisfied = spec
        .informative_columns
        .iter()
        .all(|c| names.iter().any(|n| n == c));
    if satisfied && spec.order_sensitive {
        let positions: Vec<usize> = spec
            .informative_columns
            .iter()
            .map(|c| names.iter().position(|n| n == c).unwrap())
            .collect();
        satisfied = positions.windows(2).all(|w| w[0] < w[1]);
    }
    if satisfied {
        if let Some(col) = &spec.fewshot_overlap_column {
            let test_value = spec.gold_table.cell(row_id, col).to_string();
            satisfied = prompt.text.lines().any(|l| {
                l.starts_with("Example ")
                    && parse_pairs(l)
                        .iter()
                        .any(|(n, v)| n == col && *v == test_value)
            });
        }
    }

    let p = if satisfied {
        spec.p_correct_satisfied
    } else {
        spec.p_correct_otherwise
    };
    let gold = spec.gold_table.cell(row_id, &spec.gold_column).to_string();
    if seeded_uniform(&prompt.text, spec.seed) < p {
        return Ok(gold);
    }
    // Deterministic distractor: the gold answer of a different row.
    let n = spec.gold_table.rows.len();
    let start = (seeded_uniform(&prompt.text, spec.seed.wrapping_add(1)) * n as f64) as usize;
    for offset in 0..n {
        let candidate = spec
            .gold_table
            .cell((start + offset) % n, &spec.gold_column);
        if candidate != gold {
            return Ok(candidate.to_string());
        }
    }
    Ok("unknown".to_string())
}

/// Normalized exact match: lowercase, trim, strip one trailing sentence
/// punctuation mark, collapse internal whitespace runs.
pub fn matches(output: &str, expected: &str) -> bool {
    normalize(output) == normalize(expected)
}

pub fn normalize(text: &str) -> String {
    let trimmed = text.trim();
    let stripped = trimmed
        .strip_suffix(['.', '!', '?'])
        .unwrap_or(trimmed);
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

#[derive(Serialize)]
struct TranscriptEntry<'a> {
    prompt_sha256: String,
    backend: &'a str,
    latency_ms: u128,
    output: &'a str,
}

/// The Task-LM client. Either backend may be wrapped with a JSONL
/// transcript log for reproducibility audits.
pub struct TaskLm {
    config: TaskLmConfig,
    oracle: Option<OracleSpec>,
    client: Option<reqwest::blocking::Client>,
    endpoint: String,
    transcript: Option<Mutex<std::fs::File>>,
}

impl TaskLm {
    pub fn oracle(spec: OracleSpec) -> Self {
        TaskLm {
            config: TaskLmConfig::default(),
            oracle: Some(spec),
            client: None,
            endpoint: String::new(),
            transcript: None,
        }
    }

    pub fn remote(config: TaskLmConfig) -> Self {
        let endpoint = std::env::var("AUTOPROMPT_TASKLM_ENDPOINT")
            .ok()
            .or_else(|| config.endpoint.clone())
            .unwrap_or_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client");
        TaskLm {
            config,
            oracle: None,
            client: Some(client),
            endpoint,
            transcript: None,
        }
    }

    pub fn with_max_prompt_chars(mut self, max: usize) -> Self {
        self.config.max_prompt_chars = max;
        self
    }

    /// Log every completion as one JSON line to the given file.
    pub fn with_transcript(mut self, path: &std::path::Path) -> Result<Self, TaskLmError> {
        let file = std::fs::File::create(path).map_err(TaskLmError::Transcript)?;
        self.transcript = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn oracle_spec(&self) -> Option<&OracleSpec> {
        self.oracle.as_ref()
    }

    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<String, TaskLmError> {
        if prompt.text.len() > self.config.max_prompt_chars {
            return Err(TaskLmError::PromptTooLong {
                len: prompt.text.len(),
                max: self.config.max_prompt_chars,
            });
        }
        let started = Instant::now();
        let (backend, output) = match &self.oracle {
            Some(spec) => ("oracle", oracle_complete(prompt, spec)?),
            None => ("remote", self.remote_complete(prompt)?),
        };
        if let Some(log) = &self.transcript {
            let entry = TranscriptEntry {
                prompt_sha256: hex_sha256(&prompt.text),
                backend,
                latency_ms: started.elapsed().as_millis(),
                output: &output,
            };
            use std::io::Write;
            let mut file = log.lock().unwrap();
            writeln!(
                file,
                "{}",
                serde_json::to_string(&entry).expect("transcript entry serializes")
            )
            .map_err(TaskLmError::Transcript)?;
        }
        Ok(output)
    }

    fn remote_complete(&self, prompt: &RenderedPrompt) -> Result<String, TaskLmError> {
        let client = self.client.as_ref().ok_or(TaskLmError::MissingOracle)?;
        let mut last = String::new();
        let attempts = self.config.retries.max(1);
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            let result = client
                .post(&self.endpoint)
                .json(&CompletionRequest {
                    prompt: &prompt.text,
                })
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<CompletionResponse>());
            match result {
                // Default answer extraction: take the first line.
                Ok(resp) => {
                    return Ok(resp
                        .completion
                        .lines()
                        .next()
                        .unwrap_or("")
                        .to_string())
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(TaskLmError::Transport { attempts, last })
    }
}

pub fn hex_sha256(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
