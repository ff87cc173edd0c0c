//! Run configuration: one JSON document wires the whole pipeline. A stable
//! fingerprint of the canonicalized config is embedded in every artifact a
//! run produces, which is how `evaluate` finds the checkpoint `train`
//! wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedderConfig;
use crate::eval::Condition;
use crate::rl::{ColumnSequence, TrainConfig};
use crate::tabular::{CorruptionReport, Gold, Table, TaskKind, TaskSpec};
use crate::tasklm::{hex_sha256, OracleSpec, TaskLmConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// DI/ED target column.
    pub target_column: Option<String>,
    /// EM: column of the dataset holding the yes/no match label.
    pub em_label_column: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_ratio: 0.7,
            validation_ratio: 0.15,
            test_ratio: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub column: String,
    pub semantic_rate: f64,
    pub syntactic_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            column: String::new(),
            semantic_rate: 0.25,
            syntactic_rate: 0.25,
            seed: 0,
        }
    }
}

/// Synthetic-oracle behavior, used when the Task-LM backend is `oracle`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub informative_columns: Vec<String>,
    pub order_sensitive: bool,
    pub p_correct_satisfied: f64,
    pub p_correct_otherwise: f64,
    pub fewshot_overlap_column: Option<String>,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            informative_columns: Vec::new(),
            order_sensitive: true,
            p_correct_satisfied: 1.0,
            p_correct_otherwise: 0.0,
            fewshot_overlap_column: None,
            seed: 0,
        }
    }
}

pub const CONDITION_NAMES: &[&str] =
    &["Baseline", "MCS-RFS", "MCS-NFS", "MCS-CLFS", "RLCS-CLFS"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionConfig>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub tasklm: TaskLmConfig,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub conditions: Vec<String>,
    /// Manual column sequence for the MCS-* conditions and sweeps.
    #[serde(default)]
    pub manual_columns: ColumnSequence,
    #[serde(default = "default_k_fewshot")]
    pub k_fewshot: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_k_fewshot() -> usize {
    3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let config: RunConfig = serde_json::from_str(&text)?;
        Ok(config)
    }

    /// Canonical JSON: serde_json's map is sorted, so value round-tripping
    /// yields a stable byte sequence.
    pub fn canonical_json(&self) -> Result<String, ConfigError> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// Stable hash of the canonicalized config.
    pub fn fingerprint(&self) -> Result<String, ConfigError> {
        Ok(hex_sha256(&self.canonical_json()?))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dataset.name.is_empty() {
            return Err(invalid("dataset.name", "must be non-empty"));
        }
        match self.task.kind {
            TaskKind::DI | TaskKind::ED => {
                if self.task.target_column.is_none() {
                    return Err(invalid("task.target_column", "required for DI and ED"));
                }
            }
            TaskKind::EM => {
                if self.task.em_label_column.is_none() {
                    return Err(invalid("task.em_label_column", "required for EM"));
                }
            }
        }
        let s = &self.split;
        if (s.train_ratio + s.validation_ratio + s.test_ratio - 1.0).abs() > 1e-9 {
            return Err(invalid("split", "ratios must sum to 1"));
        }
        for name in &self.conditions {
            if !CONDITION_NAMES.contains(&name.as_str()) {
                return Err(invalid(
                    "conditions",
                    format!("unknown condition {name:?}; expected one of {CONDITION_NAMES:?}"),
                ));
            }
        }
        if let Some(c) = &self.corruption {
            if c.semantic_rate + c.syntactic_rate > 1.0 {
                return Err(invalid("corruption", "rates must sum to at most 1"));
            }
        }
        if self.train.max_steps == 0 {
            return Err(invalid("train.max_steps", "must be at least 1"));
        }
        if self.train.alpha <= 0.0 {
            return Err(invalid("train.alpha", "must be positive"));
        }
        Ok(())
    }

    /// Resolve a condition name against this config's manual / RL columns.
    pub fn condition(
        &self,
        name: &str,
        rl_columns: Option<ColumnSequence>,
    ) -> Result<Condition, ConfigError> {
        let manual = || -> Result<ColumnSequence, ConfigError> {
            if self.manual_columns.is_empty() {
                Err(invalid("manual_columns", format!("required for {name}")))
            } else {
                Ok(self.manual_columns.clone())
            }
        };
        match name {
            "Baseline" => Ok(Condition::Baseline),
            "MCS-RFS" => Ok(Condition::McsRfs { columns: manual()? }),
            "MCS-NFS" => Ok(Condition::McsNfs { columns: manual()? }),
            "MCS-CLFS" => Ok(Condition::McsClfs { columns: manual()? }),
            "RLCS-CLFS" => match rl_columns {
                Some(columns) => Ok(Condition::RlcsClfs { columns }),
                None => Err(invalid(
                    "conditions",
                    "RLCS-CLFS needs a trained checkpoint (run `train` first)",
                )),
            },
            other => Err(invalid("conditions", format!("unknown condition {other:?}"))),
        }
    }

    /// Build the task spec with ground truth from the (possibly corrupted)
    /// table and the corruption report.
    pub fn task_spec(
        &self,
        table: &Table,
        report: Option<&CorruptionReport>,
    ) -> Result<TaskSpec, ConfigError> {
        let spec = match self.task.kind {
            TaskKind::DI => {
                let target = self
                    .task
                    .target_column
                    .as_ref()
                    .ok_or_else(|| invalid("task.target_column", "required for DI"))?;
                let gold = table
                    .rows
                    .iter()
                    .map(|r| r.get(target).cloned().unwrap_or_default())
                    .collect();
                TaskSpec {
                    kind: TaskKind::DI,
                    target_columns: vec![target.clone()],
                    gold: Gold::Values(gold),
                }
            }
            TaskKind::ED => {
                let target = self
                    .task
                    .target_column
                    .as_ref()
                    .ok_or_else(|| invalid("task.target_column", "required for ED"))?;
                let report = report.ok_or_else(|| {
                    invalid("corruption", "ED needs a corruption report for gold labels")
                })?;
                TaskSpec {
                    kind: TaskKind::ED,
                    target_columns: vec![target.clone()],
                    gold: Gold::Flags(report.ed_gold(table.rows.len(), target)),
                }
            }
            TaskKind::EM => {
                let label = self
                    .task
                    .em_label_column
                    .as_ref()
                    .ok_or_else(|| invalid("task.em_label_column", "required for EM"))?;
                let flags = table
                    .rows
                    .iter()
                    .map(|r| {
                        let v = r.get(label).map(|s| s.as_str()).unwrap_or("");
                        matches!(v, "yes" | "1" | "true")
                    })
                    .collect();
                TaskSpec {
                    kind: TaskKind::EM,
                    target_columns: vec![],
                    gold: Gold::Flags(flags),
                }
            }
        };
        Ok(spec)
    }

    /// Build the oracle spec: gold answers live in an extra column appended
    /// to a copy of the table.
    pub fn oracle_spec(&self, table: &Table, task: &TaskSpec) -> Result<OracleSpec, ConfigError> {
        let oracle = self
            .oracle
            .as_ref()
            .ok_or_else(|| invalid("oracle", "oracle backend needs an oracle section"))?;
        Ok(build_oracle_spec(table, task, oracle))
    }
}

pub const ORACLE_GOLD_COLUMN: &str = "__expected__";

/// Append a gold-answer column to a copy of the table and wire up the
/// oracle around it.
pub fn build_oracle_spec(table: &Table, task: &TaskSpec, oracle: &OracleConfig) -> OracleSpec {
    let mut gold_table = table.clone();
    gold_table.columns.push(ORACLE_GOLD_COLUMN.to_string());
    for (i, row) in gold_table.rows.iter_mut().enumerate() {
        row.insert(ORACLE_GOLD_COLUMN.to_string(), task.gold_text(i));
    }
    OracleSpec {
        gold_table,
        gold_column: ORACLE_GOLD_COLUMN.to_string(),
        informative_columns: oracle.informative_columns.clone(),
        order_sensitive: oracle.order_sensitive,
        p_correct_satisfied: oracle.p_correct_satisfied,
        p_correct_otherwise: oracle.p_correct_otherwise,
        fewshot_overlap_column: oracle.fewshot_overlap_column.clone(),
        seed: oracle.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> RunConfig {
        RunConfig {
            dataset: DatasetConfig {
                path: PathBuf::from("data.csv"),
                name: "toy".into(),
                description: "a toy dataset".into(),
            },
            task: TaskConfig {
                kind: TaskKind::DI,
                target_column: Some("city".into()),
                em_label_column: None,
            },
            split: SplitConfig::default(),
            corruption: None,
            embedder: EmbedderConfig::default(),
            tasklm: TaskLmConfig::default(),
            oracle: None,
            train: TrainConfig::default(),
            conditions: vec!["Baseline".into()],
            manual_columns: vec![],
            k_fewshot: 3,
            output_dir: PathBuf::from("out"),
        }
    }

    #[test]
    fn canonical_round_trip_is_fixed_point() {
        let config = minimal_config();
        let canonical = config.canonical_json().unwrap();
        let reparsed: RunConfig = serde_json::from_str(&canonical).unwrap();
        assert_eq!(reparsed.canonical_json().unwrap(), canonical);
        assert_eq!(reparsed.fingerprint().unwrap(), config.fingerprint().unwrap());
    }

    #[test]
    fn fingerprint_changes_with_config() {
        let a = minimal_config();
        let mut b = minimal_config();
        b.k_fewshot = 5;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }

    #[test]
    fn unknown_condition_named_in_error() {
        let mut config = minimal_config();
        config.conditions = vec!["RLCS-TYPO".into()];
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("conditions"));
        assert!(err.to_string().contains("RLCS-TYPO"));
    }

    #[test]
    fn di_needs_target() {
        let mut config = minimal_config();
        config.task.target_column = None;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("task.target_column"));
    }

    #[test]
    fn split_ratio_default_sums_to_one() {
        let s = SplitConfig::default();
        assert!((s.train_ratio + s.validation_ratio + s.test_ratio - 1.0).abs() < 1e-12);
        assert_eq!(s.train_ratio, 0.7);
    }
}
