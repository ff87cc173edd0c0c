//! Metrics, the five experimental conditions, and the column-permutation
//! sensitivity sweep.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedder;
use crate::fewshot::{select_fewshot, FewshotError, FewshotMethod, FewshotQuery};
use crate::prompt::{build_prompt, PromptError, PromptTemplate};
use crate::rl::ColumnSequence;
use crate::tabular::{DatasetSplits, Row, Table, TaskKind, TaskSpec};
use crate::tasklm::{hex_sha256, matches, normalize, TaskLm, TaskLmError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty records")]
    EmptyRecords,
    #[error("prediction/gold length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty test split")]
    EmptyTestSplit,
    #[error("empty validation pool")]
    EmptyPool,
    #[error("{columns} columns is too many for an exhaustive sweep; pass a permutation limit")]
    SweepTooLarge { columns: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Fewshot(#[from] FewshotError),
    #[error(transparent)]
    TaskLm(#[from] TaskLmError),
}

/// The experimental conditions. MCS-* carry a manually supplied column
/// sequence; RLCS carries the sequence extracted from a trained policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Condition {
    /// All columns in dataset order, random few-shots.
    Baseline,
    /// Manual columns, random few-shots.
    McsRfs { columns: ColumnSequence },
    /// Manual columns, serialized-row (NL) similarity few-shots.
    McsNfs { columns: ColumnSequence },
    /// Manual columns, cell-level similarity few-shots.
    McsClfs { columns: ColumnSequence },
    /// RL-selected columns, cell-level similarity few-shots.
    RlcsClfs { columns: ColumnSequence },
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Baseline => "Baseline",
            Condition::McsRfs { .. } => "MCS-RFS",
            Condition::McsNfs { .. } => "MCS-NFS",
            Condition::McsClfs { .. } => "MCS-CLFS",
            Condition::RlcsClfs { .. } => "RLCS-CLFS",
        }
    }

    pub fn fewshot_method(&self) -> FewshotMethod {
        match self {
            Condition::Baseline | Condition::McsRfs { .. } => FewshotMethod::Random,
            Condition::McsNfs { .. } => FewshotMethod::Nl,
            Condition::McsClfs { .. } | Condition::RlcsClfs { .. } => FewshotMethod::Cl,
        }
    }

    /// Whether the condition reports mean +/- std over multiple seeds.
    pub fn multi_seed(&self) -> bool {
        matches!(self, Condition::Baseline | Condition::McsRfs { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowRecord {
    pub row: usize,
    pub prompt_sha256: String,
    pub output: String,
    pub expected: String,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RowRecord>,
    pub metric_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task: TaskKind,
    pub condition: String,
    pub column_order: ColumnSequence,
    pub metric_name: String,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub runs: Vec<SeedRun>,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Recompute the metric from the stored per-row records; must equal
    /// the stored value exactly.
    pub fn recompute(&self, task: &TaskSpec) -> Result<Vec<f64>, EvalError> {
        self.runs
            .iter()
            .map(|run| metric_for(task, &run.records))
            .collect()
    }
}

/// Fraction of matched records.
pub fn accuracy(records: &[RowRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    Ok(records.iter().filter(|r| r.matched).count() as f64 / records.len() as f64)
}

/// Unweighted mean of per-class F1 over the classes present in the gold
/// labels; classes absent from the golds are excluded from the average.
pub fn f1_macro(predictions: &[bool], golds: &[bool]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), golds.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut total = 0.0;
    let mut classes = 0u32;
    for class in [true, false] {
        if !golds.iter().any(|&g| g == class) {
            continue;
        }
        let tp = predictions
            .iter()
            .zip(golds)
            .filter(|(&p, &g)| p == class && g == class)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(golds)
            .filter(|(&p, &g)| p == class && g != class)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(golds)
            .filter(|(&p, &g)| p != class && g == class)
            .count() as f64;
        let f1 = if 2.0 * tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        total += f1;
        classes += 1;
    }
    Ok(total / classes as f64)
}

/// Task metric over per-row records: accuracy for DI, F1-macro for ED/EM
/// (binary labels recovered from the normalized outputs and golds).
pub fn metric_for(task: &TaskSpec, records: &[RowRecord]) -> Result<f64, EvalError> {
    match task.kind {
        TaskKind::DI => accuracy(records),
        TaskKind::ED | TaskKind::EM => {
            let preds: Vec<bool> = records
                .iter()
                .map(|r| normalize(&r.output) == "yes")
                .collect();
            let golds: Vec<bool> = records
                .iter()
                .map(|r| normalize(&r.expected) == "yes")
                .collect();
            f1_macro(&preds, &golds)
        }
    }
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::DI => "accuracy",
        TaskKind::ED | TaskKind::EM => "f1_macro",
    }
}

/// Shared inputs for condition evaluation and sweeps.
pub struct EvalContext<'a> {
    pub table: &'a Table,
    pub task: &'a TaskSpec,
    pub splits: &'a DatasetSplits,
    pub embedder: &'a dyn Embedder,
    pub tasklm: &'a TaskLm,
    pub template: &'a PromptTemplate,
    pub k_fewshot: usize,
    pub config_fingerprint: String,
}

impl<'a> EvalContext<'a> {
    /// Column sequence actually serialized for this task: the DI target is
    /// stripped so the gold never leaks into the prompt.
    fn prompt_columns(&self, columns: &[String]) -> Vec<String> {
        let target = if self.task.kind == TaskKind::DI {
            self.task.target()
        } else {
            None
        };
        columns
            .iter()
            .filter(|c| target != Some(c.as_str()))
            .cloned()
            .collect()
    }

    fn pool(&self) -> Vec<(usize, Row)> {
        self.splits
            .validation
            .iter()
            .map(|&i| (i, self.table.rows[i].clone()))
            .collect()
    }

    /// Evaluate one column order + few-shot method over the test split.
    pub fn score_rows(
        &self,
        columns: &[String],
        method: FewshotMethod,
        seed: u64,
    ) -> Result<Vec<RowRecord>, EvalError> {
        if self.splits.test.is_empty() {
            return Err(EvalError::EmptyTestSplit);
        }
        let pool = self.pool();
        if pool.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        let columns = self.prompt_columns(columns);
        let k = self.k_fewshot.min(pool.len());
        let mut records = Vec::with_capacity(self.splits.test.len());
        for &row_id in &self.splits.test {
            let query = FewshotQuery {
                test_row: self.table.rows[row_id].clone(),
                pool: pool.clone(),
                columns: columns.clone(),
                k,
                method,
                seed: seed.wrapping_add(row_id as u64),
                exclude: self.task.target().map(|s| s.to_string()),
            };
            let fewshots = select_fewshot(&query, self.embedder)?;
            let ids: Vec<usize> = fewshots.iter().map(|(i, _)| *i).collect();
            let shots: Vec<(Row, String)> = fewshots
                .into_iter()
                .map(|(i, row)| (row, self.task.gold_text(i)))
                .collect();
            let mut prompt = build_prompt(
                self.task,
                self.template,
                &self.table.rows[row_id],
                &columns,
                &shots,
            )?
            .with_fewshot_ids(ids)
            .with_test_row_id(row_id);
            prompt.expected = self.task.gold_text(row_id);
            let output = self.tasklm.complete(&prompt)?;
            records.push(RowRecord {
                row: row_id,
                prompt_sha256: hex_sha256(&prompt.text),
                output: output.clone(),
                expected: prompt.expected.clone(),
                matched: matches(&output, &prompt.expected),
            });
        }
        Ok(records)
    }

    /// Run one experimental condition. Multi-seed conditions (Baseline,
    /// MCS-RFS) run `n_seeds` seeded repetitions and report mean +/- std.
    pub fn run_condition(
        &self,
        condition: &Condition,
        seed: u64,
        n_seeds: usize,
    ) -> Result<EvalReport, EvalError> {
        let columns: Vec<String> = match condition {
            Condition::Baseline => self.table.columns.clone(),
            Condition::McsRfs { columns }
            | Condition::McsNfs { columns }
            | Condition::McsClfs { columns }
            | Condition::RlcsClfs { columns } => columns.clone(),
        };
        let seeds: Vec<u64> = if condition.multi_seed() {
            (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect()
        } else {
            vec![seed]
        };
        let mut runs = Vec::with_capacity(seeds.len());
        for s in seeds {
            let records = self.score_rows(&columns, condition.fewshot_method(), s)?;
            let metric_value = metric_for(self.task, &records)?;
            runs.push(SeedRun {
                seed: s,
                records,
                metric_value,
            });
        }
        let values: Vec<f64> = runs.iter().map(|r| r.metric_value).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64;
        Ok(EvalReport {
            dataset: self.table.name.clone(),
            task: self.task.kind,
            condition: condition.name().to_string(),
            column_order: self.prompt_columns(&columns),
            metric_name: metric_name(self.task.kind).to_string(),
            metric_mean: mean,
            metric_std: var.sqrt(),
            runs,
            config_fingerprint: self.config_fingerprint.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub columns: ColumnSequence,
    pub metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub entries: Vec<SweepEntry>,
    pub min: f64,
    pub max: f64,
    pub quartiles: [f64; 3],
}

fn quartiles(sorted: &[f64]) -> [f64; 3] {
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - pos.floor())
    };
    [q(0.25), q(0.5), q(0.75)]
}

/// Evaluate the task metric for permutations of the given column set.
/// Exhaustive up to 8 columns; larger sets require a seeded sample limit.
/// Subset mode also enumerates every non-empty subset of the set.
pub fn permutation_sweep(
    ctx: &EvalContext<'_>,
    columns: &[String],
    limit: Option<usize>,
    subset_mode: bool,
    method: FewshotMethod,
    seed: u64,
) -> Result<SweepSummary, EvalError> {
    let mut orderings: Vec<Vec<String>> = Vec::new();
    if columns.len() <= 8 {
        let sets: Vec<Vec<String>> = if subset_mode {
            (1..=columns.len())
                .flat_map(|size| {
                    columns
                        .iter()
                        .cloned()
                        .combinations(size)
                        .collect::<Vec<_>>()
                })
                .collect()
        } else {
            vec![columns.to_vec()]
        };
        for set in sets {
            let len = set.len();
            for perm in set.into_iter().permutations(len) {
                orderings.push(perm);
            }
        }
        if let Some(l) = limit {
            orderings.truncate(l);
        }
    } else {
        let l = limit.ok_or(EvalError::SweepTooLarge {
            columns: columns.len(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..l {
            let mut perm = columns.to_vec();
            perm.shuffle(&mut rng);
            orderings.push(perm);
        }
    }

    let mut entries = Vec::with_capacity(orderings.len());
    for ordering in orderings {
        let records = ctx.score_rows(&ordering, method, seed)?;
        entries.push(SweepEntry {
            columns: ordering,
            metric: metric_for(ctx.task, &records)?,
        });
    }
    let mut values: Vec<f64> = entries.iter().map(|e| e.metric).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SweepSummary {
        min: values[0],
        max: *values.last().unwrap(),
        quartiles: quartiles(&values),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(matched: bool) -> RowRecord {
        RowRecord {
            row: 0,
            prompt_sha256: String::new(),
            output: if matched { "x" } else { "y" }.into(),
            expected: "x".into(),
            matched,
        }
    }

    #[test]
    fn accuracy_basics() {
        let all: Vec<RowRecord> = (0..4).map(|_| record(true)).collect();
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let half: Vec<RowRecord> = (0..6).map(|i| record(i < 3)).collect();
        assert_eq!(accuracy(&half).unwrap(), 0.5);
        assert!(matches!(accuracy(&[]), Err(EvalError::EmptyRecords)));
    }

    #[test]
    fn f1_macro_hand_check() {
        // golds [1,1,0,0], preds [1,0,1,0]: per-class F1 (0.5, 0.5)
        let golds = vec![true, true, false, false];
        let preds = vec![true, false, true, false];
        assert_eq!(f1_macro(&preds, &golds).unwrap(), 0.5);
    }

    #[test]
    fn f1_macro_perfect_and_single_class() {
        let golds = vec![true, false, true];
        assert_eq!(f1_macro(&golds, &golds).unwrap(), 1.0);
        // only class "true" present in golds: macro reduces to its F1
        let all_true = vec![true, true];
        assert_eq!(f1_macro(&all_true, &all_true).unwrap(), 1.0);
    }

    #[test]
    fn f1_macro_length_mismatch() {
        assert!(matches!(
            f1_macro(&[true], &[true, false]),
            Err(EvalError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn f1_macro_in_unit_interval() {
        let golds = vec![true, false, false, true, true];
        let preds = vec![false, false, true, true, false];
        let f1 = f1_macro(&preds, &golds).unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn quartile_interpolation() {
        let q = quartiles(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(q, [1.0, 2.0, 3.0]);
    }
}
