//! Prompt rendering: row serialization as "name: value" pairs and the
//! few-shot / test-example template. Rendering is pure and byte-stable;
//! golden fixtures pin the exact wording.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{Row, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("empty column sequence")]
    EmptyColumns,
    #[error("DI target column {0} must not appear in the test row serialization")]
    TargetLeak(String),
    #[error("task has no target column")]
    MissingTarget,
}

/// Fixed template constants. Held constant across all experimental
/// conditions so only column order and few-shot choice vary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub di_preamble: String,
    pub ed_preamble: String,
    pub em_preamble: String,
    pub fewshot_header: String,
    pub test_header: String,
    pub pair_separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            di_preamble:
                "Complete the missing value of the target column using the other attributes of the row."
                    .into(),
            ed_preamble: "Decide whether the given cell value is erroneous.".into(),
            em_preamble:
                "Decide whether the two entities described by the l_ and r_ attributes refer to the same real-world entity."
                    .into(),
            fewshot_header: "Example {n}: ".into(),
            test_header: "Test Example: ".into(),
            pair_separator: "; ".into(),
        }
    }
}

impl PromptTemplate {
    fn preamble(&self, kind: TaskKind) -> &str {
        match kind {
            TaskKind::DI => &self.di_preamble,
            TaskKind::ED => &self.ed_preamble,
            TaskKind::EM => &self.em_preamble,
        }
    }

    fn question(&self, kind: TaskKind, target: Option<&str>, test_value: Option<&str>) -> String {
        match kind {
            TaskKind::DI => format!("What is the value of {}?", target.unwrap_or("?")),
            TaskKind::ED => format!(
                "Is the value \"{}\" in column \"{}\" erroneous? Answer yes or no.",
                test_value.unwrap_or(""),
                target.unwrap_or("?")
            ),
            TaskKind::EM => "Do the two entities match? Answer yes or no.".into(),
        }
    }
}

/// A fully rendered prompt plus the metadata needed to score it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub column_order: Vec<String>,
    pub fewshot_ids: Vec<usize>,
    /// Gold answer text the output is scored against.
    pub expected: String,
    /// Row index of the test example in its source table, when known.
    /// The synthetic oracle uses it to look up gold answers.
    pub test_row_id: Option<usize>,
}

impl RenderedPrompt {
    pub fn with_fewshot_ids(mut self, ids: Vec<usize>) -> Self {
        self.fewshot_ids = ids;
        self
    }

    pub fn with_test_row_id(mut self, id: usize) -> Self {
        self.test_row_id = Some(id);
        self
    }
}

/// Joins "name: value" pairs with "; " in the given column order, on one
/// line. Empty cells render as "name: " with an empty value.
pub fn serialize_row(row: &Row, columns: &[String]) -> Result<String, PromptError> {
    let mut pairs = Vec::with_capacity(columns.len());
    for c in columns {
        let value = row
            .get(c)
            .ok_or_else(|| PromptError::UnknownColumn(c.clone()))?;
        pairs.push(format!("{c}: {value}"));
    }
    Ok(pairs.join("; "))
}

/// Render the full prompt: preamble, numbered few-shot examples with their
/// gold answers inline, the test example, and the task question.
pub fn build_prompt(
    task: &TaskSpec,
    template: &PromptTemplate,
    test_row: &Row,
    columns: &[String],
    fewshots: &[(Row, String)],
) -> Result<RenderedPrompt, PromptError> {
    if columns.is_empty() {
        return Err(PromptError::EmptyColumns);
    }
    let target = task.target();
    if task.kind == TaskKind::DI {
        let target = target.ok_or(PromptError::MissingTarget)?;
        if columns.iter().any(|c| c == target) {
            return Err(PromptError::TargetLeak(target.to_string()));
        }
    }
    let mut lines = vec![template.preamble(task.kind).to_string()];
    for (n, (row, gold)) in fewshots.iter().enumerate() {
        let serialized = serialize_row(row, columns)?;
        let gold_pair = match task.kind {
            TaskKind::DI => format!(
                "{}: {gold}",
                target.ok_or(PromptError::MissingTarget)?
            ),
            TaskKind::ED | TaskKind::EM => format!("Answer: {gold}"),
        };
        let header = template
            .fewshot_header
            .replace("{n}", &(n + 1).to_string());
        lines.push(format!(
            "{header}{serialized}{}{gold_pair}",
            template.pair_separator
        ));
    }
    let test_serialized = serialize_row(test_row, columns)?;
    lines.push(format!("{}{test_serialized}", template.test_header));
    let test_value = target.map(|t| test_row.get(t).map(|v| v.as_str()).unwrap_or(""));
    lines.push(template.question(task.kind, target, test_value));
    Ok(RenderedPrompt {
        text: lines.join("\n"),
        column_order: columns.to_vec(),
        fewshot_ids: Vec::new(),
        expected: String::new(),
        test_row_id: None,
    })
}
