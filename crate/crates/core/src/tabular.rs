//! CSV-backed tables, task definitions, splits, and seeded error injection.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single row: column name → cell text. Missing cells are empty strings,
/// never absent keys.
pub type Row = HashMap<String, String>;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate header name: {0}")]
    DuplicateHeader(String),
    #[error("empty header name at position {0}")]
    EmptyHeader(usize),
    #[error("ragged row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("table needs at least {needed} rows, has {has}")]
    TooFewRows { needed: usize, has: usize },
    #[error("split ratios must be positive and sum to 1 (got {0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
    #[error("corruption rates must satisfy semantic + syntactic <= 1")]
    BadRates,
    #[error("error injection needs a donor column besides {0}")]
    NoDonorColumn(String),
    #[error("no donor value differs from the original in any other column")]
    NoDonorValue,
}

/// In-memory tabular dataset with a short natural-language description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    /// The dataset blurb used as the RL agent's initial state.
    pub description: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: &str, description: &str, columns: Vec<String>, rows: Vec<Row>) -> Self {
        Table {
            name: name.to_string(),
            description: description.to_string(),
            columns,
            rows,
        }
    }

    pub fn cell(&self, row: usize, column: &str) -> &str {
        self.rows[row].get(column).map(|s| s.as_str()).unwrap_or("")
    }

    pub fn has_column(&self, column: &str) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    /// Serialize back to CSV with RFC-4180 quoting. Round-trips cell-exactly
    /// through `load_csv`.
    pub fn to_csv<W: Write>(&self, out: W) -> Result<(), TableError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(self.columns.iter().map(|c| row[c].as_str()))?;
        }
        writer.flush().map_err(|e| TableError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Load a CSV file whose first record is the header. Cells are kept verbatim
/// as text; no type inference.
pub fn load_csv(path: &Path, name: &str, description: &str) -> Result<Table, TableError> {
    let file = std::fs::File::open(path).map_err(|e| TableError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_csv_reader(file, name, description)
}

pub fn load_csv_reader<R: std::io::Read>(
    reader: R,
    name: &str,
    description: &str,
) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let mut seen = HashSet::new();
    for (i, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(TableError::EmptyHeader(i));
        }
        if !seen.insert(h.clone()) {
            return Err(TableError::DuplicateHeader(h.clone()));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(TableError::RaggedRow {
                row: i + 1,
                expected: headers.len(),
                got: record.len(),
            });
        }
        let row: Row = headers
            .iter()
            .cloned()
            .zip(record.iter().map(|c| c.to_string()))
            .collect();
        rows.push(row);
    }
    Ok(Table::new(name, description, headers, rows))
}

/// The three downstream tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Data imputation: predict a missing cell in the target column.
    DI,
    /// Error detection: classify whether a target cell is erroneous.
    ED,
    /// Entity matching: decide whether the `l_`/`r_` entities match.
    EM,
}

/// Per-row ground truth for a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Gold {
    /// DI: true cell text of the target column per row.
    Values(Vec<String>),
    /// ED/EM: binary flag per row (error present / entities match).
    Flags(Vec<bool>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// DI/ED target columns; empty for EM.
    pub target_columns: Vec<String>,
    pub gold: Gold,
}

impl TaskSpec {
    /// The single target column for DI/ED evaluation runs.
    pub fn target(&self) -> Option<&str> {
        self.target_columns.first().map(|s| s.as_str())
    }

    pub fn validate(&self, table: &Table) -> Result<(), TableError> {
        for c in &self.target_columns {
            if !table.has_column(c) {
                return Err(TableError::UnknownColumn(c.clone()));
            }
        }
        if self.kind == TaskKind::EM {
            let has_l = table.columns.iter().any(|c| c.starts_with("l_"));
            let has_r = table.columns.iter().any(|c| c.starts_with("r_"));
            if !has_l || !has_r {
                return Err(TableError::UnknownColumn(
                    "EM table needs l_ and r_ columns".into(),
                ));
            }
        }
        Ok(())
    }

    /// Gold answer text for one row, in the form the prompt expects.
    pub fn gold_text(&self, row: usize) -> String {
        match &self.gold {
            Gold::Values(v) => v[row].clone(),
            Gold::Flags(f) => if f[row] { "yes" } else { "no" }.to_string(),
        }
    }
}

/// Disjoint train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic seeded split. Validation and test sizes are floored; the
/// remainder goes to train.
pub fn make_splits(
    table: &Table,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplits, TableError> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(TableError::BadRatios(tr, va, te));
    }
    let n = table.rows.len();
    if n < 3 {
        return Err(TableError::TooFewRows { needed: 3, has: n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_val = (va * n as f64).floor() as usize;
    let n_test = (te * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(DatasetSplits {
        train: indices[..n_train].to_vec(),
        validation: indices[n_train..n_train + n_val].to_vec(),
        test: indices[n_train + n_val..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Semantic,
    Syntactic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionEntry {
    pub row: usize,
    pub column: String,
    pub kind: CorruptionKind,
    pub original: String,
    pub corrupted: String,
}

/// Record of every cell changed by `inject_errors`. ED gold labels are
/// derived from exactly these entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub entries: Vec<CorruptionEntry>,
    pub seed: u64,
}

impl CorruptionReport {
    /// Binary ED gold flags over all rows of the table: true where the
    /// given column's cell was corrupted.
    pub fn ed_gold(&self, n_rows: usize, column: &str) -> Vec<bool> {
        let mut flags = vec![false; n_rows];
        for e in &self.entries {
            if e.column == column {
                flags[e.row] = true;
            }
        }
        flags
    }

    /// One JSON object per line, the on-disk report format.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("corruption entry serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Inject semantic errors (out-of-domain replacement from another column)
/// and syntactic errors (1-3 random lowercase letters inserted) into one
/// column. Pure function of its inputs.
pub fn inject_errors(
    table: &Table,
    column: &str,
    semantic_rate: f64,
    syntactic_rate: f64,
    seed: u64,
) -> Result<(Table, CorruptionReport), TableError> {
    if !table.has_column(column) {
        return Err(TableError::UnknownColumn(column.to_string()));
    }
    if semantic_rate + syntactic_rate > 1.0 + 1e-12 || semantic_rate < 0.0 || syntactic_rate < 0.0
    {
        return Err(TableError::BadRates);
    }
    let donors: Vec<&String> = table.columns.iter().filter(|c| *c != column).collect();
    if donors.is_empty() && semantic_rate > 0.0 {
        return Err(TableError::NoDonorColumn(column.to_string()));
    }
    let n = table.rows.len();
    let n_semantic = round_half_up(semantic_rate * n as f64);
    let n_syntactic = round_half_up(syntactic_rate * n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let semantic_rows = &indices[..n_semantic];
    let syntactic_rows = &indices[n_semantic..n_semantic + n_syntactic];

    let mut out = table.clone();
    let mut entries = Vec::new();

    for &r in semantic_rows {
        let original = table.cell(r, column).to_string();
        let corrupted = draw_out_of_domain(table, &donors, &original, &mut rng)?;
        out.rows[r].insert(column.to_string(), corrupted.clone());
        entries.push(CorruptionEntry {
            row: r,
            column: column.to_string(),
            kind: CorruptionKind::Semantic,
            original,
            corrupted,
        });
    }
    for &r in syntactic_rows {
        let original = table.cell(r, column).to_string();
        let corrupted = insert_random_letters(&original, &mut rng);
        out.rows[r].insert(column.to_string(), corrupted.clone());
        entries.push(CorruptionEntry {
            row: r,
            column: column.to_string(),
            kind: CorruptionKind::Syntactic,
            original,
            corrupted,
        });
    }
    Ok((out, CorruptionReport { entries, seed }))
}

/// A replacement value drawn from the distinct values of a uniformly chosen
/// other column, retried until it differs from the original.
fn draw_out_of_domain(
    table: &Table,
    donors: &[&String],
    original: &str,
    rng: &mut ChaCha8Rng,
) -> Result<String, TableError> {
    for _ in 0..64 {
        let donor = donors[rng.gen_range(0..donors.len())];
        let mut values: Vec<&str> = table
            .rows
            .iter()
            .map(|r| r[donor.as_str()].as_str())
            .collect();
        values.sort_unstable();
        values.dedup();
        let candidate = values[rng.gen_range(0..values.len())];
        if candidate != original {
            return Ok(candidate.to_string());
        }
    }
    Err(TableError::NoDonorValue)
}

fn insert_random_letters(original: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = original.chars().collect();
    let count = rng.gen_range(1..=3);
    for _ in 0..count {
        let pos = rng.gen_range(0..=chars.len());
        let letter = (b'a' + rng.gen_range(0..26u8)) as char;
        chars.insert(pos, letter);
    }
    chars.into_iter().collect()
}
