//! Few-shot example retrieval from a pool: whole-row similarity over the
//! serialized text (sim_NL), cell-level mean similarity (sim_CL), or a
//! seeded random baseline. Retrieval is exact; pools are small.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder};
use crate::prompt::{serialize_row, PromptError};
use crate::tabular::Row;

#[derive(Debug, Error)]
pub enum FewshotError {
    #[error("k = {k} exceeds pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("comparison column set is empty")]
    EmptyColumns,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FewshotMethod {
    /// Natural-language row similarity: embed the serialized row.
    Nl,
    /// Cell-level similarity: mean of per-cell cosines.
    Cl,
    /// Seeded uniform sample, the random baseline.
    Random,
}

#[derive(Debug, Clone)]
pub struct FewshotQuery {
    pub test_row: Row,
    pub pool: Vec<(usize, Row)>,
    /// Comparison column set C. Ignored by the random method.
    pub columns: Vec<String>,
    pub k: usize,
    pub method: FewshotMethod,
    /// Random method only.
    pub seed: u64,
    /// Excluded from the comparison set (the DI target, to avoid gold
    /// leakage).
    pub exclude: Option<String>,
}

/// Row-level similarity: cosine of the embeddings of the two rows
/// serialized over `columns`.
pub fn sim_nl(
    test_row: &Row,
    pool_row: &Row,
    columns: &[String],
    embedder: &dyn Embedder,
) -> Result<f64, FewshotError> {
    let a = embedder.embed(&serialize_row(test_row, columns)?)?;
    let b = embedder.embed(&serialize_row(pool_row, columns)?)?;
    Ok(cosine(&a, &b)?)
}

/// Cell-level similarity: mean over columns of the cosine between the two
/// cells' embeddings. Columns where either cell is empty are skipped and
/// excluded from the denominator; if every column is skipped, returns 0.
pub fn sim_cl(
    test_row: &Row,
    pool_row: &Row,
    columns: &[String],
    embedder: &dyn Embedder,
) -> Result<f64, FewshotError> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for c in columns {
        let a = test_row
            .get(c)
            .ok_or_else(|| PromptError::UnknownColumn(c.clone()))
            .map_err(FewshotError::Prompt)?;
        let b = pool_row
            .get(c)
            .ok_or_else(|| PromptError::UnknownColumn(c.clone()))
            .map_err(FewshotError::Prompt)?;
        if a.is_empty() || b.is_empty() {
            continue;
        }
        total += cosine(&embedder.embed(a)?, &embedder.embed(b)?)?;
        counted += 1;
    }
    if counted == 0 {
        Ok(0.0)
    } else {
        Ok(total / counted as f64)
    }
}

/// Top-k retrieval: highest similarity first, ties broken by ascending pool
/// index. The random method draws a seeded uniform sample without
/// replacement.
pub fn select_fewshot(
    query: &FewshotQuery,
    embedder: &dyn Embedder,
) -> Result<Vec<(usize, Row)>, FewshotError> {
    if query.k > query.pool.len() {
        return Err(FewshotError::KTooLarge {
            k: query.k,
            pool: query.pool.len(),
        });
    }
    if query.k == 0 {
        return Ok(Vec::new());
    }
    let columns: Vec<String> = query
        .columns
        .iter()
        .filter(|c| query.exclude.as_deref() != Some(c.as_str()))
        .cloned()
        .collect();
    match query.method {
        FewshotMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(query.seed);
            let mut indices: Vec<usize> = (0..query.pool.len()).collect();
            indices.shuffle(&mut rng);
            Ok(indices[..query.k]
                .iter()
                .map(|&i| query.pool[i].clone())
                .collect())
        }
        FewshotMethod::Nl | FewshotMethod::Cl => {
            if columns.is_empty() {
                return Err(FewshotError::EmptyColumns);
            }
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(query.pool.len());
            for (i, (_, row)) in query.pool.iter().enumerate() {
                let sim = match query.method {
                    FewshotMethod::Nl => sim_nl(&query.test_row, row, &columns, embedder)?,
                    FewshotMethod::Cl => sim_cl(&query.test_row, row, &columns, embedder)?,
                    FewshotMethod::Random => unreachable!(),
                };
                scored.push((sim, i));
            }
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("similarities are finite")
                    .then(a.1.cmp(&b.1))
            });
            Ok(scored[..query.k]
                .iter()
                .map(|&(_, i)| query.pool[i].clone())
                .collect())
        }
    }
}
