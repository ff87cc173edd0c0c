//! Auto-prompt generation for tabular LLM tasks.
//!
//! The pipeline has three stages: a soft Q-learning agent that learns an
//! ordered subset of task-relevant columns, cell-level few-shot retrieval
//! from a validation pool, and a prompt renderer whose output is scored
//! against a downstream task model (remote or a deterministic test oracle).

pub mod config;
pub mod embed;
pub mod eval;
pub mod fewshot;
pub mod policy;
pub mod prompt;
pub mod rl;
pub mod tabular;
pub mod tasklm;

pub use config::RunConfig;
pub use embed::{cosine, Embedder, EmbedderConfig, EmbeddingVector};
pub use eval::{Condition, EvalReport};
pub use fewshot::{select_fewshot, FewshotMethod, FewshotQuery};
pub use policy::{AttentionParams, EncoderStack, PolicyNetwork, Tokenizer, VocabProjection};
pub use prompt::{build_prompt, serialize_row, PromptTemplate, RenderedPrompt};
pub use rl::{ColumnSequence, EpisodeLog, MdpState, ReplayBuffer, TrainConfig, Transition};
pub use tabular::{CorruptionReport, DatasetSplits, Row, Table, TaskKind, TaskSpec};
pub use tasklm::{matches, OracleSpec, TaskLm, TaskLmConfig};
