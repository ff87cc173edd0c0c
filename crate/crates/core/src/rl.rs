//! The column-selection MDP and its soft Q-learning training loop.
//!
//! A state is the dataset description plus the columns chosen so far; each
//! step appends one unchosen column. The per-step reward queries the
//! Task-LM with a prompt built from the chosen-so-far columns and scores
//! the answer: 20 - 3t on a match, -0.5 otherwise. Training regresses
//! Q-values against soft Bellman targets sampled from a FIFO replay
//! buffer, one gradient update per environment step once the buffer holds
//! a full batch.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedder;
use crate::fewshot::{select_fewshot, FewshotError, FewshotMethod, FewshotQuery};
use crate::policy::{
    optimizer_step, AttentionParams, BatchItem, PolicyError, PolicyNetwork,
};
use crate::prompt::{build_prompt, PromptError, PromptTemplate, RenderedPrompt};
use crate::tabular::{DatasetSplits, Table, TaskKind, TaskSpec};
use crate::tasklm::{hex_sha256, matches, TaskLm, TaskLmError};

/// The ordered, duplicate-free list of selected column names.
pub type ColumnSequence = Vec<String>;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("action {0:?} is not a schema column")]
    UnknownAction(String),
    #[error("action {0:?} already chosen")]
    DuplicateAction(String),
    #[error("all actions are masked")]
    AllMasked,
    #[error("non-terminal transition with empty next-state Q-values")]
    EmptyNextQ,
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("no selectable columns for this task")]
    NoActions,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Fewshot(#[from] FewshotError),
    #[error(transparent)]
    TaskLm(#[from] TaskLmError),
    #[error("checkpoint write: {0}")]
    Checkpoint(#[from] std::io::Error),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

/// MDP state: description text plus the chosen column names, serialized by
/// single-space concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdpState {
    pub description: String,
    pub chosen: Vec<String>,
}

impl MdpState {
    pub fn initial(description: &str) -> Self {
        MdpState {
            description: description.to_string(),
            chosen: Vec::new(),
        }
    }

    pub fn serialized(&self) -> String {
        let mut text = self.description.clone();
        for c in &self.chosen {
            text.push(' ');
            text.push_str(c);
        }
        text
    }
}

/// Append an action to the state. Terminal when `max_steps` columns are
/// chosen or the action set is exhausted.
pub fn step(
    state: &MdpState,
    action: &str,
    schema: &[String],
    max_steps: usize,
) -> Result<(MdpState, bool), RlError> {
    if !schema.iter().any(|c| c == action) {
        return Err(RlError::UnknownAction(action.to_string()));
    }
    if state.chosen.iter().any(|c| c == action) {
        return Err(RlError::DuplicateAction(action.to_string()));
    }
    let mut next = state.clone();
    next.chosen.push(action.to_string());
    let terminal = next.chosen.len() >= max_steps || next.chosen.len() >= schema.len();
    Ok((next, terminal))
}

/// Per-step reward: 20 - 3t on a Task-LM match, -0.5 otherwise.
pub fn reward(t: usize, matched: bool) -> f64 {
    if matched {
        20.0 - 3.0 * t as f64
    } else {
        -0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Explore,
    Exploit,
}

/// Pick an action index. Masked entries are excluded and the softmax
/// renormalizes over the rest. Exploit takes the argmax (ties to the
/// lowest index); explore mixes epsilon-uniform choice with softmax
/// sampling.
pub fn select_action(
    q_s: &[f64],
    available: &[bool],
    mode: SelectionMode,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize, RlError> {
    let unmasked: Vec<usize> = (0..q_s.len()).filter(|&i| available[i]).collect();
    if unmasked.is_empty() {
        return Err(RlError::AllMasked);
    }
    match mode {
        SelectionMode::Exploit => Ok(unmasked
            .iter()
            .copied()
            .fold(unmasked[0], |best, i| if q_s[i] > q_s[best] { i } else { best })),
        SelectionMode::Explore => {
            if rng.gen::<f64>() < epsilon {
                return Ok(unmasked[rng.gen_range(0..unmasked.len())]);
            }
            let qs: Vec<f64> = unmasked.iter().map(|&i| q_s[i]).collect();
            let probs = crate::policy::action_distribution(&qs)
                .map_err(RlError::Policy)?;
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            for (&i, p) in unmasked.iter().zip(&probs) {
                acc += p;
                if draw < acc {
                    return Ok(i);
                }
            }
            Ok(*unmasked.last().unwrap())
        }
    }
}

/// Soft Bellman target: r for terminal transitions, otherwise
/// r + gamma * alpha * logsumexp(q_next / alpha), computed with
/// max-subtraction. Callers pass only unmasked next-state Q-values.
pub fn soft_target(
    r: f64,
    q_next: &[f64],
    gamma: f64,
    alpha: f64,
    terminal: bool,
) -> Result<f64, RlError> {
    if terminal {
        return Ok(r);
    }
    if q_next.is_empty() {
        return Err(RlError::EmptyNextQ);
    }
    let max = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q_next.iter().map(|q| ((q - max) / alpha).exp()).sum();
    Ok(r + gamma * alpha * (sum.ln() + max / alpha))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub state: MdpState,
    pub action: String,
    pub reward: f64,
    pub next_state: MdpState,
    pub terminal: bool,
}

/// FIFO ring buffer of transitions with seeded uniform batch sampling
/// (without replacement within a batch).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        let mut indices: Vec<usize> = (0..self.entries.len()).collect();
        indices.shuffle(rng);
        indices
            .into_iter()
            .take(batch_size)
            .map(|i| &self.entries[i])
            .collect()
    }
}

/// Training hyperparameters. The defaults are the published values:
/// gamma 0.6, learning rate 1e-4, batch 200, 60 episodes, epsilon 0.4,
/// buffer 3000.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub episodes: usize,
    pub epsilon: f64,
    pub buffer_capacity: usize,
    pub max_steps: usize,
    /// Soft-Q temperature.
    pub alpha: f64,
    /// Training rows scored per reward evaluation; all must match.
    pub rows_per_reward: usize,
    pub k_fewshot: usize,
    /// Hidden dimension of the desk-scale policy network.
    pub dim: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.6,
            learning_rate: 1e-4,
            batch_size: 200,
            episodes: 60,
            epsilon: 0.4,
            buffer_capacity: 3000,
            max_steps: 9,
            // Sharp soft-value temperature: keeps the entropy bonus small so
            // regression capacity goes into ordering actions, not fitting a
            // common offset.
            alpha: 0.25,
            rows_per_reward: 1,
            k_fewshot: 3,
            dim: 64,
            heads: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: String,
    pub reward: f64,
    pub q_values: Vec<f64>,
    pub prompt_sha256: String,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Discounted return sum(gamma^t r_t).
    pub cumulative_reward: f64,
    pub chosen: Vec<String>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> String {
        self.episodes
            .iter()
            .map(|e| serde_json::to_string(e).expect("episode record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable training snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub network: PolicyNetwork,
    pub params: AttentionParams,
    pub buffer: Vec<Transition>,
    pub next_episode: usize,
    pub rng_word_pos: u128,
    pub log: EpisodeLog,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub network: PolicyNetwork,
    pub params: AttentionParams,
    pub log: EpisodeLog,
    /// Final snapshot, suitable for persisting and later resuming.
    pub checkpoint: Checkpoint,
}

/// Everything the training loop needs, borrowed immutably; the loop owns
/// all mutable state (params, buffer, RNG).
pub struct Trainer<'a> {
    pub table: &'a Table,
    pub task: &'a TaskSpec,
    pub splits: &'a DatasetSplits,
    pub embedder: &'a dyn Embedder,
    pub tasklm: &'a TaskLm,
    pub template: &'a PromptTemplate,
    pub config: TrainConfig,
}

impl<'a> Trainer<'a> {
    /// Columns the agent may select: the schema minus the DI target.
    pub fn action_space(&self) -> Vec<String> {
        let target = if self.task.kind == TaskKind::DI {
            self.task.target()
        } else {
            None
        };
        self.table
            .columns
            .iter()
            .filter(|c| target != Some(c.as_str()))
            .cloned()
            .collect()
    }

    fn fewshot_pool(&self) -> Vec<(usize, crate::tabular::Row)> {
        self.splits
            .validation
            .iter()
            .map(|&i| (i, self.table.rows[i].clone()))
            .collect()
    }

    /// Build the reward prompt for one training row from the chosen-so-far
    /// columns, with CLFS few-shot examples from the validation pool.
    fn reward_prompt(
        &self,
        chosen: &[String],
        row_id: usize,
        seed: u64,
    ) -> Result<RenderedPrompt, RlError> {
        let pool = self.fewshot_pool();
        let k = self.config.k_fewshot.min(pool.len());
        let query = FewshotQuery {
            test_row: self.table.rows[row_id].clone(),
            pool,
            columns: chosen.to_vec(),
            k,
            method: FewshotMethod::Cl,
            seed,
            exclude: self.task.target().map(|s| s.to_string()),
        };
        let fewshots = select_fewshot(&query, self.embedder)?;
        let ids: Vec<usize> = fewshots.iter().map(|(i, _)| *i).collect();
        let shots: Vec<(crate::tabular::Row, String)> = fewshots
            .into_iter()
            .map(|(i, row)| (row, self.task.gold_text(i)))
            .collect();
        let prompt = build_prompt(
            self.task,
            self.template,
            &self.table.rows[row_id],
            chosen,
            &shots,
        )?;
        let mut prompt = prompt.with_fewshot_ids(ids).with_test_row_id(row_id);
        prompt.expected = self.task.gold_text(row_id);
        Ok(prompt)
    }

    /// Query the Task-LM on the sampled reward rows; matched only when
    /// every row's answer matches its gold.
    fn evaluate_match(
        &self,
        chosen: &[String],
        reward_rows: &[usize],
        seed: u64,
    ) -> Result<(bool, String), RlError> {
        let mut all = true;
        let mut last_sha = String::new();
        for &row_id in reward_rows {
            let prompt = self.reward_prompt(chosen, row_id, seed)?;
            last_sha = hex_sha256(&prompt.text);
            let output = self.tasklm.complete(&prompt)?;
            if !matches(&output, &prompt.expected) {
                all = false;
            }
        }
        Ok((all, last_sha))
    }

    pub fn train(&self) -> Result<TrainOutcome, RlError> {
        self.train_from(None)
    }

    pub fn train_from(&self, resume: Option<Checkpoint>) -> Result<TrainOutcome, RlError> {
        self.train_with_sink(resume, &mut |_| Ok(()))
    }

    /// Train with an episode-boundary checkpoint sink. The sink runs after
    /// every completed episode, so a failure mid-episode (e.g. a remote
    /// Task-LM outage) still leaves the previous episode's snapshot behind.
    pub fn train_with_sink(
        &self,
        resume: Option<Checkpoint>,
        sink: &mut dyn FnMut(&Checkpoint) -> std::io::Result<()>,
    ) -> Result<TrainOutcome, RlError> {
        if self.splits.train.is_empty() {
            return Err(RlError::EmptyTrainSplit);
        }
        let actions = self.action_space();
        if actions.is_empty() {
            return Err(RlError::NoActions);
        }
        let cfg = &self.config;

        let (network, mut params, mut buffer, mut log, start_episode, mut rng) = match resume {
            Some(cp) => {
                if cp.version != CHECKPOINT_VERSION {
                    return Err(RlError::CheckpointVersion {
                        found: cp.version,
                        expected: CHECKPOINT_VERSION,
                    });
                }
                let mut buffer = ReplayBuffer::new(cp.config.buffer_capacity);
                for t in cp.buffer {
                    buffer.push(t);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cp.config.seed);
                rng.set_word_pos(cp.rng_word_pos);
                (
                    cp.network,
                    cp.params,
                    buffer,
                    cp.log,
                    cp.next_episode,
                    rng,
                )
            }
            None => {
                let texts: Vec<&str> = std::iter::once(self.table.description.as_str())
                    .chain(self.table.columns.iter().map(|c| c.as_str()))
                    .collect();
                let network = PolicyNetwork::seeded(texts, cfg.dim, cfg.seed);
                let params = network.new_params(cfg.heads, cfg.seed);
                (
                    network,
                    params,
                    ReplayBuffer::new(cfg.buffer_capacity),
                    EpisodeLog {
                        seed: cfg.seed,
                        episodes: Vec::new(),
                    },
                    0,
                    ChaCha8Rng::seed_from_u64(cfg.seed),
                )
            }
        };

        for episode in start_episode..cfg.episodes {
            // rows scored for reward, resampled each episode
            let reward_rows: Vec<usize> = (0..cfg.rows_per_reward)
                .map(|_| self.splits.train[rng.gen_range(0..self.splits.train.len())])
                .collect();
            let mut state = MdpState::initial(&self.table.description);
            let mut record = EpisodeRecord {
                episode,
                cumulative_reward: 0.0,
                chosen: Vec::new(),
                steps: Vec::new(),
            };
            for t in 0..cfg.max_steps {
                let state_tokens = network.tokenizer.tokenize(&state.serialized());
                let q = network.q_vector(&state_tokens, &actions, &params)?;
                let available: Vec<bool> = actions
                    .iter()
                    .map(|a| !state.chosen.iter().any(|c| c == a))
                    .collect();
                let a_idx =
                    select_action(&q, &available, SelectionMode::Explore, cfg.epsilon, &mut rng)?;
                let action = actions[a_idx].clone();
                let (next_state, terminal) =
                    step(&state, &action, &self.table.columns, cfg.max_steps)?;
                let (matched, prompt_sha) =
                    self.evaluate_match(&next_state.chosen, &reward_rows, cfg.seed)?;
                let r = reward(t, matched);
                record.cumulative_reward += cfg.gamma.powi(t as i32) * r;
                record.steps.push(StepRecord {
                    action: action.clone(),
                    reward: r,
                    q_values: q,
                    prompt_sha256: prompt_sha,
                    matched,
                });
                buffer.push(Transition {
                    state: state.clone(),
                    action,
                    reward: r,
                    next_state: next_state.clone(),
                    terminal,
                });

                if buffer.len() >= cfg.batch_size {
                    self.update(&network, &mut params, &buffer, &actions, &mut rng)?;
                }

                state = next_state;
                if terminal {
                    break;
                }
            }
            record.chosen = state.chosen.clone();
            log.episodes.push(record);
            let snapshot = Checkpoint {
                version: CHECKPOINT_VERSION,
                network: network.clone(),
                params: params.clone(),
                buffer: buffer.iter().cloned().collect(),
                next_episode: episode + 1,
                rng_word_pos: rng.get_word_pos(),
                log: log.clone(),
                config: cfg.clone(),
            };
            sink(&snapshot)?;
        }

        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            network: network.clone(),
            params: params.clone(),
            buffer: buffer.iter().cloned().collect(),
            next_episode: cfg.episodes,
            rng_word_pos: rng.get_word_pos(),
            log: log.clone(),
            config: cfg.clone(),
        };
        Ok(TrainOutcome {
            network,
            params,
            log,
            checkpoint,
        })
    }

    /// One regression step: sample a batch, compute soft targets with the
    /// current parameters, apply one gradient update.
    fn update(
        &self,
        network: &PolicyNetwork,
        params: &mut AttentionParams,
        buffer: &ReplayBuffer,
        actions: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<(), RlError> {
        let cfg = &self.config;
        let sampled = buffer.sample(cfg.batch_size, rng);
        let mut batch = Vec::with_capacity(sampled.len());
        for transition in sampled {
            let target = if transition.terminal {
                transition.reward
            } else {
                let next_tokens = network
                    .tokenizer
                    .tokenize(&transition.next_state.serialized());
                let q_next = network.q_vector(&next_tokens, actions, params)?;
                let unmasked: Vec<f64> = actions
                    .iter()
                    .zip(&q_next)
                    .filter(|(a, _)| !transition.next_state.chosen.iter().any(|c| &c == a))
                    .map(|(_, q)| *q)
                    .collect();
                soft_target(transition.reward, &unmasked, cfg.gamma, cfg.alpha, false)?
            };
            batch.push(BatchItem {
                state_tokens: network.tokenizer.tokenize(&transition.state.serialized()),
                action_tokens: network.tokenizer.tokenize(&transition.action),
                target,
            });
        }
        let (_, grads) = network.loss_and_grads(&batch, params)?;
        optimizer_step(params, &grads, cfg.learning_rate)?;
        Ok(())
    }
}

/// Greedy rollout (exploit mode) from the initial state until termination.
pub fn extract_policy(
    network: &PolicyNetwork,
    params: &AttentionParams,
    description: &str,
    actions: &[String],
    schema: &[String],
    max_steps: usize,
) -> Result<ColumnSequence, RlError> {
    let mut state = MdpState::initial(description);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in exploit mode
    loop {
        let tokens = network.tokenizer.tokenize(&state.serialized());
        let q = network.q_vector(&tokens, actions, params)?;
        let available: Vec<bool> = actions
            .iter()
            .map(|a| !state.chosen.iter().any(|c| c == a))
            .collect();
        if !available.iter().any(|&a| a) {
            break;
        }
        let idx = select_action(&q, &available, SelectionMode::Exploit, 0.0, &mut rng)?;
        let (next, terminal) = step(&state, &actions[idx], schema, max_steps)?;
        state = next;
        if terminal {
            break;
        }
    }
    Ok(state.chosen)
}
