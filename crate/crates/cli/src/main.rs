//! `autoprompt`: command-line front end for the tabular prompt pipeline.
//!
//! Every subcommand loads one JSON run config, stamps its artifacts with
//! the config fingerprint, and appends a record to `run-log.jsonl` in the
//! output directory. Input dataset files are never modified.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use autoprompt_core::config::RunConfig;
use autoprompt_core::embed::{build_embedder, Embedder};
use autoprompt_core::eval::{metric_name, permutation_sweep, EvalContext, EvalReport};
use autoprompt_core::fewshot::{select_fewshot, FewshotQuery};
use autoprompt_core::prompt::{build_prompt, PromptTemplate};
use autoprompt_core::rl::{extract_policy, Checkpoint, ColumnSequence, Trainer};
use autoprompt_core::tabular::{
    inject_errors, load_csv, make_splits, CorruptionReport, DatasetSplits, Table, TaskSpec,
};
use autoprompt_core::tasklm::{TaskLm, TaskLmBackend};

#[derive(Parser)]
#[command(name = "autoprompt", about = "Column sequencing and few-shot prompt pipeline")]
struct Cli {
    /// Path to the JSON run config.
    #[arg(long, global = true, default_value = "run.json")]
    config: PathBuf,
    /// Override the training/evaluation seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the dataset, report split sizes.
    Ingest,
    /// Inject seeded cell corruption and write the corrupted copy + report.
    Corrupt,
    /// Train the column-sequencing agent and write a checkpoint.
    Train {
        /// Resume from this run's checkpoint if one exists.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate experimental conditions on the test split.
    Evaluate {
        /// Run a single condition instead of the config's list.
        #[arg(long)]
        condition: Option<String>,
    },
    /// Exhaustive or sampled permutation sweep over the manual columns.
    Sweep {
        /// Sample at most this many permutations instead of enumerating.
        #[arg(long)]
        limit: Option<usize>,
        /// Sweep ordered subsets of every size, not just full permutations.
        #[arg(long)]
        subsets: bool,
    },
    /// Render the prompt for one test row to stdout.
    BuildPrompt {
        /// Index into the test split (default: first test row).
        #[arg(long, default_value_t = 0)]
        row: usize,
    },
}

/// Everything downstream commands need, assembled once from the config.
struct Pipeline {
    config: RunConfig,
    fingerprint: String,
    table: Table,
    report: Option<CorruptionReport>,
    task: TaskSpec,
    splits: DatasetSplits,
    embedder: Box<dyn Embedder>,
    tasklm: TaskLm,
    template: PromptTemplate,
}

impl Pipeline {
    fn build(config: RunConfig) -> Result<Self> {
        config.validate().context("invalid config")?;
        let fingerprint = config.fingerprint()?;
        let raw = load_csv(
            &config.dataset.path,
            &config.dataset.name,
            &config.dataset.description,
        )
        .with_context(|| format!("loading {}", config.dataset.path.display()))?;
        // corruption (when configured) happens before splitting so every
        // split sees the same corrupted table
        let (table, report) = match &config.corruption {
            Some(c) => {
                let (corrupted, report) =
                    inject_errors(&raw, &c.column, c.semantic_rate, c.syntactic_rate, c.seed)
                        .context("corrupting dataset")?;
                (corrupted, Some(report))
            }
            None => (raw, None),
        };
        let task = config.task_spec(&table, report.as_ref())?;
        task.validate(&table).context("task spec")?;
        let s = &config.split;
        let splits = make_splits(
            &table,
            (s.train_ratio, s.validation_ratio, s.test_ratio),
            s.seed,
        )
        .context("splitting dataset")?;
        let embedder = build_embedder(&config.embedder);
        let tasklm = match config.tasklm.backend {
            TaskLmBackend::Oracle => TaskLm::oracle(config.oracle_spec(&table, &task)?),
            TaskLmBackend::Remote => TaskLm::remote(config.tasklm.clone()),
        };
        Ok(Pipeline {
            config,
            fingerprint,
            table,
            report,
            task,
            splits,
            embedder,
            tasklm,
            template: PromptTemplate::default(),
        })
    }

    fn artifact(&self, stem: &str, extension: &str) -> PathBuf {
        self.config
            .output_dir
            .join(format!("{stem}-{}.{extension}", self.fingerprint))
    }

    fn eval_context(&self) -> EvalContext<'_> {
        EvalContext {
            table: &self.table,
            task: &self.task,
            splits: &self.splits,
            embedder: self.embedder.as_ref(),
            tasklm: &self.tasklm,
            template: &self.template,
            k_fewshot: self.config.k_fewshot,
            config_fingerprint: self.fingerprint.clone(),
        }
    }

    /// Columns a prompt may serialize: the schema minus the DI target.
    fn prompt_columns(&self) -> Vec<String> {
        let target = self.task.target();
        self.table
            .columns
            .iter()
            .filter(|c| Some(c.as_str()) != target)
            .cloned()
            .collect()
    }

    fn log_run(&self, command: &str, artifacts: &[PathBuf]) -> Result<()> {
        let record = serde_json::json!({
            "command": command,
            "fingerprint": self.fingerprint,
            "dataset": self.config.dataset.name,
            "seed": self.config.train.seed,
            "artifacts": artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        let path = self.config.output_dir.join("run-log.jsonl");
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        use std::io::Write;
        writeln!(log, "{record}")?;
        Ok(())
    }
}

fn write_artifact(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_ingest(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let summary = serde_json::json!({
        "dataset": p.table.name,
        "columns": p.table.columns,
        "rows": p.table.rows.len(),
        "train_rows": p.splits.train.len(),
        "validation_rows": p.splits.validation.len(),
        "test_rows": p.splits.test.len(),
        "task": p.task.kind,
        "fingerprint": p.fingerprint,
    });
    let path = p.artifact("ingest", "json");
    write_artifact(&path, &serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(vec![path])
}

fn cmd_corrupt(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let report = p
        .report
        .as_ref()
        .context("config has no corruption section")?;
    let csv_path = p.artifact("corrupted", "csv");
    let mut csv_bytes = Vec::new();
    p.table.to_csv(&mut csv_bytes)?;
    fs::write(&csv_path, &csv_bytes).with_context(|| format!("writing {}", csv_path.display()))?;
    let report_path = p.artifact("corruption", "jsonl");
    write_artifact(&report_path, &report.to_jsonl())?;
    println!(
        "corrupted {} cells ({} semantic, {} syntactic) -> {}",
        report.entries.len(),
        report
            .entries
            .iter()
            .filter(|e| e.kind == autoprompt_core::tabular::CorruptionKind::Semantic)
            .count(),
        report
            .entries
            .iter()
            .filter(|e| e.kind == autoprompt_core::tabular::CorruptionKind::Syntactic)
            .count(),
        csv_path.display()
    );
    Ok(vec![csv_path, report_path])
}

fn cmd_train(p: &Pipeline, resume: bool) -> Result<Vec<PathBuf>> {
    let checkpoint_path = p.artifact("checkpoint", "json");
    let resume_from = if resume && checkpoint_path.exists() {
        let text = fs::read_to_string(&checkpoint_path)?;
        let cp: Checkpoint = serde_json::from_str(&text)
            .with_context(|| format!("parsing checkpoint {}", checkpoint_path.display()))?;
        println!("resuming from episode {}", cp.next_episode);
        Some(cp)
    } else {
        None
    };
    let trainer = Trainer {
        table: &p.table,
        task: &p.task,
        splits: &p.splits,
        embedder: p.embedder.as_ref(),
        tasklm: &p.tasklm,
        template: &p.template,
        config: p.config.train.clone(),
    };
    let mut sink = |cp: &Checkpoint| -> std::io::Result<()> {
        let text = serde_json::to_string(cp)?;
        fs::write(&checkpoint_path, text)
    };
    let outcome = trainer
        .train_with_sink(resume_from, &mut sink)
        .context("training")?;
    let episodes_path = p.artifact("episodes", "jsonl");
    write_artifact(&episodes_path, &outcome.log.to_jsonl())?;

    let columns = extract_policy(
        &outcome.network,
        &outcome.params,
        &p.table.description,
        &trainer.action_space(),
        &p.table.columns,
        p.config.train.max_steps,
    )?;
    let columns_path = p.artifact("columns", "json");
    write_artifact(&columns_path, &serde_json::to_string(&columns)?)?;
    println!("learned column sequence: {columns:?}");
    Ok(vec![checkpoint_path, episodes_path, columns_path])
}

/// The RL column sequence for RLCS-CLFS: greedy rollout from the persisted
/// checkpoint with this config's fingerprint.
fn rl_columns(p: &Pipeline) -> Result<Option<ColumnSequence>> {
    let path = p.artifact("checkpoint", "json");
    if !path.exists() {
        return Ok(None);
    }
    let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    let target = p.task.target();
    let actions: Vec<String> = p
        .table
        .columns
        .iter()
        .filter(|c| Some(c.as_str()) != target)
        .cloned()
        .collect();
    let columns = extract_policy(
        &cp.network,
        &cp.params,
        &p.table.description,
        &actions,
        &p.table.columns,
        cp.config.max_steps,
    )?;
    Ok(Some(columns))
}

const EVAL_SEED_REPEATS: usize = 3;

fn cmd_evaluate(p: &Pipeline, only: Option<String>) -> Result<Vec<PathBuf>> {
    let names: Vec<String> = match only {
        Some(name) => vec![name],
        None => p.config.conditions.clone(),
    };
    if names.is_empty() {
        bail!("no conditions to evaluate; set `conditions` in the config or pass --condition");
    }
    let rl = rl_columns(p)?;
    let ctx = p.eval_context();
    let mut artifacts = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    for name in &names {
        let condition = p.config.condition(name, rl.clone())?;
        let report = ctx.run_condition(&condition, p.config.train.seed, EVAL_SEED_REPEATS)?;
        println!(
            "{}: {} {} = {:.4} +/- {:.4}",
            p.table.name, name, report.metric_name, report.metric_mean, report.metric_std
        );
        let path = p.artifact(&format!("eval-{name}"), "json");
        write_artifact(&path, &serde_json::to_string_pretty(&report)?)?;
        artifacts.push(path);
        reports.push(report);
    }
    // summary table across conditions
    let mut csv = String::from("dataset,task,condition,metric,mean,std\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{:?},{},{},{},{}\n",
            r.dataset, r.task, r.condition, r.metric_name, r.metric_mean, r.metric_std
        ));
    }
    let summary_path = p.artifact("summary", "csv");
    write_artifact(&summary_path, &csv)?;
    artifacts.push(summary_path);
    Ok(artifacts)
}

fn cmd_sweep(p: &Pipeline, limit: Option<usize>, subsets: bool) -> Result<Vec<PathBuf>> {
    if p.config.manual_columns.is_empty() {
        bail!("sweep needs `manual_columns` in the config");
    }
    let ctx = p.eval_context();
    let summary = permutation_sweep(
        &ctx,
        &p.config.manual_columns,
        limit,
        subsets,
        p.config
            .condition("MCS-CLFS", None)?
            .fewshot_method(),
        p.config.train.seed,
    )?;
    println!(
        "{} orderings: {} in [{:.4}, {:.4}], quartiles {:?}",
        summary.entries.len(),
        metric_name(p.task.kind),
        summary.min,
        summary.max,
        summary.quartiles
    );
    let json_path = p.artifact("sweep", "json");
    write_artifact(&json_path, &serde_json::to_string_pretty(&summary)?)?;
    let mut csv = String::from("columns,metric\n");
    for e in &summary.entries {
        csv.push_str(&format!("{},{}\n", e.columns.join(" "), e.metric));
    }
    let csv_path = p.artifact("sweep", "csv");
    write_artifact(&csv_path, &csv)?;
    Ok(vec![json_path, csv_path])
}

fn cmd_build_prompt(p: &Pipeline, row: usize) -> Result<Vec<PathBuf>> {
    let test_rows = &p.splits.test;
    let row_id = *test_rows
        .get(row)
        .with_context(|| format!("test split has {} rows, asked for {row}", test_rows.len()))?;
    let columns = if p.config.manual_columns.is_empty() {
        p.prompt_columns()
    } else {
        p.config.manual_columns.clone()
    };
    let pool: Vec<(usize, autoprompt_core::tabular::Row)> = p
        .splits
        .validation
        .iter()
        .map(|&i| (i, p.table.rows[i].clone()))
        .collect();
    let query = FewshotQuery {
        test_row: p.table.rows[row_id].clone(),
        pool,
        columns: columns.clone(),
        k: p.config.k_fewshot.min(p.splits.validation.len()),
        method: autoprompt_core::fewshot::FewshotMethod::Cl,
        seed: p.config.train.seed,
        exclude: None,
    };
    let shots = select_fewshot(&query, p.embedder.as_ref())?;
    let fewshots: Vec<(autoprompt_core::tabular::Row, String)> = shots
        .iter()
        .map(|(i, row)| (row.clone(), p.task.gold_text(*i)))
        .collect();
    let prompt = build_prompt(&p.task, &p.template, &p.table.rows[row_id], &columns, &fewshots)?;
    println!("{}", prompt.text);
    Ok(vec![])
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut config = RunConfig::from_file(&cli.config)
        .with_context(|| format!("loading config {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let pipeline = Pipeline::build(config)?;
    let (name, artifacts) = match &cli.command {
        Command::Ingest => ("ingest", cmd_ingest(&pipeline)?),
        Command::Corrupt => ("corrupt", cmd_corrupt(&pipeline)?),
        Command::Train { resume } => ("train", cmd_train(&pipeline, *resume)?),
        Command::Evaluate { condition } => ("evaluate", cmd_evaluate(&pipeline, condition.clone())?),
        Command::Sweep { limit, subsets } => ("sweep", cmd_sweep(&pipeline, *limit, *subsets)?),
        Command::BuildPrompt { row } => ("build-prompt", cmd_build_prompt(&pipeline, *row)?),
    };
    pipeline.log_run(name, &artifacts)?;
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
