//! Dev probe: watch Q-values at the initial state across training.

use autoprompt_core::config::{build_oracle_spec, OracleConfig};
use autoprompt_core::embed::{DeterministicEmbedder, EmbedderConfig};
use autoprompt_core::policy::PolicyNetwork;
use autoprompt_core::prompt::PromptTemplate;
use autoprompt_core::rl::{extract_policy, MdpState, TrainConfig, Trainer};
use autoprompt_core::tabular::{make_splits, Gold, Row, Table, TaskKind, TaskSpec};
use autoprompt_core::tasklm::TaskLm;

fn synthetic_table(n_rows: usize) -> Table {
    let columns: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let rows: Vec<Row> = (0..n_rows)
        .map(|r| {
            columns
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let value = if c == 1 {
                        format!("group{}", r % 4)
                    } else {
                        format!("r{r}v{c}")
                    };
                    (name.clone(), value)
                })
                .collect()
        })
        .collect();
    Table::new(
        "synthetic",
        "synthetic dataset of ten columns",
        columns,
        rows,
    )
}

fn q_report(net: &PolicyNetwork, params: &autoprompt_core::policy::AttentionParams, desc: &str) {
    for state in [
        MdpState::initial(desc),
        MdpState {
            description: desc.to_string(),
            chosen: vec!["c3".to_string()],
        },
    ] {
        let actions: Vec<String> = (1..10)
            .map(|i| format!("c{i}"))
            .filter(|a| !state.chosen.contains(a))
            .collect();
        let tokens = net.tokenizer.tokenize(&state.serialized());
        let qs: Vec<f64> = net.q_vector(&tokens, &actions, params).unwrap();
        let pairs: Vec<String> = actions
            .iter()
            .zip(&qs)
            .map(|(a, q)| format!("{a}:{q:+.3}"))
            .collect();
        println!("  state {:?}: {}", state.chosen, pairs.join(" "));
    }
}

fn main() {
    let table = synthetic_table(40);
    let gold: Vec<String> = table.rows.iter().map(|r| r["c0"].clone()).collect();
    let task = TaskSpec {
        kind: TaskKind::DI,
        target_columns: vec!["c0".to_string()],
        gold: Gold::Values(gold),
    };
    let splits = make_splits(&table, (0.7, 0.15, 0.15), 5).unwrap();
    let embedder = DeterministicEmbedder::new(&EmbedderConfig {
        dimension: 64,
        ..Default::default()
    });
    let oracle = OracleConfig {
        informative_columns: vec!["c3".into(), "c7".into()],
        order_sensitive: true,
        ..Default::default()
    };
    let tasklm = TaskLm::oracle(build_oracle_spec(&table, &task, &oracle));
    let template = PromptTemplate::default();

    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(101);
    let trainer = Trainer {
        table: &table,
        task: &task,
        splits: &splits,
        embedder: &embedder,
        tasklm: &tasklm,
        template: &template,
        config: TrainConfig {
            seed,
            ..Default::default()
        },
    };
    let outcome = trainer.train().unwrap();
    println!("seed {seed} final:");
    q_report(&outcome.network, &outcome.params, &table.description);
    let rollout = extract_policy(
        &outcome.network,
        &outcome.params,
        &table.description,
        &trainer.action_space(),
        &table.columns,
        trainer.config.max_steps,
    )
    .unwrap();
    println!("  rollout: {rollout:?}");
    let rewards: Vec<f64> = outcome
        .log
        .episodes
        .iter()
        .map(|e| e.cumulative_reward)
        .collect();
    println!("  cumulative rewards: {rewards:.1?}");
}
