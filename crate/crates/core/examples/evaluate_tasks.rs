//! Explore, then plan each downstream task on a model fitted to the collected data.

use bmax::envs::{EnvConfig, Environment};
use bmax::infogain::{UtilityKind, UtilitySpec};
use bmax::pipeline::{evaluate, explore, BackendConfig, ExperimentConfig};
use bmax::posterior::BackendKind;

fn main() -> bmax::Result<()> {
    let mut backend = BackendConfig::new(BackendKind::Ensemble);
    backend.n = 4;
    let mut cfg = ExperimentConfig::new(
        EnvConfig::named("pendulum"),
        backend,
        UtilitySpec::new(UtilityKind::JensenRenyi2),
    );
    cfg.model.hidden_width = 32;
    cfg.model.hidden_layers = 2;
    cfg.train.epochs = 20;
    cfg.train.warm_epochs = 10;
    cfg.planner.population = 32;
    cfg.planner.iterations = 3;
    cfg.planner.horizon = 10;
    cfg.counters.n_ex_steps = 400;
    cfg.counters.n_pol = 50;
    cfg.counters.n_eval = 200;
    cfg.counters.n_k = 2;
    cfg.counters.n_ev_steps = 100;
    cfg.evaluation.backend.n = 4;

    let env = cfg.env.build()?;
    let tasks = cfg.resolve_tasks(env.as_ref())?;
    let buffer = explore(env.as_ref(), &cfg)?.buffer;

    for len in [cfg.counters.n_eval, buffer.len()] {
        let table = evaluate(env.as_ref(), &buffer[..len], &tasks, &cfg)?;
        println!("snapshot of {len} transitions");
        for task in &tasks {
            let values: Vec<String> = table
                .entries
                .iter()
                .filter(|e| e.task == task.name)
                .map(|e| e.value.map_or("failed".into(), |v| format!("{v:.2}")))
                .collect();
            println!(
                "  {:<10} mean {:>8.2}  repeats [{}]",
                task.name,
                table.mean(&task.name).unwrap_or(f64::NAN),
                values.join(", ")
            );
        }
    }
    println!("tasks of {}: {}", env.name(), env.tasks().len());
    Ok(())
}
