//! Parameter storage per backend and the real-step budget of an experiment.

use bmax::envs::EnvConfig;
use bmax::infogain::{UtilityKind, UtilitySpec};
use bmax::metrics::storage_cost;
use bmax::pipeline::{step_budget_report, BackendConfig, ExperimentConfig};
use bmax::posterior::BackendKind;

fn main() {
    let n_weights = 1_000_000;
    let ensemble = storage_cost(32, n_weights, 0);
    let dropout = storage_cost(1, n_weights, 0);
    let laplace = storage_cost(1, n_weights, 1000);
    println!("ensemble of 32     {ensemble}");
    println!("mc-dropout         {dropout}");
    println!("subnet laplace     {laplace}");
    println!("ensemble / dropout {}", ensemble / dropout);
    println!("ensemble / laplace {}", ensemble / laplace);

    let cfg = ExperimentConfig::new(
        EnvConfig::named("point_mass"),
        BackendConfig::new(BackendKind::Ensemble),
        UtilitySpec::new(UtilityKind::JensenRenyi2),
    );
    for n_sac in [0, 10_000, 100_000] {
        let r = step_budget_report(&cfg, 2, n_sac);
        match r.ratio {
            Some(ratio) => println!(
                "model-free {:>9} steps vs exploration {:>5}: {ratio:.1}x",
                r.model_free_steps, r.exploration_steps
            ),
            None => println!("no model-free baseline budget given"),
        }
    }
}
