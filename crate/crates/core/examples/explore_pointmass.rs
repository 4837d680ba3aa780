//! Active exploration of the two-chamber point mass against a random walk.
//!
//! Run with an optional seed: `cargo run --release --example explore_pointmass -- 3`

use bmax::envs::{EnvConfig, PointMass2D};
use bmax::infogain::{UtilityKind, UtilitySpec};
use bmax::metrics::{coverage_entropy, GridBounds, COVERAGE_BINS};
use bmax::pipeline::{explore, BackendConfig, Event, ExperimentConfig};
use bmax::posterior::BackendKind;

fn config(kind: BackendKind, utility: UtilityKind, seed: u64) -> ExperimentConfig {
    let mut backend = BackendConfig::new(kind);
    backend.n = 5;
    backend.n_sub = 100;
    let mut cfg = ExperimentConfig::new(EnvConfig::named("point_mass"), backend, UtilitySpec::new(utility));
    cfg.model.hidden_width = 32;
    cfg.model.hidden_layers = 3;
    cfg.train.epochs = 20;
    cfg.train.warm_epochs = 10;
    cfg.planner.population = 32;
    cfg.planner.iterations = 3;
    cfg.planner.horizon = 10;
    cfg.counters.n_ex_steps = 1000;
    cfg.counters.n_pol = 50;
    cfg.counters.n_eval = 250;
    cfg.seed = seed;
    cfg
}

fn main() -> bmax::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let env = PointMass2D::default();
    let bounds = GridBounds::for_env("point_mass");

    let mut random = config(BackendKind::McDropout, UtilityKind::JensenRenyi2, seed);
    random.counters.n_ex_warm = random.counters.n_ex_steps;

    let runs = [
        ("random", random),
        (
            "mc_dropout",
            config(BackendKind::McDropout, UtilityKind::JensenRenyi2, seed),
        ),
        (
            "laplace",
            config(BackendKind::Laplace, UtilityKind::EntropyLaplace, seed),
        ),
    ];
    for (name, cfg) in runs {
        let start = std::time::Instant::now();
        let out = explore(&env, &cfg)?;
        let fits = out.events.iter().filter(|e| matches!(e, Event::Fit { .. })).count();
        println!("{name} ({fits} fits, {:.1}s)", start.elapsed().as_secs_f64());
        for e in &out.events {
            if let Event::Snapshot { step, buffer_len } = e {
                let next: Vec<&[f64]> = out.buffer[..*buffer_len].iter().map(|z| z.s_next.as_slice()).collect();
                let h = coverage_entropy(&next, COVERAGE_BINS, bounds)?;
                println!("  step {step:>5}  coverage {h:.3}");
            }
        }
        let right = out.buffer.iter().filter(|z| z.s_next[0] > 0.25).count();
        println!("  visits to the right chamber: {right}");
    }
    Ok(())
}
