//! Fit and inference wall-clock of each backend relative to one network.

use bmax::envs::{Environment, Pendulum};
use bmax::infogain::{UtilityKind, UtilitySpec};
use bmax::metrics::bench_backends;
use bmax::numkit::RngStream;
use bmax::pipeline::{BackendConfig, ModelSection, Phase, TrainSection, Transition};
use bmax::posterior::BackendKind;

fn main() -> bmax::Result<()> {
    let env = Pendulum::default();
    let mut rng = RngStream::new(0, 0);
    let mut buffer = Vec::new();
    let mut s = env.reset(&mut rng);
    for t in 0..512 {
        let act = env.spec().random_action(&mut rng);
        let sp = env.step(&s, &act, &mut rng)?;
        buffer.push(Transition::new(s, act, sp.clone(), t, Phase::Warmup));
        s = sp;
    }
    let model = ModelSection {
        hidden_width: 32,
        hidden_layers: 3,
        ..Default::default()
    };
    let train = TrainSection {
        epochs: 10,
        ..Default::default()
    };
    let pairs: Vec<(BackendConfig, UtilitySpec)> = [
        (BackendKind::Ensemble, UtilityKind::JensenRenyi2),
        (BackendKind::McDropout, UtilityKind::JensenRenyi2),
        (BackendKind::Laplace, UtilityKind::EntropyLaplace),
    ]
    .into_iter()
    .map(|(k, u)| (BackendConfig::new(k), UtilitySpec::new(u)))
    .collect();

    let rows = bench_backends(&buffer, &pairs, &model, &train, 0, 256)?;
    let base = rows[0].fit_seconds;
    println!("backend       N   fit s   x map   infer ms   stored");
    for r in &rows {
        println!(
            "{:<12} {:>2} {:>7.3} {:>7.2} {:>10.2} {:>8}",
            r.backend,
            r.n,
            r.fit_seconds,
            r.fit_seconds / base,
            r.infer_seconds * 1e3,
            r.storage_params
        );
    }
    Ok(())
}
