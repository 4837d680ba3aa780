//! How well each backend's utility ranks held-out prediction errors.

use bmax::envs::{Environment, PointMass2D};
use bmax::infogain::{UtilityKind, UtilitySpec};
use bmax::metrics::{ause, calibration_run};
use bmax::numkit::RngStream;
use bmax::pipeline::{BackendConfig, ModelSection, Phase, TrainSection, Transition};
use bmax::posterior::BackendKind;

fn main() -> bmax::Result<()> {
    let a = ause(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0], 3)?;
    println!("reversed ranking AUSE {:.6}", a.value);
    println!("  fractions   {:?}", a.curves.fractions);
    println!("  uncertainty {:?}", a.curves.uncertainty);
    println!("  oracle      {:?}", a.curves.oracle);

    let env = PointMass2D::default();
    let mut rng = RngStream::new(5, 0);
    let mut buffer = Vec::new();
    let mut s = env.reset(&mut rng);
    for t in 0..600 {
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
        epochs: 30,
        ..Default::default()
    };
    let pairs = [
        (BackendKind::Ensemble, UtilityKind::JensenRenyi2),
        (BackendKind::McDropout, UtilityKind::JensenRenyi2),
        (BackendKind::Laplace, UtilityKind::EntropyLaplace),
    ];
    println!("backend      utility          n_train n_test  AUSE");
    for (kind, utility) in pairs {
        let mut backend = BackendConfig::new(kind);
        backend.n = 5;
        backend.n_sub = 100;
        let rec = calibration_run(&buffer, 0.8, &backend, &UtilitySpec::new(utility), &model, &train, 0)?;
        println!(
            "{:<12} {:<16} {:>7} {:>6}  {:.4}",
            rec.backend.as_str(),
            rec.utility.as_str(),
            rec.n_train,
            rec.n_test,
            rec.ause.value
        );
    }
    Ok(())
}
