//! Exploration utilities of a visited and an unvisited query under each backend.

use bmax::dyn_model::{train_map, ModelArch, ModelInit, ModelSpec, TrainConfig};
use bmax::envs::{Environment, PointMass2D};
use bmax::infogain::{
    action_utility, gaussian_entropy, renyi2_mixture_entropy, utility_jr, GaussianPrediction, UtilityKind, UtilitySpec,
};
use bmax::numkit::RngStream;
use bmax::pipeline::{Phase, Transition};
use bmax::posterior::{fit_ensemble, fit_laplace, fit_mc_dropout};

fn main() -> bmax::Result<()> {
    let unit = GaussianPrediction::diagonal(vec![0.0], vec![1.0])?;
    let a = GaussianPrediction::diagonal(vec![-1.0], vec![0.1])?;
    let b = GaussianPrediction::diagonal(vec![1.0], vec![0.1])?;
    println!("entropy of N(0, 1)     {:.5}", gaussian_entropy(&unit)?);
    println!(
        "renyi-2, two bumps     {:.5}",
        renyi2_mixture_entropy(&[a.clone(), b.clone()])?
    );
    println!("JR, identical pair     {:.5}", utility_jr(&[a.clone(), a.clone()])?);
    println!("JR, separated pair     {:.5}", utility_jr(&[a, b])?);

    // Random walk that stays in the left chamber.
    let env = PointMass2D::default();
    let mut rng = RngStream::new(1, 0);
    let mut s = env.reset(&mut rng);
    let mut data = Vec::new();
    for t in 0..300 {
        let act = env.spec().random_action(&mut rng);
        let sp = env.step(&s, &act, &mut rng)?;
        data.push(Transition::new(s, act, sp.clone(), t, Phase::Warmup));
        s = sp;
    }
    let arch = ModelArch {
        hidden_width: 32,
        hidden_layers: 3,
        ..Default::default()
    };
    let spec = ModelSpec::new(4, 2, arch);
    let cfg = TrainConfig {
        epochs: 30,
        ..Default::default()
    };

    let ens = fit_ensemble(&data, 5, &spec, &cfg)?;
    let mc = fit_mc_dropout(&data, 0.25, 16, ModelInit::Fresh(&spec), &cfg)?;
    let (map, _) = train_map(&data, &cfg, ModelInit::Fresh(&spec))?;
    let lap = fit_laplace(&map, &data, 150, 1.0, 16)?;

    let jr = UtilitySpec::new(UtilityKind::JensenRenyi2);
    let ent = UtilitySpec::new(UtilityKind::EntropyLaplace);
    let action = [0.0, 0.0];
    for (name, q) in [("visited", [-0.6, 0.0, 0.0, 0.0]), ("unvisited", [0.8, -0.3, 0.0, 0.0])] {
        let r = &mut RngStream::new(2, 0);
        println!("{name} query {q:?}");
        println!(
            "  ensemble JR          {:.4}",
            action_utility(&ens, &q, &action, &jr, r)?
        );
        println!(
            "  mc-dropout JR        {:.4}",
            action_utility(&mc, &q, &action, &jr, r)?
        );
        println!(
            "  laplace entropy      {:.4}",
            action_utility(&lap, &q, &action, &ent, r)?
        );
    }
    Ok(())
}
