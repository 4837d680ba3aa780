use bmax::dyn_model::{train_map, GaussianMLP, ModelArch, ModelInit, ModelSpec, Normalizer, TrainConfig};
use bmax::envs::{Environment, LinGauss};
use bmax::infogain::{
    gaussian_kl, laplace_information_gain, moment_match, utility_entropy_laplace, utility_jr, GaussianPrediction,
    UtilityKind, UtilitySpec,
};
use bmax::numkit::{Activation, Layer, Matrix, MlpParams, RngStream};
use bmax::pipeline::{Phase, Transition};
use bmax::planner::{plan_cem, CemConfig, PlanObjective};
use bmax::posterior::{fit_ensemble, fit_laplace, fit_mc_dropout, PosteriorModel};
use proptest::prelude::*;

fn lingauss_data(n: usize, seed: u64) -> Vec<Transition> {
    let env = LinGauss::new(0.01, 50);
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|t| {
            let s = vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let a = env.spec().random_action(&mut rng);
            let sp = env.step(&s, &a, &mut rng).unwrap();
            Transition::new(s, a, sp, t as u64, Phase::Warmup)
        })
        .collect()
}

fn small_arch(width: usize, layers: usize) -> ModelArch {
    ModelArch {
        hidden_width: width,
        hidden_layers: layers,
        activation: Activation::Tanh,
    }
}

fn train_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        gamma2: 1.0,
        learning_rate: 3e-3,
        batch_size: 32,
        epochs,
        seed,
    }
}

#[test]
fn delta_prediction_is_translation_invariant() {
    let data = lingauss_data(200, 1);
    let shift = [3.0, -2.0];
    let moved: Vec<Transition> = data
        .iter()
        .map(|z| {
            let t = |s: &[f64]| s.iter().zip(shift).map(|(v, c)| v + c).collect::<Vec<_>>();
            Transition::new(t(&z.s), z.a.clone(), t(&z.s_next), z.step, z.phase)
        })
        .collect();
    let spec = ModelSpec::new(2, 1, small_arch(16, 2));
    let cfg = train_cfg(10, 4);
    let (m, _) = train_map(&data, &cfg, ModelInit::Fresh(&spec)).unwrap();
    let (mm, _) = train_map(&moved, &cfg, ModelInit::Fresh(&spec)).unwrap();
    for q in [[0.1, -0.4], [0.7, 0.2], [-0.9, 0.9]] {
        let p = m.predict(&q, &[0.3]).unwrap();
        let qs = [q[0] + shift[0], q[1] + shift[1]];
        let pm = mm.predict(&qs, &[0.3]).unwrap();
        for d in 0..2 {
            assert!(((p.mean[d] - q[d]) - (pm.mean[d] - qs[d])).abs() < 1e-6);
        }
    }
}

#[test]
fn loss_trace_mostly_non_increasing() {
    let data = lingauss_data(256, 2);
    let spec = ModelSpec::new(2, 1, small_arch(16, 2));
    let good = (0..20)
        .filter(|&seed| {
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                ..train_cfg(15, seed)
            };
            let (_, report) = train_map(&data, &cfg, ModelInit::Fresh(&spec)).unwrap();
            report.loss_trace.windows(2).all(|w| w[1] <= w[0])
        })
        .count();
    assert!(good >= 18, "only {good}/20 seeds had a non-increasing loss trace");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn predicted_variance_stays_in_bounds(seed in 0u64..10_000, scale in 0.1f64..20.0, s0 in -50.0f64..50.0) {
        let spec = ModelSpec::new(2, 1, small_arch(8, 2));
        let mut rng = RngStream::new(seed, 0);
        let mut m = GaussianMLP::random(&spec, Normalizer::identity(2, 1), &mut rng).unwrap();
        let flat: Vec<f64> = m.params.flat().iter().map(|v| v * scale).collect();
        m.params.set_flat(&flat).unwrap();
        let p = m.predict(&[s0, -s0], &[0.5]).unwrap();
        for v in p.variances() {
            prop_assert!(v >= spec.var_min && v <= spec.var_max);
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_on_equal(
        m1 in prop::collection::vec(-3.0f64..3.0, 2),
        m2 in prop::collection::vec(-3.0f64..3.0, 2),
        v1 in prop::collection::vec(0.05f64..4.0, 2),
        v2 in prop::collection::vec(0.05f64..4.0, 2),
    ) {
        let p = GaussianPrediction::diagonal(m1.clone(), v1.clone()).unwrap();
        let q = GaussianPrediction::diagonal(m2.clone(), v2.clone()).unwrap();
        let kl = gaussian_kl(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(gaussian_kl(&p, &p).unwrap().abs() < 1e-12);
        if m1 != m2 || v1 != v2 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn jr_is_permutation_invariant(
        comps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0.05f64..2.0), 2..6),
        rot in 0usize..6,
    ) {
        let preds: Vec<GaussianPrediction> = comps
            .iter()
            .map(|&(a, b, v)| GaussianPrediction::diagonal(vec![a, b], vec![v, v * 0.5]).unwrap())
            .collect();
        let mut perm = preds.clone();
        perm.rotate_left(rot % preds.len());
        perm.reverse();
        let a = utility_jr(&preds).unwrap();
        let b = utility_jr(&perm).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }
}

#[test]
fn moment_match_agrees_with_mixture_draws() {
    let mut rng = RngStream::new(5, 0);
    for _ in 0..5 {
        let comps: Vec<GaussianPrediction> = (0..3)
            .map(|_| {
                GaussianPrediction::diagonal(
                    vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
                    vec![rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)],
                )
                .unwrap()
            })
            .collect();
        let mm = moment_match(&comps).unwrap();
        let n = 100_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let c = &comps[rng.next_index(comps.len())];
            let v = c.variances();
            draws.push([
                c.mean[0] + v[0].sqrt() * rng.standard_normal(),
                c.mean[1] + v[1].sqrt() * rng.standard_normal(),
            ]);
        }
        let mean = [0, 1].map(|d| draws.iter().map(|x| x[d]).sum::<f64>() / n as f64);
        let cov = mm.cov_matrix();
        for i in 0..2 {
            assert!((mean[i] - mm.mean[i]).abs() < 2e-2);
            for j in 0..2 {
                let c = draws.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / n as f64;
                assert!((c - cov[(i, j)]).abs() < 2e-2, "cov[{i},{j}] {c} vs {}", cov[(i, j)]);
            }
        }
    }
}

fn sample_mean_at(post: &PosteriorModel, rng: &mut RngStream) -> f64 {
    let s = Matrix::row_vector(&[0.3, -0.2]);
    let a = Matrix::row_vector(&[0.4]);
    let models = post.draw(rng).unwrap();
    models
        .iter()
        .map(|m| m.predict_batch(&s, &a).unwrap().mean[(0, 0)])
        .sum::<f64>()
        / models.len() as f64
}

fn standard_error(post: &PosteriorModel, reps: usize, seed: u64) -> f64 {
    let vals: Vec<f64> = (0..reps)
        .map(|r| sample_mean_at(post, &mut RngStream::new(seed, r as u64)))
        .collect();
    let m = vals.iter().sum::<f64>() / reps as f64;
    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
}

fn with_samples(post: &PosteriorModel, n: usize) -> PosteriorModel {
    match post.clone() {
        PosteriorModel::McDropout { model, .. } => PosteriorModel::McDropout { model, n_samples: n },
        PosteriorModel::Laplace(mut lap) => {
            lap.n_samples = n;
            PosteriorModel::Laplace(lap)
        }
        other => other,
    }
}

#[test]
fn sample_mean_standard_error_shrinks_as_inverse_sqrt() {
    let data = lingauss_data(128, 3);
    let spec = ModelSpec::new(2, 1, small_arch(16, 2));
    let cfg = train_cfg(10, 0);
    let mc = fit_mc_dropout(&data, 0.25, 8, ModelInit::Fresh(&spec), &cfg).unwrap();
    let (map, _) = train_map(&data, &cfg, ModelInit::Fresh(&spec)).unwrap();
    let lap = fit_laplace(&map, &data, 60, 1.0, 8).unwrap();
    for post in [mc, lap] {
        let small = standard_error(&with_samples(&post, 16), 60, 1);
        let large = standard_error(&with_samples(&post, 1024), 60, 2);
        let ratio = small / large;
        assert!(
            (4.0..=16.0).contains(&ratio),
            "{:?}: SE ratio {ratio}, expected 8 within a factor 2",
            post.kind()
        );
    }
}

#[test]
fn laplace_epistemic_variance_shrinks_on_nested_buffers() {
    let data = lingauss_data(500, 4);
    let spec = ModelSpec::new(2, 1, small_arch(16, 2));
    let (map, _) = train_map(&data, &train_cfg(10, 1), ModelInit::Fresh(&spec)).unwrap();
    let s = Matrix::row_vector(&[0.5, 0.5]);
    let a = Matrix::row_vector(&[-0.2]);
    let mut prev: Option<Vec<f64>> = None;
    for n in [100, 200, 300, 400, 500] {
        let lap = fit_laplace(&map, &data[..n], 80, 1.0, 8).unwrap();
        let p = &lap.as_laplace().unwrap().predictive_batch(&s, &a).unwrap()[0];
        let diag = p.epistemic.diag();
        if let Some(prev) = &prev {
            for (d, (now, before)) in diag.iter().zip(prev).enumerate() {
                assert!(*now <= before + 1e-9, "dim {d}: {now} > {before} at n = {n}");
            }
        }
        prev = Some(diag);
    }
}

#[test]
fn ensemble_disagrees_outside_the_data_hull() {
    let data = lingauss_data(400, 5);
    let spec = ModelSpec::new(2, 1, small_arch(32, 2));
    let post = fit_ensemble(&data, 8, &spec, &train_cfg(60, 2)).unwrap();
    let PosteriorModel::Ensemble { members } = &post else {
        unreachable!()
    };
    let spread = |s: [f64; 2], a: f64| {
        let means: Vec<Vec<f64>> = members.iter().map(|m| m.predict(&s, &[a]).unwrap().mean).collect();
        (0..2)
            .map(|d| {
                let lo = means.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min);
                let hi = means.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max)
    };
    let inside = spread([0.2, -0.3], 0.1);
    let outside = spread([15.0, -15.0], 0.9);
    assert!(inside < 5e-2, "inside spread {inside}");
    assert!(outside > 5e-2, "outside spread {outside}");
}

/// One linear layer `[s, a] → [Δs, log σ²]` with the true LinGauss mean and a fixed noise level.
fn linear_model(log_var: f64) -> GaussianMLP {
    let (a, b) = (LinGauss::A, LinGauss::B);
    let weights = Matrix::from_rows(&[
        vec![a[0][0] - 1.0, a[0][1], b[0]],
        vec![a[1][0], a[1][1] - 1.0, b[1]],
        vec![0.0; 3],
        vec![0.0; 3],
    ])
    .unwrap();
    let layer = Layer {
        weights,
        bias: vec![0.0, 0.0, log_var, log_var],
        activation: Activation::Identity,
    };
    GaussianMLP::new(
        MlpParams::from_layers(vec![layer]).unwrap(),
        2,
        1,
        Normalizer::identity(2, 1),
        None,
    )
    .unwrap()
}

fn ranks(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0; v.len()];
    for (pos, i) in idx.into_iter().enumerate() {
        r[i] = pos;
    }
    r
}

#[test]
fn information_gain_and_entropy_rank_probes_identically() {
    let model = linear_model((0.05f64).ln());
    let data = lingauss_data(60, 6);
    let post = fit_laplace(&model, &data, model.n_params(), 1.0, 8).unwrap();
    let lap = post.as_laplace().unwrap();
    let mut rng = RngStream::new(8, 0);
    let (mut ent, mut ig) = (Vec::new(), Vec::new());
    for t in 0..10 {
        let r = 0.2 + 0.5 * t as f64;
        let s = vec![r * rng.uniform(-1.0, 1.0), r * rng.uniform(-1.0, 1.0)];
        let a = vec![rng.uniform(-1.0, 1.0)];
        let p = &lap
            .predictive_batch(&Matrix::row_vector(&s), &Matrix::row_vector(&a))
            .unwrap()[0];
        ent.push(utility_entropy_laplace(p, true, 1e-6).unwrap());
        let z = Transition::new(s.clone(), a, s, 0, Phase::Active);
        ig.push(laplace_information_gain(lap, &z).unwrap());
    }
    assert_eq!(ranks(&ent), ranks(&ig));
}

#[test]
fn cem_is_close_to_grid_search_on_true_model() {
    let post = PosteriorModel::Ensemble {
        members: vec![linear_model(-20.0)],
    };
    let env = LinGauss::new(0.0, 50);
    let task = env.task("origin").unwrap();
    let s0 = [1.0, -1.0];
    let horizon = 3;
    let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let ret = |seq: &[f64]| {
        let mut s = s0.to_vec();
        let mut total = 0.0;
        for &u in seq {
            let sp = LinGauss::mean_step(&s, &[u]).to_vec();
            total += task.reward(&s, &[u], &sp);
            s = sp;
        }
        total
    };
    let mut best = f64::NEG_INFINITY;
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                best = best.max(ret(&[a, b, c]));
            }
        }
    }
    let cfg = CemConfig {
        horizon,
        population: 64,
        iterations: 5,
        ..Default::default()
    };
    let plan = plan_cem(
        &post,
        &PlanObjective::Reward(&task),
        &s0,
        env.spec(),
        &cfg,
        &mut RngStream::new(3, 0),
    )
    .unwrap();
    let cem = ret(&plan.sequence.column(0));
    assert!((cem - best).abs() <= 0.1 * best.abs(), "cem {cem} vs grid {best}");
}

#[test]
fn utility_shift_keeps_every_kind_argmax() {
    let data = lingauss_data(96, 7);
    let spec = ModelSpec::new(2, 1, small_arch(8, 2));
    let cfg = train_cfg(5, 0);
    let env = LinGauss::new(0.01, 50);
    let ens = fit_ensemble(&data, 3, &spec, &cfg).unwrap();
    let (map, _) = train_map(&data, &cfg, ModelInit::Fresh(&spec)).unwrap();
    let lap = fit_laplace(&map, &data, 30, 1.0, 3).unwrap();
    let planner = CemConfig {
        horizon: 4,
        population: 16,
        iterations: 2,
        ..Default::default()
    };
    for (post, kind) in [
        (&ens, UtilityKind::JensenRenyi2),
        (&ens, UtilityKind::EntropySamples),
        (&lap, UtilityKind::EntropyLaplace),
    ] {
        let base = PlanObjective::Utility(UtilitySpec::new(kind));
        for c in [-7.5, 1e3] {
            let shifted = PlanObjective::Shifted(&base, c);
            let a = plan_cem(
                post,
                &base,
                &[0.2, 0.1],
                env.spec(),
                &planner,
                &mut RngStream::new(9, 0),
            )
            .unwrap();
            let b = plan_cem(
                post,
                &shifted,
                &[0.2, 0.1],
                env.spec(),
                &planner,
                &mut RngStream::new(9, 0),
            )
            .unwrap();
            assert_eq!(a.sequence, b.sequence, "{kind:?} shift {c}");
        }
    }
}
