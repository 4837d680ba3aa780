//! Subnetwork Laplace on a one-layer dynamics model, checked against the
//! closed-form Bayesian linear regression posterior.

use bmax::dyn_model::{GaussianMLP, Normalizer};
use bmax::envs::{Environment, LinGauss};
use bmax::numkit::{solve_psd, Activation, Layer, Matrix, MlpParams, RngStream};
use bmax::pipeline::{Phase, Transition};
use bmax::posterior::{fit_laplace, laplace_predictive_linearized};

fn main() -> bmax::Result<()> {
    let noise_var: f64 = 0.05;
    let gamma2 = 2.0;
    let env = LinGauss::new(0.1, 50);
    let mut rng = RngStream::new(0, 0);
    let mut data = Vec::new();
    for t in 0..40 {
        let s = vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        let a = env.spec().random_action(&mut rng);
        let sp = env.step(&s, &a, &mut rng)?;
        data.push(Transition::new(s, a, sp, t, Phase::Warmup));
    }

    let weights = Matrix::from_rows(&[vec![-0.1, 0.1, 0.0], vec![0.0, -0.1, 0.5], vec![0.0; 3], vec![0.0; 3]])?;
    let layer = Layer {
        weights,
        bias: vec![0.0, 0.0, noise_var.ln(), noise_var.ln()],
        activation: Activation::Identity,
    };
    let model = GaussianMLP::new(
        MlpParams::from_layers(vec![layer])?,
        2,
        1,
        Normalizer::identity(2, 1),
        None,
    )?;
    let post = fit_laplace(&model, &data, model.n_params(), gamma2, 16)?;
    let lap = post.as_laplace().expect("laplace posterior");

    // Closed form for one output row: features [s, a, 1].
    let phi: Vec<Vec<f64>> = data.iter().map(|z| vec![z.s[0], z.s[1], z.a[0], 1.0]).collect();
    let x = Matrix::from_rows(&phi)?;
    let mut precision = x.t_matmul(&x)?.scale(1.0 / noise_var);
    precision.add_to_diag(gamma2);
    let q = [0.4, -0.7, 0.25, 1.0];
    let v = solve_psd(&precision, &Matrix::col_vector(&q))?;
    let closed = q.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>() + noise_var;

    let pred = laplace_predictive_linearized(lap, &q[..2], &q[2..3])?;
    println!("predictive mean      {:?}", pred.mean);
    println!("laplace variance     {:.10}", pred.cov_matrix()[(0, 0)]);
    println!("closed-form variance {closed:.10}");
    Ok(())
}
