//! Exploration utilities built on the posterior predictive.

use serde::{Deserialize, Serialize};

use super::measures::{check_eps, utility_entropy_samples, utility_jr, GaussianPrediction};
use crate::dyn_model::BatchPrediction;
use crate::error::{shape_err, Error, Result};
use crate::numkit::{cholesky_logdet, logdet_psd, Cholesky, Matrix, RngStream};
use crate::pipeline::Transition;
use crate::planner::{rollout_model, Controls, PropagationMode};
use crate::posterior::{posterior_samples, BackendKind, LaplacePredictive, LaplaceSub, PosteriorModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    JensenRenyi2,
    EntropySamples,
    EntropyLaplace,
}

impl UtilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UtilityKind::JensenRenyi2 => "jensen_renyi2",
            UtilityKind::EntropySamples => "entropy_samples",
            UtilityKind::EntropyLaplace => "entropy_laplace",
        }
    }
}

impl std::str::FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jensen_renyi2" => Ok(UtilityKind::JensenRenyi2),
            "entropy_samples" => Ok(UtilityKind::EntropySamples),
            "entropy_laplace" => Ok(UtilityKind::EntropyLaplace),
            other => Err(Error::InvalidArgument(format!(
                "unknown utility {other:?} (expected jensen_renyi2, entropy_samples or entropy_laplace)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    /// Ridge added before every log-determinant.
    pub epsilon: f64,
    /// Drop the aleatoric term from the Laplace entropy metric.
    pub homoscedastic: bool,
}

impl Default for UtilitySpec {
    fn default() -> Self {
        Self::new(UtilityKind::JensenRenyi2)
    }
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind) -> Self {
        Self {
            kind,
            epsilon: 1e-6,
            homoscedastic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eps(self.epsilon)
    }

    pub fn check_backend(&self, backend: BackendKind) -> Result<()> {
        if self.kind == UtilityKind::EntropyLaplace && backend != BackendKind::Laplace {
            return Err(Error::Incompatible {
                utility: self.kind.as_str().into(),
                backend: backend.as_str().into(),
            });
        }
        Ok(())
    }

    /// Utility of one query from the posterior sample predictions.
    pub fn from_components(&self, components: &[GaussianPrediction]) -> Result<f64> {
        match self.kind {
            UtilityKind::JensenRenyi2 => utility_jr(components),
            UtilityKind::EntropySamples => utility_entropy_samples(components, self.epsilon),
            UtilityKind::EntropyLaplace => Err(Error::InvalidArgument(
                "the Laplace entropy metric needs the linearized predictive".into(),
            )),
        }
    }
}

/// Entropy metric of the linearized Laplace predictive, `log|Σ + εI|`, with
/// `Σ` the epistemic part when `homoscedastic` and the full covariance otherwise.
pub fn utility_entropy_laplace(pred: &LaplacePredictive, homoscedastic: bool, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if homoscedastic {
        logdet_psd(&pred.epistemic, eps)
    } else {
        logdet_psd(&pred.total()?.cov_matrix(), eps)
    }
}

/// KL between `N(0, (H + UUᵀ)⁻¹)` and `N(0, H⁻¹)` for a rank-`m` update `U` (`k × m`).
pub fn precision_update_kl(h: &Cholesky, u: &Matrix) -> Result<f64> {
    if u.rows() != h.dim() {
        return shape_err("update rows must match the precision dimension");
    }
    let v = h.whiten(u)?;
    let mut i_plus_m = v.t_matmul(&v)?;
    i_plus_m.symmetrize();
    let m = i_plus_m.clone();
    i_plus_m.add_to_diag(1.0);
    let c = cholesky_logdet(&i_plus_m, 0.0)?;
    let trace = c.solve(&m)?.diag().iter().sum::<f64>();
    Ok((0.5 * (c.logdet - trace)).max(0.0))
}

/// Information gain of a transition about the subnetwork weights, holding the
/// posterior mean at `θ_MAP`. Under the Gauss–Newton curvature the value does
/// not depend on the observed `s′`.
pub fn laplace_information_gain(lap: &LaplaceSub, z: &Transition) -> Result<f64> {
    let g = lap.weighted_jacobian(&z.s, &z.a)?;
    precision_update_kl(&lap.chol, &g.transpose())
}

/// Per-row utilities of a batch of queries given the sample predictions of
/// every posterior draw at those queries.
pub fn utility_rows(spec: &UtilitySpec, preds: &[BatchPrediction]) -> Result<Vec<f64>> {
    let rows = preds.first().map_or(0, |p| p.mean.rows());
    (0..rows)
        .map(|r| {
            let comps = preds.iter().map(|p| p.row(r)).collect::<Result<Vec<_>>>()?;
            spec.from_components(&comps)
        })
        .collect()
}

/// Laplace entropy metric for a batch of queries.
pub fn laplace_utility_rows(
    lap: &LaplaceSub,
    spec: &UtilitySpec,
    states: &Matrix,
    actions: &Matrix,
) -> Result<Vec<f64>> {
    lap.predictive_batch(states, actions)?
        .iter()
        .map(|p| utility_entropy_laplace(p, spec.homoscedastic, spec.epsilon))
        .collect()
}

/// Exploration utility of action `a` in state `s`.
pub fn action_utility(
    post: &PosteriorModel,
    s: &[f64],
    a: &[f64],
    spec: &UtilitySpec,
    rng: &mut RngStream,
) -> Result<f64> {
    spec.validate()?;
    spec.check_backend(post.kind())?;
    match spec.kind {
        UtilityKind::EntropyLaplace => {
            let lap = post.as_laplace().expect("backend checked above");
            let p = lap.predictive_batch(&Matrix::row_vector(s), &Matrix::row_vector(a))?;
            utility_entropy_laplace(&p[0], spec.homoscedastic, spec.epsilon)
        }
        _ => spec.from_components(&posterior_samples(post, s, a, rng)?),
    }
}

/// Anything that scores a single `(s, a)` query against a posterior.
pub trait ActionScorer {
    fn score(&self, post: &PosteriorModel, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<f64>;
}

impl ActionScorer for UtilitySpec {
    fn score(&self, post: &PosteriorModel, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<f64> {
        action_utility(post, s, a, self, rng)
    }
}

/// Monte-Carlo estimate of a policy's utility: the utility averaged over the
/// state-action pairs visited by `n_rollouts` model rollouts, each under one
/// posterior draw.
#[allow(clippy::too_many_arguments)]
pub fn policy_utility_mc(
    post: &PosteriorModel,
    policy: &dyn Fn(&[f64], usize) -> Vec<f64>,
    s0: &[f64],
    horizon: usize,
    n_rollouts: usize,
    scorer: &dyn ActionScorer,
    rng: &mut RngStream,
) -> Result<f64> {
    if horizon == 0 || n_rollouts == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..n_rollouts {
        let mut roll_rng = rng.split(r as u64);
        let traj = rollout_model(
            post,
            s0,
            Controls::Policy(policy),
            horizon,
            PropagationMode::MemberConsistent,
            &mut roll_rng,
        )?;
        let mut score_rng = roll_rng.split(1);
        for (s, a) in traj.states.iter().zip(&traj.actions) {
            total += scorer.score(post, s, a, &mut score_rng)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
