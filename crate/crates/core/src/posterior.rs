//! Approximate weight posteriors: deep ensembles, MC-dropout and subnetwork
//! Laplace, with their sampled and linearized predictive distributions.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyn_model::{train_map, BatchPrediction, DropoutSpec, GaussianMLP, ModelInit, ModelSpec, TrainConfig};
use crate::error::{shape_err, Error, Result};
use crate::infogain::GaussianPrediction;
use crate::numkit::{cholesky_logdet, read_checkpoint, write_checkpoint, Cholesky, DropoutMask, Matrix, RngStream};
use crate::pipeline::Transition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ensemble,
    McDropout,
    Laplace,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Ensemble => "ensemble",
            BackendKind::McDropout => "mc_dropout",
            BackendKind::Laplace => "laplace",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(BackendKind::Ensemble),
            "mc_dropout" => Ok(BackendKind::McDropout),
            "laplace" => Ok(BackendKind::Laplace),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend {other:?} (expected ensemble, mc_dropout or laplace)"
            ))),
        }
    }
}

/// Subnetwork Laplace approximation around a MAP network.
#[derive(Clone, Debug)]
pub struct LaplaceSub {
    pub model: GaussianMLP,
    /// Sorted flat parameter indices of the subnetwork.
    pub indices: Vec<usize>,
    /// Factor of the subnetwork posterior precision `H`.
    pub chol: Cholesky,
    pub gamma2: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug)]
pub enum PosteriorModel {
    Ensemble { members: Vec<GaussianMLP> },
    McDropout { model: GaussianMLP, n_samples: usize },
    Laplace(LaplaceSub),
}

/// One draw from the posterior, usable as a deterministic network.
#[derive(Clone, Debug)]
pub enum SampledModel<'a> {
    Member(&'a GaussianMLP),
    Masked(&'a GaussianMLP, Option<DropoutMask>),
    Weights(GaussianMLP),
}

impl SampledModel<'_> {
    pub fn predict_batch(&self, states: &Matrix, actions: &Matrix) -> Result<BatchPrediction> {
        match self {
            SampledModel::Member(m) => m.predict_batch(states, actions, None),
            SampledModel::Masked(m, mask) => m.predict_batch(states, actions, mask.as_ref()),
            SampledModel::Weights(m) => m.predict_batch(states, actions, None),
        }
    }
}

fn member_seed(seed: u64, member: usize) -> u64 {
    use rand::RngCore;
    RngStream::new(seed, 0xE5E).split(member as u64).next_u64()
}

/// Trains `n` members from independent initializations and shuffles.
/// Members train concurrently; results are identical to a sequential run.
pub fn fit_ensemble(buffer: &[Transition], n: usize, spec: &ModelSpec, cfg: &TrainConfig) -> Result<PosteriorModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
    }
    let members = (0..n)
        .into_par_iter()
        .map(|i| {
            let member_cfg = TrainConfig {
                seed: member_seed(cfg.seed, i),
                ..cfg.clone()
            };
            train_map(buffer, &member_cfg, ModelInit::Fresh(spec))
                .map(|(m, _)| m)
                .map_err(|e| Error::Member {
                    member: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorModel::Ensemble { members })
}

/// Trains one network with dropout active at rate `p` on the middle hidden layer.
pub fn fit_mc_dropout(
    buffer: &[Transition],
    p: f64,
    n_samples: usize,
    init: ModelInit<'_>,
    cfg: &TrainConfig,
) -> Result<PosteriorModel> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout rate {p} not in [0, 1)")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let model = match init {
        ModelInit::Fresh(spec) => {
            let spec = spec.clone().with_dropout(p);
            train_map(buffer, cfg, ModelInit::Fresh(&spec))?.0
        }
        ModelInit::Warm(m) => {
            let mut m = m.clone();
            let hidden = m.params.layers().len() - 1;
            m.dropout = if p > 0.0 {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("dropout needs a hidden layer".into()));
                }
                Some(DropoutSpec {
                    layer: hidden / 2,
                    rate: p,
                })
            } else {
                None
            };
            train_map(buffer, cfg, ModelInit::Warm(&m))?.0
        }
    };
    Ok(PosteriorModel::McDropout { model, n_samples })
}

/// Indices of the `n_sub` largest-magnitude parameters, sorted; ties go to the lower index.
pub fn select_subnetwork(theta: &[f64], n_sub: usize) -> Result<Vec<usize>> {
    if n_sub == 0 || n_sub > theta.len() {
        return Err(Error::InvalidArgument(format!(
            "subnetwork size {n_sub} not in [1, {}]",
            theta.len()
        )));
    }
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&i, &j| theta[j].abs().total_cmp(&theta[i].abs()).then(i.cmp(&j)));
    let mut chosen = order[..n_sub].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

const GGN_CHUNK: usize = 256;

/// Rows `Λ^{-1/2}·J` (state units) of the mean head for every query, stacked
/// as `(rows·|S|) × n_sub`, plus the predictions at the queries.
fn weighted_jacobian(
    model: &GaussianMLP,
    indices: &[usize],
    states: &Matrix,
    actions: &Matrix,
) -> Result<(Matrix, BatchPrediction)> {
    let x = model.input_matrix(states, actions)?;
    let sd = model.state_dim;
    let outputs: Vec<usize> = (0..sd).collect();
    let jac = model.params.output_jacobian(&x, &outputs, None)?;
    let mut g = jac.gather(indices)?;
    let out = crate::numkit::mlp_apply(&model.params, &x, None)?;
    let pred = model.decode(states, &out)?;
    for p in 0..states.rows() {
        for d in 0..sd {
            let w = model.normalizer.target_std[d] / pred.var[(p, d)].sqrt();
            for v in g.row_mut(p * sd + d) {
                *v *= w;
            }
        }
    }
    Ok((g, pred))
}

fn transitions_to_matrices(batch: &[Transition], sd: usize, ad: usize) -> Result<(Matrix, Matrix)> {
    let mut s = Matrix::zeros(batch.len(), sd);
    let mut a = Matrix::zeros(batch.len(), ad);
    for (r, t) in batch.iter().enumerate() {
        if t.s.len() != sd || t.a.len() != ad {
            return shape_err(format!("transition {r} has the wrong dimensions"));
        }
        s.row_mut(r).copy_from_slice(&t.s);
        a.row_mut(r).copy_from_slice(&t.a);
    }
    Ok((s, a))
}

/// Generalized Gauss–Newton precision `Σ Jᵀ Λ⁻¹ J + γ² I` over the subnetwork.
pub fn ggn_precision(model: &GaussianMLP, indices: &[usize], buffer: &[Transition], gamma2: f64) -> Result<Matrix> {
    let k = indices.len();
    let mut h = Matrix::zeros(k, k);
    for chunk in buffer.chunks(GGN_CHUNK) {
        let (s, a) = transitions_to_matrices(chunk, model.state_dim, model.action_dim)?;
        let (g, _) = weighted_jacobian(model, indices, &s, &a)?;
        crate::numkit::gemm(1.0, g.as_view().t(), g.as_view(), 1.0, h.as_mut_slice(), k);
    }
    h.symmetrize();
    h.add_to_diag(gamma2);
    Ok(h)
}

/// Laplace approximation over the `n_sub` largest weights of a trained network.
pub fn fit_laplace(
    model: &GaussianMLP,
    buffer: &[Transition],
    n_sub: usize,
    gamma2: f64,
    n_samples: usize,
) -> Result<PosteriorModel> {
    if !(gamma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Laplace prior precision must be > 0, got {gamma2}"
        )));
    }
    let indices = select_subnetwork(&model.params.flat(), n_sub)?;
    let h = ggn_precision(model, &indices, buffer, gamma2)?;
    let chol = cholesky_logdet(&h, 0.0)?;
    Ok(PosteriorModel::Laplace(LaplaceSub {
        model: model.clone(),
        indices,
        chol,
        gamma2,
        n_samples,
    }))
}

/// Linearized predictive split into its epistemic and aleatoric parts.
#[derive(Clone, Debug)]
pub struct LaplacePredictive {
    pub mean: Vec<f64>,
    /// `J H⁻¹ Jᵀ` in state units.
    pub epistemic: Matrix,
    /// `σ²_MAP(s, a)`.
    pub aleatoric: Vec<f64>,
}

impl LaplacePredictive {
    pub fn total(&self) -> Result<GaussianPrediction> {
        let mut cov = self.epistemic.clone();
        for (d, v) in self.aleatoric.iter().enumerate() {
            cov[(d, d)] += v;
        }
        GaussianPrediction::full(self.mean.clone(), cov)
    }
}

impl LaplaceSub {
    pub fn hessian(&self) -> Matrix {
        self.chol.reconstruct()
    }

    /// Posterior covariance `H⁻¹` of the subnetwork weights.
    pub fn covariance(&self) -> Result<Matrix> {
        self.chol.solve(&Matrix::identity(self.indices.len()))
    }

    /// Linearized predictive parts for a batch of queries.
    pub fn predictive_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<LaplacePredictive>> {
        let sd = self.model.state_dim;
        let x = self.model.input_matrix(states, actions)?;
        let outputs: Vec<usize> = (0..sd).collect();
        let jac = self.model.params.output_jacobian(&x, &outputs, None)?;
        let mut jt = jac.gather(&self.indices)?;
        let out = crate::numkit::mlp_apply(&self.model.params, &x, None)?;
        let pred = self.model.decode(states, &out)?;
        for p in 0..states.rows() {
            for d in 0..sd {
                let w = self.model.normalizer.target_std[d];
                for v in jt.row_mut(p * sd + d) {
                    *v *= w;
                }
            }
        }
        // V = L⁻¹ Jᵀ, so J H⁻¹ Jᵀ = Vᵀ V.
        let v = self.chol.whiten(&jt.transpose())?;
        let mut res = Vec::with_capacity(states.rows());
        for p in 0..states.rows() {
            let mut epi = Matrix::zeros(sd, sd);
            for i in 0..sd {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for r in 0..v.rows() {
                        acc += v[(r, p * sd + i)] * v[(r, p * sd + j)];
                    }
                    epi[(i, j)] = acc;
                    epi[(j, i)] = acc;
                }
            }
            res.push(LaplacePredictive {
                mean: pred.mean.row(p).to_vec(),
                epistemic: epi,
                aleatoric: pred.var.row(p).to_vec(),
            });
        }
        Ok(res)
    }

    /// Weighted Jacobian `Λ^{-1/2} J` of one query, `|S| × n_sub`.
    pub(crate) fn weighted_jacobian(&self, s: &[f64], a: &[f64]) -> Result<Matrix> {
        Ok(weighted_jacobian(
            &self.model,
            &self.indices,
            &Matrix::row_vector(s),
            &Matrix::row_vector(a),
        )?
        .0)
    }

    /// One network with subnetwork weights drawn from `N(θ_MAP, H⁻¹)`.
    pub fn sample_weights(&self, rng: &mut RngStream) -> Result<GaussianMLP> {
        let mut z: Vec<f64> = (0..self.indices.len()).map(|_| rng.standard_normal()).collect();
        self.chol.backward_solve(&mut z);
        let mut flat = self.model.params.flat();
        for (&i, dz) in self.indices.iter().zip(&z) {
            flat[i] += dz;
        }
        let mut m = self.model.clone();
        m.params.set_flat(&flat)?;
        Ok(m)
    }
}

/// Linearized Laplace predictive `N(μ_MAP, J H⁻¹ Jᵀ + diag σ²_MAP)` at one query.
pub fn laplace_predictive_linearized(lap: &LaplaceSub, s: &[f64], a: &[f64]) -> Result<GaussianPrediction> {
    lap.predictive_batch(&Matrix::row_vector(s), &Matrix::row_vector(a))?
        .remove(0)
        .total()
}

impl PosteriorModel {
    pub fn kind(&self) -> BackendKind {
        match self {
            PosteriorModel::Ensemble { .. } => BackendKind::Ensemble,
            PosteriorModel::McDropout { .. } => BackendKind::McDropout,
            PosteriorModel::Laplace(_) => BackendKind::Laplace,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            PosteriorModel::Ensemble { members } => members.len(),
            PosteriorModel::McDropout { n_samples, .. } => *n_samples,
            PosteriorModel::Laplace(l) => l.n_samples,
        }
    }

    /// The network used for point predictions (first member for ensembles).
    pub fn map_model(&self) -> &GaussianMLP {
        match self {
            PosteriorModel::Ensemble { members } => &members[0],
            PosteriorModel::McDropout { model, .. } => model,
            PosteriorModel::Laplace(l) => &l.model,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.map_model().state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.map_model().action_dim
    }

    pub fn as_laplace(&self) -> Option<&LaplaceSub> {
        match self {
            PosteriorModel::Laplace(l) => Some(l),
            _ => None,
        }
    }

    /// Draws the posterior's sample set: members in order, fresh dropout
    /// masks, or subnetwork weight draws.
    pub fn draw(&self, rng: &mut RngStream) -> Result<Vec<SampledModel<'_>>> {
        Ok(match self {
            PosteriorModel::Ensemble { members } => members.iter().map(SampledModel::Member).collect(),
            PosteriorModel::McDropout { model, n_samples } => (0..*n_samples)
                .map(|_| SampledModel::Masked(model, model.sample_mask(rng)))
                .collect(),
            PosteriorModel::Laplace(l) => (0..l.n_samples)
                .map(|_| l.sample_weights(rng).map(SampledModel::Weights))
                .collect::<Result<_>>()?,
        })
    }

    /// Predictive mean used for mean-mode propagation: average member mean
    /// for ensembles, the deterministic MAP pass otherwise.
    pub fn predictive_mean_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        match self {
            PosteriorModel::Ensemble { members } => {
                let mut acc = Matrix::zeros(states.rows(), states.cols());
                for m in members {
                    let p = m.predict_batch(states, actions, None)?;
                    acc = acc.add(&p.mean)?;
                }
                Ok(acc.scale(1.0 / members.len() as f64))
            }
            _ => Ok(self.map_model().predict_batch(states, actions, None)?.mean),
        }
    }

    /// Saves member checkpoints plus a `posterior.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let models: Vec<&GaussianMLP> = match self {
            PosteriorModel::Ensemble { members } => members.iter().collect(),
            PosteriorModel::McDropout { model, .. } => vec![model],
            PosteriorModel::Laplace(l) => vec![&l.model],
        };
        for (i, m) in models.iter().enumerate() {
            save_model(m, &dir.join(format!("member_{i}.ckpt")))?;
        }
        let sidecar = match self {
            PosteriorModel::Ensemble { members } => Sidecar {
                kind: BackendKind::Ensemble,
                members: members.len(),
                n_samples: members.len(),
                dropout_rate: 0.0,
                gamma2: None,
                indices: Vec::new(),
                chol: Vec::new(),
                jitter: 0.0,
            },
            PosteriorModel::McDropout { model, n_samples } => Sidecar {
                kind: BackendKind::McDropout,
                members: 1,
                n_samples: *n_samples,
                dropout_rate: model.dropout_rate(),
                gamma2: None,
                indices: Vec::new(),
                chol: Vec::new(),
                jitter: 0.0,
            },
            PosteriorModel::Laplace(l) => Sidecar {
                kind: BackendKind::Laplace,
                members: 1,
                n_samples: l.n_samples,
                dropout_rate: l.model.dropout_rate(),
                gamma2: Some(l.gamma2),
                indices: l.indices.clone(),
                chol: l.chol.lower.as_slice().to_vec(),
                jitter: l.chol.jitter,
            },
        };
        let f = BufWriter::new(fs::File::create(dir.join("posterior.json"))?);
        serde_json::to_writer_pretty(f, &sidecar)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let f = fs::File::open(dir.join("posterior.json"))?;
        let sc: Sidecar = serde_json::from_reader(BufReader::new(f))?;
        let mut models = (0..sc.members)
            .map(|i| load_model(&dir.join(format!("member_{i}.ckpt"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(match sc.kind {
            BackendKind::Ensemble => PosteriorModel::Ensemble { members: models },
            BackendKind::McDropout => PosteriorModel::McDropout {
                model: models.remove(0),
                n_samples: sc.n_samples,
            },
            BackendKind::Laplace => {
                let k = sc.indices.len();
                let lower = Matrix::from_vec(k, k, sc.chol)?;
                let chol = Cholesky::from_lower(lower, sc.jitter)?;
                PosteriorModel::Laplace(LaplaceSub {
                    model: models.remove(0),
                    indices: sc.indices,
                    chol,
                    gamma2: sc.gamma2.unwrap_or(1.0),
                    n_samples: sc.n_samples,
                })
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: BackendKind,
    members: usize,
    n_samples: usize,
    dropout_rate: f64,
    gamma2: Option<f64>,
    indices: Vec<usize>,
    chol: Vec<f64>,
    #[serde(default)]
    jitter: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    state_dim: usize,
    action_dim: usize,
    dropout: Option<DropoutSpec>,
    normalizer: crate::dyn_model::Normalizer,
    var_min: f64,
    var_max: f64,
}

pub fn save_model(model: &GaussianMLP, path: &Path) -> Result<()> {
    let extra = serde_json::to_value(ModelHeader {
        state_dim: model.state_dim,
        action_dim: model.action_dim,
        dropout: model.dropout,
        normalizer: model.normalizer.clone(),
        var_min: model.var_min,
        var_max: model.var_max,
    })?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut w, &model.params, extra)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GaussianMLP> {
    let r = BufReader::new(fs::File::open(path)?);
    let (params, extra) = read_checkpoint(r)?;
    let h: ModelHeader = serde_json::from_value(extra)?;
    let mut m = GaussianMLP::new(params, h.state_dim, h.action_dim, h.normalizer, h.dropout)?;
    m.var_min = h.var_min;
    m.var_max = h.var_max;
    Ok(m)
}

/// Predictions of every posterior sample at one query, in sample order.
pub fn posterior_samples(
    post: &PosteriorModel,
    s: &[f64],
    a: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<GaussianPrediction>> {
    let (sm, am) = (Matrix::row_vector(s), Matrix::row_vector(a));
    post.draw(rng)?
        .iter()
        .map(|m| m.predict_batch(&sm, &am)?.row(0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyn_model::{fit_normalizer, ModelArch, Normalizer};
    use crate::numkit::{Activation, Layer, MlpParams};
    use crate::pipeline::Phase;

    fn linear_buffer(n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|i| {
                let s = rng.uniform(-1.0, 1.0);
                let a = rng.uniform(-1.0, 1.0);
                Transition::new(vec![s], vec![a], vec![0.9 * s + 0.1 * a], i as u64, Phase::Warmup)
            })
            .collect()
    }

    fn small_spec() -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            ModelArch {
                hidden_width: 8,
                hidden_layers: 2,
                activation: Activation::Tanh,
            },
        )
    }

    fn fast_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn subnetwork_selection_examples() {
        assert_eq!(select_subnetwork(&[0.5, -2.0, 0.1], 1).unwrap(), vec![1]);
        assert_eq!(select_subnetwork(&[0.5, -2.0, 0.1], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_subnetwork(&[1.0, -1.0, 3.0], 2).unwrap(), vec![0, 2]);
        assert!(select_subnetwork(&[1.0], 0).is_err());
        assert!(select_subnetwork(&[1.0], 2).is_err());
    }

    #[test]
    fn single_member_ensemble_equals_train_map() {
        let buf = linear_buffer(32, 1);
        let cfg = fast_cfg(5);
        let post = fit_ensemble(&buf, 1, &small_spec(), &cfg).unwrap();
        let single_cfg = TrainConfig {
            seed: member_seed(5, 0),
            ..cfg
        };
        let (m, _) = train_map(&buf, &single_cfg, ModelInit::Fresh(&small_spec())).unwrap();
        let mut rng = RngStream::new(0, 0);
        let preds = posterior_samples(&post, &[0.2], &[0.1], &mut rng).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0], m.predict(&[0.2], &[0.1]).unwrap());
    }

    #[test]
    fn ensemble_is_deterministic_and_members_differ() {
        let buf = linear_buffer(32, 1);
        let a = fit_ensemble(&buf, 3, &small_spec(), &fast_cfg(9)).unwrap();
        let b = fit_ensemble(&buf, 3, &small_spec(), &fast_cfg(9)).unwrap();
        let (PosteriorModel::Ensemble { members: ma }, PosteriorModel::Ensemble { members: mb }) = (&a, &b) else {
            panic!()
        };
        assert_eq!(ma, mb);
        assert_ne!(ma[0].params, ma[1].params);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(posterior_samples(&a, &[0.0], &[0.0], &mut rng).unwrap().len(), 3);
    }

    #[test]
    fn dropout_zero_gives_identical_samples() {
        let buf = linear_buffer(32, 2);
        let post = fit_mc_dropout(&buf, 0.0, 5, ModelInit::Fresh(&small_spec()), &fast_cfg(1)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let preds = posterior_samples(&post, &[0.3], &[0.3], &mut rng).unwrap();
        assert!(preds.iter().all(|p| *p == preds[0]));
        assert_eq!(preds[0], post.map_model().predict(&[0.3], &[0.3]).unwrap());
    }

    #[test]
    fn dropout_samples_differ() {
        let buf = linear_buffer(32, 2);
        let post = fit_mc_dropout(&buf, 0.25, 32, ModelInit::Fresh(&small_spec()), &fast_cfg(1)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let preds = posterior_samples(&post, &[0.3], &[0.3], &mut rng).unwrap();
        assert_eq!(preds.len(), 32);
        assert!(preds.iter().any(|p| p.mean != preds[0].mean));
        assert!(fit_mc_dropout(&buf, 1.0, 4, ModelInit::Fresh(&small_spec()), &fast_cfg(1)).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_mean_activation() {
        let mut rng = RngStream::new(11, 0);
        let width = 50;
        let act: Vec<f64> = (0..width).map(|i| 0.1 + (i as f64 * 0.37).sin().abs()).collect();
        let full: f64 = act.iter().sum();
        let mut acc = 0.0;
        for _ in 0..1000 {
            if let DropoutMask::Shared { scale, .. } = DropoutMask::sample_shared(0, width, 0.25, &mut rng) {
                acc += act.iter().zip(&scale).map(|(a, s)| a * s).sum::<f64>();
            }
        }
        assert!((acc / 1000.0 - full).abs() / full < 0.05);
    }

    fn linear_model(state_dim: usize, action_dim: usize) -> GaussianMLP {
        let layer = Layer {
            weights: Matrix::zeros(2 * state_dim, state_dim + action_dim),
            bias: vec![0.0; 2 * state_dim],
            activation: Activation::Identity,
        };
        GaussianMLP::new(
            MlpParams::from_layers(vec![layer]).unwrap(),
            state_dim,
            action_dim,
            Normalizer::identity(state_dim, action_dim),
            None,
        )
        .unwrap()
    }

    #[test]
    fn empty_buffer_gives_prior() {
        let m = linear_model(1, 1);
        let post = fit_laplace(&m, &[], 6, 2.5, 4).unwrap();
        let lap = post.as_laplace().unwrap();
        let h = lap.hessian();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 2.5 } else { 0.0 };
                assert!((h[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hessian_diagonal_at_least_prior() {
        let buf = linear_buffer(40, 3);
        let mut rng = RngStream::new(0, 0);
        let m = GaussianMLP::random(&small_spec(), fit_normalizer(&buf).unwrap(), &mut rng).unwrap();
        let post = fit_laplace(&m, &buf, 20, 0.7, 4).unwrap();
        let h = post.as_laplace().unwrap().hessian();
        assert!(h.diag().iter().all(|&v| v >= 0.7 - 1e-12));
    }

    #[test]
    fn constant_mean_head_gives_aleatoric_covariance() {
        // Subnetwork restricted to log-variance weights: the mean head does not depend on it.
        let mut m = linear_model(1, 1);
        m.params.layers_mut()[0].bias[1] = -1.0;
        let lv_slots = [2, 3, 5];
        let h = Matrix::identity(3);
        let lap = LaplaceSub {
            model: m.clone(),
            indices: lv_slots.to_vec(),
            chol: cholesky_logdet(&h, 0.0).unwrap(),
            gamma2: 1.0,
            n_samples: 2,
        };
        let p = laplace_predictive_linearized(&lap, &[0.4], &[0.1]).unwrap();
        assert_eq!(p.cov_matrix()[(0, 0)], (-1.0f64).exp());
    }

    #[test]
    fn strong_prior_collapses_samples_to_map() {
        let buf = linear_buffer(40, 3);
        let mut rng = RngStream::new(0, 0);
        let m = GaussianMLP::random(&small_spec(), fit_normalizer(&buf).unwrap(), &mut rng).unwrap();
        let post = fit_laplace(&m, &buf, 30, 1e12, 16).unwrap();
        let map = m.predict(&[0.1], &[0.2]).unwrap();
        let preds = posterior_samples(&post, &[0.1], &[0.2], &mut rng).unwrap();
        let avg: f64 = preds.iter().map(|p| p.mean[0]).sum::<f64>() / preds.len() as f64;
        assert!((avg - map.mean[0]).abs() < 1e-3);
    }

    #[test]
    fn save_load_round_trip() {
        let buf = linear_buffer(40, 3);
        let mut rng = RngStream::new(0, 0);
        let m = GaussianMLP::random(
            &small_spec().with_dropout(0.25),
            fit_normalizer(&buf).unwrap(),
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        for post in [
            fit_laplace(&m, &buf, 10, 1.0, 4).unwrap(),
            PosteriorModel::McDropout {
                model: m.clone(),
                n_samples: 3,
            },
            PosteriorModel::Ensemble {
                members: vec![m.clone(), m.clone()],
            },
        ] {
            post.save(dir.path()).unwrap();
            let back = PosteriorModel::load(dir.path()).unwrap();
            assert_eq!(back.kind(), post.kind());
            assert_eq!(back.map_model(), post.map_model());
            assert_eq!(back.n_samples(), post.n_samples());
            if let (Some(a), Some(b)) = (post.as_laplace(), back.as_laplace()) {
                assert_eq!(a.indices, b.indices);
                assert_eq!(a.chol.lower, b.chol.lower);
            }
        }
    }
}
