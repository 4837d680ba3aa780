use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{ause, storage_cost, Ause, AUSE_BINS};
use crate::dyn_model::{train_map, ModelInit};
use crate::error::{Error, Result};
use crate::infogain::{laplace_utility_rows, utility_rows, UtilityKind, UtilitySpec};
use crate::numkit::{Matrix, RngStream};
use crate::pipeline::{fit_posterior, BackendConfig, ModelSection, TrainSection, Transition};
use crate::posterior::{BackendKind, PosteriorModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub backend: BackendKind,
    pub utility: UtilityKind,
    pub n_train: usize,
    pub n_test: usize,
    pub ause: Ause,
}

fn query_matrices(data: &[Transition]) -> Result<(Matrix, Matrix, Matrix)> {
    let rows =
        |f: fn(&Transition) -> &Vec<f64>| Matrix::from_rows(&data.iter().map(|z| f(z).clone()).collect::<Vec<_>>());
    Ok((rows(|z| &z.s)?, rows(|z| &z.a)?, rows(|z| &z.s_next)?))
}

/// Per-point utilities of `(s, a)` rows under `post`; sample-based utilities
/// share one set of posterior draws across all rows.
pub(crate) fn batch_utilities(
    post: &PosteriorModel,
    spec: &UtilitySpec,
    states: &Matrix,
    actions: &Matrix,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    spec.check_backend(post.kind())?;
    if spec.kind == UtilityKind::EntropyLaplace {
        let lap = post.as_laplace().expect("backend checked above");
        return laplace_utility_rows(lap, spec, states, actions);
    }
    let preds = post
        .draw(rng)?
        .iter()
        .map(|m| m.predict_batch(states, actions))
        .collect::<Result<Vec<_>>>()?;
    utility_rows(spec, &preds)
}

/// Fits `backend` on the chronological prefix of `buffer` and scores how well
/// the utility ranks the prediction errors on the remaining suffix.
#[allow(clippy::too_many_arguments)]
pub fn calibration_run(
    buffer: &[Transition],
    split: f64,
    backend: &BackendConfig,
    utility: &UtilitySpec,
    model: &ModelSection,
    train: &TrainSection,
    seed: u64,
) -> Result<CalibrationRecord> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {split}"
        )));
    }
    utility.check_backend(backend.kind)?;
    let n_train = (buffer.len() as f64 * split).round() as usize;
    let n_test = buffer.len().saturating_sub(n_train);
    if n_train == 0 || n_test < 2 {
        return Err(Error::InvalidArgument(format!(
            "buffer of {} transitions is too small for a {split} split",
            buffer.len()
        )));
    }
    let (prefix, suffix) = buffer.split_at(n_train);
    let dims = (prefix[0].s.len(), prefix[0].a.len());
    let root = RngStream::new(seed, 0xCA1);
    let (post, _) = fit_posterior(prefix, backend, model, train, dims, root.split(0).next_u64(), None)?;
    let (states, actions, next) = query_matrices(suffix)?;
    let mean = post.predictive_mean_batch(&states, &actions)?;
    let errors: Vec<f64> = (0..n_test)
        .map(|r| {
            mean.row(r)
                .iter()
                .zip(next.row(r))
                .map(|(m, t)| (m - t).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let uncertainties = batch_utilities(&post, utility, &states, &actions, &mut root.split(1))?;
    Ok(CalibrationRecord {
        backend: backend.kind,
        utility: utility.kind,
        n_train,
        n_test,
        ause: ause(&errors, &uncertainties, AUSE_BINS.min(n_test))?,
    })
}

/// Wall-clock cost of one backend, or of the plain MAP network when `backend`
/// is `None` in the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// Backend name, or `map` for a single network.
    pub backend: String,
    pub n: usize,
    pub fit_seconds: f64,
    /// Time to produce utilities for one batch of queries.
    pub infer_seconds: f64,
    pub storage_params: u128,
}

/// Times fitting and single-batch utility inference for a plain MAP network
/// and each backend on the same buffer.
pub fn bench_backends(
    buffer: &[Transition],
    backends: &[(BackendConfig, UtilitySpec)],
    model: &ModelSection,
    train: &TrainSection,
    seed: u64,
    batch: usize,
) -> Result<Vec<TimingRow>> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("bench needs a non-empty buffer".into()));
    }
    let dims = (buffer[0].s.len(), buffer[0].a.len());
    let rows = batch.clamp(1, buffer.len());
    let (states, actions, _) = query_matrices(&buffer[buffer.len() - rows..])?;
    let root = RngStream::new(seed, 0xBE4C);
    let mut out = Vec::with_capacity(backends.len() + 1);

    let spec = model.spec(dims.0, dims.1);
    let cfg = train.to_train_config(1.0, root.split(0).next_u64(), false, buffer.len());
    let t = Instant::now();
    let (map, _) = train_map(buffer, &cfg, ModelInit::Fresh(&spec))?;
    let fit_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    map.predict_batch(&states, &actions, None)?;
    out.push(TimingRow {
        backend: "map".into(),
        n: 1,
        fit_seconds,
        infer_seconds: t.elapsed().as_secs_f64(),
        storage_params: storage_cost(1, map.n_params() as u64, 0),
    });

    for (i, (backend, utility)) in backends.iter().enumerate() {
        let seed = root.split(1 + i as u64).next_u64();
        let t = Instant::now();
        let (post, _) = fit_posterior(buffer, backend, model, train, dims, seed, None)?;
        let fit_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        batch_utilities(&post, utility, &states, &actions, &mut root.split(100 + i as u64))?;
        let infer_seconds = t.elapsed().as_secs_f64();
        let n_weights = post.map_model().n_params() as u64;
        let storage_params = match &post {
            PosteriorModel::Ensemble { members } => storage_cost(members.len() as u64, n_weights, 0),
            PosteriorModel::McDropout { .. } => storage_cost(1, n_weights, 0),
            PosteriorModel::Laplace(lap) => storage_cost(1, n_weights, lap.indices.len() as u64),
        };
        out.push(TimingRow {
            backend: backend.kind.as_str().into(),
            n: backend.n,
            fit_seconds,
            infer_seconds,
            storage_params,
        });
    }
    Ok(out)
}
