//! Cross-entropy-method planning over open-loop action sequences scored by
//! rollouts of the learned model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyn_model::BatchPrediction;
use crate::envs::{EnvSpec, Task};
use crate::error::{Error, Result};
use crate::infogain::{laplace_utility_rows, utility_rows, UtilityKind, UtilitySpec};
use crate::numkit::{Matrix, RngStream};
use crate::posterior::{PosteriorModel, SampledModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Follow the posterior predictive mean.
    Mean,
    /// Draw each next state from the predictive of a randomly chosen posterior sample.
    Sample,
    /// Follow one posterior sample for the whole rollout.
    MemberConsistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub horizon: usize,
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    /// Low-pass factor on sampled action noise; 0 gives white noise.
    pub smoothing: f64,
    /// Sequences scored per batched model query.
    pub n_act: usize,
    /// Initial sampling std as a fraction of the half action range.
    pub init_std: f64,
    /// Plan actions executed before replanning.
    pub replan_every: usize,
    /// Overrides the objective's default propagation mode.
    pub propagation: Option<PropagationMode>,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            population: 64,
            elite_frac: 0.125,
            iterations: 4,
            smoothing: 0.5,
            n_act: 128,
            init_std: 0.5,
            replan_every: 5,
            propagation: None,
        }
    }
}

impl CemConfig {
    pub fn n_elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).clamp(1, self.population.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("planner.{key}"),
                message: message.into(),
            })
        };
        if self.horizon == 0 {
            return bad("horizon", "must be >= 1");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return bad("elite_frac", "must be in (0, 1]");
        }
        if self.population == 0 {
            return bad("population", "must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad("smoothing", "must be in [0, 1)");
        }
        if self.n_act == 0 {
            return bad("n_act", "must be >= 1");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std", "must be > 0");
        }
        if self.replan_every == 0 {
            return bad("replan_every", "must be >= 1");
        }
        Ok(())
    }
}

/// Per-step reward over `(s, a, s′)`.
pub trait RewardFn: Sync {
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64], &[f64]) -> f64 + Sync> RewardFn for F {
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        self(s, a, s_next)
    }
}

impl RewardFn for Task {
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        Task::reward(self, s, a, s_next)
    }
}

/// What a planned sequence is scored by: the sum over the horizon of per-step
/// rewards or exploration utilities.
#[derive(Clone, Copy)]
pub enum PlanObjective<'a> {
    Reward(&'a dyn RewardFn),
    Utility(UtilitySpec),
    /// Adds a constant to every per-step score.
    Shifted(&'a PlanObjective<'a>, f64),
}

impl PlanObjective<'_> {
    fn base(&self) -> (&PlanObjective<'_>, f64) {
        match self {
            PlanObjective::Shifted(inner, c) => {
                let (b, c2) = inner.base();
                (b, c + c2)
            }
            other => (other, 0.0),
        }
    }

    pub fn default_mode(&self) -> PropagationMode {
        match self.base().0 {
            PlanObjective::Utility(_) => PropagationMode::MemberConsistent,
            _ => PropagationMode::Mean,
        }
    }
}

/// Actions to roll out: a fixed sequence or a state feedback policy `π(s, t)`.
#[derive(Clone, Copy)]
pub enum Controls<'a> {
    Sequence(&'a [Vec<f64>]),
    Policy(&'a dyn Fn(&[f64], usize) -> Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `horizon + 1` states unless truncated.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Set when a non-finite state stopped the rollout early.
    pub truncated: bool,
}

/// Rolls the learned model forward from `s0`.
pub fn rollout_model(
    post: &PosteriorModel,
    s0: &[f64],
    controls: Controls<'_>,
    horizon: usize,
    mode: PropagationMode,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        states: vec![s0.to_vec()],
        actions: Vec::with_capacity(horizon),
        truncated: false,
    };
    if horizon == 0 {
        return Ok(traj);
    }
    let models = post.draw(rng)?;
    let fixed = rng.next_index(models.len());
    let mut s = s0.to_vec();
    for t in 0..horizon {
        let a = match controls {
            Controls::Sequence(seq) => seq
                .get(t)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("action sequence shorter than horizon {horizon}")))?,
            Controls::Policy(pi) => pi(&s, t),
        };
        let (sm, am) = (Matrix::row_vector(&s), Matrix::row_vector(&a));
        let next = match mode {
            PropagationMode::Mean => post.predictive_mean_batch(&sm, &am)?.row(0).to_vec(),
            PropagationMode::MemberConsistent => models[fixed].predict_batch(&sm, &am)?.mean.row(0).to_vec(),
            PropagationMode::Sample => {
                let k = rng.next_index(models.len());
                let p = models[k].predict_batch(&sm, &am)?;
                (0..s.len())
                    .map(|d| p.mean[(0, d)] + p.var[(0, d)].sqrt() * rng.standard_normal())
                    .collect()
            }
        };
        traj.actions.push(a);
        if next.iter().any(|v| !v.is_finite()) {
            traj.truncated = true;
            break;
        }
        traj.states.push(next.clone());
        s = next;
    }
    Ok(traj)
}

/// Scores a block of action sequences (each `horizon × |A|`) from `s0`.
#[allow(clippy::too_many_arguments)]
fn score_block(
    post: &PosteriorModel,
    models: &[SampledModel<'_>],
    objective: &PlanObjective<'_>,
    mode: PropagationMode,
    s0: &[f64],
    seqs: &[Matrix],
    first_index: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let (base, shift) = objective.base();
    let n = seqs.len();
    let sd = s0.len();
    let horizon = seqs[0].rows();
    let ad = seqs[0].cols();
    let mut states = Matrix::zeros(n, sd);
    for r in 0..n {
        states.row_mut(r).copy_from_slice(s0);
    }
    let mut scores = vec![0.0; n];
    let mut row_rngs: Vec<RngStream> = (0..n).map(|r| rng.split((first_index + r) as u64)).collect();
    let assigned: Vec<usize> = (0..n).map(|r| (first_index + r) % models.len()).collect();
    let needs_samples = matches!(mode, PropagationMode::MemberConsistent | PropagationMode::Sample)
        || matches!(base, PlanObjective::Utility(u) if u.kind != UtilityKind::EntropyLaplace);
    for t in 0..horizon {
        let mut actions = Matrix::zeros(n, ad);
        for r in 0..n {
            actions.row_mut(r).copy_from_slice(seqs[r].row(t));
        }
        let preds: Vec<BatchPrediction> = if needs_samples {
            models
                .iter()
                .map(|m| m.predict_batch(&states, &actions))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let next = match mode {
            PropagationMode::Mean => post.predictive_mean_batch(&states, &actions)?,
            PropagationMode::MemberConsistent => {
                let mut next = Matrix::zeros(n, sd);
                for r in 0..n {
                    next.row_mut(r).copy_from_slice(preds[assigned[r]].mean.row(r));
                }
                next
            }
            PropagationMode::Sample => {
                let mut next = Matrix::zeros(n, sd);
                for r in 0..n {
                    let g = &mut row_rngs[r];
                    let k = g.next_index(models.len());
                    for d in 0..sd {
                        next[(r, d)] = preds[k].mean[(r, d)] + preds[k].var[(r, d)].sqrt() * g.standard_normal();
                    }
                }
                next
            }
        };
        let step: Vec<f64> = match base {
            PlanObjective::Reward(f) => (0..n)
                .map(|r| f.reward(states.row(r), actions.row(r), next.row(r)))
                .collect(),
            PlanObjective::Utility(u) if u.kind == UtilityKind::EntropyLaplace => {
                let lap = post.as_laplace().ok_or_else(|| Error::Incompatible {
                    utility: u.kind.as_str().into(),
                    backend: post.kind().as_str().into(),
                })?;
                laplace_utility_rows(lap, u, &states, &actions)?
            }
            PlanObjective::Utility(u) => utility_rows(u, &preds)?,
            PlanObjective::Shifted(..) => unreachable!("base() strips shifts"),
        };
        for r in 0..n {
            scores[r] += step[r];
        }
        states = next;
    }
    Ok(scores
        .into_iter()
        .map(|v| {
            let v = v + shift * horizon as f64;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect())
}

/// Scores every sequence, `n_act` at a time; results do not depend on `n_act`.
#[allow(clippy::too_many_arguments)]
pub fn score_sequences(
    post: &PosteriorModel,
    models: &[SampledModel<'_>],
    objective: &PlanObjective<'_>,
    mode: PropagationMode,
    s0: &[f64],
    seqs: &[Matrix],
    n_act: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if seqs.is_empty() {
        return Ok(Vec::new());
    }
    let blocks: Vec<Result<Vec<f64>>> = seqs
        .par_chunks(n_act.max(1))
        .enumerate()
        .map(|(b, chunk)| score_block(post, models, objective, mode, s0, chunk, b * n_act.max(1), rng))
        .collect();
    let mut out = Vec::with_capacity(seqs.len());
    for b in blocks {
        match b {
            Ok(v) => out.extend(v),
            // A faulty rollout scores -inf instead of aborting the plan.
            Err(Error::Numeric(_)) | Err(Error::Singular { .. }) => {
                out.extend(std::iter::repeat_n(f64::NEG_INFINITY, n_act))
            }
            Err(e) => return Err(e),
        }
    }
    out.truncate(seqs.len());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub first_action: Vec<f64>,
    /// Best sequence, `horizon × |A|`.
    pub sequence: Matrix,
    pub score: f64,
    /// Best score seen after each iteration.
    pub trace: Vec<f64>,
}

/// Cross-entropy-method search for the best open-loop action sequence.
pub fn plan_cem(
    post: &PosteriorModel,
    objective: &PlanObjective<'_>,
    s0: &[f64],
    env: &EnvSpec,
    cfg: &CemConfig,
    rng: &mut RngStream,
) -> Result<Plan> {
    cfg.validate()?;
    if let PlanObjective::Utility(u) = objective.base().0 {
        u.validate()?;
        u.check_backend(post.kind())?;
    }
    let mode = cfg.propagation.unwrap_or_else(|| objective.default_mode());
    let (h, ad) = (cfg.horizon, env.action_dim);
    let mut draw_rng = rng.split(0);
    let models = post.draw(&mut draw_rng)?;
    let mut mean = Matrix::zeros(h, ad);
    let mut std = Matrix::zeros(h, ad);
    for t in 0..h {
        for j in 0..ad {
            let (lo, hi) = (env.action_low[j], env.action_high[j]);
            mean[(t, j)] = 0.5 * (lo + hi);
            std[(t, j)] = cfg.init_std * 0.5 * (hi - lo);
        }
    }
    let n_elite = cfg.n_elites();
    let beta = cfg.smoothing;
    let gain = (1.0 - beta * beta).sqrt();
    let mut best: Option<(Matrix, f64)> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let it_rng = rng.split(1 + it as u64);
        let mut sample_rng = it_rng.split(0);
        let mut pop: Vec<Matrix> = (0..cfg.population)
            .map(|_| {
                let mut seq = Matrix::zeros(h, ad);
                let mut noise = vec![0.0; ad];
                for t in 0..h {
                    for j in 0..ad {
                        let z = sample_rng.standard_normal();
                        noise[j] = if t == 0 { z } else { beta * noise[j] + gain * z };
                        let v = mean[(t, j)] + std[(t, j)] * noise[j];
                        seq[(t, j)] = v.clamp(env.action_low[j], env.action_high[j]);
                    }
                }
                seq
            })
            .collect();
        if let Some((b, _)) = &best {
            pop[0] = b.clone();
        }
        let scores = score_sequences(post, &models, objective, mode, s0, &pop, cfg.n_act, &it_rng.split(1))?;
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        let top = order[0];
        if best.as_ref().is_none_or(|(_, s)| scores[top] > *s) {
            best = Some((pop[top].clone(), scores[top]));
        }
        trace.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1));
        for t in 0..h {
            for j in 0..ad {
                let vals: Vec<f64> = order[..n_elite].iter().map(|&i| pop[i][(t, j)]).collect();
                let m = vals.iter().sum::<f64>() / n_elite as f64;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n_elite as f64;
                mean[(t, j)] = m;
                std[(t, j)] = v.sqrt().max(1e-3 * (env.action_high[j] - env.action_low[j]));
            }
        }
    }
    let (sequence, score) = best.expect("at least one iteration");
    Ok(Plan {
        first_action: sequence.row(0).to_vec(),
        sequence,
        score,
        trace,
    })
}
