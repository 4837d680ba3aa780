use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::explore::{fit_posterior, TAG_ENV, TAG_RESET};
use super::{ExperimentConfig, Transition};
use crate::envs::{Environment, Task};
use crate::error::{Error, Result};
use crate::numkit::RngStream;
use crate::planner::{plan_cem, CemConfig, PlanObjective};
use crate::posterior::PosteriorModel;

const TAG_EV_TRAIN: u64 = 11;
const TAG_EV_RUN: u64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub task: String,
    pub repeat: usize,
    /// Aggregated episode reward; `None` when the repeat failed.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub entries: Vec<RewardEntry>,
}

impl RewardTable {
    /// Mean over the successful repeats of `task`.
    pub fn mean(&self, task: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.task == task)
            .filter_map(|e| e.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Runs one real episode of `n_steps`, replanning on the task reward inside
/// the learned model, and returns the aggregated reward.
pub fn run_task_episode(
    env: &dyn Environment,
    post: &PosteriorModel,
    task: &Task,
    planner: &CemConfig,
    n_steps: usize,
    rng: &RngStream,
) -> Result<f64> {
    let spec = env.spec();
    let mut s = env.reset(&mut rng.split(TAG_RESET));
    let objective = PlanObjective::Reward(task);
    let exec = planner.replan_every.min(planner.horizon);
    let mut rewards = Vec::with_capacity(n_steps);
    let mut plan = None;
    for t in 0..n_steps {
        let pos = t % exec;
        if pos == 0 {
            plan = Some(plan_cem(
                post,
                &objective,
                &s,
                spec,
                planner,
                &mut rng.split(100).split(t as u64),
            )?);
        }
        let a = plan.as_ref().expect("planned at pos 0").sequence.row(pos).to_vec();
        let (a, _) = spec.clip_action(&a);
        let s_next = env.step(&s, &a, &mut rng.split(TAG_ENV).split(t as u64))?;
        rewards.push(task.reward(&s, &a, &s_next));
        s = s_next;
    }
    Ok(task.aggregation.aggregate(&rewards))
}

/// Scores a buffer snapshot on downstream tasks: each of the `n_k` repeats
/// trains a fresh evaluation posterior on the snapshot and runs every task
/// for `n_ev_steps` real steps.
pub fn evaluate(
    env: &dyn Environment,
    snapshot: &[Transition],
    tasks: &[Task],
    cfg: &ExperimentConfig,
) -> Result<RewardTable> {
    if snapshot.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty buffer".into()));
    }
    let spec = env.spec();
    let dims = (spec.state_dim, spec.action_dim);
    let master = RngStream::new(cfg.seed, 1).split(snapshot.len() as u64);
    let planner = cfg.eval_planner();
    let n_k = cfg.counters.n_k;
    let per_repeat: Vec<Vec<RewardEntry>> = (0..n_k)
        .into_par_iter()
        .map(|r| {
            let seed = master.split(TAG_EV_TRAIN).split(r as u64).next_u64();
            let fitted = fit_posterior(
                snapshot,
                &cfg.evaluation.backend,
                &cfg.model,
                &cfg.train,
                dims,
                seed,
                None,
            );
            tasks
                .iter()
                .enumerate()
                .map(|(ti, task)| {
                    let value = fitted.as_ref().ok().and_then(|(post, _)| {
                        let rng = master.split(TAG_EV_RUN).split((r * tasks.len() + ti) as u64);
                        run_task_episode(env, post, task, planner, cfg.counters.n_ev_steps, &rng).ok()
                    });
                    RewardEntry {
                        task: task.name.clone(),
                        repeat: r,
                        value,
                    }
                })
                .collect()
        })
        .collect();
    Ok(RewardTable {
        entries: per_repeat.into_iter().flatten().collect(),
    })
}

/// Real-environment steps used by exploration versus a model-free learner
/// that needs `n_sac` steps per task and repeat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub exploration_steps: u64,
    pub model_free_steps: u64,
    /// `model_free_steps / exploration_steps`; `None` when undefined.
    pub ratio: Option<f64>,
}

pub fn step_budget_report(cfg: &ExperimentConfig, n_tasks: usize, n_sac: u64) -> BudgetReport {
    let exploration_steps = cfg.counters.n_ex_steps as u64;
    let model_free_steps = n_tasks as u64 * cfg.counters.n_k as u64 * n_sac;
    let ratio =
        (model_free_steps > 0 && exploration_steps > 0).then(|| model_free_steps as f64 / exploration_steps as f64);
    BudgetReport {
        exploration_steps,
        model_free_steps,
        ratio,
    }
}

/// One line of `evaluation.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    /// Buffer length of the evaluated snapshot.
    pub snapshot_step: u64,
    pub task: String,
    pub repeat: usize,
    pub value: Option<f64>,
}

impl RewardTable {
    pub fn rows(&self, snapshot_step: u64) -> impl Iterator<Item = EvaluationRow> + '_ {
        self.entries.iter().map(move |e| EvaluationRow {
            snapshot_step,
            task: e.task.clone(),
            repeat: e.repeat,
            value: e.value,
        })
    }
}

pub fn write_evaluation_csv<W: std::io::Write>(w: W, rows: &[EvaluationRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_evaluation_csv<R: std::io::Read>(r: R) -> Result<Vec<EvaluationRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
