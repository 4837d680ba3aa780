use std::fs;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, ModelSection, TrainSection};
use super::rundir::{write_atomic, RunDir};
use super::{state_hash, Event, ExperimentConfig, Phase, ReplayBuffer, Transition};
use crate::dyn_model::{train_map, GaussianMLP, ModelInit};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::infogain::action_utility;
use crate::numkit::{Matrix, RngStream};
use crate::planner::{plan_cem, PlanObjective};
use crate::posterior::{
    fit_ensemble, fit_laplace, fit_mc_dropout, load_model, save_model, BackendKind, PosteriorModel,
};

pub(crate) const TAG_ENV: u64 = 1;
pub(crate) const TAG_RESET: u64 = 2;
const TAG_WARM: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_PLAN: u64 = 5;
const TAG_UTIL: u64 = 6;

/// Fits the configured posterior on `buffer`. Ensembles always start from
/// fresh initializations; the other backends continue from `warm` when given.
/// Returns the posterior and the network to warm-start the next fit from.
pub fn fit_posterior(
    buffer: &[Transition],
    backend: &BackendConfig,
    model: &ModelSection,
    train: &TrainSection,
    dims: (usize, usize),
    seed: u64,
    warm: Option<&GaussianMLP>,
) -> Result<(PosteriorModel, Option<GaussianMLP>)> {
    let spec = model.spec(dims.0, dims.1);
    let n = buffer.len();
    match backend.kind {
        BackendKind::Ensemble => {
            let cfg = train.to_train_config(backend.gamma2, seed, false, n);
            Ok((fit_ensemble(buffer, backend.n, &spec, &cfg)?, None))
        }
        BackendKind::McDropout => {
            let cfg = train.to_train_config(backend.gamma2, seed, warm.is_some(), n);
            let init = warm.map_or(ModelInit::Fresh(&spec), ModelInit::Warm);
            let post = fit_mc_dropout(buffer, backend.p, backend.n, init, &cfg)?;
            let next = post.map_model().clone();
            Ok((post, Some(next)))
        }
        BackendKind::Laplace => {
            let cfg = train.to_train_config(backend.gamma2, seed, warm.is_some(), n);
            let init = warm.map_or(ModelInit::Fresh(&spec), ModelInit::Warm);
            let (map, _) = train_map(buffer, &cfg, init)?;
            let n_sub = backend.n_sub.min(map.n_params());
            let post = fit_laplace(&map, buffer, n_sub, backend.gamma2, backend.n)?;
            Ok((post, Some(map)))
        }
    }
}

/// Loop position saved at every cycle boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LoopState {
    /// Index of the next real step (equals the buffer length).
    step: u64,
    state: Vec<f64>,
    episode: u64,
    episode_step: usize,
    cycle: u64,
    events: usize,
    has_warm_model: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ExploreOptions {
    /// Continue from the run directory's last checkpoint.
    pub resume: bool,
    /// Stop after this many model-fit cycles (for staged runs).
    pub max_cycles: Option<u64>,
}

#[derive(Debug)]
pub struct ExploreOutput {
    pub buffer: ReplayBuffer,
    pub events: Vec<Event>,
    /// False when stopped early by `max_cycles`.
    pub completed: bool,
    pub cycles: u64,
}

struct Explorer<'a> {
    env: &'a dyn Environment,
    cfg: &'a ExperimentConfig,
    master: RngStream,
    buffer: ReplayBuffer,
    events: Vec<Event>,
    s: Vec<f64>,
    episode: u64,
    episode_step: usize,
}

impl Explorer<'_> {
    fn reset(&mut self) {
        let step = self.buffer.len() as u64;
        self.s = self.env.reset(&mut self.master.split(TAG_RESET).split(self.episode));
        self.episode_step = 0;
        self.events.push(Event::Reset {
            step,
            episode: self.episode,
        });
    }

    /// Executes one real step; returns true when the episode was reset.
    fn step(&mut self, a: &[f64], phase: Phase, utility: Option<f64>) -> Result<bool> {
        let t = self.buffer.len() as u64;
        let spec = self.env.spec();
        let (a, clipped) = spec.clip_action(a);
        let mut rng = self.master.split(TAG_ENV).split(t);
        let s_next = self.env.step(&self.s, &a, &mut rng).map_err(|e| match e {
            Error::EnvFault { message, .. } => Error::EnvFault {
                step: t as usize,
                message,
            },
            other => other,
        })?;
        self.events.push(Event::Step {
            step: t,
            phase,
            utility,
            action: a.clone(),
            clipped,
            state_hash: state_hash(&s_next),
        });
        self.buffer
            .push(Transition::new(self.s.clone(), a, s_next.clone(), t, phase))?;
        let len = self.buffer.len();
        if len % self.cfg.counters.n_eval == 0 {
            self.events.push(Event::Snapshot {
                step: t + 1,
                buffer_len: len,
            });
        }
        self.s = s_next;
        self.episode_step += 1;
        if self.episode_step >= spec.horizon {
            self.episode += 1;
            self.reset();
            return Ok(true);
        }
        Ok(false)
    }
}

/// Runs exploration in memory (no run directory).
pub fn explore(env: &dyn Environment, cfg: &ExperimentConfig) -> Result<ExploreOutput> {
    explore_run(env, cfg, None, &ExploreOptions::default())
}

/// Runs exploration, checkpointing into `dir` at every cycle boundary.
pub fn explore_run(
    env: &dyn Environment,
    cfg: &ExperimentConfig,
    dir: Option<&RunDir>,
    opts: &ExploreOptions,
) -> Result<ExploreOutput> {
    cfg.validate()?;
    let spec = env.spec().clone();
    let dims = (spec.state_dim, spec.action_dim);
    let c = &cfg.counters;
    let mut ex = Explorer {
        env,
        cfg,
        master: RngStream::new(cfg.seed, 0),
        buffer: ReplayBuffer::new(dims.0, dims.1),
        events: Vec::new(),
        s: Vec::new(),
        episode: 0,
        episode_step: 0,
    };
    let mut cycle = 0u64;
    let mut warm: Option<GaussianMLP> = None;
    let state_path = dir.map(|d| d.checkpoints().join("state.json"));
    let warm_path = dir.map(|d| d.checkpoints().join("warm.ckpt"));

    let resumed = match (&state_path, dir) {
        (Some(p), Some(d)) if opts.resume && p.exists() => {
            let st: LoopState = serde_json::from_str(&fs::read_to_string(p)?)?;
            let buf = d.read_buffer()?;
            ex.buffer = buf.snapshot(st.step as usize);
            if ex.buffer.len() as u64 != st.step {
                return Err(Error::InvalidArgument("checkpoint is ahead of buffer.csv".into()));
            }
            let mut evs = d.read_events()?;
            evs.truncate(st.events);
            ex.events = evs;
            ex.s = st.state;
            ex.episode = st.episode;
            ex.episode_step = st.episode_step;
            cycle = st.cycle;
            if st.has_warm_model {
                warm = Some(load_model(warm_path.as_ref().expect("dir given"))?);
            }
            true
        }
        _ => false,
    };

    if !resumed {
        ex.reset();
        while ex.buffer.len() < c.n_ex_warm {
            let t = ex.buffer.len() as u64;
            let a = spec.random_action(&mut ex.master.split(TAG_WARM).split(t));
            ex.step(&a, Phase::Warmup, None)?;
        }
    }

    let checkpoint = |ex: &Explorer<'_>, cycle: u64, warm: &Option<GaussianMLP>| -> Result<()> {
        let (Some(d), Some(sp), Some(wp)) = (dir, &state_path, &warm_path) else {
            return Ok(());
        };
        d.write_buffer(&ex.buffer)?;
        d.write_events(&ex.events)?;
        if let Some(m) = warm {
            save_model(m, wp)?;
        }
        let st = LoopState {
            step: ex.buffer.len() as u64,
            state: ex.s.clone(),
            episode: ex.episode,
            episode_step: ex.episode_step,
            cycle,
            events: ex.events.len(),
            has_warm_model: warm.is_some(),
        };
        write_atomic(sp, serde_json::to_string_pretty(&st)?.as_bytes())
    };
    checkpoint(&ex, cycle, &warm)?;

    let mut cycles_run = 0u64;
    while ex.buffer.len() < c.n_ex_steps {
        if opts.max_cycles.is_some_and(|m| cycles_run >= m) {
            return Ok(ExploreOutput {
                buffer: ex.buffer,
                events: ex.events,
                completed: false,
                cycles: cycle,
            });
        }
        let t0 = ex.buffer.len() as u64;
        let seed = ex.master.split(TAG_TRAIN).split(cycle).next_u64();
        let (post, next_warm) = fit_posterior(
            &ex.buffer,
            &cfg.backend,
            &cfg.model,
            &cfg.train,
            dims,
            seed,
            warm.as_ref(),
        )?;
        ex.events.push(Event::Fit {
            step: t0,
            cycle,
            backend: cfg.backend.kind,
            buffer_len: ex.buffer.len(),
        });
        let objective = PlanObjective::Utility(cfg.utility);
        let n_steps = c.n_pol.min(c.n_ex_steps - ex.buffer.len());
        let exec = cfg.planner.replan_every.min(cfg.planner.horizon);
        let mut plan: Option<(Matrix, usize)> = None;
        for _ in 0..n_steps {
            let t = ex.buffer.len() as u64;
            let needs_plan = plan.as_ref().is_none_or(|(_, pos)| *pos >= exec);
            if needs_plan {
                let p = plan_cem(
                    &post,
                    &objective,
                    &ex.s,
                    &spec,
                    &cfg.planner,
                    &mut ex.master.split(TAG_PLAN).split(t),
                )?;
                plan = Some((p.sequence, 0));
            }
            let (seq, pos) = plan.as_mut().expect("planned above");
            let a = seq.row(*pos).to_vec();
            *pos += 1;
            let u = action_utility(&post, &ex.s, &a, &cfg.utility, &mut ex.master.split(TAG_UTIL).split(t))?;
            if ex.step(&a, Phase::Active, Some(u))? {
                plan = None;
            }
        }
        warm = next_warm;
        cycle += 1;
        cycles_run += 1;
        checkpoint(&ex, cycle, &warm)?;
    }
    Ok(ExploreOutput {
        buffer: ex.buffer,
        events: ex.events,
        completed: true,
        cycles: cycle,
    })
}
