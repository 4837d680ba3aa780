//! Exploration and evaluation loops, replay buffer and run-directory artifacts.

mod buffer;
mod config;
mod evaluate;
mod events;
mod explore;
mod rundir;

pub use buffer::{Phase, ReplayBuffer, Transition};
pub use config::{BackendConfig, Counters, EvaluationSection, ExperimentConfig, ModelSection, TrainSection};
pub use evaluate::{
    evaluate, read_evaluation_csv, run_task_episode, step_budget_report, write_evaluation_csv, BudgetReport,
    EvaluationRow, RewardEntry, RewardTable,
};
pub use events::{read_events, state_hash, write_events, Event};
pub use explore::{explore, explore_run, fit_posterior, ExploreOptions, ExploreOutput};
pub use rundir::{write_atomic, RunDir, RunLock};
