//! `bmax` command line: explore, evaluate, calibrate, bench and report.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::infogain::{UtilityKind, UtilitySpec};
use crate::metrics::{bench_backends, calibration_run, fmt_sig6, report};
use crate::pipeline::{
    evaluate, explore_run, step_budget_report, write_atomic, write_evaluation_csv, BackendConfig, EvaluationRow,
    ExperimentConfig, ExploreOptions, RunDir,
};
use crate::posterior::BackendKind;

#[derive(Debug, Parser)]
#[command(name = "bmax", version, about = "Bayesian model-based active exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Posterior backend: ensemble, mc_dropout or laplace.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Utility: jensen_renyi2, entropy_samples or entropy_laplace.
    #[arg(long)]
    utility: Option<UtilityKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect a replay buffer by active exploration.
    Explore {
        /// Experiment config (JSON). Optional with --resume.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Continue from the run directory's last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many model-fit cycles.
        #[arg(long)]
        max_cycles: Option<u64>,
    },
    /// Score buffer snapshots on the downstream tasks.
    Evaluate {
        /// Run directory
        run: PathBuf,
        /// Master seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate only the full buffer instead of every snapshot.
        #[arg(long)]
        final_only: bool,
        /// Also print the step budget against a model-free learner using this many steps per task.
        #[arg(long)]
        n_sac: Option<u64>,
    },
    /// Measure uncertainty calibration (AUSE) on a chronological split of the buffer.
    Calibrate {
        /// Run directory
        run: PathBuf,
        /// Fraction of the buffer used for fitting.
        #[arg(long, default_value_t = 0.9)]
        split: f64,
        #[command(flatten)]
        overrides: Overrides,
        /// Calibrate the three standard backend/utility pairs instead of the configured one.
        #[arg(long)]
        all: bool,
    },
    /// Time fitting and inference of every backend on the run's buffer.
    Bench {
        /// Run directory
        run: PathBuf,
        /// Queries in the timed inference batch.
        #[arg(long, default_value_t = 256)]
        batch: usize,
    },
    /// Render CSV tables and SVG plots into the run's reports/ directory.
    Report {
        /// Run directory
        run: PathBuf,
    },
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(kind) = self.backend {
            cfg.backend.kind = kind;
        }
        if let Some(kind) = self.utility {
            cfg.utility.kind = kind;
        }
    }
}

/// Backend/utility pairs compared by `calibrate --all` and `bench`.
pub fn standard_pairs(base: &BackendConfig) -> Vec<(BackendConfig, UtilitySpec)> {
    [
        (BackendKind::Ensemble, UtilityKind::JensenRenyi2),
        (BackendKind::McDropout, UtilityKind::JensenRenyi2),
        (BackendKind::Laplace, UtilityKind::EntropyLaplace),
    ]
    .into_iter()
    .map(|(kind, utility)| (BackendConfig { kind, ..base.clone() }, UtilitySpec::new(utility)))
    .collect()
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Incompatible { .. } | Error::InvalidArgument(_) | Error::MissingArtifacts(_) => 1,
        _ => 2,
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("BMAX_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config {
                key: "BMAX_THREADS".into(),
                message: format!("expected a positive integer, got {v:?}"),
            }),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on invalid input, 2 on a runtime fault.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = threads_from_env().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(&cli.command))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            if code == 2 {
                if let Command::Explore { out, .. } = &cli.command {
                    eprintln!(
                        "the last completed cycle is checkpointed in {}; rerun with --resume to continue",
                        out.display()
                    );
                }
            }
            code
        }
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Explore {
            config,
            out,
            overrides,
            resume,
            max_cycles,
        } => cmd_explore(config.as_deref(), out, overrides, *resume, *max_cycles),
        Command::Evaluate {
            run,
            seed,
            final_only,
            n_sac,
        } => cmd_evaluate(run, *seed, *final_only, *n_sac),
        Command::Calibrate {
            run,
            split,
            overrides,
            all,
        } => cmd_calibrate(run, *split, overrides, *all),
        Command::Bench { run, batch } => cmd_bench(run, *batch),
        Command::Report { run } => {
            let dir = RunDir::new(run);
            let _lock = if dir.root().is_dir() { Some(dir.lock()?) } else { None };
            for name in report(&dir)? {
                println!("{}", dir.reports().join(name).display());
            }
            Ok(())
        }
    }
}

fn cmd_explore(
    config: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
    resume: bool,
    max_cycles: Option<u64>,
) -> Result<()> {
    let dir = RunDir::new(out);
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None if resume => dir.read_config()?,
        None => {
            return Err(Error::InvalidArgument(
                "explore needs --config (or --resume on an existing run)".into(),
            ))
        }
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    if resume && config.is_some() && dir.config().exists() && dir.read_config()? != cfg {
        return Err(Error::InvalidArgument(format!(
            "resolved config differs from {}; resume without --config or start a new run",
            dir.config().display()
        )));
    }
    let env = cfg.env.build()?;
    dir.create()?;
    let _lock = dir.lock()?;
    dir.write_config(&cfg)?;
    let opts = ExploreOptions { resume, max_cycles };
    let out = explore_run(env.as_ref(), &cfg, Some(&dir), &opts)?;
    dir.write_buffer(&out.buffer)?;
    dir.write_events(&out.events)?;
    println!(
        "{} transitions in {} ({})",
        out.buffer.len(),
        dir.buffer().display(),
        if out.completed { "complete" } else { "stopped early" }
    );
    Ok(())
}

fn run_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
}

fn cmd_evaluate(run: &Path, seed: Option<u64>, final_only: bool, n_sac: Option<u64>) -> Result<()> {
    let dir = RunDir::new(run);
    let mut cfg = dir.read_config()?;
    run_seed(&mut cfg, seed);
    let buffer = dir.read_buffer()?;
    let env = cfg.env.build()?;
    let tasks = cfg.resolve_tasks(env.as_ref())?;
    let _lock = dir.lock()?;
    let n_eval = cfg.counters.n_eval;
    let mut snapshots: Vec<usize> = if final_only {
        Vec::new()
    } else {
        (1..=buffer.len() / n_eval).map(|k| k * n_eval).collect()
    };
    if snapshots.last() != Some(&buffer.len()) {
        snapshots.push(buffer.len());
    }
    let mut rows: Vec<EvaluationRow> = Vec::new();
    for &n in &snapshots {
        let table = evaluate(env.as_ref(), &buffer[..n], &tasks, &cfg)?;
        for t in &tasks {
            let shown = table.mean(&t.name).map_or("missing".into(), fmt_sig6);
            println!("step {n} {}: {shown}", t.name);
        }
        rows.extend(table.rows(n as u64));
    }
    let mut bytes = Vec::new();
    write_evaluation_csv(&mut bytes, &rows)?;
    write_atomic(&dir.evaluation(), &bytes)?;
    if let Some(n_sac) = n_sac {
        let b = step_budget_report(&cfg, tasks.len(), n_sac);
        let ratio = b.ratio.map_or("undefined".into(), fmt_sig6);
        println!(
            "real steps {} vs model-free {}: ratio {ratio}",
            b.exploration_steps, b.model_free_steps
        );
    }
    Ok(())
}

fn cmd_calibrate(run: &Path, split: f64, overrides: &Overrides, all: bool) -> Result<()> {
    let dir = RunDir::new(run);
    let mut cfg = dir.read_config()?;
    overrides.apply(&mut cfg);
    let buffer = dir.read_buffer()?;
    let _lock = dir.lock()?;
    let pairs = if all {
        standard_pairs(&cfg.backend)
    } else {
        vec![(cfg.backend.clone(), cfg.utility)]
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["backend", "utility", "n_train", "n_test", "ause"])?;
    for (backend, utility) in &pairs {
        let rec = calibration_run(&buffer, split, backend, utility, &cfg.model, &cfg.train, cfg.seed)?;
        println!(
            "{} + {}: AUSE {}",
            backend.kind.as_str(),
            utility.kind.as_str(),
            fmt_sig6(rec.ause.value)
        );
        wtr.write_record([
            backend.kind.as_str().to_string(),
            utility.kind.as_str().to_string(),
            rec.n_train.to_string(),
            rec.n_test.to_string(),
            rec.ause.value.to_string(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.calibration(), &bytes)
}

fn cmd_bench(run: &Path, batch: usize) -> Result<()> {
    let dir = RunDir::new(run);
    let cfg = dir.read_config()?;
    let buffer = dir.read_buffer()?;
    let _lock = dir.lock()?;
    let rows = bench_backends(
        &buffer,
        &standard_pairs(&cfg.backend),
        &cfg.model,
        &cfg.train,
        cfg.seed,
        batch,
    )?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["backend", "n", "fit_seconds", "infer_seconds", "storage_params"])?;
    for r in &rows {
        println!(
            "{:<10} fit {:>10} s  infer {:>10} s  params {}",
            r.backend,
            fmt_sig6(r.fit_seconds),
            fmt_sig6(r.infer_seconds),
            r.storage_params
        );
        wtr.write_record([
            r.backend.clone(),
            r.n.to_string(),
            r.fit_seconds.to_string(),
            r.infer_seconds.to_string(),
            r.storage_params.to_string(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::create_dir_all(dir.root())?;
    write_atomic(&dir.timing(), &bytes)
}
