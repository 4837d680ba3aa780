use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dyn_model::{ModelArch, ModelSpec, TrainConfig, DEFAULT_VAR_MAX, DEFAULT_VAR_MIN};
use crate::envs::{EnvConfig, Environment, Task};
use crate::error::{Error, Result};
use crate::infogain::UtilitySpec;
use crate::numkit::Activation;
use crate::planner::CemConfig;
use crate::posterior::BackendKind;

/// Approximate posterior selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Ensemble size, or number of dropout masks / weight draws.
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_n_sub")]
    pub n_sub: usize,
    #[serde(default = "default_gamma2")]
    pub gamma2: f64,
}

fn default_n() -> usize {
    8
}

fn default_p() -> f64 {
    0.25
}

fn default_n_sub() -> usize {
    200
}

fn default_gamma2() -> f64 {
    1.0
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            n: default_n(),
            p: default_p(),
            n_sub: default_n_sub(),
            gamma2: default_gamma2(),
        }
    }

    fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("{prefix}.{key}"),
                message,
            })
        };
        if self.n == 0 {
            return bad("N", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.p) {
            return bad("p", format!("must be in [0, 1), got {}", self.p));
        }
        if self.kind == BackendKind::McDropout && self.p == 0.0 && self.n > 1 {
            return bad("p", "MC-dropout with p = 0 yields identical samples".into());
        }
        if self.n_sub == 0 {
            return bad("n_sub", "must be >= 1".into());
        }
        if !(self.gamma2 > 0.0) || !self.gamma2.is_finite() {
            return bad("gamma2", format!("must be finite and > 0, got {}", self.gamma2));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs when a network is trained from a fresh initialization.
    pub epochs: usize,
    /// Epochs when a network continues from the previous cycle.
    pub warm_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            warm_epochs: 20,
        }
    }
}

impl TrainSection {
    /// Training settings for a buffer of `n` transitions; the batch is capped at `n`.
    pub fn to_train_config(&self, gamma2: f64, seed: u64, warm: bool, n: usize) -> TrainConfig {
        TrainConfig {
            gamma2,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size.min(n.max(1)),
            epochs: if warm { self.warm_epochs } else { self.epochs },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub var_min: f64,
    pub var_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = ModelArch::default();
        Self {
            hidden_width: arch.hidden_width,
            hidden_layers: arch.hidden_layers,
            activation: arch.activation,
            var_min: DEFAULT_VAR_MIN,
            var_max: DEFAULT_VAR_MAX,
        }
    }
}

impl ModelSection {
    pub fn arch(&self) -> ModelArch {
        ModelArch {
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            activation: self.activation,
        }
    }

    pub fn spec(&self, state_dim: usize, action_dim: usize) -> ModelSpec {
        ModelSpec {
            var_min: self.var_min,
            var_max: self.var_max,
            ..ModelSpec::new(state_dim, action_dim, self.arch())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counters {
    pub n_ex_steps: usize,
    pub n_ex_warm: usize,
    pub n_pol: usize,
    pub n_eval: usize,
    pub n_k: usize,
    pub n_ev_steps: usize,
}

impl Default for Counters {
    fn default() -> Self {
        Self {
            n_ex_steps: 2000,
            n_ex_warm: 64,
            n_pol: 25,
            n_eval: 500,
            n_k: 2,
            n_ev_steps: 50,
        }
    }
}

/// Settings of the downstream-task evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Posterior used to build every task policy, whatever explored the data.
    pub backend: BackendConfig,
    /// Planner for task policies; the exploration planner when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planner: Option<CemConfig>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            backend: BackendConfig::new(BackendKind::McDropout),
            planner: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    /// Task names; every task of the environment when empty.
    #[serde(default)]
    pub tasks: Vec<String>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub utility: UtilitySpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub planner: CemConfig,
    #[serde(default)]
    pub counters: Counters,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig, backend: BackendConfig, utility: UtilitySpec) -> Self {
        Self {
            env,
            tasks: Vec::new(),
            backend,
            utility,
            train: TrainSection::default(),
            model: ModelSection::default(),
            planner: CemConfig::default(),
            counters: Counters::default(),
            evaluation: EvaluationSection::default(),
            seed: 0,
        }
    }

    /// True when every step is a uniform-random warmup step.
    pub fn is_random(&self) -> bool {
        self.counters.n_ex_warm >= self.counters.n_ex_steps
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // A missing field is reported at its parent; name the field itself.
            let key = match msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
                Some(field) if path == "." || path.is_empty() => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            Error::Config { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env.build()?;
        self.resolve_tasks(env.as_ref())?;
        self.backend.validate("backend")?;
        self.evaluation.backend.validate("evaluation.backend")?;
        self.utility.validate().map_err(|e| Error::Config {
            key: "utility.epsilon".into(),
            message: e.to_string(),
        })?;
        self.utility
            .check_backend(self.backend.kind)
            .map_err(|e| Error::Config {
                key: "utility.kind".into(),
                message: e.to_string(),
            })?;
        self.planner.validate()?;
        if let Some(p) = &self.evaluation.planner {
            p.validate().map_err(|e| match e {
                Error::Config { key, message } => Error::Config {
                    key: format!("evaluation.{key}"),
                    message,
                },
                other => other,
            })?;
        }
        let c = &self.counters;
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("counters.{key}"),
                message,
            })
        };
        if c.n_ex_steps == 0 {
            return bad("n_ex_steps", "must be >= 1".into());
        }
        if c.n_ex_warm > c.n_ex_steps {
            return bad(
                "n_ex_warm",
                format!("{} exceeds n_ex_steps {}", c.n_ex_warm, c.n_ex_steps),
            );
        }
        if c.n_ex_warm == 0 && c.n_ex_steps > 0 {
            return bad(
                "n_ex_warm",
                "at least one warmup step is needed to fit the first model".into(),
            );
        }
        if c.n_pol == 0 {
            return bad("n_pol", "must be >= 1".into());
        }
        if c.n_eval == 0 || c.n_eval % c.n_pol != 0 {
            return bad("n_eval", format!("must be a positive multiple of n_pol = {}", c.n_pol));
        }
        if c.n_k == 0 {
            return bad("n_k", "must be >= 1".into());
        }
        if c.n_ev_steps == 0 {
            return bad("n_ev_steps", "must be >= 1".into());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config {
                key: "train.batch_size".into(),
                message: "must be >= 1".into(),
            });
        }
        if !(t.learning_rate > 0.0) {
            return Err(Error::Config {
                key: "train.learning_rate".into(),
                message: "must be > 0".into(),
            });
        }
        let m = &self.model;
        if m.hidden_width == 0 || m.hidden_layers == 0 {
            return Err(Error::Config {
                key: "model.hidden_layers".into(),
                message: "the network needs at least one hidden layer of width >= 1".into(),
            });
        }
        if !(m.var_min > 0.0 && m.var_min < m.var_max) {
            return Err(Error::Config {
                key: "model.var_min".into(),
                message: "need 0 < var_min < var_max".into(),
            });
        }
        Ok(())
    }

    pub fn resolve_tasks(&self, env: &dyn Environment) -> Result<Vec<Task>> {
        if self.tasks.is_empty() {
            return Ok(env.tasks());
        }
        self.tasks.iter().map(|name| env.task(name)).collect()
    }

    pub fn eval_planner(&self) -> &CemConfig {
        self.evaluation.planner.as_ref().unwrap_or(&self.planner)
    }
}
