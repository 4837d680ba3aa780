//! Toy continuous-control environments and their tasks.
//!
//! Every environment is a pure function of `(s, a, rng)`; episode bookkeeping
//! lives with the caller.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Steps per episode before a reset.
    pub horizon: usize,
    pub noise_std: f64,
}

impl EnvSpec {
    /// Clips an action to the bounds; the flag reports whether anything changed.
    pub fn clip_action(&self, a: &[f64]) -> (Vec<f64>, bool) {
        let mut clipped = false;
        let out = a
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&v, (&lo, &hi))| {
                let c = if v.is_nan() {
                    0.0_f64.clamp(lo, hi)
                } else {
                    v.clamp(lo, hi)
                };
                clipped |= c != v;
                c
            })
            .collect();
        (out, clipped)
    }

    pub fn random_action(&self, rng: &mut RngStream) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(&lo, &hi)| rng.uniform(lo, hi))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Max,
}

impl Aggregation {
    pub fn aggregate(self, rewards: &[f64]) -> f64 {
        match self {
            Aggregation::Sum => rewards.iter().sum(),
            Aggregation::Max => rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

type RewardClosure = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;

/// A named reward over `(s, a, s′)` with its episode aggregation.
#[derive(Clone)]
pub struct Task {
    pub name: String,
    pub aggregation: Aggregation,
    reward: Arc<RewardClosure>,
}

impl Task {
    pub fn new(
        name: impl Into<String>,
        aggregation: Aggregation,
        reward: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            aggregation,
            reward: Arc::new(reward),
        }
    }

    pub fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        (self.reward)(s, a, s_next)
    }
}

impl std::fmt::Debug for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Task")
            .field("name", &self.name)
            .field("aggregation", &self.aggregation)
            .finish_non_exhaustive()
    }
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn spec(&self) -> &EnvSpec;
    fn reset(&self, rng: &mut RngStream) -> Vec<f64>;
    /// Advances one step; `a` is clipped to the action bounds first.
    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>>;
    fn tasks(&self) -> Vec<Task>;

    fn task(&self, name: &str) -> Result<Task> {
        self.tasks()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config {
                key: "tasks".into(),
                message: format!("environment {} has no task {name:?}", self.name()),
            })
    }
}

fn check_finite(s: Vec<f64>) -> Result<Vec<f64>> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(s)
    } else {
        Err(Error::EnvFault {
            step: 0,
            message: format!("non-finite state {s:?}"),
        })
    }
}

fn check_dims(spec: &EnvSpec, s: &[f64], a: &[f64]) -> Result<()> {
    if s.len() != spec.state_dim || a.len() != spec.action_dim {
        return Err(Error::Shape(format!(
            "expected state/action dims {}/{}, got {}/{}",
            spec.state_dim,
            spec.action_dim,
            s.len(),
            a.len()
        )));
    }
    Ok(())
}

/// Geometry of the two-chamber arena.
pub mod arena {
    pub const X_MAX: f64 = 1.0;
    pub const Y_MAX: f64 = 0.5;
    /// Chambers span `|x| ≥ CHAMBER_X`; the corridor joins them for `|x| < CHAMBER_X`.
    pub const CHAMBER_X: f64 = 0.25;
    pub const CORRIDOR_Y: f64 = 0.05;

    pub fn contains(x: f64, y: f64) -> bool {
        if x.abs() > X_MAX || y.abs() > Y_MAX {
            return false;
        }
        x.abs() >= CHAMBER_X || y.abs() <= CORRIDOR_Y
    }

    /// Allowed x-range at height `y` for a point currently at `x`.
    pub fn x_range(x: f64, y: f64) -> (f64, f64) {
        if y.abs() <= CORRIDOR_Y {
            (-X_MAX, X_MAX)
        } else if x < 0.0 {
            (-X_MAX, -CHAMBER_X)
        } else {
            (CHAMBER_X, X_MAX)
        }
    }

    pub fn y_range(x: f64) -> (f64, f64) {
        if x.abs() < CHAMBER_X {
            (-CORRIDOR_Y, CORRIDOR_Y)
        } else {
            (-Y_MAX, Y_MAX)
        }
    }
}

/// Point mass in a two-chamber arena joined by a narrow corridor.
/// State `(x, y, vx, vy)`, action: acceleration in `[-1, 1]²`.
#[derive(Clone, Debug)]
pub struct PointMass2D {
    spec: EnvSpec,
    pub dt: f64,
    pub drag: f64,
}

impl PointMass2D {
    pub const GOAL_A: [f64; 2] = [-0.9, 0.4];
    pub const GOAL_B: [f64; 2] = [0.9, -0.4];

    pub fn new(noise_std: f64, horizon: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                horizon,
                noise_std,
            },
            dt: 0.05,
            drag: 0.02,
        }
    }

    fn reach(goal: [f64; 2]) -> impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync {
        move |_s, _a, sp| {
            let d2 = (sp[0] - goal[0]).powi(2) + (sp[1] - goal[1]).powi(2);
            100.0 * (-d2 / 0.1).exp()
        }
    }
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new(0.01, 200)
    }
}

impl Environment for PointMass2D {
    fn name(&self) -> &str {
        "point_mass"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        let x = rng.uniform(-0.7, -0.5);
        let y = rng.uniform(-0.1, 0.1);
        vec![x, y, 0.0, 0.0]
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        check_dims(&self.spec, s, a)?;
        let (a, _) = self.spec.clip_action(a);
        let dt = self.dt;
        let sigma = self.spec.noise_std;
        let mut x = s[0] + s[2] * dt + 0.5 * a[0] * dt * dt + sigma * rng.standard_normal();
        let mut y = s[1] + s[3] * dt + 0.5 * a[1] * dt * dt + sigma * rng.standard_normal();
        let mut vx = (s[2] + a[0] * dt) * (1.0 - self.drag) + sigma * rng.standard_normal();
        let mut vy = (s[3] + a[1] * dt) * (1.0 - self.drag) + sigma * rng.standard_normal();
        let (lo, hi) = arena::x_range(s[0], s[1]);
        if x < lo || x > hi {
            x = x.clamp(lo, hi);
            vx = 0.0;
        }
        let (lo, hi) = arena::y_range(x);
        if y < lo || y > hi {
            y = y.clamp(lo, hi);
            vy = 0.0;
        }
        check_finite(vec![x, y, vx, vy])
    }

    fn tasks(&self) -> Vec<Task> {
        vec![
            Task::new("reach_a", Aggregation::Max, Self::reach(Self::GOAL_A)),
            Task::new("reach_b", Aggregation::Max, Self::reach(Self::GOAL_B)),
        ]
    }
}

/// Torque-limited pendulum; observation `(cos φ, sin φ, ω)` with `φ = 0` upright.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub dt: f64,
    pub g: f64,
    pub m: f64,
    pub l: f64,
    pub max_speed: f64,
}

impl Pendulum {
    /// Largest per-step swing-up cost, `π² + 0.1·8² + 0.001·2²`.
    pub const MAX_COST: f64 = PI * PI + 0.1 * 64.0 + 0.001 * 4.0;

    pub fn new(noise_std: f64, horizon: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                horizon,
                noise_std,
            },
            dt: 0.05,
            g: 10.0,
            m: 1.0,
            l: 1.0,
            max_speed: 8.0,
        }
    }

    pub fn angle(s: &[f64]) -> f64 {
        s[1].atan2(s[0])
    }

    pub fn observe(phi: f64, omega: f64) -> Vec<f64> {
        vec![phi.cos(), phi.sin(), omega]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(0.01, 200)
    }
}

fn wrap_angle(phi: f64) -> f64 {
    (phi + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        let phi = PI + rng.uniform(-0.1, 0.1);
        let omega = rng.uniform(-0.1, 0.1);
        Self::observe(phi, omega)
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        check_dims(&self.spec, s, a)?;
        let (a, _) = self.spec.clip_action(a);
        let phi = Self::angle(s);
        let sigma = self.spec.noise_std;
        let acc = 3.0 * self.g / (2.0 * self.l) * phi.sin() + 3.0 / (self.m * self.l * self.l) * a[0];
        let omega = (s[2] + acc * self.dt + sigma * rng.standard_normal()).clamp(-self.max_speed, self.max_speed);
        let phi = phi + omega * self.dt + sigma * rng.standard_normal();
        check_finite(Self::observe(phi, omega))
    }

    fn tasks(&self) -> Vec<Task> {
        vec![
            Task::new("swing_up", Aggregation::Sum, |_s, a, sp| {
                let phi = wrap_angle(Pendulum::angle(sp));
                let cost = phi * phi + 0.1 * sp[2] * sp[2] + 0.001 * a[0] * a[0];
                (100.0 * (1.0 - cost / Pendulum::MAX_COST)).clamp(0.0, 100.0)
            }),
            Task::new("spin", Aggregation::Sum, |_s, _a, sp| sp[2].abs().clamp(0.0, 100.0)),
        ]
    }
}

/// `s′ = A s + B a + η` with `A = [[0.9, 0.1], [0, 0.9]]`, `B = [0, 0.5]ᵀ`.
#[derive(Clone, Debug)]
pub struct LinGauss {
    spec: EnvSpec,
    pub init_state: [f64; 2],
}

impl LinGauss {
    pub const A: [[f64; 2]; 2] = [[0.9, 0.1], [0.0, 0.9]];
    pub const B: [f64; 2] = [0.0, 0.5];

    pub fn new(sigma_env: f64, horizon: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                horizon,
                noise_std: sigma_env,
            },
            init_state: [0.0, 0.0],
        }
    }

    pub fn with_init_state(mut self, s: [f64; 2]) -> Self {
        self.init_state = s;
        self
    }

    /// Noise-free transition.
    pub fn mean_step(s: &[f64], a: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            *o = Self::A[i][0] * s[0] + Self::A[i][1] * s[1] + Self::B[i] * a[0];
        }
        out
    }
}

impl Default for LinGauss {
    fn default() -> Self {
        Self::new(0.01, 50)
    }
}

impl Environment for LinGauss {
    fn name(&self) -> &str {
        "lin_gauss"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _rng: &mut RngStream) -> Vec<f64> {
        self.init_state.to_vec()
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        check_dims(&self.spec, s, a)?;
        let (a, _) = self.spec.clip_action(a);
        let m = Self::mean_step(s, &a);
        let sigma = self.spec.noise_std;
        let out = if sigma > 0.0 {
            m.iter().map(|v| v + sigma * rng.standard_normal()).collect()
        } else {
            m.to_vec()
        };
        check_finite(out)
    }

    fn tasks(&self) -> Vec<Task> {
        vec![Task::new("origin", Aggregation::Sum, |_s, _a, sp| {
            -(sp[0] * sp[0] + sp[1] * sp[1])
        })]
    }
}

/// Wrapper counting every real environment step.
pub struct CountingEnv<E> {
    inner: E,
    steps: AtomicU64,
}

impl<E: Environment> CountingEnv<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            steps: AtomicU64::new(0),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for CountingEnv<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        self.inner.reset(rng)
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        self.steps.fetch_add(1, Ordering::SeqCst);
        self.inner.step(s, a, rng)
    }

    fn tasks(&self) -> Vec<Task> {
        self.inner.tasks()
    }
}

impl Environment for Box<dyn Environment> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        (**self).reset(rng)
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        (**self).step(s, a, rng)
    }

    fn tasks(&self) -> Vec<Task> {
        (**self).tasks()
    }
}

/// Environment selection as it appears in an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Initial state, LinGauss only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_state: Option<[f64; 2]>,
}

impl EnvConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            noise_std: None,
            horizon: None,
            init_state: None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        let bad = |key: &str, message: String| Error::Config {
            key: format!("env.{key}"),
            message,
        };
        if let Some(n) = self.noise_std {
            if !(n >= 0.0) || !n.is_finite() {
                return Err(bad("noise_std", format!("must be finite and >= 0, got {n}")));
            }
        }
        if self.horizon == Some(0) {
            return Err(bad("horizon", "must be >= 1".into()));
        }
        if self.init_state.is_some() && self.name != "lin_gauss" {
            return Err(bad("init_state", "only lin_gauss accepts an initial state".into()));
        }
        Ok(match self.name.as_str() {
            "point_mass" => Box::new(PointMass2D::new(
                self.noise_std.unwrap_or(0.01),
                self.horizon.unwrap_or(200),
            )),
            "pendulum" => Box::new(Pendulum::new(
                self.noise_std.unwrap_or(0.01),
                self.horizon.unwrap_or(200),
            )),
            "lin_gauss" => Box::new(
                LinGauss::new(self.noise_std.unwrap_or(0.01), self.horizon.unwrap_or(50))
                    .with_init_state(self.init_state.unwrap_or([0.0, 0.0])),
            ),
            other => {
                return Err(bad(
                    "name",
                    format!("unknown environment {other:?} (expected point_mass, pendulum or lin_gauss)"),
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resets() {
        let env = PointMass2D::default();
        let mut rng = RngStream::new(1, 0);
        let s = env.reset(&mut rng);
        assert!((-0.7..=-0.5).contains(&s[0]) && s[1].abs() <= 0.1);
        assert_eq!(&s[2..], &[0.0, 0.0]);
        assert_eq!(LinGauss::default().reset(&mut rng), vec![0.0, 0.0]);
        let mut r1 = RngStream::new(5, 5);
        let mut r2 = RngStream::new(5, 5);
        assert_eq!(env.reset(&mut r1), env.reset(&mut r2));
    }

    #[test]
    fn point_mass_at_rest_stays_put() {
        let env = PointMass2D::default();
        let mut rng = RngStream::new(2, 0);
        let s = [-0.6, 0.0, 0.0, 0.0];
        let sp = env.step(&s, &[0.0, 0.0], &mut rng).unwrap();
        assert!((sp[0] - s[0]).abs() <= 0.03 && (sp[1] - s[1]).abs() <= 0.03);
    }

    #[test]
    fn lin_gauss_noiseless_step() {
        let env = LinGauss::new(0.0, 50);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(env.step(&[1.0, 0.0], &[1.0], &mut rng).unwrap(), vec![0.9, 0.5]);
    }

    #[test]
    fn pendulum_at_bottom_stays_near_bottom() {
        let env = Pendulum::default();
        let mut rng = RngStream::new(3, 0);
        let mut s = Pendulum::observe(PI, 0.0);
        for _ in 0..10 {
            s = env.step(&s, &[0.0], &mut rng).unwrap();
            assert!((s[0] * s[0] + s[1] * s[1] - 1.0).abs() < 1e-9);
        }
        assert!(wrap_angle(Pendulum::angle(&s) - PI).abs() < 0.1);
    }

    #[test]
    fn pendulum_matches_fine_step_reference_without_noise() {
        // Semi-implicit Euler at dt against a 100x finer integration of the same ODE.
        let env = Pendulum::new(0.0, 200);
        let mut rng = RngStream::new(0, 0);
        let mut s = Pendulum::observe(PI - 0.3, 0.0);
        let (mut phi, mut om) = (PI - 0.3, 0.0f64);
        for _ in 0..10 {
            s = env.step(&s, &[0.0], &mut rng).unwrap();
            for _ in 0..100 {
                let h = 0.05 / 100.0;
                om += 15.0 * phi.sin() * h;
                phi += om * h;
            }
        }
        assert!(wrap_angle(Pendulum::angle(&s) - phi).abs() < 0.05);
    }

    #[test]
    fn walls_hold_over_many_random_steps() {
        let env = PointMass2D::new(0.05, 200);
        let mut rng = RngStream::new(4, 0);
        let mut s = env.reset(&mut rng);
        for i in 0..100_000 {
            let a = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            s = env.step(&s, &a, &mut rng).unwrap();
            assert!(arena::contains(s[0], s[1]), "left arena at step {i}: {s:?}");
            if i % 500 == 0 {
                s[2] += rng.uniform(-2.0, 2.0);
                s[3] += rng.uniform(-2.0, 2.0);
            }
        }
    }

    #[test]
    fn rewards_and_tasks() {
        let env = PointMass2D::default();
        let b = env.task("reach_b").unwrap();
        let at_goal = [0.9, -0.4, 0.0, 0.0];
        assert!((b.reward(&at_goal, &[0.0, 0.0], &at_goal) - 100.0).abs() < 1e-12);
        assert!(env.task("reach_c").is_err());
        let p = Pendulum::default();
        let up = Pendulum::observe(0.0, 0.0);
        assert!((p.task("swing_up").unwrap().reward(&up, &[0.0], &up) - 100.0).abs() < 1e-9);
        let down = Pendulum::observe(PI, 8.0);
        assert!(p.task("swing_up").unwrap().reward(&down, &[2.0], &down).abs() < 1e-9);
        assert_eq!(Aggregation::Max.aggregate(&[1.0, 3.0, 2.0]), 3.0);
        assert_eq!(Aggregation::Sum.aggregate(&[1.0, 3.0, 2.0]), 6.0);
    }

    #[test]
    fn counting_wrapper_counts_steps() {
        let env = CountingEnv::new(LinGauss::default());
        let mut rng = RngStream::new(0, 0);
        let s = env.reset(&mut rng);
        env.step(&s, &[0.0], &mut rng).unwrap();
        env.step(&s, &[0.0], &mut rng).unwrap();
        assert_eq!(env.steps(), 2);
    }

    #[test]
    fn clipping_reports_changes() {
        let spec = PointMass2D::default().spec().clone();
        assert_eq!(spec.clip_action(&[2.0, -0.5]), (vec![1.0, -0.5], true));
        assert_eq!(spec.clip_action(&[0.1, -0.5]), (vec![0.1, -0.5], false));
    }

    #[test]
    fn config_builds_and_rejects() {
        assert_eq!(EnvConfig::named("pendulum").build().unwrap().spec().state_dim, 3);
        let Err(e) = EnvConfig::named("cartpole").build() else {
            panic!("unknown environment accepted")
        };
        assert!(matches!(e, Error::Config { ref key, .. } if key == "env.name"));
    }
}
