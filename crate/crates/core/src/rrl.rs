//! Policy-gradient training where the policy is a softmax over the
//! groundings of a learned target predicate.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::deduction::{Engine, EngineError};
use crate::envs::{EnvError, Environment, StateBinding};
use crate::learning::Adam;
use crate::logic::{DnfUnit, INIT_RANGE};
use crate::program::Program;
use crate::tape::{NodeId, Workspace};

/// Smoothing rate of the running-mean baseline.
pub const BASELINE_RATE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RrlError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("the program has {0} targets; name the action target explicitly")]
    AmbiguousTarget(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("gradient became NaN at episode {episode}")]
    Divergence { episode: usize },
}

/// Stop once the mean success over the last `window` episodes reaches
/// `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub window: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Softmax multiplier applied to the valuations.
    pub c: f64,
    pub t_max: Option<usize>,
    pub max_steps: usize,
    pub episodes: usize,
    pub lambda: f64,
    pub baseline: bool,
    pub seed: u64,
    /// Action predicate; may be omitted when the program has one target.
    pub target: Option<String>,
    pub stop: Option<StopRule>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            learning_rate: 0.002,
            c: 10.0,
            t_max: None,
            max_steps: 20,
            episodes: 20_000,
            lambda: 0.0,
            baseline: true,
            seed: 0,
            target: None,
            stop: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), RrlError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RrlError::Config(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.c > 0.0) {
            return Err(RrlError::Config("softmax multiplier must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(RrlError::Config("learning rate must be positive".into()));
        }
        if self.max_steps == 0 || self.episodes == 0 {
            return Err(RrlError::Config("max steps and episodes must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(RrlError::Config("lambda must be non-negative".into()));
        }
        if let Some(s) = self.stop {
            if s.window == 0 {
                return Err(RrlError::Config("stop window must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// `softmax(c * values)`.
pub fn action_distribution(values: &[f64], c: f64) -> Vec<f64> {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(c * b));
    let exp: Vec<f64> = values.iter().map(|&v| (c * v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Engine plus the wiring between an environment's state and the store.
#[derive(Debug, Clone)]
pub struct Policy {
    engine: Engine,
    unit: usize,
    binding: StateBinding,
    base: Vec<f64>,
}

impl Policy {
    pub fn new(program: Program, env: &dyn Environment, target: Option<&str>, t_max: Option<usize>) -> Result<Self, RrlError> {
        let engine = Engine::new(program, t_max)?;
        let name = match target {
            Some(t) => t.to_string(),
            None => match engine.units() {
                [u] => u.target.clone(),
                units => return Err(RrlError::AmbiguousTarget(units.len())),
            },
        };
        let unit = engine.unit_index(&name).ok_or_else(|| RrlError::UnknownTarget(name.clone()))?;
        let binding = StateBinding::new(env, engine.program(), engine.layout(), &name)?;
        let base = engine.initial_store();
        Ok(Self {
            engine,
            unit,
            binding,
            base,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn target(&self) -> &str {
        &self.engine.units()[self.unit].target
    }

    pub fn target_node(&self) -> NodeId {
        self.engine.target_node(self.unit)
    }

    pub fn random_params(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, RrlError> {
        let units = self.engine.random_units(INIT_RANGE, rng)?;
        Ok(self.engine.params_from_units(&units)?)
    }

    /// Loads the environment state, chains, and returns the action
    /// valuations.
    pub fn observe<'a>(
        &self,
        env: &dyn Environment,
        params: &[f64],
        store: &mut Vec<f64>,
        ws: &'a mut Workspace,
    ) -> Result<&'a [f64], RrlError> {
        store.clone_from(&self.base);
        self.binding.write(env, store);
        self.engine.chain(params, store, ws)?;
        Ok(ws.value(self.target_node()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
    pub loss: f64,
    /// Mean entropy of the action distribution over the episode.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub params: Vec<f64>,
    pub units: Vec<DnfUnit>,
    pub history: Vec<EpisodeRecord>,
    /// Episodes run when the stop rule fired.
    pub stopped_at: Option<usize>,
}

/// Mean success over the trailing `window` episodes ending at each episode.
pub fn trailing_success(history: &[EpisodeRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(history.len());
    let mut sum = 0usize;
    for (i, r) in history.iter().enumerate() {
        sum += r.success as usize;
        if i >= window {
            sum -= history[i - window].success as usize;
        }
        out.push(sum as f64 / window.min(i + 1) as f64);
    }
    out
}

/// Number of episodes after which the trailing `window` success rate first
/// reaches `threshold` (full windows only).
pub fn episodes_to_threshold(history: &[EpisodeRecord], window: usize, threshold: f64) -> Option<usize> {
    trailing_success(history, window)
        .iter()
        .enumerate()
        .skip(window.saturating_sub(1))
        .find(|(_, &s)| s >= threshold)
        .map(|(i, _)| i + 1)
}

/// REINFORCE from a seeded random initialisation.
pub fn train_policy(program: Program, env: &mut dyn Environment, cfg: &PolicyConfig) -> Result<(Policy, PolicyOutcome), RrlError> {
    cfg.validate()?;
    let policy = Policy::new(program, env, cfg.target.as_deref(), cfg.t_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = policy.random_params(&mut rng)?;
    let outcome = train_policy_from(&policy, params, env, cfg, &mut rng)?;
    Ok((policy, outcome))
}

/// REINFORCE with one update per episode:
/// `loss = -sum_t log pi(a_t) (G_t - b) + lambda * penalty`.
pub fn train_policy_from(
    policy: &Policy,
    params: Vec<f64>,
    env: &mut dyn Environment,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyOutcome, RrlError> {
    train_policy_observed(policy, params, env, cfg, rng, &mut |_, _| {})
}

/// As [`train_policy_from`], calling `observe` after every update with the
/// episode's record and the updated parameters.
pub fn train_policy_observed(
    policy: &Policy,
    mut params: Vec<f64>,
    env: &mut dyn Environment,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
    observe: &mut dyn FnMut(&EpisodeRecord, &[f64]),
) -> Result<PolicyOutcome, RrlError> {
    cfg.validate()?;
    let engine = policy.engine();
    let graph = engine.graph();
    let target = policy.target_node();
    let mut pool: Vec<Workspace> = Vec::new();
    let mut store = Vec::new();
    let mut adam = Adam::new(cfg.learning_rate, params.len());
    let mut grad = vec![0.0; params.len()];
    let mut baseline = 0.0;
    let mut history = Vec::new();
    let mut stopped_at = None;
    let mut successes = std::collections::VecDeque::new();
    let mut window_sum = 0usize;

    for episode in 0..cfg.episodes {
        env.reset(rng)?;
        let mut actions = Vec::new();
        let mut probs = Vec::new();
        let mut rewards = Vec::new();
        let mut success = false;
        for t in 0..cfg.max_steps {
            if pool.len() <= t {
                pool.push(engine.workspace());
            }
            let values = policy.observe(env, &params, &mut store, &mut pool[t])?;
            let p = action_distribution(values, cfg.c);
            let a = WeightedIndex::new(&p)
                .map_err(|_| RrlError::Divergence { episode })?
                .sample(rng);
            let out = env.step(a)?;
            actions.push(a);
            probs.push(p);
            rewards.push(out.reward);
            success |= out.success;
            if out.done {
                break;
            }
        }

        let returns = discounted_returns(&rewards, cfg.gamma);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut seed = vec![0.0; probs[0].len()];
        for (t, (&a, p)) in actions.iter().zip(&probs).enumerate() {
            let adv = returns[t] - if cfg.baseline { baseline } else { 0.0 };
            loss -= p[a].ln() * adv;
            if adv == 0.0 {
                continue;
            }
            for (k, s) in seed.iter_mut().enumerate() {
                *s = adv * cfg.c * (p[k] - if k == a { 1.0 } else { 0.0 });
            }
            let ws = &mut pool[t];
            ws.zero_grad();
            graph.backward(ws, target, &seed).map_err(EngineError::from)?;
            grad.iter_mut().zip(ws.param_grad()).for_each(|(g, d)| *g += d);
        }
        if cfg.lambda > 0.0 {
            let ws = &mut pool[0];
            loss += cfg.lambda * ws.value(engine.penalty_node())[0];
            ws.zero_grad();
            graph.backward(ws, engine.penalty_node(), &[cfg.lambda]).map_err(EngineError::from)?;
            grad.iter_mut().zip(ws.param_grad()).for_each(|(g, d)| *g += d);
        }
        if grad.iter().any(|g| g.is_nan()) {
            return Err(RrlError::Divergence { episode });
        }
        adam.step(&mut params, &grad);
        if cfg.baseline {
            for g in &returns {
                baseline += BASELINE_RATE * (g - baseline);
            }
        }

        let record = EpisodeRecord {
            episode,
            ret: rewards.iter().sum(),
            success,
            steps: actions.len(),
            loss,
            entropy: probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len() as f64,
        };
        observe(&record, &params);
        history.push(record);
        if let Some(rule) = cfg.stop {
            successes.push_back(success);
            window_sum += success as usize;
            if successes.len() > rule.window {
                window_sum -= successes.pop_front().expect("non-empty") as usize;
            }
            if successes.len() == rule.window && window_sum as f64 >= rule.threshold * rule.window as f64 {
                stopped_at = Some(episode + 1);
                break;
            }
        }
    }
    Ok(PolicyOutcome {
        units: engine.units_from_params(&params)?,
        params,
        history,
        stopped_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_steps: f64,
}

/// Runs `episodes` sampled episodes without learning. `inspect` sees the
/// chained workspace before every action.
pub fn evaluate_policy(
    policy: &Policy,
    params: &[f64],
    env: &mut dyn Environment,
    episodes: usize,
    c: f64,
    max_steps: usize,
    seed: u64,
    mut inspect: impl FnMut(&Engine, &Workspace),
) -> Result<EvalSummary, RrlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = policy.engine().workspace();
    let mut store = Vec::new();
    let (mut ret, mut wins, mut steps) = (0.0, 0usize, 0usize);
    for _ in 0..episodes {
        env.reset(&mut rng)?;
        for _ in 0..max_steps {
            let values = policy.observe(env, params, &mut store, &mut ws)?;
            let p = action_distribution(values, c);
            inspect(policy.engine(), &ws);
            let a = WeightedIndex::new(&p)
                .map_err(|_| RrlError::Divergence { episode: 0 })?
                .sample(&mut rng);
            let out = env.step(a)?;
            ret += out.reward;
            steps += 1;
            if out.success {
                wins += 1;
            }
            if out.done {
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        mean_return: ret / n,
        success_rate: wins as f64 / n,
        mean_steps: steps as f64 / n,
    })
}
