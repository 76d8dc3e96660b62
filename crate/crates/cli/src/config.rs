//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so
//! that typos do not silently fall back to defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use dnl_core::envs::GoalOrder;
use dnl_core::learning::SupervisedConfig;
use dnl_core::rrl::{PolicyConfig, StopRule};

/// A malformed or out-of-range configuration value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Rrl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramRef {
    Asset(String),
    Path(PathBuf),
}

impl ProgramRef {
    pub fn parse(s: &str, base: &Path) -> Self {
        match s.strip_prefix("asset:") {
            Some(name) => Self::Asset(name.to_string()),
            None => {
                let p = Path::new(s);
                Self::Path(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
            }
        }
    }
}

impl fmt::Display for ProgramRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Asset(n) => write!(f, "asset:{n}"),
            Self::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    BoxWorld { boxes: usize, goal: GoalOrder },
    GridWorld { chain_length: usize, branch: bool, progress_reward: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub program: ProgramRef,
    /// Required in rrl mode.
    pub env: Option<EnvSpec>,
    pub supervised: SupervisedConfig,
    pub policy: PolicyConfig,
    pub output: PathBuf,
    /// Write an intermediate checkpoint every this many epochs or episodes;
    /// 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub workers: usize,
}

const KEYS: &[&str] = &[
    "mode",
    "program",
    "env",
    "boxes",
    "goal",
    "chain_length",
    "branch",
    "progress_reward",
    "epochs",
    "learning_rate",
    "t_max",
    "lambda",
    "constraint_weight",
    "seed",
    "gamma",
    "c",
    "max_steps",
    "episodes",
    "baseline",
    "target",
    "stop_window",
    "stop_threshold",
    "output",
    "checkpoint_interval",
    "workers",
];

/// Raw pairs in file order, duplicates rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(bad(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(bad(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

struct Pairs<'a>(&'a [(String, String)]);

impl Pairs<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None | Some("none") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad(format!("{key}: cannot parse {v:?}"))),
        }
    }
}

impl RunConfig {
    /// Builds a config from pairs; relative paths resolve against `base`.
    pub fn from_pairs(pairs: &[(String, String)], base: &Path) -> Result<Self, ConfigError> {
        let p = Pairs(pairs);
        let mode = match p.raw("mode") {
            Some("supervised") => Mode::Supervised,
            Some("rrl") => Mode::Rrl,
            Some(other) => return Err(bad(format!("mode must be supervised or rrl, got {other:?}"))),
            None => return Err(bad("mode is required")),
        };
        let program = ProgramRef::parse(p.raw("program").ok_or_else(|| bad("program is required"))?, base);

        let env = match p.raw("env") {
            None => None,
            Some("boxworld") => Some(EnvSpec::BoxWorld {
                boxes: p.get("boxes", 4)?,
                goal: match p.raw("goal") {
                    None | Some("any") => GoalOrder::Any,
                    Some("alphabetical") => GoalOrder::Alphabetical,
                    Some(g) => return Err(bad(format!("goal must be any or alphabetical, got {g:?}"))),
                },
            }),
            Some("gridworld") => Some(EnvSpec::GridWorld {
                chain_length: p.get("chain_length", 2)?,
                branch: p.get("branch", false)?,
                progress_reward: p.get("progress_reward", 0.0)?,
            }),
            Some(other) => return Err(bad(format!("env must be boxworld or gridworld, got {other:?}"))),
        };

        let seed = p.get("seed", 0u64)?;
        let t_max = p.opt("t_max")?;
        // shared keys default per mode
        let (lr_default, lambda_default) = match mode {
            Mode::Supervised => (SupervisedConfig::default().learning_rate, SupervisedConfig::default().lambda),
            Mode::Rrl => (PolicyConfig::default().learning_rate, PolicyConfig::default().lambda),
        };
        let learning_rate = p.get("learning_rate", lr_default)?;
        let lambda = p.get("lambda", lambda_default)?;
        let supervised = SupervisedConfig {
            epochs: p.get("epochs", SupervisedConfig::default().epochs)?,
            learning_rate,
            t_max,
            lambda,
            constraint_weight: p.get("constraint_weight", 1.0)?,
            seed,
        };
        let pd = PolicyConfig::default();
        let stop = match (p.opt::<usize>("stop_window")?, p.opt::<f64>("stop_threshold")?) {
            (Some(window), Some(threshold)) => Some(StopRule { window, threshold }),
            (None, None) => None,
            _ => return Err(bad("stop_window and stop_threshold must be given together")),
        };
        let policy = PolicyConfig {
            gamma: p.get("gamma", pd.gamma)?,
            learning_rate,
            c: p.get("c", pd.c)?,
            t_max,
            max_steps: p.get(
                "max_steps",
                match env {
                    Some(EnvSpec::GridWorld { .. }) => dnl_core::envs::GridWorldConfig::default().max_steps,
                    _ => pd.max_steps,
                },
            )?,
            episodes: p.get("episodes", pd.episodes)?,
            lambda,
            baseline: p.get("baseline", pd.baseline)?,
            seed,
            target: p.opt("target")?,
            stop,
        };
        let output = base.join(p.raw("output").unwrap_or("run"));
        let cfg = Self {
            mode,
            program,
            env,
            supervised,
            policy,
            output,
            checkpoint_interval: p.get("checkpoint_interval", 0)?,
            workers: p.get("workers", 1)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_pairs(text)?, base)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.workers != 1 {
            return Err(bad("only workers = 1 is supported"));
        }
        if let ProgramRef::Path(p) = &self.program {
            if !p.is_file() {
                return Err(bad(format!("program file {} does not exist", p.display())));
            }
        }
        match (self.mode, &self.env) {
            (Mode::Rrl, None) => return Err(bad("rrl mode needs env = boxworld or gridworld")),
            (Mode::Supervised, Some(_)) => return Err(bad("supervised mode takes no env")),
            _ => {}
        }
        match &self.env {
            Some(EnvSpec::BoxWorld { boxes, .. }) if !(3..=5).contains(boxes) => {
                return Err(bad("boxes must lie in 3..=5"));
            }
            Some(EnvSpec::GridWorld { chain_length, progress_reward, .. }) => {
                if !(1..=4).contains(chain_length) {
                    return Err(bad("chain_length must lie in 1..=4"));
                }
                if !(0.0..=1.0).contains(progress_reward) {
                    return Err(bad("progress_reward must lie in [0, 1]"));
                }
            }
            _ => {}
        }
        match self.mode {
            Mode::Supervised => self.supervised.validate().map_err(|e| bad(e.to_string())),
            Mode::Rrl => self.policy.validate().map_err(|e| bad(e.to_string())),
        }
    }

    /// Canonical pairs describing everything except the output location;
    /// enough to rebuild the program, environment and policy settings.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        match self.mode {
            Mode::Supervised => {
                let s = &self.supervised;
                put("mode", "supervised".into());
                put("program", self.program.to_string());
                put("epochs", s.epochs.to_string());
                put("learning_rate", s.learning_rate.to_string());
                put("t_max", s.t_max.map_or("none".into(), |t| t.to_string()));
                put("lambda", s.lambda.to_string());
                put("constraint_weight", s.constraint_weight.to_string());
                put("seed", s.seed.to_string());
            }
            Mode::Rrl => {
                let p = &self.policy;
                put("mode", "rrl".into());
                put("program", self.program.to_string());
                match &self.env {
                    Some(EnvSpec::BoxWorld { boxes, goal }) => {
                        put("env", "boxworld".into());
                        put("boxes", boxes.to_string());
                        put("goal", if *goal == GoalOrder::Alphabetical { "alphabetical" } else { "any" }.into());
                    }
                    Some(EnvSpec::GridWorld { chain_length, branch, progress_reward }) => {
                        put("env", "gridworld".into());
                        put("chain_length", chain_length.to_string());
                        put("branch", branch.to_string());
                        put("progress_reward", progress_reward.to_string());
                    }
                    None => {}
                }
                put("learning_rate", p.learning_rate.to_string());
                put("t_max", p.t_max.map_or("none".into(), |t| t.to_string()));
                put("lambda", p.lambda.to_string());
                put("seed", p.seed.to_string());
                put("gamma", p.gamma.to_string());
                put("c", p.c.to_string());
                put("max_steps", p.max_steps.to_string());
                put("episodes", p.episodes.to_string());
                put("baseline", p.baseline.to_string());
                put("target", p.target.clone().unwrap_or_else(|| "none".into()));
                if let Some(s) = p.stop {
                    put("stop_window", s.window.to_string());
                    put("stop_threshold", s.threshold.to_string());
                }
            }
        }
        put("checkpoint_interval", self.checkpoint_interval.to_string());
        put("workers", self.workers.to_string());
        out
    }

    pub fn seed(&self) -> u64 {
        match self.mode {
            Mode::Supervised => self.supervised.seed,
            Mode::Rrl => self.policy.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.supervised.seed = seed;
        self.policy.seed = seed;
    }
}
