//! Symbolic environments that emit predicate groundings.

mod boxworld;
mod gridworld;

pub use boxworld::{BoxWorld, BoxWorldConfig, BoxWorldState, GoalOrder};
pub use gridworld::{GridWorld, GridWorldConfig, GridWorldState, Item, GRID, KEY_COLORS};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::program::{Fact, GroundAtom, Layout, PredicateKind, Program};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("action {action} is out of range (action space has {count} actions)")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("invalid environment parameter: {0}")]
    Parameter(String),
    #[error("could not place the layout after {0} attempts")]
    Placement(usize),
    #[error("schema mismatch: {0}")]
    Schema(String),
}

/// A state predicate the environment fills, with the size of each argument
/// domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePredicate {
    pub name: &'static str,
    pub domains: Vec<usize>,
}

/// One true state grounding: predicate position in the schema plus constant
/// indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateAtom {
    pub predicate: usize,
    pub args: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub trait Environment {
    fn state_predicates(&self) -> Vec<StatePredicate>;
    fn action_count(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
    /// True state groundings; everything else is false.
    fn groundings(&self) -> Vec<StateAtom>;
    fn steps_taken(&self) -> usize;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn state_predicates(&self) -> Vec<StatePredicate> {
        (**self).state_predicates()
    }
    fn action_count(&self) -> usize {
        (**self).action_count()
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        (**self).step(action)
    }
    fn groundings(&self) -> Vec<StateAtom> {
        (**self).groundings()
    }
    fn steps_taken(&self) -> usize {
        (**self).steps_taken()
    }
}

/// Store slots of the environment's state predicates inside a compiled
/// program.
#[derive(Debug, Clone)]
pub struct StateBinding {
    offsets: Vec<usize>,
    radices: Vec<Vec<usize>>,
    ranges: Vec<std::ops::Range<usize>>,
}

impl StateBinding {
    /// Checks that every state predicate of `program` is produced by `env`
    /// with matching domains, and that `action_target` has one grounding
    /// per action.
    pub fn new(
        env: &dyn Environment,
        program: &Program,
        layout: &Layout,
        action_target: &str,
    ) -> Result<Self, EnvError> {
        let preds = env.state_predicates();
        let mut binding = Self {
            offsets: Vec::new(),
            radices: Vec::new(),
            ranges: Vec::new(),
        };
        for sp in &preds {
            let k = program
                .predicate_index(sp.name)
                .ok_or_else(|| EnvError::Schema(format!("program does not declare {}", sp.name)))?;
            if program.predicates[k].kind != PredicateKind::State {
                return Err(EnvError::Schema(format!("{} is not declared as a state predicate", sp.name)));
            }
            if layout.radices(k) != sp.domains.as_slice() {
                return Err(EnvError::Schema(format!(
                    "{} has domains {:?} in the program but {:?} in the environment",
                    sp.name,
                    layout.radices(k),
                    sp.domains
                )));
            }
            binding.offsets.push(layout.offset(k));
            binding.radices.push(sp.domains.clone());
            binding.ranges.push(layout.offset(k)..layout.offset(k) + layout.count(k));
        }
        for d in program.predicates.iter().filter(|d| d.kind == PredicateKind::State) {
            if !preds.iter().any(|sp| sp.name == d.name) {
                return Err(EnvError::Schema(format!("environment does not produce state predicate {}", d.name)));
            }
        }
        let target = program
            .predicate_index(action_target)
            .filter(|&k| program.predicates[k].kind == PredicateKind::Target)
            .ok_or_else(|| EnvError::Schema(format!("{action_target} is not a target predicate")))?;
        if layout.count(target) != env.action_count() {
            return Err(EnvError::Schema(format!(
                "{action_target} has {} groundings but the environment has {} actions",
                layout.count(target),
                env.action_count()
            )));
        }
        Ok(binding)
    }

    /// Clears the state slots of `store` and sets the current groundings.
    pub fn write(&self, env: &dyn Environment, store: &mut [f64]) {
        for r in &self.ranges {
            store[r.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
        for atom in env.groundings() {
            let mut idx = 0;
            for (a, r) in atom.args.iter().zip(&self.radices[atom.predicate]) {
                idx = idx * r + a;
            }
            store[self.offsets[atom.predicate] + idx] = 1.0;
        }
    }
}

/// `base` with its state facts replaced by the environment's current
/// groundings, for evaluating rules on concrete states.
pub fn state_instance(base: &Program, env: &dyn Environment) -> Result<Program, EnvError> {
    let preds = env.state_predicates();
    let mut p = base.clone();
    p.facts.retain(|f| base.predicate(&f.atom.predicate).is_none_or(|d| d.kind != PredicateKind::State));
    for atom in env.groundings() {
        let name = preds[atom.predicate].name;
        let decl = base
            .predicate(name)
            .ok_or_else(|| EnvError::Schema(format!("program does not declare {name}")))?;
        let args = atom
            .args
            .iter()
            .zip(&decl.arg_types)
            .map(|(&k, ty)| {
                base.type_decl(ty)
                    .and_then(|t| t.constants.get(k).cloned())
                    .ok_or_else(|| EnvError::Schema(format!("{name} argument {k} outside type {ty}")))
            })
            .collect::<Result<_, _>>()?;
        p.facts.push(Fact {
            atom: GroundAtom {
                predicate: name.to_string(),
                args,
            },
            value: 1.0,
        });
    }
    Ok(p)
}
