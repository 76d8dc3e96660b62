//! Supervised training of target predicates from positive and negative
//! examples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::deduction::{Engine, EngineError};
use crate::logic::{DnfUnit, INIT_RANGE};
use crate::program::{Atom, GroundAtom, Program, Term};
use crate::tape::{BceTerm, NodeId, Workspace};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("loss became NaN at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("the program has no examples")]
    NoExamples,
    #[error("invalid config: {0}")]
    Config(String),
}

/// First- and second-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates `params` in place. Non-finite parameters (crisp `±inf`
    /// weights) are left alone.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            if !params[i].is_finite() {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` uses one sweep for non-recursive programs.
    pub t_max: Option<usize>,
    /// Final interpretability weight, reached by the end of the ramp.
    pub lambda: f64,
    pub constraint_weight: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.05,
            t_max: None,
            lambda: 1e-2,
            constraint_weight: 1.0,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.epochs == 0 {
            return Err(LearnError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::Config("learning rate must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.constraint_weight >= 0.0) {
            return Err(LearnError::Config("penalty weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Interpretability weight at `epoch`: zero for the first three quarters,
/// then a linear ramp that reaches `lambda` at the last epoch.
pub fn lambda_schedule(epoch: usize, epochs: usize, lambda: f64) -> f64 {
    let start = epochs * 3 / 4;
    if epoch < start {
        return 0.0;
    }
    lambda * ((epoch + 1 - start) as f64 / (epochs - start) as f64).min(1.0)
}

/// Engine extended with the example and constraint losses.
#[derive(Debug, Clone)]
pub struct SupervisedModel {
    engine: Engine,
    lambda: NodeId,
    constraint_weight: NodeId,
    examples_loss: NodeId,
    loss: NodeId,
    examples: Vec<BceTerm>,
}

impl SupervisedModel {
    pub fn new(program: Program, t_max: Option<usize>) -> Result<Self, LearnError> {
        let mut engine = Engine::new(program, t_max)?;
        let p = engine.program().clone();
        let index = |a: &GroundAtom| engine.layout().ground_index(&p, a).map_err(EngineError::from);
        let mut examples = Vec::new();
        for (atoms, label) in [(&p.positives, 1.0), (&p.negatives, 0.0)] {
            for a in atoms {
                examples.push(BceTerm {
                    index: index(a)?,
                    label,
                    weight: 1.0,
                });
            }
        }
        let mut constraints = Vec::new();
        for c in &p.constraints {
            let target = if c.value { 1.0 } else { 0.0 };
            let label = if c.literal.negated { 1.0 - target } else { target };
            for a in groundings(&p, &c.literal.atom) {
                constraints.push(BceTerm {
                    index: index(&a)?,
                    label,
                    weight: 1.0,
                });
            }
        }

        let store = engine.final_store_node();
        let penalty = engine.penalty_node();
        let g = engine.graph_mut();
        let map = |e: crate::tape::TapeError| LearnError::Engine(e.into());
        let examples_loss = g.binary_cross_entropy(store, examples.clone()).map_err(map)?;
        let lambda = g.input(1);
        let constraint_weight = g.input(1);
        let weighted_penalty = g.mul(lambda, penalty).map_err(map)?;
        let mut loss = g.add(examples_loss, weighted_penalty).map_err(map)?;
        if !constraints.is_empty() {
            let c = g.binary_cross_entropy(store, constraints).map_err(map)?;
            let wc = g.mul(constraint_weight, c).map_err(map)?;
            loss = g.add(loss, wc).map_err(map)?;
        }
        Ok(Self {
            engine,
            lambda,
            constraint_weight,
            examples_loss,
            loss,
            examples,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn loss_node(&self) -> NodeId {
        self.loss
    }

    pub fn example_count(&self) -> usize {
        self.examples.len()
    }

    pub fn workspace(&self) -> Workspace {
        self.engine.workspace()
    }

    /// Chains from the fact store and returns the total loss.
    pub fn loss(&self, params: &[f64], lambda: f64, constraint_weight: f64, ws: &mut Workspace) -> Result<f64, LearnError> {
        let g = self.engine.graph();
        ws.set_input(g, self.lambda, &[lambda]).map_err(EngineError::from)?;
        ws.set_input(g, self.constraint_weight, &[constraint_weight]).map_err(EngineError::from)?;
        self.engine.chain(params, &self.engine.initial_store(), ws)?;
        Ok(ws.value(self.loss)[0])
    }

    /// Loss and its gradient with respect to every weight.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        lambda: f64,
        constraint_weight: f64,
        ws: &mut Workspace,
    ) -> Result<(f64, Vec<f64>), LearnError> {
        let loss = self.loss(params, lambda, constraint_weight, ws)?;
        let grad = self.engine.graph().gradient(ws, self.loss).map_err(EngineError::from)?;
        Ok((loss, grad))
    }

    /// Cross-entropy over the examples alone, from the last evaluation.
    pub fn example_loss(&self, ws: &Workspace) -> f64 {
        ws.value(self.examples_loss)[0]
    }

    /// Fraction of examples on the correct side of 0.5, from the last
    /// evaluation.
    pub fn accuracy(&self, ws: &Workspace) -> f64 {
        if self.examples.is_empty() {
            return 1.0;
        }
        let store = self.engine.final_store(ws);
        let hits = self
            .examples
            .iter()
            .filter(|t| (store[t.index] >= 0.5) == (t.label >= 0.5))
            .count();
        hits as f64 / self.examples.len() as f64
    }
}

/// Every grounding of `atom`, with variables ranging over their types.
pub fn groundings(p: &Program, atom: &Atom) -> Vec<GroundAtom> {
    let Some(decl) = p.predicate(&atom.predicate) else {
        return Vec::new();
    };
    let mut vars: Vec<(&str, &[String])> = Vec::new();
    for (t, ty) in atom.args.iter().zip(&decl.arg_types) {
        if let Term::Var(v) = t {
            if !vars.iter().any(|(n, _)| n == v) {
                let consts = p.type_decl(ty).map(|d| d.constants.as_slice()).unwrap_or(&[]);
                vars.push((v, consts));
            }
        }
    }
    let choices: Vec<Vec<usize>> = vars.iter().map(|(_, c)| (0..c.len()).collect()).collect();
    crate::program::cartesian(&choices)
        .into_iter()
        .map(|pick| GroundAtom {
            predicate: atom.predicate.clone(),
            args: atom
                .args
                .iter()
                .map(|t| match t {
                    Term::Const(c) => c.clone(),
                    Term::Var(v) => {
                        let k = vars.iter().position(|(n, _)| n == v).expect("collected above");
                        vars[k].1[pick[k]].clone()
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean distance of the memberships from {0, 1}.
    pub crispness: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedProgram {
    pub engine: Engine,
    pub units: Vec<DnfUnit>,
    pub params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    /// Accuracy at the final weights.
    pub accuracy: f64,
}

/// Mean `min(m, 1 - m)` over all memberships of all units.
pub fn mean_crispness(units: &[DnfUnit]) -> f64 {
    let (sum, n) = units.iter().fold((0.0, 0usize), |(s, n), u| {
        let k = u.weight_count();
        (s + u.crispness() * k as f64, n + k)
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Full-batch training from a seeded random initialisation.
pub fn train_supervised(program: Program, cfg: &SupervisedConfig) -> Result<TrainedProgram, LearnError> {
    cfg.validate()?;
    if program.positives.is_empty() && program.negatives.is_empty() {
        return Err(LearnError::NoExamples);
    }
    let model = SupervisedModel::new(program, cfg.t_max)?;
    let engine = model.engine();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let units = engine.random_units(INIT_RANGE, &mut rng)?;
    let params = engine.params_from_units(&units)?;
    train_from(&model, params, cfg)
}

/// Training loop starting at `params`.
pub fn train_from(model: &SupervisedModel, params: Vec<f64>, cfg: &SupervisedConfig) -> Result<TrainedProgram, LearnError> {
    train_observed(model, params, cfg, &mut |_, _| {})
}

/// As [`train_from`], calling `observe` after every update with the epoch's
/// record and the updated parameters.
pub fn train_observed(
    model: &SupervisedModel,
    mut params: Vec<f64>,
    cfg: &SupervisedConfig,
    observe: &mut dyn FnMut(&EpochRecord, &[f64]),
) -> Result<TrainedProgram, LearnError> {
    cfg.validate()?;
    let engine = model.engine();
    let mut ws = model.workspace();
    let mut adam = Adam::new(cfg.learning_rate, params.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(epoch, cfg.epochs, cfg.lambda);
        let (loss, grad) = model.loss_and_grad(&params, lambda, cfg.constraint_weight, &mut ws)?;
        if loss.is_nan() || grad.iter().any(|g| g.is_nan()) {
            return Err(LearnError::Divergence { epoch });
        }
        let units = engine.units_from_params(&params)?;
        let record = EpochRecord {
            epoch,
            loss,
            accuracy: model.accuracy(&ws),
            crispness: mean_crispness(&units),
        };
        adam.step(&mut params, &grad);
        observe(&record, &params);
        history.push(record);
    }
    let final_loss = model.loss(&params, cfg.lambda, cfg.constraint_weight, &mut ws)?;
    if final_loss.is_nan() {
        return Err(LearnError::Divergence { epoch: cfg.epochs });
    }
    let accuracy = model.accuracy(&ws);
    Ok(TrainedProgram {
        engine: engine.clone(),
        units: engine.units_from_params(&params)?,
        params,
        history,
        accuracy,
    })
}
