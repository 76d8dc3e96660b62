//! Fuzzy forward chaining compiled into one differentiable graph.

use std::ops::Range;

use rand::Rng;
use thiserror::Error;

use crate::logic::{DnfUnit, LogicError};
use crate::program::{compile_index_plan, GroundAtom, IndexPlan, Layout, PredicateKind, Program, ProgramError};
use crate::tape::{Graph, NodeId, TapeError, Workspace};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("t_max must be at least 1")]
    InvalidTmax,
    #[error("the program is recursive, so t_max must be given explicitly")]
    TmaxRequired,
    #[error("expected {expected} DNF units, got {got}")]
    UnitCount { expected: usize, got: usize },
    #[error("unit for {target} is {got_rules}x{got_atoms}, expected {rules}x{atoms}")]
    UnitShape {
        target: String,
        rules: usize,
        atoms: usize,
        got_rules: usize,
        got_atoms: usize,
    },
    #[error("store has {got} slots, expected {expected}")]
    StoreLength { expected: usize, got: usize },
}

/// Where one target's weights live in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSlot {
    pub target: String,
    pub predicate: usize,
    pub rules: usize,
    pub atoms: usize,
    pub offset: usize,
    pub forced: Vec<bool>,
}

impl UnitSlot {
    pub fn weight_count(&self) -> usize {
        self.rules * (self.atoms + 1)
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.weight_count()
    }
}

/// A compiled program: index plans plus the chaining graph for a fixed
/// number of sweeps.
#[derive(Debug, Clone)]
pub struct Engine {
    program: Program,
    plan: IndexPlan,
    graph: Graph,
    store_input: NodeId,
    sweeps: Vec<NodeId>,
    t_max: usize,
    units: Vec<UnitSlot>,
    target_nodes: Vec<NodeId>,
    penalty: NodeId,
    initial: Vec<f64>,
}

impl Engine {
    /// Compiles `program`. Without `t_max`, non-recursive programs use one
    /// sweep and recursive ones are rejected.
    pub fn new(program: Program, t_max: Option<usize>) -> Result<Self, EngineError> {
        let plan = compile_index_plan(&program)?;
        let t_max = match t_max {
            Some(0) => return Err(EngineError::InvalidTmax),
            Some(t) => t,
            None if plan.recursive => return Err(EngineError::TmaxRequired),
            None => 1,
        };
        let layout = &plan.layout;

        let mut units = Vec::new();
        let mut offset = 0;
        for (spec, set) in program.targets.iter().zip(&plan.candidates) {
            if set.is_empty() {
                return Err(LogicError::EmptyUnit {
                    rules: spec.rules,
                    atoms: 0,
                }
                .into());
            }
            let mut forced = vec![false; set.len()];
            for lit in &spec.forced {
                forced[set.index_of(lit).expect("validated")] = true;
            }
            let slot = UnitSlot {
                target: spec.predicate.clone(),
                predicate: program.predicate_index(&spec.predicate).expect("validated"),
                rules: spec.rules,
                atoms: set.len(),
                offset,
                forced,
            };
            offset += slot.weight_count();
            units.push(slot);
        }

        let mut g = Graph::new();
        let store_input = g.input(layout.store_len());
        let mut memberships = Vec::new();
        let mut penalty_terms = Vec::new();
        for u in &units {
            let w = g.parameter(u.offset, u.rules * u.atoms);
            let mut m = g.sigmoid(w)?;
            if u.forced.iter().any(|&f| f) {
                let pin: Vec<f64> = (0..u.rules * u.atoms).map(|k| u.forced[k % u.atoms] as u8 as f64).collect();
                let keep = g.constant(pin.iter().map(|p| 1.0 - p).collect());
                let pin = g.constant(pin);
                let kept = g.mul(m, keep)?;
                m = g.add(kept, pin)?;
            }
            let wd = g.parameter(u.offset + u.rules * u.atoms, u.rules);
            let md = g.sigmoid(wd)?;
            for (node, len) in [(m, u.rules * u.atoms), (md, u.rules)] {
                let om = g.one_minus(node)?;
                let prod = g.mul(node, om)?;
                penalty_terms.push(g.sum_reduce(prod, len)?);
            }
            memberships.push((m, md));
        }
        let penalty = if penalty_terms.is_empty() {
            g.constant(vec![0.0])
        } else {
            let all = g.concat(penalty_terms.clone())?;
            g.sum_reduce(all, penalty_terms.len())?
        };

        let mut store = store_input;
        let mut sweeps = Vec::with_capacity(t_max);
        for _ in 0..t_max {
            for d in &plan.order {
                let deduced = match d.kind {
                    PredicateKind::Target => {
                        let t = d.target.expect("targets carry their index");
                        let (m, md) = memberships[t];
                        let rules = units[t].rules;
                        let conj = g.conjunction(store, Some(m), d.plans[0].clone(), rules)?;
                        Some(g.disjunction(conj, Some(md), rules)?)
                    }
                    _ => {
                        let mut negated: Option<NodeId> = None;
                        let mut single = None;
                        for (k, cp) in d.plans.iter().enumerate() {
                            let c = g.conjunction(store, None, cp.clone(), 1)?;
                            if d.plans.len() == 1 {
                                single = Some(c);
                                break;
                            }
                            let nc = g.one_minus(c)?;
                            negated = Some(match (k, negated) {
                                (0, _) | (_, None) => nc,
                                (_, Some(acc)) => g.mul(acc, nc)?,
                            });
                        }
                        match (single, negated) {
                            (Some(c), _) => Some(c),
                            (None, Some(n)) => Some(g.one_minus(n)?),
                            (None, None) => None,
                        }
                    }
                };
                if let Some(v) = deduced {
                    store = g.amalgamate(store, layout.offset(d.predicate), v)?;
                }
            }
            sweeps.push(store);
        }
        let target_nodes = units
            .iter()
            .map(|u| g.slice(store, layout.offset(u.predicate), layout.count(u.predicate)))
            .collect::<Result<_, _>>()?;

        let mut initial = vec![0.0; layout.store_len()];
        initial[layout.true_slot()] = 1.0;
        for f in &program.facts {
            initial[layout.ground_index(&program, &f.atom)?] = f.value;
        }

        Ok(Self {
            program,
            plan,
            graph: g,
            store_input,
            sweeps,
            t_max,
            units,
            target_nodes,
            penalty,
            initial,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn plan(&self) -> &IndexPlan {
        &self.plan
    }

    pub fn layout(&self) -> &Layout {
        &self.plan.layout
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub(crate) fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.parameter_count()
    }

    pub fn units(&self) -> &[UnitSlot] {
        &self.units
    }

    pub fn unit_index(&self, target: &str) -> Option<usize> {
        self.units.iter().position(|u| u.target == target)
    }

    pub fn store_input(&self) -> NodeId {
        self.store_input
    }

    /// Store node after the last sweep.
    pub fn final_store_node(&self) -> NodeId {
        *self.sweeps.last().expect("t_max >= 1")
    }

    /// Store node after sweep `k` (zero-based).
    pub fn sweep_node(&self, k: usize) -> NodeId {
        self.sweeps[k]
    }

    /// Valuation slice of a target after chaining.
    pub fn target_node(&self, unit: usize) -> NodeId {
        self.target_nodes[unit]
    }

    /// Scalar sum of `m (1 - m)` over every membership of every unit.
    pub fn penalty_node(&self) -> NodeId {
        self.penalty
    }

    /// Store holding the declared facts; everything else is 0.
    pub fn initial_store(&self) -> Vec<f64> {
        self.initial.clone()
    }

    /// Slots of one predicate in the store.
    pub fn slots(&self, predicate: &str) -> Option<Range<usize>> {
        let k = self.program.predicate_index(predicate)?;
        let off = self.layout().offset(k);
        Some(off..off + self.layout().count(k))
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.graph)
    }

    /// Runs `t_max` sweeps from `store`.
    pub fn chain(&self, params: &[f64], store: &[f64], ws: &mut Workspace) -> Result<(), EngineError> {
        if store.len() != self.layout().store_len() {
            return Err(EngineError::StoreLength {
                expected: self.layout().store_len(),
                got: store.len(),
            });
        }
        ws.set_input(&self.graph, self.store_input, store)?;
        self.graph.evaluate(params, ws)?;
        Ok(())
    }

    /// Store after chaining.
    pub fn final_store<'a>(&self, ws: &'a Workspace) -> &'a [f64] {
        ws.value(self.final_store_node())
    }

    pub fn target_values<'a>(&self, ws: &'a Workspace, unit: usize) -> &'a [f64] {
        ws.value(self.target_nodes[unit])
    }

    /// Valuation of a ground atom in an arbitrary store vector.
    pub fn query_in(&self, store: &[f64], atom: &GroundAtom) -> Result<f64, EngineError> {
        Ok(store[self.layout().ground_index(&self.program, atom)?])
    }

    /// Valuation of a ground atom after chaining.
    pub fn query(&self, ws: &Workspace, atom: &GroundAtom) -> Result<f64, EngineError> {
        self.query_in(self.final_store(ws), atom)
    }

    /// Fresh units with weights from `range`, forced masks applied.
    pub fn random_units<R: Rng>(&self, range: (f64, f64), rng: &mut R) -> Result<Vec<DnfUnit>, EngineError> {
        self.units
            .iter()
            .map(|u| {
                let mut unit = DnfUnit::random(u.rules, u.atoms, range, rng)?;
                unit.set_forced(u.forced.clone())?;
                Ok(unit)
            })
            .collect()
    }

    pub fn params_from_units(&self, units: &[DnfUnit]) -> Result<Vec<f64>, EngineError> {
        if units.len() != self.units.len() {
            return Err(EngineError::UnitCount {
                expected: self.units.len(),
                got: units.len(),
            });
        }
        let mut params = Vec::with_capacity(self.parameter_count());
        for (slot, unit) in self.units.iter().zip(units) {
            if unit.rules() != slot.rules || unit.atoms() != slot.atoms {
                return Err(EngineError::UnitShape {
                    target: slot.target.clone(),
                    rules: slot.rules,
                    atoms: slot.atoms,
                    got_rules: unit.rules(),
                    got_atoms: unit.atoms(),
                });
            }
            params.extend(unit.weights());
        }
        Ok(params)
    }

    pub fn units_from_params(&self, params: &[f64]) -> Result<Vec<DnfUnit>, EngineError> {
        self.units
            .iter()
            .map(|slot| {
                let mut unit = DnfUnit::from_weights(slot.rules, slot.atoms, &params[slot.range()])?;
                unit.set_forced(slot.forced.clone())?;
                Ok(unit)
            })
            .collect()
    }

    /// Units with every membership exactly 0 or 1. `rules[t][j]` lists the
    /// candidate literals of rule `j` of target `t`.
    pub fn crisp_units(&self, rules: &[Vec<Vec<usize>>]) -> Result<Vec<DnfUnit>, EngineError> {
        self.units
            .iter()
            .zip(rules)
            .map(|(slot, include)| {
                let mut unit = DnfUnit::zeros(slot.rules, slot.atoms)?;
                unit.set_crisp(include);
                unit.set_forced(slot.forced.clone())?;
                Ok(unit)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::parse_program;

    const GRAPH: &str = "type node { a b c d }
pred edge/2 (node,node) extensional
pred cnt/2 (node,node) target
fact edge(a,b).
fact edge(b,c).
fact edge(c,d).
fact edge(d,b).
target cnt(X:node, Y:node) vars(Z:node) rules(2)
";

    fn closure_params(engine: &Engine) -> Vec<f64> {
        let set = &engine.plan().candidates[0];
        let idx = |s: &str| set.labels().iter().position(|l| l == s).unwrap();
        let units = engine
            .crisp_units(&[vec![vec![idx("edge(X,Y)")], vec![idx("edge(X,Z)"), idx("cnt(Z,Y)")]]])
            .unwrap();
        engine.params_from_units(&units).unwrap()
    }

    fn cnt_set(engine: &Engine, ws: &Workspace) -> Vec<(String, String)> {
        let p = engine.program();
        let consts = &p.types[0].constants;
        let v = engine.target_values(ws, 0);
        let mut out = Vec::new();
        for (k, &x) in v.iter().enumerate() {
            assert!(x == 0.0 || x == 1.0, "value {x} is not crisp");
            if x == 1.0 {
                out.push((consts[k / 4].clone(), consts[k % 4].clone()));
            }
        }
        out
    }

    #[test]
    fn crisp_closure_on_the_example_graph() {
        let engine = Engine::new(parse_program(GRAPH).unwrap(), Some(4)).unwrap();
        let params = closure_params(&engine);
        let mut ws = engine.workspace();
        engine.chain(&params, &engine.initial_store(), &mut ws).unwrap();
        let got = cnt_set(&engine, &ws);
        let expected: Vec<(String, String)> = [
            "ab", "ac", "ad", "bb", "bc", "bd", "cb", "cc", "cd", "db", "dc", "dd",
        ]
        .iter()
        .map(|s| (s[..1].to_string(), s[1..].to_string()))
        .collect();
        assert_eq!(got, expected);
        assert_eq!(engine.query(&ws, &GroundAtom::new("cnt", &["a", "a"])).unwrap(), 0.0);
        assert_eq!(engine.query(&ws, &GroundAtom::new("edge", &["a", "b"])).unwrap(), 1.0);
    }

    #[test]
    fn one_sweep_gives_direct_edges() {
        let engine = Engine::new(parse_program(GRAPH).unwrap(), Some(1)).unwrap();
        let mut ws = engine.workspace();
        engine.chain(&closure_params(&engine), &engine.initial_store(), &mut ws).unwrap();
        let got = cnt_set(&engine, &ws);
        let want: Vec<(String, String)> =
            [("a", "b"), ("b", "c"), ("c", "d"), ("d", "b")].iter().map(|(x, y)| (x.to_string(), y.to_string())).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn zero_memberships_derive_nothing() {
        let engine = Engine::new(parse_program(GRAPH).unwrap(), Some(3)).unwrap();
        let params = vec![f64::NEG_INFINITY; engine.parameter_count()];
        let mut ws = engine.workspace();
        let store = engine.initial_store();
        engine.chain(&params, &store, &mut ws).unwrap();
        assert!(engine.target_values(&ws, 0).iter().all(|&v| v == 0.0));
        assert_eq!(engine.final_store(&ws), store.as_slice());
    }

    #[test]
    fn unchained_derived_atoms_start_at_zero() {
        let engine = Engine::new(parse_program(GRAPH).unwrap(), Some(1)).unwrap();
        let store = engine.initial_store();
        assert_eq!(engine.query_in(&store, &GroundAtom::new("cnt", &["a", "b"])).unwrap(), 0.0);
        assert!(engine.query_in(&store, &GroundAtom::new("cnt", &["a", "z"])).is_err());
    }

    #[test]
    fn t_max_rules() {
        let p = parse_program(GRAPH).unwrap();
        assert!(matches!(Engine::new(p.clone(), Some(0)), Err(EngineError::InvalidTmax)));
        assert!(matches!(Engine::new(p, None), Err(EngineError::TmaxRequired)));
        let flat = parse_program("type t { a }\npred e/1 (t) extensional\npred q/1 (t) auxiliary\naux q(X) :- e(X).\n")
            .unwrap();
        assert_eq!(Engine::new(flat, None).unwrap().t_max(), 1);
    }

    #[test]
    fn multiple_clauses_combine_by_disjunction() {
        let p = parse_program(
            "type t { a b c }\npred e/1 (t) extensional\npred f/1 (t) extensional\npred q/1 (t) auxiliary\n\
             fact e(a).\nfact f(b) = 0.5.\naux q(X) :- e(X).\naux q(X) :- f(X).\n",
        )
        .unwrap();
        let engine = Engine::new(p, None).unwrap();
        let mut ws = engine.workspace();
        engine.chain(&[], &engine.initial_store(), &mut ws).unwrap();
        let q = &engine.final_store(&ws)[engine.slots("q").unwrap()];
        assert_eq!(q, &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn unit_round_trip_through_params() {
        let engine = Engine::new(parse_program(GRAPH).unwrap(), Some(2)).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let units = engine.random_units((-2.5, -1.5), &mut rng).unwrap();
        let params = engine.params_from_units(&units).unwrap();
        assert_eq!(params.len(), 2 * 18);
        assert_eq!(engine.units_from_params(&params).unwrap(), units);
    }
}
