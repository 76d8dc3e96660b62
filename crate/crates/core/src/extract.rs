//! Turning trained units into crisp clauses and checking them against the
//! fuzzy engine.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deduction::{Engine, EngineError};
use crate::interpret::{evaluate_crisp, Schedule};
use crate::logic::DnfUnit;
use crate::program::{Atom, CandidateSet, Clause, GroundAtom, Program, TargetSpec, Term};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Crisp clauses of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRules {
    pub target: String,
    pub clauses: Vec<Clause>,
    /// Mean distance of the unit's memberships from {0, 1}.
    pub crispness: f64,
}

impl fmt::Display for TargetRules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(f, "aux {c}.")?;
        }
        Ok(())
    }
}

/// One clause per rule whose disjunction membership reaches `threshold`;
/// its body holds the literals whose membership reaches `threshold`, in
/// candidate order.
pub fn extract_rules(
    specs: &[TargetSpec],
    sets: &[CandidateSet],
    units: &[DnfUnit],
    threshold: f64,
) -> Vec<TargetRules> {
    specs
        .iter()
        .zip(sets)
        .zip(units)
        .map(|((spec, set), unit)| {
            let masks = unit.threshold(threshold);
            let head = Atom {
                predicate: spec.predicate.clone(),
                args: spec.head.iter().map(|v| Term::Var(v.name.clone())).collect(),
            };
            let clauses = masks
                .include
                .iter()
                .zip(&masks.active)
                .filter(|(_, &on)| on)
                .map(|(row, _)| Clause {
                    head: head.clone(),
                    body: (0..set.len()).filter(|&i| row[i]).map(|i| set.literal(i)).collect(),
                })
                .collect();
            TargetRules {
                target: spec.predicate.clone(),
                clauses,
                crispness: unit.crispness(),
            }
        })
        .collect()
}

/// Units whose weights are `±inf` according to the threshold masks.
pub fn threshold_units(units: &[DnfUnit], threshold: f64) -> Vec<DnfUnit> {
    units
        .iter()
        .map(|u| {
            let masks = u.threshold(threshold);
            let include: Vec<Vec<usize>> = masks
                .include
                .iter()
                .zip(&masks.active)
                .map(|(row, &on)| if on { (0..row.len()).filter(|&i| row[i]).collect() } else { Vec::new() })
                .collect();
            let mut crisp = u.clone();
            crisp.set_crisp(&include);
            for (j, &on) in masks.active.iter().enumerate() {
                if !on {
                    crisp.disable_rule(j);
                }
            }
            crisp
        })
        .collect()
}

/// A grounding where the crisp interpreter and the fuzzy engine disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Disagreement {
    /// 0 for the training instance, then one per random instance.
    pub instance: usize,
    pub atom: GroundAtom,
    pub crisp: bool,
    pub fuzzy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub instances: usize,
    pub groundings: usize,
    pub disagreements: Vec<Disagreement>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.disagreements.is_empty()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} instances, {} target groundings, {} disagreements",
            self.instances,
            self.groundings,
            self.disagreements.len()
        )?;
        for d in self.disagreements.iter().take(10) {
            write!(f, "\n  instance {}: {} crisp={} fuzzy={}", d.instance, d.atom, d.crisp as u8, d.fuzzy)?;
        }
        Ok(())
    }
}

/// Produces random instances sharing the training program's schema.
pub type InstanceSampler<'a> = dyn FnMut(&mut ChaCha8Rng) -> Program + 'a;

/// Runs the crisp interpreter with `rules` and the fuzzy engine with the
/// thresholded `units` on the training program and on `trials` sampled
/// instances, comparing every target grounding (fuzzy rounded at 0.5).
pub fn verify_crisp_equivalence(
    engine: &Engine,
    units: &[DnfUnit],
    rules: &[TargetRules],
    threshold: f64,
    trials: usize,
    seed: u64,
    sampler: &mut InstanceSampler<'_>,
) -> Result<VerificationReport, EngineError> {
    let crisp_units = threshold_units(units, threshold);
    let clauses: Vec<Clause> = rules.iter().flat_map(|r| r.clauses.iter().cloned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerificationReport::default();
    for instance in 0..=trials {
        let program = if instance == 0 { engine.program().clone() } else { sampler(&mut rng) };
        let local = Engine::new(program, Some(engine.t_max()))?;
        compare(&local, &crisp_units, &clauses, instance, &mut report)?;
    }
    Ok(report)
}

fn compare(
    engine: &Engine,
    units: &[DnfUnit],
    clauses: &[Clause],
    instance: usize,
    report: &mut VerificationReport,
) -> Result<(), EngineError> {
    let params = engine.params_from_units(units)?;
    let mut ws = engine.workspace();
    engine.chain(&params, &engine.initial_store(), &mut ws)?;
    let fuzzy = engine.final_store(&ws);
    let crisp = evaluate_crisp(engine.program(), engine.plan(), clauses, Schedule::Sweeps(engine.t_max()))?;
    report.instances += 1;
    for slot in engine.units() {
        let range = engine.slots(&slot.target).expect("target declared");
        for i in range {
            report.groundings += 1;
            if (fuzzy[i] >= 0.5) != crisp[i] {
                report.disagreements.push(Disagreement {
                    instance,
                    atom: engine.layout().atom_at(engine.program(), i).expect("slot in range"),
                    crisp: crisp[i],
                    fuzzy: fuzzy[i],
                });
            }
        }
    }
    Ok(())
}

/// Resamples every extensional and state fact of `base` independently with
/// probability `density`, keeping types, clauses and targets.
pub fn random_facts(base: &Program, density: f64, rng: &mut ChaCha8Rng) -> Program {
    use rand::Rng;
    let mut p = base.clone();
    p.facts.clear();
    for d in base.predicates.iter().filter(|d| !d.kind.is_derived()) {
        let choices: Vec<Vec<usize>> = d
            .arg_types
            .iter()
            .map(|t| (0..base.type_decl(t).map_or(0, |t| t.constants.len())).collect())
            .collect();
        for tuple in crate::program::cartesian(&choices) {
            if rng.random_bool(density) {
                let args = tuple
                    .iter()
                    .zip(&d.arg_types)
                    .map(|(&k, t)| base.type_decl(t).expect("declared").constants[k].clone())
                    .collect();
                p.facts.push(crate::program::Fact {
                    atom: GroundAtom {
                        predicate: d.name.clone(),
                        args,
                    },
                    value: 1.0,
                });
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::load_asset;

    fn closure_units(engine: &Engine) -> Vec<DnfUnit> {
        let set = &engine.plan().candidates[0];
        let idx = |s: &str| set.labels().iter().position(|l| l == s).unwrap();
        engine
            .crisp_units(&[vec![vec![idx("edge(X,Y)")], vec![idx("edge(X,Z)"), idx("cnt(Z,Y)")]]])
            .unwrap()
    }

    fn rules(engine: &Engine, units: &[DnfUnit]) -> Vec<TargetRules> {
        extract_rules(&engine.program().targets, &engine.plan().candidates, units, 0.5)
    }

    #[test]
    fn crisp_weights_give_the_two_clauses() {
        let engine = Engine::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
        let r = rules(&engine, &closure_units(&engine));
        assert_eq!(r[0].to_string(), "aux cnt(X,Y) :- edge(X,Y).\naux cnt(X,Y) :- cnt(Z,Y), edge(X,Z).\n");
        assert_eq!(r[0].crispness, 0.0);
    }

    #[test]
    fn half_memberships_include_everything() {
        let engine = Engine::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
        let units = vec![DnfUnit::zeros(2, 17).unwrap()];
        let r = rules(&engine, &units);
        assert_eq!(r[0].clauses.len(), 2);
        assert!(r[0].clauses.iter().all(|c| c.body.len() == 17));
        assert_eq!(r[0].crispness, 0.5);
    }

    #[test]
    fn verification_catches_a_dropped_literal() {
        let engine = Engine::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
        let units = closure_units(&engine);
        let base = engine.program().clone();
        let mut sampler = |rng: &mut ChaCha8Rng| random_facts(&base, 0.3, rng);
        let good = rules(&engine, &units);
        let report = verify_crisp_equivalence(&engine, &units, &good, 0.5, 5, 1, &mut sampler).unwrap();
        assert!(report.is_clean(), "{report}");
        assert_eq!(report.groundings, 6 * 16);

        let mut bad = good.clone();
        bad[0].clauses[1].body.remove(0);
        let report = verify_crisp_equivalence(&engine, &units, &bad, 0.5, 0, 1, &mut sampler).unwrap();
        assert!(!report.is_clean());
    }

    #[test]
    fn empty_rules_against_zero_weights() {
        let engine = Engine::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
        let units = engine.crisp_units(&[vec![]]).unwrap();
        let r = rules(&engine, &units);
        assert!(r[0].clauses.is_empty());
        let base = engine.program().clone();
        let mut sampler = |rng: &mut ChaCha8Rng| random_facts(&base, 0.5, rng);
        assert!(verify_crisp_equivalence(&engine, &units, &r, 0.5, 3, 0, &mut sampler).unwrap().is_clean());
    }
}
