//! Random well-typed programs for round-trip and engine property tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{
    Atom, Clause, Constraint, Fact, GroundAtom, Literal, PredicateDecl, PredicateKind, Program, TargetSpec, Term,
    TypeDecl, TypedVar,
};

const VARS: [&str; 4] = ["X", "Y", "Z", "W"];

/// Generates a random valid program: one to three types, a handful of
/// extensional, state and auxiliary predicates, an optional target, facts,
/// constraints and examples. Auxiliary clauses only reference earlier
/// predicates, so the program is always stratified.
pub fn random_program<R: Rng>(rng: &mut R) -> Program {
    let mut p = Program::default();
    let type_count = rng.random_range(1..=3);
    for t in 0..type_count {
        let n = rng.random_range(1..=4);
        p.types.push(TypeDecl {
            name: format!("t{t}"),
            constants: (0..n)
                .map(|k| if rng.random_bool(0.5) { format!("{k}") } else { format!("c{t}_{k}") })
                .collect(),
        });
    }
    let type_names: Vec<String> = p.types.iter().map(|t| t.name.clone()).collect();
    let random_sig = |rng: &mut R| -> Vec<String> {
        let arity = rng.random_range(0..=3);
        (0..arity).map(|_| type_names.choose(rng).unwrap().clone()).collect()
    };

    let base = rng.random_range(1..=4);
    for i in 0..base {
        let kind = if rng.random_bool(0.6) { PredicateKind::Extensional } else { PredicateKind::State };
        p.predicates.push(PredicateDecl {
            name: format!("b{i}"),
            arg_types: random_sig(rng),
            kind,
        });
    }
    let aux = rng.random_range(0..=3);
    for i in 0..aux {
        let arg_types = random_sig(rng);
        let head = Atom {
            predicate: format!("a{i}"),
            args: arg_types.iter().enumerate().map(|(k, _)| Term::Var(VARS[k].into())).collect(),
        };
        let mut env: Vec<(String, String)> =
            arg_types.iter().enumerate().map(|(k, t)| (VARS[k].to_string(), t.clone())).collect();
        let body_len = rng.random_range(0..=3);
        let mut body = Vec::new();
        for _ in 0..body_len {
            let earlier = p.predicates.len();
            let d = &p.predicates[rng.random_range(0..earlier)];
            let args = d
                .arg_types
                .iter()
                .map(|ty| random_term(rng, &p, ty, &mut env, true))
                .collect();
            body.push(Literal {
                atom: Atom {
                    predicate: d.name.clone(),
                    args,
                },
                negated: rng.random_bool(0.3),
            });
        }
        p.predicates.push(PredicateDecl {
            name: format!("a{i}"),
            arg_types,
            kind: PredicateKind::Auxiliary,
        });
        p.aux_clauses.push(Clause { head, body });
    }

    if rng.random_bool(0.7) {
        let arg_types = random_sig(rng);
        let head: Vec<TypedVar> = arg_types
            .iter()
            .enumerate()
            .map(|(k, t)| TypedVar {
                name: VARS[k].into(),
                ty: t.clone(),
            })
            .collect();
        let exists: Vec<TypedVar> = (head.len()..rng.random_range(head.len()..=VARS.len()))
            .map(|k| TypedVar {
                name: VARS[k].into(),
                ty: type_names.choose(rng).unwrap().clone(),
            })
            .collect();
        let negation = rng.random_bool(0.5);
        let excluded: Vec<String> = p
            .predicates
            .iter()
            .filter(|_| rng.random_bool(0.2))
            .map(|d| d.name.clone())
            .collect();
        p.predicates.push(PredicateDecl {
            name: "goal".into(),
            arg_types,
            kind: PredicateKind::Target,
        });
        let mut spec = TargetSpec {
            predicate: "goal".into(),
            head,
            exists,
            rules: rng.random_range(1..=4),
            negation,
            forced: Vec::new(),
            excluded,
        };
        if rng.random_bool(0.3) {
            if let Ok(set) = super::enumerate_candidate_atoms(&p_with_target(&p, &spec), "goal") {
                let options: Vec<usize> = (0..set.len()).filter(|&i| set.literals[i].predicate != "goal").collect();
                if let Some(&i) = options.choose(rng) {
                    spec.forced.push(set.literal(i));
                }
            }
        }
        p.targets.push(spec);
    }

    let base_preds: Vec<PredicateDecl> = p.predicates.iter().filter(|d| !d.kind.is_derived()).cloned().collect();
    for _ in 0..rng.random_range(0..6) {
        let d = base_preds.choose(rng).unwrap();
        let Some(atom) = random_ground(rng, &p, d) else { continue };
        if p.facts.iter().any(|f| f.atom == atom) {
            continue;
        }
        let value = if rng.random_bool(0.6) { 1.0 } else { rng.random_range(0..=100) as f64 / 100.0 };
        p.facts.push(Fact { atom, value });
    }
    let all: Vec<PredicateDecl> = p.predicates.clone();
    for _ in 0..rng.random_range(0..3) {
        let d = all.choose(rng).unwrap();
        let mut env = Vec::new();
        let args = d.arg_types.iter().map(|ty| random_term(rng, &p, ty, &mut env, true)).collect();
        p.constraints.push(Constraint {
            literal: Literal {
                atom: Atom {
                    predicate: d.name.clone(),
                    args,
                },
                negated: rng.random_bool(0.5),
            },
            value: rng.random_bool(0.5),
        });
    }
    for _ in 0..rng.random_range(0..4) {
        let d = all.choose(rng).unwrap();
        if let Some(a) = random_ground(rng, &p, d) {
            if rng.random_bool(0.5) {
                p.positives.push(a);
            } else {
                p.negatives.push(a);
            }
        }
    }
    p
}

fn p_with_target(p: &Program, spec: &TargetSpec) -> Program {
    let mut q = p.clone();
    q.targets.push(spec.clone());
    q
}

fn random_term<R: Rng>(rng: &mut R, p: &Program, ty: &str, env: &mut Vec<(String, String)>, bind: bool) -> Term {
    let consts = &p.type_decl(ty).unwrap().constants;
    if rng.random_bool(0.2) {
        return Term::Const(consts.choose(rng).unwrap().clone());
    }
    let same: Vec<&String> = env.iter().filter(|(_, t)| t == ty).map(|(n, _)| n).collect();
    if !same.is_empty() && (rng.random_bool(0.6) || !bind) {
        return Term::Var((*same.choose(rng).unwrap()).clone());
    }
    match VARS.iter().find(|v| !env.iter().any(|(n, _)| n == *v)) {
        Some(v) if bind => {
            env.push((v.to_string(), ty.to_string()));
            Term::Var(v.to_string())
        }
        _ => Term::Const(consts.choose(rng).unwrap().clone()),
    }
}

fn random_ground<R: Rng>(rng: &mut R, p: &Program, d: &PredicateDecl) -> Option<GroundAtom> {
    let args = d
        .arg_types
        .iter()
        .map(|ty| p.type_decl(ty).and_then(|t| t.constants.choose(rng).cloned()))
        .collect::<Option<_>>()?;
    Some(GroundAtom {
        predicate: d.name.clone(),
        args,
    })
}
