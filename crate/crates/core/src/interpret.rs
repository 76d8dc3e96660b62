//! Crisp Datalog evaluation over the same store layout as the fuzzy engine.

use std::collections::HashMap;

use crate::program::{Clause, IndexPlan, Program, ProgramError, Term};

/// How long to keep applying clauses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Exactly `t` sweeps in the engine's evaluation order.
    Sweeps(usize),
    /// Until nothing changes.
    Fixpoint,
}

/// Evaluates `program`'s auxiliary clauses plus `extra` clauses (typically
/// extracted target rules) with two-valued logic. Facts with value >= 0.5
/// count as true.
pub fn evaluate_crisp(
    program: &Program,
    plan: &IndexPlan,
    extra: &[Clause],
    schedule: Schedule,
) -> Result<Vec<bool>, ProgramError> {
    let layout = &plan.layout;
    let mut store = vec![false; layout.store_len()];
    store[layout.true_slot()] = true;
    for f in &program.facts {
        store[layout.ground_index(program, &f.atom)?] = f.value >= 0.5;
    }
    evaluate_crisp_from(program, plan, extra, schedule, store)
}

/// As [`evaluate_crisp`], starting from an explicit store.
pub fn evaluate_crisp_from(
    program: &Program,
    plan: &IndexPlan,
    extra: &[Clause],
    schedule: Schedule,
    mut store: Vec<bool>,
) -> Result<Vec<bool>, ProgramError> {
    let mut by_head: HashMap<&str, Vec<Compiled>> = HashMap::new();
    for c in program.aux_clauses.iter().chain(extra) {
        by_head.entry(c.head.predicate.as_str()).or_default().push(compile(program, plan, c)?);
    }
    let mut sweep = 0;
    loop {
        let mut changed = false;
        for d in &plan.order {
            let name = &program.predicates[d.predicate].name;
            let Some(clauses) = by_head.get(name.as_str()) else { continue };
            let derived: Vec<usize> = clauses.iter().flat_map(|c| c.fire(&store)).collect();
            for slot in derived {
                changed |= !store[slot];
                store[slot] = true;
            }
        }
        sweep += 1;
        match schedule {
            Schedule::Sweeps(t) if sweep >= t => break,
            Schedule::Fixpoint if !changed => break,
            _ => {}
        }
    }
    Ok(store)
}

#[derive(Debug)]
struct CompiledAtom {
    offset: usize,
    radices: Vec<usize>,
    args: Vec<Arg>,
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Var(usize),
    Const(usize),
}

#[derive(Debug)]
struct Compiled {
    sizes: Vec<usize>,
    head: CompiledAtom,
    body: Vec<(CompiledAtom, bool)>,
}

impl CompiledAtom {
    fn slot(&self, assignment: &[usize]) -> usize {
        let mut idx = 0;
        for (arg, r) in self.args.iter().zip(&self.radices) {
            let v = match *arg {
                Arg::Var(k) => assignment[k],
                Arg::Const(c) => c,
            };
            idx = idx * r + v;
        }
        self.offset + idx
    }
}

impl Compiled {
    fn fire(&self, store: &[bool]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut assignment = vec![0; self.sizes.len()];
        if self.sizes.contains(&0) {
            return out;
        }
        loop {
            if self.body.iter().all(|(a, neg)| store[a.slot(&assignment)] != *neg) {
                out.push(self.head.slot(&assignment));
            }
            let mut k = self.sizes.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                assignment[k] += 1;
                if assignment[k] < self.sizes[k] {
                    break;
                }
                assignment[k] = 0;
            }
        }
    }
}

fn compile(p: &Program, plan: &IndexPlan, c: &Clause) -> Result<Compiled, ProgramError> {
    let mut vars: Vec<(String, usize)> = Vec::new();
    let mut atom = |a: &crate::program::Atom| -> Result<CompiledAtom, ProgramError> {
        let k = p.predicate_index(&a.predicate).ok_or_else(|| {
            ProgramError::single(
                crate::program::DiagnosticCode::UnknownPredicate,
                format!("unknown predicate {}", a.predicate),
            )
        })?;
        let decl = &p.predicates[k];
        let mut args = Vec::new();
        for (t, ty) in a.args.iter().zip(&decl.arg_types) {
            let size = p.type_decl(ty).map_or(0, |d| d.constants.len());
            args.push(match t {
                Term::Var(v) => match vars.iter().position(|(n, _)| n == v) {
                    Some(i) => Arg::Var(i),
                    None => {
                        vars.push((v.clone(), size));
                        Arg::Var(vars.len() - 1)
                    }
                },
                Term::Const(name) => Arg::Const(p.constant_index(ty, name).ok_or_else(|| {
                    ProgramError::single(
                        crate::program::DiagnosticCode::ConstantNotInType,
                        format!("{name} is not a constant of type {ty}"),
                    )
                })?),
            });
        }
        Ok(CompiledAtom {
            offset: plan.layout.offset(k),
            radices: plan.layout.radices(k).to_vec(),
            args,
        })
    };
    let head = atom(&c.head)?;
    let body = c
        .body
        .iter()
        .map(|l| Ok((atom(&l.atom)?, l.negated)))
        .collect::<Result<_, ProgramError>>()?;
    Ok(Compiled {
        sizes: vars.iter().map(|(_, s)| *s).collect(),
        head,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{compile_index_plan, parse_program};

    #[test]
    fn closure_by_fixpoint_and_by_sweeps() {
        let p = parse_program(
            "type n { a b c d }\npred edge/2 (n,n) extensional\npred path/2 (n,n) auxiliary\n\
             fact edge(a,b).\nfact edge(b,c).\nfact edge(c,d).\n\
             aux path(X,Y) :- edge(X,Y).\naux path(X,Y) :- edge(X,Z), path(Z,Y).\n",
        )
        .unwrap();
        let plan = compile_index_plan(&p).unwrap();
        let range = plan.layout.offset(1)..plan.layout.offset(1) + 16;
        let full = evaluate_crisp(&p, &plan, &[], Schedule::Fixpoint).unwrap();
        assert_eq!(full[range.clone()].iter().filter(|&&b| b).count(), 6);
        let one = evaluate_crisp(&p, &plan, &[], Schedule::Sweeps(1)).unwrap();
        assert_eq!(one[range].iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn negation_and_constants() {
        let p = parse_program(
            "type t { a b c }\npred e/1 (t) extensional\npred q/1 (t) auxiliary\npred r/0 () auxiliary\n\
             fact e(a).\naux q(X) :- !e(X).\naux r() :- q(b), e(a).\n",
        )
        .unwrap();
        let plan = compile_index_plan(&p).unwrap();
        let s = evaluate_crisp(&p, &plan, &[], Schedule::Sweeps(1)).unwrap();
        let q = plan.layout.offset(1);
        assert_eq!(&s[q..q + 3], &[false, true, true]);
        assert!(s[plan.layout.offset(2)]);
    }
}
