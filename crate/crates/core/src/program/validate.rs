use std::collections::{HashMap, HashSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{
    enumerate_candidate_atoms, Atom, Diagnostic, DiagnosticCode as Code, GroundAtom, Item, PredicateKind, Program,
    Severity, Term,
};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    /// True when the report holds no errors (warnings are allowed).
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Warning)
    }

    pub fn has(&self, code: Code) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }
}

/// Checks typing, declarations, target specs and stratified negation.
pub fn validate_program(p: &Program) -> ValidationReport {
    let mut v = Validator { p, out: Vec::new() };
    v.declarations();
    v.facts();
    v.aux_clauses();
    v.targets();
    v.constraints();
    v.examples();
    v.stratification();
    ValidationReport { diagnostics: v.out }
}

struct Validator<'a> {
    p: &'a Program,
    out: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn err(&mut self, code: Code, item: Item, message: String) {
        self.out.push(Diagnostic::error(code, Some(item), message));
    }

    fn declarations(&mut self) {
        let mut seen = HashSet::new();
        for (i, t) in self.p.types.iter().enumerate() {
            if !seen.insert(&t.name) {
                self.err(Code::DuplicateDeclaration, Item::Type(i), format!("type {} declared twice", t.name));
            }
            let mut consts = HashSet::new();
            for c in &t.constants {
                if !consts.insert(c) {
                    self.err(
                        Code::DuplicateDeclaration,
                        Item::Type(i),
                        format!("constant {c} listed twice in type {}", t.name),
                    );
                }
            }
        }
        let mut seen = HashSet::new();
        for (i, d) in self.p.predicates.iter().enumerate() {
            if !seen.insert(&d.name) {
                self.err(
                    Code::DuplicateDeclaration,
                    Item::Predicate(i),
                    format!("predicate {} declared twice", d.name),
                );
            }
            for t in &d.arg_types {
                if self.p.type_decl(t).is_none() {
                    self.err(
                        Code::UnknownType,
                        Item::Predicate(i),
                        format!("predicate {} uses undeclared type {t}", d.name),
                    );
                }
            }
        }
    }

    fn check_ground(&mut self, item: Item, atom: &GroundAtom) -> bool {
        let Some(decl) = self.p.predicate(&atom.predicate) else {
            self.err(Code::UnknownPredicate, item, format!("unknown predicate {}", atom.predicate));
            return false;
        };
        if decl.arity() != atom.args.len() {
            self.err(
                Code::ArityMismatch,
                item,
                format!("{} has arity {} but {atom} has {} arguments", decl.name, decl.arity(), atom.args.len()),
            );
            return false;
        }
        let mut ok = true;
        for (c, ty) in atom.args.iter().zip(&decl.arg_types) {
            if self.p.type_decl(ty).is_some() && self.p.constant_index(ty, c).is_none() {
                self.err(
                    Code::ConstantNotInType,
                    item,
                    format!("constant {c} in {atom} is not declared in type {ty}"),
                );
                ok = false;
            }
        }
        ok
    }

    /// Checks an atom with variables against `env` (variable -> type).
    /// Unseen variables are added when `bind` is set and reported otherwise.
    fn check_atom(&mut self, item: Item, atom: &Atom, env: &mut HashMap<String, String>, bind: bool) -> bool {
        let Some(decl) = self.p.predicate(&atom.predicate) else {
            self.err(Code::UnknownPredicate, item, format!("unknown predicate {}", atom.predicate));
            return false;
        };
        if decl.arity() != atom.args.len() {
            self.err(
                Code::ArityMismatch,
                item,
                format!("{} has arity {} but {atom} has {} arguments", decl.name, decl.arity(), atom.args.len()),
            );
            return false;
        }
        let mut ok = true;
        for (term, ty) in atom.args.iter().zip(&decl.arg_types) {
            match term {
                Term::Const(c) => {
                    if self.p.type_decl(ty).is_some() && self.p.constant_index(ty, c).is_none() {
                        self.err(
                            Code::ConstantNotInType,
                            item,
                            format!("constant {c} in {atom} is not declared in type {ty}"),
                        );
                        ok = false;
                    }
                }
                Term::Var(v) => match env.get(v) {
                    Some(t) if t != ty => {
                        self.err(
                            Code::TypeMismatch,
                            item,
                            format!("variable {v} has type {t} but {atom} expects {ty}"),
                        );
                        ok = false;
                    }
                    Some(_) => {}
                    None if bind => {
                        env.insert(v.clone(), ty.clone());
                    }
                    None => {
                        self.err(Code::UnknownVariable, item, format!("variable {v} in {atom} is not declared"));
                        ok = false;
                    }
                },
            }
        }
        ok
    }

    fn facts(&mut self) {
        let mut seen = HashSet::new();
        for (i, f) in self.p.facts.iter().enumerate() {
            let item = Item::Fact(i);
            if !self.check_ground(item, &f.atom) {
                continue;
            }
            if !(0.0..=1.0).contains(&f.value) {
                self.err(Code::InvalidValue, item, format!("fact {} has value {} outside [0,1]", f.atom, f.value));
            }
            let kind = self.p.predicate(&f.atom.predicate).map(|d| d.kind);
            if kind.is_some_and(|k| k.is_derived()) {
                self.err(
                    Code::KindMismatch,
                    item,
                    format!("facts may not assert derived predicate {}", f.atom.predicate),
                );
            }
            if !seen.insert(&f.atom) {
                self.err(Code::DuplicateDeclaration, item, format!("fact {} asserted twice", f.atom));
            }
        }
    }

    fn aux_clauses(&mut self) {
        for (i, c) in self.p.aux_clauses.iter().enumerate() {
            let item = Item::Aux(i);
            let mut env = HashMap::new();
            if !self.check_atom(item, &c.head, &mut env, true) {
                continue;
            }
            if self.p.predicate(&c.head.predicate).map(|d| d.kind) != Some(PredicateKind::Auxiliary) {
                self.err(
                    Code::KindMismatch,
                    item,
                    format!("clause head {} is not an auxiliary predicate", c.head.predicate),
                );
            }
            for lit in &c.body {
                self.check_atom(item, &lit.atom, &mut env, true);
            }
        }
    }

    fn targets(&mut self) {
        let mut seen = HashSet::new();
        for (i, t) in self.p.targets.iter().enumerate() {
            let item = Item::Target(i);
            if !seen.insert(&t.predicate) {
                self.err(
                    Code::DuplicateDeclaration,
                    item,
                    format!("target {} specified twice", t.predicate),
                );
            }
            let Some(decl) = self.p.predicate(&t.predicate) else {
                self.err(Code::UnknownPredicate, item, format!("unknown predicate {}", t.predicate));
                continue;
            };
            let mut ok = true;
            if decl.kind != PredicateKind::Target {
                self.err(Code::KindMismatch, item, format!("{} is not declared as a target", t.predicate));
                ok = false;
            }
            if decl.arity() != t.head.len() {
                self.err(
                    Code::ArityMismatch,
                    item,
                    format!("{} has arity {} but the target head has {} variables", decl.name, decl.arity(), t.head.len()),
                );
                ok = false;
            } else {
                for (v, ty) in t.head.iter().zip(&decl.arg_types) {
                    if &v.ty != ty {
                        self.err(
                            Code::TypeMismatch,
                            item,
                            format!("head variable {} has type {} but {} expects {ty}", v.name, v.ty, decl.name),
                        );
                        ok = false;
                    }
                }
            }
            let mut names = HashSet::new();
            let mut env = HashMap::new();
            for v in t.variables() {
                if !names.insert(&v.name) {
                    self.err(
                        Code::DuplicateDeclaration,
                        item,
                        format!("variable {} declared twice in target {}", v.name, t.predicate),
                    );
                    ok = false;
                }
                if self.p.type_decl(&v.ty).is_none() {
                    self.err(Code::UnknownType, item, format!("variable {} uses undeclared type {}", v.name, v.ty));
                    ok = false;
                }
                env.insert(v.name.clone(), v.ty.clone());
            }
            if t.rules == 0 {
                self.err(Code::InvalidValue, item, format!("target {} needs at least one rule", t.predicate));
                ok = false;
            }
            for ex in &t.excluded {
                if self.p.predicate(ex).is_none() {
                    self.err(Code::UnknownPredicate, item, format!("excluded predicate {ex} is not declared"));
                    ok = false;
                }
            }
            for lit in &t.forced {
                ok &= self.check_atom(item, &lit.atom, &mut env, false);
                if lit.negated && !t.negation {
                    self.err(
                        Code::InvalidValue,
                        item,
                        format!("forced literal {lit} is negated but {} has negation disabled", t.predicate),
                    );
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            match enumerate_candidate_atoms(self.p, &t.predicate) {
                Ok(set) => {
                    for lit in &t.forced {
                        if set.index_of(lit).is_none() {
                            self.err(
                                Code::InvalidValue,
                                item,
                                format!("forced literal {lit} is not a candidate of {}", t.predicate),
                            );
                        }
                    }
                    for mut w in set.warnings {
                        w.item = Some(item);
                        self.out.push(w);
                    }
                }
                Err(e) => self.out.extend(e.diagnostics),
            }
        }
        for (i, d) in self.p.predicates.iter().enumerate() {
            if d.kind == PredicateKind::Target && self.p.target(&d.name).is_none() {
                self.err(Code::MissingTarget, Item::Predicate(i), format!("target predicate {} has no target spec", d.name));
            }
        }
    }

    fn constraints(&mut self) {
        for (i, c) in self.p.constraints.iter().enumerate() {
            self.check_atom(Item::Constraint(i), &c.literal.atom, &mut HashMap::new(), true);
        }
    }

    fn examples(&mut self) {
        for (i, a) in self.p.positives.iter().enumerate() {
            self.check_ground(Item::Positive(i), a);
        }
        for (i, a) in self.p.negatives.iter().enumerate() {
            self.check_ground(Item::Negative(i), a);
        }
    }

    fn stratification(&mut self) {
        let mut graph = DiGraph::<usize, bool>::new();
        let nodes: Vec<_> = (0..self.p.predicates.len()).map(|i| graph.add_node(i)).collect();
        let mut edges: Vec<(usize, usize, bool, Item)> = Vec::new();
        for (i, c) in self.p.aux_clauses.iter().enumerate() {
            let Some(head) = self.p.predicate_index(&c.head.predicate) else { continue };
            for lit in &c.body {
                if let Some(b) = self.p.predicate_index(&lit.atom.predicate) {
                    edges.push((b, head, lit.negated, Item::Aux(i)));
                }
            }
        }
        for (i, t) in self.p.targets.iter().enumerate() {
            let Some(head) = self.p.predicate_index(&t.predicate) else { continue };
            let forced_neg: HashSet<&str> = t
                .forced
                .iter()
                .filter(|l| l.negated)
                .map(|l| l.atom.predicate.as_str())
                .collect();
            for (b, d) in self.p.predicates.iter().enumerate() {
                if !t.excluded.contains(&d.name) {
                    edges.push((b, head, forced_neg.contains(d.name.as_str()), Item::Target(i)));
                }
            }
        }
        for &(a, b, neg, _) in &edges {
            graph.add_edge(nodes[a], nodes[b], neg);
        }
        let mut component = vec![0; nodes.len()];
        for (k, scc) in tarjan_scc(&graph).into_iter().enumerate() {
            for n in scc {
                component[graph[n]] = k;
            }
        }
        let mut reported = HashSet::new();
        for (a, b, neg, item) in edges {
            if neg && component[a] == component[b] && reported.insert((a, b)) {
                let (pa, pb) = (&self.p.predicates[a].name, &self.p.predicates[b].name);
                self.err(
                    Code::Stratification,
                    item,
                    format!("{pb} depends negatively on {pa} inside a recursive cycle"),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_unchecked;
    use super::*;

    fn report(text: &str) -> ValidationReport {
        validate_program(&parse_unchecked(text).unwrap().0)
    }

    #[test]
    fn negation_through_recursion() {
        let r = report("type t { a }\npred p/1 (t) auxiliary\naux p(X) :- !p(X).\n");
        assert!(r.has(Code::Stratification));
        assert!(!r.is_valid());
    }

    #[test]
    fn stratified_negation_is_fine() {
        let r = report(
            "type t { a b }\npred e/1 (t) extensional\npred q/1 (t) auxiliary\npred p/1 (t) auxiliary\n\
             aux q(X) :- e(X).\naux p(X) :- !q(X).\n",
        );
        assert!(r.is_valid(), "{r:?}");
    }

    #[test]
    fn forced_literal_with_undeclared_variable() {
        let r = report(
            "type t { a }\npred e/2 (t,t) extensional\npred g/1 (t) target\ntarget g(X:t) force(e(X,W)) rules(1)\n",
        );
        assert!(r.has(Code::UnknownVariable));
    }

    #[test]
    fn distinct_codes() {
        assert!(report("pred p/1 (nope) extensional\n").has(Code::UnknownType));
        assert!(report("type t { a }\nfact q(a).\n").has(Code::UnknownPredicate));
        assert!(report("type t { a }\npred p/1 (t) extensional\nfact p(a,a).\n").has(Code::ArityMismatch));
        assert!(report("type t { a }\ntype t { b }\n").has(Code::DuplicateDeclaration));
        assert!(report("type t { a }\npred p/1 (t) extensional\nfact p(a) = 1.5.\n").has(Code::InvalidValue));
        assert!(report("type t { a }\npred p/1 (t) target\n").has(Code::MissingTarget));
        assert!(report("type t { a }\ntype u { b }\npred p/1 (t) extensional\npred q/1 (u) extensional\n\
                        pred r/1 (t) auxiliary\naux r(X) :- p(X), q(X).\n")
            .has(Code::TypeMismatch));
    }

    #[test]
    fn degenerate_hypothesis_is_a_warning() {
        let r = report("type t { a }\npred g/1 (t) target\ntarget g(X:t) rules(1) exclude(g)\n");
        assert!(r.is_valid());
        assert!(r.warnings().any(|w| w.code == Code::DegenerateHypothesis));
    }
}
