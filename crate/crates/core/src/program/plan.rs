use std::collections::HashMap;
use std::sync::Arc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{
    enumerate_candidate_atoms, validate_program, Atom, CandidateSet, DiagnosticCode, GroundAtom, PredicateKind,
    Program, ProgramError, Severity, Term,
};
use crate::tape::{ConjunctionPlan, LiteralBlock};

/// Flat store layout: every predicate's groundings in declaration order,
/// each block mixed-radix row-major over its argument types, followed by
/// two sentinel slots holding 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    names: Vec<String>,
    offsets: Vec<usize>,
    radices: Vec<Vec<usize>>,
    slots: usize,
}

impl Layout {
    pub fn new(p: &Program) -> Result<Self, ProgramError> {
        let mut offsets = Vec::with_capacity(p.predicates.len());
        let mut radices = Vec::with_capacity(p.predicates.len());
        let mut slots = 0;
        for d in &p.predicates {
            let r: Vec<usize> = d
                .arg_types
                .iter()
                .map(|t| {
                    p.type_decl(t).map(|t| t.constants.len()).ok_or_else(|| {
                        ProgramError::single(DiagnosticCode::UnknownType, format!("undeclared type {t}"))
                    })
                })
                .collect::<Result<_, _>>()?;
            offsets.push(slots);
            slots += r.iter().product::<usize>();
            radices.push(r);
        }
        Ok(Self {
            names: p.predicates.iter().map(|d| d.name.clone()).collect(),
            offsets,
            radices,
            slots,
        })
    }

    /// Store length including the two sentinel slots.
    pub fn store_len(&self) -> usize {
        self.slots + 2
    }

    /// Slot that always holds 0.
    pub fn false_slot(&self) -> usize {
        self.slots
    }

    /// Slot that always holds 1.
    pub fn true_slot(&self) -> usize {
        self.slots + 1
    }

    pub fn predicate_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn offset(&self, pred: usize) -> usize {
        self.offsets[pred]
    }

    pub fn count(&self, pred: usize) -> usize {
        self.radices[pred].iter().product()
    }

    pub fn radices(&self, pred: usize) -> &[usize] {
        &self.radices[pred]
    }

    /// Flat index of a grounding given per-argument constant indices.
    pub fn index(&self, pred: usize, consts: &[usize]) -> usize {
        self.offsets[pred] + encode(&self.radices[pred], consts)
    }

    /// Constant indices of the `local`-th grounding of `pred`.
    pub fn decode(&self, pred: usize, local: usize) -> Vec<usize> {
        decode(&self.radices[pred], local)
    }

    /// Predicate and local grounding index of a flat slot.
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        if flat >= self.slots {
            return None;
        }
        let pred = (0..self.offsets.len()).find(|&k| flat >= self.offsets[k] && flat < self.offsets[k] + self.count(k))?;
        Some((pred, flat - self.offsets[pred]))
    }

    /// Flat index of a ground atom.
    pub fn ground_index(&self, p: &Program, atom: &GroundAtom) -> Result<usize, ProgramError> {
        let pred = self
            .names
            .iter()
            .position(|n| n == &atom.predicate)
            .ok_or_else(|| ProgramError::single(DiagnosticCode::UnknownPredicate, format!("unknown predicate {}", atom.predicate)))?;
        let decl = &p.predicates[pred];
        if decl.arity() != atom.args.len() {
            return Err(ProgramError::single(
                DiagnosticCode::ArityMismatch,
                format!("{atom} does not match arity {}", decl.arity()),
            ));
        }
        let consts: Vec<usize> = atom
            .args
            .iter()
            .zip(&decl.arg_types)
            .map(|(c, ty)| {
                p.constant_index(ty, c).ok_or_else(|| {
                    ProgramError::single(DiagnosticCode::ConstantNotInType, format!("{c} is not a constant of type {ty}"))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(self.index(pred, &consts))
    }

    /// Ground atom stored at a flat slot.
    pub fn atom_at(&self, p: &Program, flat: usize) -> Option<GroundAtom> {
        let (pred, local) = self.locate(flat)?;
        let decl = &p.predicates[pred];
        let args = self
            .decode(pred, local)
            .iter()
            .zip(&decl.arg_types)
            .map(|(&c, ty)| p.type_decl(ty).map(|t| t.constants[c].clone()))
            .collect::<Option<_>>()?;
        Some(GroundAtom {
            predicate: decl.name.clone(),
            args,
        })
    }
}

fn encode(radices: &[usize], digits: &[usize]) -> usize {
    radices.iter().zip(digits).fold(0, |acc, (r, d)| acc * r + d)
}

fn decode(radices: &[usize], mut value: usize) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for (slot, r) in out.iter_mut().zip(radices).rev() {
        *slot = value % r;
        value /= r;
    }
    out
}

/// Compiled gathers for one derived predicate.
#[derive(Debug, Clone)]
pub struct DerivedPlan {
    pub predicate: usize,
    pub kind: PredicateKind,
    /// Index into `Program::targets` for targets.
    pub target: Option<usize>,
    /// One plan for a target (columns are candidate literals); one per
    /// clause for an auxiliary predicate (columns are body literals).
    pub plans: Vec<Arc<ConjunctionPlan>>,
}

#[derive(Debug, Clone)]
pub struct IndexPlan {
    pub layout: Layout,
    /// Derived predicates in evaluation order.
    pub order: Vec<DerivedPlan>,
    /// Candidate sets parallel to `Program::targets`.
    pub candidates: Vec<CandidateSet>,
    /// Whether some derived predicate depends on itself.
    pub recursive: bool,
}

/// Compiles gather plans for every derived predicate of a valid program.
pub fn compile_index_plan(p: &Program) -> Result<IndexPlan, ProgramError> {
    let report = validate_program(p);
    if !report.is_valid() {
        return Err(ProgramError {
            diagnostics: report.diagnostics.into_iter().filter(|d| d.severity == Severity::Error).collect(),
        });
    }
    let layout = Layout::new(p)?;
    let candidates: Vec<CandidateSet> = p
        .targets
        .iter()
        .map(|t| enumerate_candidate_atoms(p, &t.predicate))
        .collect::<Result<_, _>>()?;

    // dependency graph over predicates, edges point from body to head
    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..p.predicates.len()).map(|i| graph.add_node(i)).collect();
    let pidx = |name: &str| p.predicate_index(name).expect("validated");
    let mut self_loop = vec![false; p.predicates.len()];
    let mut add = |graph: &mut DiGraph<usize, ()>, from: usize, to: usize| {
        if from == to {
            self_loop[to] = true;
        }
        graph.add_edge(nodes[from], nodes[to], ());
    };
    for c in &p.aux_clauses {
        let head = pidx(&c.head.predicate);
        for lit in &c.body {
            add(&mut graph, pidx(&lit.atom.predicate), head);
        }
    }
    for (t, set) in p.targets.iter().zip(&candidates) {
        let head = pidx(&t.predicate);
        for lit in &set.literals {
            add(&mut graph, pidx(&lit.predicate), head);
        }
    }
    let mut sccs = tarjan_scc(&graph);
    sccs.reverse();

    let mut order = Vec::new();
    let mut recursive = false;
    for scc in sccs {
        let mut members: Vec<usize> = scc.iter().map(|&n| graph[n]).collect();
        members.sort_unstable();
        let derived: Vec<usize> = members.iter().copied().filter(|&i| p.predicates[i].kind.is_derived()).collect();
        if derived.iter().any(|&i| members.len() > 1 || self_loop[i]) {
            recursive = true;
        }
        for pred in derived {
            order.push(compile_predicate(p, &layout, &candidates, pred));
        }
    }
    Ok(IndexPlan {
        layout,
        order,
        candidates,
        recursive,
    })
}

fn compile_predicate(p: &Program, layout: &Layout, candidates: &[CandidateSet], pred: usize) -> DerivedPlan {
    let decl = &p.predicates[pred];
    if decl.kind == PredicateKind::Target {
        let t = p.targets.iter().position(|t| t.predicate == decl.name).expect("validated");
        return DerivedPlan {
            predicate: pred,
            kind: decl.kind,
            target: Some(t),
            plans: vec![Arc::new(target_plan(p, layout, &candidates[t]))],
        };
    }
    let plans = p
        .aux_clauses
        .iter()
        .filter(|c| c.head.predicate == decl.name)
        .map(|c| Arc::new(clause_plan(p, layout, pred, &c.head, &c.body)))
        .collect();
    DerivedPlan {
        predicate: pred,
        kind: decl.kind,
        target: None,
        plans,
    }
}

fn type_size(p: &Program, ty: &str) -> usize {
    p.type_decl(ty).map_or(0, |t| t.constants.len())
}

/// Which block a literal belongs to, given which of its variables are head
/// variables.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Head,
    Sub,
    Joint,
}

fn classify(is_head: impl Iterator<Item = bool>) -> Block {
    let (mut any_head, mut any_sub) = (false, false);
    for h in is_head {
        if h {
            any_head = true;
        } else {
            any_sub = true;
        }
    }
    match (any_head, any_sub) {
        (_, false) => Block::Head,
        (false, true) => Block::Sub,
        (true, true) => Block::Joint,
    }
}

/// A literal argument: a variable slot (head or existential) or a fixed
/// constant index.
#[derive(Clone, Copy)]
enum Arg {
    Head(usize),
    Sub(usize),
    Const(usize),
}

struct PendingLiteral {
    column: u32,
    negated: bool,
    pred: usize,
    args: Vec<Arg>,
}

fn resolve(layout: &Layout, lit: &PendingLiteral, head: &[usize], sub: &[usize]) -> u32 {
    let consts: Vec<usize> = lit
        .args
        .iter()
        .map(|a| match *a {
            Arg::Head(i) => head[i],
            Arg::Sub(i) => sub[i],
            Arg::Const(c) => c,
        })
        .collect();
    layout.index(lit.pred, &consts) as u32
}

/// Assembles the three literal blocks. `head_rows[e]` gives the head
/// variable binding of row `e` (or `None` for rows whose head pattern does
/// not match, which read the false sentinel through `guard`).
fn assemble(
    layout: &Layout,
    literals: Vec<PendingLiteral>,
    head_rows: &[Option<Vec<usize>>],
    sub_radices: &[usize],
    atoms: usize,
    guard: Option<u32>,
) -> ConjunctionPlan {
    let subs: usize = sub_radices.iter().product();
    let sub_rows: Vec<Vec<usize>> = (0..subs).map(|s| decode(sub_radices, s)).collect();
    let mut blocks: [(Vec<&PendingLiteral>, LiteralBlock); 3] = Default::default();
    for lit in &literals {
        let b = classify(lit.args.iter().filter_map(|a| match a {
            Arg::Head(_) => Some(true),
            Arg::Sub(_) => Some(false),
            Arg::Const(_) => None,
        }));
        let slot = match b {
            Block::Head => 0,
            Block::Sub => 1,
            Block::Joint => 2,
        };
        blocks[slot].0.push(lit);
        blocks[slot].1.columns.push(lit.column);
        blocks[slot].1.negated.push(lit.negated);
    }
    if let Some(col) = guard {
        blocks[0].1.columns.push(col);
        blocks[0].1.negated.push(false);
    }
    let dummy = vec![0; head_rows.iter().flatten().next().map_or(0, |r| r.len())];
    for row in head_rows {
        let h = row.as_ref().unwrap_or(&dummy);
        for lit in &blocks[0].0 {
            let idx = if row.is_some() { resolve(layout, lit, h, &[]) } else { layout.false_slot() as u32 };
            blocks[0].1.index.push(idx);
        }
        if guard.is_some() {
            let slot = if row.is_some() { layout.true_slot() } else { layout.false_slot() };
            blocks[0].1.index.push(slot as u32);
        }
    }
    for s in &sub_rows {
        for lit in &blocks[1].0 {
            blocks[1].1.index.push(resolve(layout, lit, &[], s));
        }
    }
    for row in head_rows {
        for s in &sub_rows {
            for lit in &blocks[2].0 {
                let idx = match row {
                    Some(h) => resolve(layout, lit, h, s),
                    None => layout.false_slot() as u32,
                };
                blocks[2].1.index.push(idx);
            }
        }
    }
    let [(_, head), (_, sub), (_, joint)] = blocks;
    ConjunctionPlan {
        heads: head_rows.len(),
        substitutions: subs,
        atoms,
        head,
        sub,
        joint,
    }
}

fn target_plan(p: &Program, layout: &Layout, set: &CandidateSet) -> ConjunctionPlan {
    let spec = p.target(&set.owner).expect("validated");
    let nh = spec.head.len();
    let literals = set
        .literals
        .iter()
        .enumerate()
        .map(|(i, c)| PendingLiteral {
            column: i as u32,
            negated: c.negated,
            pred: p.predicate_index(&c.predicate).expect("validated"),
            args: c.vars.iter().map(|&v| if v < nh { Arg::Head(v) } else { Arg::Sub(v - nh) }).collect(),
        })
        .collect();
    let head_radices: Vec<usize> = spec.head.iter().map(|v| type_size(p, &v.ty)).collect();
    let heads: usize = head_radices.iter().product();
    let head_rows: Vec<Option<Vec<usize>>> = (0..heads).map(|e| Some(decode(&head_radices, e))).collect();
    let sub_radices: Vec<usize> = spec.exists.iter().map(|v| type_size(p, &v.ty)).collect();
    assemble(layout, literals, &head_rows, &sub_radices, set.len(), None)
}

fn clause_plan(p: &Program, layout: &Layout, pred: usize, head: &Atom, body: &[crate::program::Literal]) -> ConjunctionPlan {
    let decl = &p.predicates[pred];
    // head variables in order of first appearance, with their types
    let mut head_vars: Vec<(String, String)> = Vec::new();
    let mut simple = true;
    for (t, ty) in head.args.iter().zip(&decl.arg_types) {
        match t {
            Term::Var(v) if !head_vars.iter().any(|(n, _)| n == v) => head_vars.push((v.clone(), ty.clone())),
            _ => simple = false,
        }
    }
    let mut sub_vars: Vec<(String, String)> = Vec::new();
    let mut literals = Vec::new();
    for (i, lit) in body.iter().enumerate() {
        let bpred = p.predicate_index(&lit.atom.predicate).expect("validated");
        let bdecl = &p.predicates[bpred];
        let args = lit
            .atom
            .args
            .iter()
            .zip(&bdecl.arg_types)
            .map(|(t, ty)| match t {
                Term::Const(c) => Arg::Const(p.constant_index(ty, c).expect("validated")),
                Term::Var(v) => {
                    if let Some(k) = head_vars.iter().position(|(n, _)| n == v) {
                        Arg::Head(k)
                    } else if let Some(k) = sub_vars.iter().position(|(n, _)| n == v) {
                        Arg::Sub(k)
                    } else {
                        sub_vars.push((v.clone(), ty.clone()));
                        Arg::Sub(sub_vars.len() - 1)
                    }
                }
            })
            .collect();
        literals.push(PendingLiteral {
            column: i as u32,
            negated: lit.negated,
            pred: bpred,
            args,
        });
    }

    // each grounding of the head predicate binds the head variables, or
    // fails to match a constant / repeated variable
    let var_pos: HashMap<&str, usize> = head_vars.iter().enumerate().map(|(k, (n, _))| (n.as_str(), k)).collect();
    let head_rows: Vec<Option<Vec<usize>>> = (0..layout.count(pred))
        .map(|e| {
            let consts = layout.decode(pred, e);
            let mut binding = vec![usize::MAX; head_vars.len()];
            for ((t, ty), &c) in head.args.iter().zip(&decl.arg_types).zip(&consts) {
                match t {
                    Term::Const(name) => {
                        if p.constant_index(ty, name) != Some(c) {
                            return None;
                        }
                    }
                    Term::Var(v) => {
                        let k = var_pos[v.as_str()];
                        if binding[k] != usize::MAX && binding[k] != c {
                            return None;
                        }
                        binding[k] = c;
                    }
                }
            }
            Some(binding)
        })
        .collect();
    let sub_radices: Vec<usize> = sub_vars.iter().map(|(_, ty)| type_size(p, ty)).collect();
    let guard = (!simple).then_some(body.len() as u32);
    assemble(layout, literals, &head_rows, &sub_radices, body.len() + usize::from(!simple), guard)
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    const CNT: &str = "type node { a b c d }
pred edge/2 (node,node) extensional
pred cnt/2 (node,node) target
fact edge(a,b).
target cnt(X:node, Y:node) vars(Z:node) rules(2)
";

    #[test]
    fn mixed_radix_layout() {
        let p = parse_program(CNT).unwrap();
        let l = Layout::new(&p).unwrap();
        assert_eq!(l.count(0), 16);
        assert_eq!(l.offset(1), 16);
        assert_eq!(l.store_len(), 34);
        assert_eq!(l.index(0, &[1, 2]), 6);
        assert_eq!(l.decode(0, 6), vec![1, 2]);
        assert_eq!(l.ground_index(&p, &GroundAtom::new("cnt", &["d", "a"])).unwrap(), 28);
        assert_eq!(l.atom_at(&p, 28).unwrap(), GroundAtom::new("cnt", &["d", "a"]));
        assert_eq!(l.locate(32), None);
    }

    #[test]
    fn cnt_plan_dimensions() {
        let p = parse_program(CNT).unwrap();
        let plan = compile_index_plan(&p).unwrap();
        assert!(plan.recursive);
        let d = &plan.order[0];
        let c = &d.plans[0];
        assert_eq!((c.heads, c.substitutions, c.atoms, c.row_width()), (16, 4, 17, 17));
    }

    #[test]
    fn nullary_predicate_has_one_grounding() {
        let p = parse_program("pred z/0 () auxiliary\naux z.\n").unwrap();
        let plan = compile_index_plan(&p).unwrap();
        assert_eq!(plan.layout.count(0), 1);
        assert_eq!(plan.order[0].plans[0].heads, 1);
        assert!(!plan.recursive);
    }

    #[test]
    fn aux_order_follows_dependencies() {
        let p = parse_program(
            "type t { a b }\npred e/2 (t,t) extensional\npred r/1 (t) auxiliary\npred q/1 (t) auxiliary\n\
             aux r(X) :- q(X), !e(X,X).\naux q(X) :- e(X,Y).\n",
        )
        .unwrap();
        let plan = compile_index_plan(&p).unwrap();
        let names: Vec<_> = plan.order.iter().map(|d| p.predicates[d.predicate].name.as_str()).collect();
        assert_eq!(names, ["q", "r"]);
        let q = &plan.order[0].plans[0];
        assert_eq!((q.heads, q.substitutions), (2, 2));
        assert_eq!(q.joint.width(), 1);
    }

    #[test]
    fn head_constants_use_a_guard() {
        let p = parse_program("type t { a b }\npred e/1 (t) extensional\npred q/2 (t,t) auxiliary\naux q(X,X) :- e(X).\n")
            .unwrap();
        let plan = compile_index_plan(&p).unwrap();
        let c = &plan.order[0].plans[0];
        assert_eq!(c.head.width(), 2);
        // q(a,b) is row 1: guard reads the false sentinel
        assert_eq!(c.head.index[3] as usize, plan.layout.false_slot());
        assert_eq!(c.head.index[1] as usize, plan.layout.true_slot());
    }
}
