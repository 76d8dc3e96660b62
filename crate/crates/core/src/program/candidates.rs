use sha2::{Digest, Sha256};

use super::{Atom, Diagnostic, DiagnosticCode, Literal, Program, ProgramError, Term, TypedVar};

/// A symbolic literal over the owning target's variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateLiteral {
    pub predicate: String,
    /// Indices into [`CandidateSet::variables`].
    pub vars: Vec<usize>,
    pub negated: bool,
}

/// Ordered literals a target's rules may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub owner: String,
    /// Head variables followed by existential variables.
    pub variables: Vec<TypedVar>,
    pub literals: Vec<CandidateLiteral>,
    pub warnings: Vec<Diagnostic>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn literal(&self, i: usize) -> Literal {
        let c = &self.literals[i];
        Literal {
            atom: Atom {
                predicate: c.predicate.clone(),
                args: c.vars.iter().map(|&v| Term::Var(self.variables[v].name.clone())).collect(),
            },
            negated: c.negated,
        }
    }

    /// DSL rendering of every literal, in order.
    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.literal(i).to_string()).collect()
    }

    /// SHA-256 over the ordered literal labels.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.owner.as_bytes());
        for label in self.labels() {
            hasher.update(b"\n");
            hasher.update(label.as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Position of a symbolic literal written over this set's variables.
    pub fn index_of(&self, lit: &Literal) -> Option<usize> {
        let vars: Option<Vec<usize>> = lit
            .atom
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => self.variables.iter().position(|tv| &tv.name == v),
                Term::Const(_) => None,
            })
            .collect();
        let vars = vars?;
        self.literals
            .iter()
            .position(|c| c.predicate == lit.atom.predicate && c.vars == vars && c.negated == lit.negated)
    }
}

/// Enumerates every type-correct literal over the target's variables, in
/// (predicate name, variable tuple, positive-first) order. The target's own
/// head atom is left out.
pub fn enumerate_candidate_atoms(p: &Program, target: &str) -> Result<CandidateSet, ProgramError> {
    let spec = p
        .target(target)
        .ok_or_else(|| ProgramError::single(DiagnosticCode::UnknownTarget, format!("no target named {target}")))?;
    let variables: Vec<TypedVar> = spec.variables().cloned().collect();
    let head: Vec<usize> = (0..spec.head.len()).collect();

    let mut preds: Vec<_> = p
        .predicates
        .iter()
        .filter(|d| !spec.excluded.contains(&d.name))
        .collect();
    preds.sort_by(|a, b| a.name.cmp(&b.name));

    let mut literals = Vec::new();
    for d in preds {
        let choices: Vec<Vec<usize>> = d
            .arg_types
            .iter()
            .map(|ty| (0..variables.len()).filter(|&v| &variables[v].ty == ty).collect())
            .collect();
        for tuple in cartesian(&choices) {
            if d.name == spec.predicate && tuple == head {
                continue;
            }
            literals.push(CandidateLiteral {
                predicate: d.name.clone(),
                vars: tuple.clone(),
                negated: false,
            });
            if spec.negation {
                literals.push(CandidateLiteral {
                    predicate: d.name.clone(),
                    vars: tuple,
                    negated: true,
                });
            }
        }
    }
    let mut warnings = Vec::new();
    if literals.is_empty() {
        warnings.push(Diagnostic::warning(
            DiagnosticCode::DegenerateHypothesis,
            None,
            format!("target {target} has an empty candidate set (degenerate hypothesis space)"),
        ));
    }
    Ok(CandidateSet {
        owner: target.to_string(),
        variables,
        literals,
        warnings,
    })
}

/// Lexicographic product; one empty tuple when `choices` is empty.
pub(crate) fn cartesian(choices: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for options in choices {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&o| {
                    let mut t = prefix.clone();
                    t.push(o);
                    t
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    const CNT: &str = "type node { a b c d }
pred edge/2 (node,node) extensional
pred cnt/2 (node,node) target
target cnt(X:node, Y:node) vars(Z:node) rules(2)
";

    #[test]
    fn transitive_target_has_seventeen_candidates() {
        let p = parse_program(CNT).unwrap();
        let set = enumerate_candidate_atoms(&p, "cnt").unwrap();
        assert_eq!(set.len(), 17);
        assert_eq!(set.labels()[0], "cnt(X,X)");
        assert!(!set.labels().contains(&"cnt(X,Y)".to_string()));
        assert_eq!(set.labels()[16], "edge(Z,Z)");
        assert!(set.warnings.is_empty());
    }

    #[test]
    fn negation_doubles_the_set() {
        let p = parse_program(&CNT.replace("rules(2)", "rules(2) negation")).unwrap();
        let set = enumerate_candidate_atoms(&p, "cnt").unwrap();
        assert_eq!(set.len(), 34);
        assert_eq!(set.labels()[..2], ["cnt(X,X)", "!cnt(X,X)"]);
    }

    #[test]
    fn unknown_target() {
        let p = parse_program(CNT).unwrap();
        assert!(enumerate_candidate_atoms(&p, "edge").unwrap_err().has(DiagnosticCode::UnknownTarget));
    }

    #[test]
    fn fingerprint_tracks_order() {
        let p = parse_program(CNT).unwrap();
        let a = enumerate_candidate_atoms(&p, "cnt").unwrap();
        let q = parse_program(&CNT.replace("edge", "link")).unwrap();
        let b = enumerate_candidate_atoms(&q, "cnt").unwrap();
        assert_eq!(a.fingerprint().len(), 64);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn cartesian_order() {
        assert_eq!(cartesian(&[vec![0, 1], vec![2, 3]]), vec![vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3]]);
        assert_eq!(cartesian(&[]), vec![Vec::<usize>::new()]);
    }
}
