use std::fmt::Write;

use super::{GroundAtom, Program};

/// Canonical DSL text: one statement per line, grouped by statement kind.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let section = |out: &mut String, lines: Vec<String>| {
        if lines.is_empty() {
            return;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
    };

    section(
        &mut out,
        p.types
            .iter()
            .map(|t| format!("type {} {{ {} }}", t.name, t.constants.join(" ")))
            .collect(),
    );
    section(
        &mut out,
        p.predicates
            .iter()
            .map(|d| {
                format!(
                    "pred {}/{} ({}) {}",
                    d.name,
                    d.arity(),
                    d.arg_types.join(","),
                    d.kind.keyword()
                )
            })
            .collect(),
    );
    section(
        &mut out,
        p.facts
            .iter()
            .map(|f| {
                if f.value == 1.0 {
                    format!("fact {}.", f.atom)
                } else {
                    format!("fact {} = {}.", f.atom, f.value)
                }
            })
            .collect(),
    );
    section(&mut out, p.aux_clauses.iter().map(|c| format!("aux {c}.")).collect());
    section(
        &mut out,
        p.targets
            .iter()
            .map(|t| {
                let join = |v: Vec<String>| v.join(", ");
                let mut s = format!(
                    "target {}({})",
                    t.predicate,
                    join(t.head.iter().map(|v| v.to_string()).collect())
                );
                if !t.exists.is_empty() {
                    let _ = write!(s, " vars({})", join(t.exists.iter().map(|v| v.to_string()).collect()));
                }
                let _ = write!(s, " rules({})", t.rules);
                if t.negation {
                    s.push_str(" negation");
                }
                if !t.forced.is_empty() {
                    let _ = write!(s, " force({})", join(t.forced.iter().map(|l| l.to_string()).collect()));
                }
                if !t.excluded.is_empty() {
                    let _ = write!(s, " exclude({})", t.excluded.join(", "));
                }
                s
            })
            .collect(),
    );
    section(
        &mut out,
        p.constraints
            .iter()
            .map(|c| format!("constraint {} = {}.", c.literal, c.value as u8))
            .collect(),
    );
    section(&mut out, example_block("pos", &p.positives));
    section(&mut out, example_block("neg", &p.negatives));
    out
}

fn example_block(keyword: &str, atoms: &[GroundAtom]) -> Vec<String> {
    if atoms.is_empty() {
        return Vec::new();
    }
    let mut lines = vec![format!("{keyword} {{")];
    lines.extend(atoms.iter().map(|a| format!("  {a}")));
    lines.push("}".into());
    lines
}

#[cfg(test)]
mod tests {
    use super::super::parse_unchecked;
    use super::*;

    #[test]
    fn printed_text_reparses_identically() {
        let text = "type n { a b }
pred e/2 (n,n) extensional
pred z/0 () state
pred p/2 (n,n) target
fact e(a,b).
fact e(b,a) = 0.3.
aux q(X) :- e(X,Y), !z().
target p(X:n, Y:n) vars(Z:n) rules(3) negation force(e(X,Y)) exclude(z)
constraint !p(a,a) = 0.
pos { p(a,b) }
neg { p(a,a) }
";
        let (p, _) = parse_unchecked(text).unwrap();
        let printed = print_program(&p);
        let (q, _) = parse_unchecked(&printed).unwrap();
        assert_eq!(p, q);
        assert_eq!(printed, print_program(&q));
        assert!(printed.contains("pos {\n  p(a,b)\n}\n"));
    }

    #[test]
    fn empty_program_prints_nothing() {
        assert_eq!(print_program(&Program::default()), "");
    }
}
