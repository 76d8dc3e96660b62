//! Typed logic programs: data model, DSL, validation, candidate literals and
//! grounding index plans.

mod candidates;
pub mod fuzz;
mod parser;
mod plan;
mod printer;
mod validate;

use std::fmt;

use thiserror::Error;

pub use candidates::{enumerate_candidate_atoms, CandidateLiteral, CandidateSet};
pub(crate) use candidates::cartesian;
pub use parser::{parse_program, parse_unchecked, SourceMap};
pub use plan::{compile_index_plan, DerivedPlan, IndexPlan, Layout};
pub use printer::print_program;
pub use validate::{validate_program, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredicateKind {
    Extensional,
    State,
    Auxiliary,
    Target,
}

impl PredicateKind {
    pub fn keyword(self) -> &'static str {
        match self {
            PredicateKind::Extensional => "extensional",
            PredicateKind::State => "state",
            PredicateKind::Auxiliary => "auxiliary",
            PredicateKind::Target => "target",
        }
    }

    pub fn is_derived(self) -> bool {
        matches!(self, PredicateKind::Auxiliary | PredicateKind::Target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDecl {
    pub name: String,
    pub constants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arg_types: Vec<String>,
    pub kind: PredicateKind,
}

impl PredicateDecl {
    pub fn arity(&self) -> usize {
        self.arg_types.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Var(s) | Term::Const(s) => s,
        }
    }

    /// Variables start with an uppercase ASCII letter.
    pub fn from_word(word: &str) -> Term {
        if word.starts_with(|c: char| c.is_ascii_uppercase()) {
            Term::Var(word.to_string())
        } else {
            Term::Const(word.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Self {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub atom: GroundAtom,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub head: Atom,
    pub body: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypedVar {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub predicate: String,
    pub head: Vec<TypedVar>,
    pub exists: Vec<TypedVar>,
    pub rules: usize,
    pub negation: bool,
    pub forced: Vec<Literal>,
    pub excluded: Vec<String>,
}

impl TargetSpec {
    /// Head variables followed by existential variables.
    pub fn variables(&self) -> impl Iterator<Item = &TypedVar> {
        self.head.iter().chain(&self.exists)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub literal: Literal,
    pub value: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub types: Vec<TypeDecl>,
    pub predicates: Vec<PredicateDecl>,
    pub facts: Vec<Fact>,
    pub aux_clauses: Vec<Clause>,
    pub targets: Vec<TargetSpec>,
    pub constraints: Vec<Constraint>,
    pub positives: Vec<GroundAtom>,
    pub negatives: Vec<GroundAtom>,
}

impl Program {
    pub fn type_decl(&self, name: &str) -> Option<&TypeDecl> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }

    pub fn target(&self, name: &str) -> Option<&TargetSpec> {
        self.targets.iter().find(|t| t.predicate == name)
    }

    pub fn constant_index(&self, ty: &str, constant: &str) -> Option<usize> {
        self.type_decl(ty)?.constants.iter().position(|c| c == constant)
    }

    /// Number of groundings of a predicate, or `None` if it or one of its
    /// argument types is undeclared.
    pub fn grounding_count(&self, predicate: &str) -> Option<usize> {
        self.predicate(predicate)?
            .arg_types
            .iter()
            .map(|t| self.type_decl(t).map(|d| d.constants.len()))
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticCode {
    Syntax,
    UnknownType,
    UnknownPredicate,
    UnknownTarget,
    UnknownVariable,
    ArityMismatch,
    ConstantNotInType,
    DuplicateDeclaration,
    TypeMismatch,
    KindMismatch,
    InvalidValue,
    Stratification,
    MissingTarget,
    DegenerateHypothesis,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::Syntax => "syntax",
            DiagnosticCode::UnknownType => "unknown-type",
            DiagnosticCode::UnknownPredicate => "unknown-predicate",
            DiagnosticCode::UnknownTarget => "unknown-target",
            DiagnosticCode::UnknownVariable => "unknown-variable",
            DiagnosticCode::ArityMismatch => "arity-mismatch",
            DiagnosticCode::ConstantNotInType => "constant-not-in-type",
            DiagnosticCode::DuplicateDeclaration => "duplicate-declaration",
            DiagnosticCode::TypeMismatch => "type-mismatch",
            DiagnosticCode::KindMismatch => "kind-mismatch",
            DiagnosticCode::InvalidValue => "invalid-value",
            DiagnosticCode::Stratification => "stratification",
            DiagnosticCode::MissingTarget => "missing-target",
            DiagnosticCode::DegenerateHypothesis => "degenerate-hypothesis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// Statement a diagnostic refers to, by position in its [`Program`] list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Item {
    Type(usize),
    Predicate(usize),
    Fact(usize),
    Aux(usize),
    Target(usize),
    Constraint(usize),
    Positive(usize),
    Negative(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub message: String,
    pub item: Option<Item>,
    pub position: Option<Position>,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, item: Option<Item>, message: impl Into<String>) -> Self {
        Self {
            code,
            severity: Severity::Error,
            message: message.into(),
            item,
            position: None,
        }
    }

    pub fn warning(code: DiagnosticCode, item: Option<Item>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(code, item, message)
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.position {
            write!(f, "{}:{}: ", p.line, p.column)?;
        }
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}[{}]: {}", self.code.as_str(), self.message)
    }
}

/// One or more error diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", render(.diagnostics))]
pub struct ProgramError {
    pub diagnostics: Vec<Diagnostic>,
}

fn render(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

impl ProgramError {
    pub fn single(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self {
            diagnostics: vec![Diagnostic::error(code, None, message)],
        }
    }

    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn write_args<T: fmt::Display>(f: &mut fmt::Formatter<'_>, name: &str, args: &[T]) -> fmt::Result {
    write!(f, "{name}(")?;
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{a}")?;
    }
    f.write_str(")")
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_args(f, &self.predicate, &self.args)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}", self.atom)
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_args(f, &self.predicate, &self.args)
    }
}

impl fmt::Display for TypedVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.ty)
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            for (i, l) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{l}")?;
            }
        }
        Ok(())
    }
}
