use super::{
    validate_program, Atom, Clause, Constraint, Diagnostic, DiagnosticCode, Fact, GroundAtom, Item, Literal,
    Position, PredicateDecl, PredicateKind, Program, ProgramError, Severity, TargetSpec, Term, TypeDecl, TypedVar,
};

/// Start position of every statement, parallel to the lists of a [`Program`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceMap {
    pub types: Vec<Position>,
    pub predicates: Vec<Position>,
    pub facts: Vec<Position>,
    pub aux_clauses: Vec<Position>,
    pub targets: Vec<Position>,
    pub constraints: Vec<Position>,
    pub positives: Vec<Position>,
    pub negatives: Vec<Position>,
}

impl SourceMap {
    pub fn position(&self, item: Item) -> Option<Position> {
        let (list, i) = match item {
            Item::Type(i) => (&self.types, i),
            Item::Predicate(i) => (&self.predicates, i),
            Item::Fact(i) => (&self.facts, i),
            Item::Aux(i) => (&self.aux_clauses, i),
            Item::Target(i) => (&self.targets, i),
            Item::Constraint(i) => (&self.constraints, i),
            Item::Positive(i) => (&self.positives, i),
            Item::Negative(i) => (&self.negatives, i),
        };
        list.get(i).copied()
    }
}

/// Parses and validates. Diagnostics carry the position of the offending
/// statement.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let (program, map) = parse_unchecked(text)?;
    let report = validate_program(&program);
    let errors: Vec<Diagnostic> = report
        .diagnostics
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|mut d| {
            d.position = d.item.and_then(|i| map.position(i));
            d
        })
        .collect();
    if errors.is_empty() {
        Ok(program)
    } else {
        Err(ProgramError { diagnostics: errors })
    }
}

/// Syntax-only parse.
pub fn parse_unchecked(text: &str) -> Result<(Program, SourceMap), ProgramError> {
    let tokens = lex(text).map_err(|d| ProgramError { diagnostics: vec![d] })?;
    let mut parser = Parser {
        tokens,
        at: 0,
        program: Program::default(),
        map: SourceMap::default(),
    };
    parser.statements().map_err(|d| ProgramError { diagnostics: vec![d] })?;
    Ok((parser.program, parser.map))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Sym(char),
    Turnstile,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Position,
}

fn syntax(pos: Position, message: impl Into<String>) -> Diagnostic {
    let mut d = Diagnostic::error(DiagnosticCode::Syntax, None, message);
    d.position = Some(pos);
    d
}

fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let is_word = |c: char| c.is_ascii_alphanumeric() || c == '_';
    while i < chars.len() {
        let c = chars[i];
        let pos = Position { line, column: col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if is_word(c) {
            let start = i;
            while i < chars.len() && is_word(chars[i]) {
                i += 1;
            }
            let all_digits = chars[start..i].iter().all(|c| c.is_ascii_digit());
            if all_digits && i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            tokens.push(Token {
                tok: Tok::Word(word),
                pos,
            });
            continue;
        }
        if c == ':' && chars.get(i + 1) == Some(&'-') {
            tokens.push(Token { tok: Tok::Turnstile, pos });
            i += 2;
            col += 2;
            continue;
        }
        if "(){},.:!=/".contains(c) {
            tokens.push(Token { tok: Tok::Sym(c), pos });
            i += 1;
            col += 1;
            continue;
        }
        return Err(syntax(pos, format!("unexpected character {c:?}")));
    }
    tokens.push(Token {
        tok: Tok::Eof,
        pos: Position { line, column: col },
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    program: Program,
    map: SourceMap,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if t.tok != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Sym(c) => format!("'{c}'"),
            Tok::Turnstile => "':-'".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_sym(&mut self, c: char) -> PResult<()> {
        let t = self.bump();
        if t.tok == Tok::Sym(c) {
            Ok(())
        } else {
            Err(syntax(t.pos, format!("expected '{c}', found {}", Self::describe(&t.tok))))
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self, what: &str) -> PResult<(String, Position)> {
        let t = self.bump();
        match t.tok {
            Tok::Word(w) => Ok((w, t.pos)),
            other => Err(syntax(t.pos, format!("expected {what}, found {}", Self::describe(&other)))),
        }
    }

    fn name(&mut self, what: &str) -> PResult<String> {
        let (w, pos) = self.word(what)?;
        if !w.starts_with(|c: char| c.is_ascii_alphabetic()) {
            return Err(syntax(pos, format!("{what} must start with a letter, found '{w}'")));
        }
        Ok(w)
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> PResult<T> {
        let (w, pos) = self.word(what)?;
        w.parse().map_err(|_| syntax(pos, format!("expected {what}, found '{w}'")))
    }

    fn statements(&mut self) -> PResult<()> {
        loop {
            let t = self.peek().clone();
            let keyword = match &t.tok {
                Tok::Eof => return Ok(()),
                Tok::Word(w) => w.clone(),
                other => return Err(syntax(t.pos, format!("expected a statement, found {}", Self::describe(other)))),
            };
            self.bump();
            match keyword.as_str() {
                "type" => self.type_decl(t.pos)?,
                "pred" => self.pred_decl(t.pos)?,
                "fact" => self.fact(t.pos)?,
                "aux" => self.aux(t.pos)?,
                "target" => self.target(t.pos)?,
                "constraint" => self.constraint(t.pos)?,
                "pos" => self.examples(true)?,
                "neg" => self.examples(false)?,
                _ => return Err(syntax(t.pos, format!("unknown statement '{keyword}'"))),
            }
        }
    }

    fn type_decl(&mut self, pos: Position) -> PResult<()> {
        let name = self.name("type name")?;
        self.expect_sym('{')?;
        let mut constants = Vec::new();
        while !self.eat_sym('}') {
            let (c, cpos) = self.word("constant")?;
            if c.starts_with(|ch: char| ch.is_ascii_uppercase()) {
                return Err(syntax(cpos, format!("constant '{c}' must not start with an uppercase letter")));
            }
            constants.push(c);
        }
        self.program.types.push(TypeDecl { name, constants });
        self.map.types.push(pos);
        Ok(())
    }

    fn pred_decl(&mut self, pos: Position) -> PResult<()> {
        let name = self.name("predicate name")?;
        self.expect_sym('/')?;
        let arity_pos = self.peek().pos;
        let arity: usize = self.number("arity")?;
        let mut arg_types = Vec::new();
        if self.eat_sym('(') {
            if !self.eat_sym(')') {
                loop {
                    arg_types.push(self.name("type name")?);
                    if self.eat_sym(')') {
                        break;
                    }
                    self.expect_sym(',')?;
                }
            }
        }
        if arg_types.len() != arity {
            let mut d = Diagnostic::error(
                DiagnosticCode::ArityMismatch,
                None,
                format!("predicate {name} declared with arity {arity} but {} argument types", arg_types.len()),
            );
            d.position = Some(arity_pos);
            return Err(d);
        }
        let (kw, kpos) = self.word("predicate kind")?;
        let kind = match kw.as_str() {
            "extensional" => PredicateKind::Extensional,
            "state" => PredicateKind::State,
            "auxiliary" => PredicateKind::Auxiliary,
            "target" => PredicateKind::Target,
            _ => return Err(syntax(kpos, format!("unknown predicate kind '{kw}'"))),
        };
        self.program.predicates.push(PredicateDecl { name, arg_types, kind });
        self.map.predicates.push(pos);
        Ok(())
    }

    fn atom(&mut self) -> PResult<Atom> {
        let predicate = self.name("predicate name")?;
        let mut args = Vec::new();
        if self.eat_sym('(') && !self.eat_sym(')') {
            loop {
                let (w, _) = self.word("term")?;
                args.push(Term::from_word(&w));
                if self.eat_sym(')') {
                    break;
                }
                self.expect_sym(',')?;
            }
        }
        Ok(Atom { predicate, args })
    }

    fn ground_atom(&mut self) -> PResult<GroundAtom> {
        let pos = self.peek().pos;
        let atom = self.atom()?;
        let mut args = Vec::with_capacity(atom.args.len());
        for t in atom.args {
            match t {
                Term::Const(c) => args.push(c),
                Term::Var(v) => return Err(syntax(pos, format!("ground atom expected, found variable {v}"))),
            }
        }
        Ok(GroundAtom {
            predicate: atom.predicate,
            args,
        })
    }

    fn literal(&mut self) -> PResult<Literal> {
        let negated = self.eat_sym('!');
        Ok(Literal {
            atom: self.atom()?,
            negated,
        })
    }

    fn fact(&mut self, pos: Position) -> PResult<()> {
        let atom = self.ground_atom()?;
        let value = if self.eat_sym('=') { self.number("fact value")? } else { 1.0 };
        self.expect_sym('.')?;
        self.program.facts.push(Fact { atom, value });
        self.map.facts.push(pos);
        Ok(())
    }

    fn aux(&mut self, pos: Position) -> PResult<()> {
        let head = self.atom()?;
        let mut body = Vec::new();
        if self.peek().tok == Tok::Turnstile {
            self.bump();
            loop {
                body.push(self.literal()?);
                if !self.eat_sym(',') {
                    break;
                }
            }
        }
        self.expect_sym('.')?;
        self.program.aux_clauses.push(Clause { head, body });
        self.map.aux_clauses.push(pos);
        Ok(())
    }

    fn typed_vars(&mut self) -> PResult<Vec<TypedVar>> {
        self.expect_sym('(')?;
        let mut vars = Vec::new();
        if self.eat_sym(')') {
            return Ok(vars);
        }
        loop {
            let (name, vpos) = self.word("variable")?;
            if !name.starts_with(|c: char| c.is_ascii_uppercase()) {
                return Err(syntax(vpos, format!("variables start with an uppercase letter, found '{name}'")));
            }
            self.expect_sym(':')?;
            let ty = self.name("type name")?;
            vars.push(TypedVar { name, ty });
            if self.eat_sym(')') {
                return Ok(vars);
            }
            self.expect_sym(',')?;
        }
    }

    fn target(&mut self, pos: Position) -> PResult<()> {
        let predicate = self.name("predicate name")?;
        let head = self.typed_vars()?;
        let mut spec = TargetSpec {
            predicate,
            head,
            exists: Vec::new(),
            rules: 1,
            negation: false,
            forced: Vec::new(),
            excluded: Vec::new(),
        };
        loop {
            let Tok::Word(w) = &self.peek().tok else { break };
            match w.as_str() {
                "vars" => {
                    self.bump();
                    spec.exists = self.typed_vars()?;
                }
                "rules" => {
                    self.bump();
                    self.expect_sym('(')?;
                    spec.rules = self.number("rule count")?;
                    self.expect_sym(')')?;
                }
                "negation" => {
                    self.bump();
                    spec.negation = true;
                }
                "force" => {
                    self.bump();
                    self.expect_sym('(')?;
                    loop {
                        spec.forced.push(self.literal()?);
                        if self.eat_sym(')') {
                            break;
                        }
                        self.expect_sym(',')?;
                    }
                }
                "exclude" => {
                    self.bump();
                    self.expect_sym('(')?;
                    loop {
                        spec.excluded.push(self.name("predicate name")?);
                        if self.eat_sym(')') {
                            break;
                        }
                        self.expect_sym(',')?;
                    }
                }
                _ => break,
            }
        }
        self.program.targets.push(spec);
        self.map.targets.push(pos);
        Ok(())
    }

    fn constraint(&mut self, pos: Position) -> PResult<()> {
        let literal = self.literal()?;
        self.expect_sym('=')?;
        let (w, vpos) = self.word("0 or 1")?;
        let value = match w.as_str() {
            "0" => false,
            "1" => true,
            _ => return Err(syntax(vpos, format!("constraint value must be 0 or 1, found '{w}'"))),
        };
        self.expect_sym('.')?;
        self.program.constraints.push(Constraint { literal, value });
        self.map.constraints.push(pos);
        Ok(())
    }

    fn examples(&mut self, positive: bool) -> PResult<()> {
        self.expect_sym('{')?;
        while !self.eat_sym('}') {
            let pos = self.peek().pos;
            let atom = self.ground_atom()?;
            if positive {
                self.program.positives.push(atom);
                self.map.positives.push(pos);
            } else {
                self.program.negatives.push(atom);
                self.map.negatives.push(pos);
            }
        }
        Ok(())
    }
}
