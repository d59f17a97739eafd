//! A minimal textual three-address IR ("MIR") and its parser.
//!
//! The grammar is line-oriented: a method header, one statement per physical
//! line, and a closing brace on its own line. Statement line numbers are the
//! physical line numbers of the input, which is what lets a reported
//! violation line be mapped onto a single graph node later.
//!
//! ```text
//! method m(c) {
//! x = const "AES";
//! k = const 42;
//! if c goto L;
//! x = const "RSA";
//! L: nop;
//! return x;
//! }
//! ```

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use thiserror::Error;

/// A literal operand: integer or double-quoted string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    Int(i64),
    Str(String),
}

impl Literal {
    /// Token form of the literal: strings keep their quotes.
    pub fn render(&self) -> String {
        match self {
            Literal::Int(v) => v.to_string(),
            Literal::Str(s) => format!("\"{s}\""),
        }
    }
}

/// A call argument: a variable name or a literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Name(String),
    Lit(Literal),
}

impl Arg {
    fn render(&self) -> String {
        match self {
            Arg::Name(n) => n.clone(),
            Arg::Lit(l) => l.render(),
        }
    }
}

/// Right-hand side of an assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    Const(Literal),
    Copy(String),
    Binary { op: String, lhs: String, rhs: String },
    Call { callee: String, args: Vec<Arg> },
}

/// Statement payload, one variant per statement kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementBody {
    Assign {
        target: String,
        rhs: Rhs,
    },
    Invoke {
        callee: String,
        args: Vec<Arg>,
        out: Option<String>,
    },
    If {
        cond: String,
        target: String,
    },
    Goto {
        target: String,
    },
    Return {
        var: Option<String>,
    },
    Nop,
}

/// Closed 6-value statement classification; its size fixes the one-hot
/// width used during featurization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatementKind {
    Assign,
    Invoke,
    If,
    Goto,
    Return,
    Nop,
}

impl StatementKind {
    pub const COUNT: usize = 6;

    pub fn name(self) -> &'static str {
        match self {
            StatementKind::Assign => "ASSIGN",
            StatementKind::Invoke => "INVOKE",
            StatementKind::If => "IF",
            StatementKind::Goto => "GOTO",
            StatementKind::Return => "RETURN",
            StatementKind::Nop => "NOP",
        }
    }
}

impl StatementBody {
    pub fn kind(&self) -> StatementKind {
        match self {
            StatementBody::Assign { .. } => StatementKind::Assign,
            StatementBody::Invoke { .. } => StatementKind::Invoke,
            StatementBody::If { .. } => StatementKind::If,
            StatementBody::Goto { .. } => StatementKind::Goto,
            StatementBody::Return { .. } => StatementKind::Return,
            StatementBody::Nop => StatementKind::Nop,
        }
    }

    /// Canonical statement text (label and trailing semicolon excluded).
    pub fn render(&self) -> String {
        match self {
            StatementBody::Assign { target, rhs } => match rhs {
                Rhs::Const(l) => format!("{target} = const {}", l.render()),
                Rhs::Copy(src) => format!("{target} = {src}"),
                Rhs::Binary { op, lhs, rhs } => format!("{target} = {lhs} {op} {rhs}"),
                Rhs::Call { callee, args } => {
                    format!("{target} = call {callee}({})", render_args(args))
                }
            },
            StatementBody::Invoke { callee, args, out } => {
                let call = format!("call {callee}({})", render_args(args));
                match out {
                    Some(o) => format!("{call} -> {o}"),
                    None => call,
                }
            }
            StatementBody::If { cond, target } => format!("if {cond} goto {target}"),
            StatementBody::Goto { target } => format!("goto {target}"),
            StatementBody::Return { var } => match var {
                Some(v) => format!("return {v}"),
                None => "return".to_string(),
            },
            StatementBody::Nop => "nop".to_string(),
        }
    }

    fn defs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        match self {
            StatementBody::Assign { target, .. } => {
                out.insert(target.clone());
            }
            StatementBody::Invoke { out: Some(o), .. } => {
                out.insert(o.clone());
            }
            _ => {}
        }
        out
    }

    fn uses(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        let mut add_args = |args: &Vec<Arg>| {
            for a in args {
                if let Arg::Name(n) = a {
                    set.insert(n.clone());
                }
            }
        };
        match self {
            StatementBody::Assign { rhs, .. } => match rhs {
                Rhs::Const(_) => {}
                Rhs::Copy(src) => {
                    set.insert(src.clone());
                }
                Rhs::Binary { lhs, rhs, .. } => {
                    set.insert(lhs.clone());
                    set.insert(rhs.clone());
                }
                Rhs::Call { args, .. } => add_args(args),
            },
            StatementBody::Invoke { args, .. } => add_args(args),
            StatementBody::If { cond, .. } => {
                set.insert(cond.clone());
            }
            StatementBody::Return { var: Some(v) } => {
                set.insert(v.clone());
            }
            _ => {}
        }
        set
    }
}

fn render_args(args: &[Arg]) -> String {
    args.iter()
        .map(Arg::render)
        .collect::<Vec<_>>()
        .join(", ")
}

/// One parsed statement. `line` is the 1-based physical line of the input;
/// `raw_text` is the canonical statement text that `render` produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub index: usize,
    pub line: u32,
    pub label: Option<String>,
    pub kind: StatementKind,
    pub body: StatementBody,
    pub defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
    pub raw_text: String,
}

impl Statement {
    pub fn new(index: usize, line: u32, label: Option<String>, body: StatementBody) -> Self {
        Statement {
            index,
            line,
            label,
            kind: body.kind(),
            defs: body.defs(),
            uses: body.uses(),
            raw_text: body.render(),
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub params: Vec<String>,
    pub statements: Vec<Statement>,
}

impl Method {
    /// First definition of each label.
    pub fn label_index(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for s in &self.statements {
            if let Some(l) = &s.label {
                map.entry(l.as_str()).or_insert(s.index);
            }
        }
        map
    }

    /// Statement-level control flow: indices of successor statements plus
    /// whether control leaves the method here. GOTO transfers only to its
    /// target; IF both branches; RETURN exits; everything else falls
    /// through when a next statement exists.
    pub fn successor_indices(&self, i: usize) -> (Vec<usize>, bool) {
        let labels = self.label_index();
        let stmt = &self.statements[i];
        let next = i + 1;
        let has_next = next < self.statements.len();
        match &stmt.body {
            StatementBody::Return { .. } => (vec![], true),
            StatementBody::Goto { target } => match labels.get(target.as_str()) {
                Some(&t) => (vec![t], false),
                None => (vec![], false),
            },
            StatementBody::If { target, .. } => {
                let mut out = Vec::new();
                if has_next {
                    out.push(next);
                }
                if let Some(&t) = labels.get(target.as_str()) {
                    if !out.contains(&t) {
                        out.push(t);
                    }
                }
                (out, false)
            }
            _ => {
                if has_next {
                    (vec![next], false)
                } else {
                    (vec![], false)
                }
            }
        }
    }

    pub fn statement_at_line(&self, line: u32) -> Option<&Statement> {
        self.statements.iter().find(|s| s.line == line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub source_name: String,
    pub methods: Vec<Method>,
}

impl Program {
    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{source_name}:{line}:{col}: syntax error: {message}")]
    Syntax {
        source_name: String,
        line: u32,
        col: usize,
        message: String,
    },
    #[error("{source_name}:{line}: unresolved label `{label}` in method `{method}`")]
    UnresolvedLabel {
        source_name: String,
        line: u32,
        method: String,
        label: String,
    },
    #[error("{source_name}:{line}: duplicate method name `{name}`")]
    DuplicateMethod {
        source_name: String,
        line: u32,
        name: String,
    },
}

/// A validator finding: which method, which statement, which rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub method: String,
    pub stmt_index: Option<usize>,
    pub rule: &'static str,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.stmt_index {
            Some(i) => write!(f, "{} [{}#{}]: {}", self.rule, self.method, i, self.message),
            None => write!(f, "{} [{}]: {}", self.rule, self.method, self.message),
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Colon,
    Assign,
    Arrow,
    Op(String),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::LBrace => "`{`".to_string(),
            Tok::RBrace => "`}`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Semi => "`;`".to_string(),
            Tok::Colon => "`:`".to_string(),
            Tok::Assign => "`=`".to_string(),
            Tok::Arrow => "`->`".to_string(),
            Tok::Op(s) => format!("`{s}`"),
        }
    }
}

struct Lexer<'a> {
    source_name: &'a str,
    line_no: u32,
}

impl<'a> Lexer<'a> {
    fn err(&self, col: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            source_name: self.source_name.to_string(),
            line: self.line_no,
            col,
            message: message.into(),
        }
    }

    fn lex_line(&self, line: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let chars: Vec<char> = line.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            match c {
                ' ' | '\t' | '\r' => {
                    i += 1;
                }
                '(' => {
                    toks.push((Tok::LParen, col));
                    i += 1;
                }
                ')' => {
                    toks.push((Tok::RParen, col));
                    i += 1;
                }
                '{' => {
                    toks.push((Tok::LBrace, col));
                    i += 1;
                }
                '}' => {
                    toks.push((Tok::RBrace, col));
                    i += 1;
                }
                ',' => {
                    toks.push((Tok::Comma, col));
                    i += 1;
                }
                ';' => {
                    toks.push((Tok::Semi, col));
                    i += 1;
                }
                ':' => {
                    toks.push((Tok::Colon, col));
                    i += 1;
                }
                '"' => {
                    let mut j = i + 1;
                    while j < chars.len() && chars[j] != '"' {
                        j += 1;
                    }
                    if j == chars.len() {
                        return Err(self.err(col, "unterminated string literal"));
                    }
                    let s: String = chars[i + 1..j].iter().collect();
                    toks.push((Tok::Str(s), col));
                    i = j + 1;
                }
                '=' => {
                    if chars.get(i + 1) == Some(&'=') {
                        toks.push((Tok::Op("==".into()), col));
                        i += 2;
                    } else {
                        toks.push((Tok::Assign, col));
                        i += 1;
                    }
                }
                '-' => {
                    if chars.get(i + 1) == Some(&'>') {
                        toks.push((Tok::Arrow, col));
                        i += 2;
                    } else if chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()) {
                        let (v, next) = self.lex_int(&chars, i + 1, col)?;
                        toks.push((Tok::Int(-v), col));
                        i = next;
                    } else {
                        toks.push((Tok::Op("-".into()), col));
                        i += 1;
                    }
                }
                '!' | '<' | '>' => {
                    if chars.get(i + 1) == Some(&'=') {
                        toks.push((Tok::Op(format!("{c}=")), col));
                        i += 2;
                    } else if c == '!' {
                        return Err(self.err(col, "unexpected character `!`"));
                    } else {
                        toks.push((Tok::Op(c.to_string()), col));
                        i += 1;
                    }
                }
                '&' | '|' => {
                    if chars.get(i + 1) == Some(&c) {
                        toks.push((Tok::Op(format!("{c}{c}")), col));
                        i += 2;
                    } else {
                        return Err(self.err(col, format!("unexpected character `{c}`")));
                    }
                }
                '+' | '*' | '/' | '%' => {
                    toks.push((Tok::Op(c.to_string()), col));
                    i += 1;
                }
                _ if c.is_ascii_digit() => {
                    let (v, next) = self.lex_int(&chars, i, col)?;
                    toks.push((Tok::Int(v), col));
                    i = next;
                }
                _ if c.is_ascii_alphabetic() || c == '_' => {
                    let mut j = i + 1;
                    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                        j += 1;
                    }
                    // Dotted names: `crypto.Cipher.getInstance`.
                    while chars.get(j) == Some(&'.')
                        && chars
                            .get(j + 1)
                            .is_some_and(|c| c.is_ascii_alphabetic() || *c == '_')
                    {
                        j += 2;
                        while j < chars.len()
                            && (chars[j].is_ascii_alphanumeric() || chars[j] == '_')
                        {
                            j += 1;
                        }
                    }
                    let s: String = chars[i..j].iter().collect();
                    toks.push((Tok::Ident(s), col));
                    i = j;
                }
                _ => return Err(self.err(col, format!("unexpected character `{c}`"))),
            }
        }
        Ok(toks)
    }

    fn lex_int(&self, chars: &[char], start: usize, col: usize) -> Result<(i64, usize), ParseError> {
        let mut j = start;
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
        let s: String = chars[start..j].iter().collect();
        let v = s
            .parse::<i64>()
            .map_err(|_| self.err(col, format!("integer literal out of range: {s}")))?;
        Ok((v, j))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct LineParser<'a> {
    lexer: Lexer<'a>,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl<'a> LineParser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|&(_, c)| c)
            .unwrap_or_else(|| self.toks.last().map(|&(_, c)| c + 1).unwrap_or(1))
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        self.lexer.err(self.col(), message)
    }

    fn next(&mut self, what: &str) -> Result<Tok, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .map(|(t, _)| t.clone())
            .ok_or_else(|| self.err(format!("expected {what}, found end of line")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), ParseError> {
        let t = self.next(what)?;
        if &t != want {
            return Err(ParseError::Syntax {
                source_name: self.lexer.source_name.to_string(),
                line: self.lexer.line_no,
                col: self.toks[self.pos - 1].1,
                message: format!("expected {what}, found {}", t.describe()),
            });
        }
        Ok(())
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.next(what)? {
            Tok::Ident(s) => Ok(s),
            t => Err(ParseError::Syntax {
                source_name: self.lexer.source_name.to_string(),
                line: self.lexer.line_no,
                col: self.toks[self.pos - 1].1,
                message: format!("expected {what}, found {}", t.describe()),
            }),
        }
    }

    fn plain_name(&mut self, what: &str) -> Result<String, ParseError> {
        let s = self.ident(what)?;
        if s.contains('.') {
            return Err(ParseError::Syntax {
                source_name: self.lexer.source_name.to_string(),
                line: self.lexer.line_no,
                col: self.toks[self.pos - 1].1,
                message: format!("dotted name not allowed as {what}: `{s}`"),
            });
        }
        Ok(s)
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.next("literal")? {
            Tok::Int(v) => Ok(Literal::Int(v)),
            Tok::Str(s) => Ok(Literal::Str(s)),
            t => Err(ParseError::Syntax {
                source_name: self.lexer.source_name.to_string(),
                line: self.lexer.line_no,
                col: self.toks[self.pos - 1].1,
                message: format!("expected literal, found {}", t.describe()),
            }),
        }
    }

    fn call_args(&mut self) -> Result<Vec<Arg>, ParseError> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            match self.next("call argument")? {
                Tok::Ident(s) => {
                    if s.contains('.') {
                        return Err(ParseError::Syntax {
                            source_name: self.lexer.source_name.to_string(),
                            line: self.lexer.line_no,
                            col: self.toks[self.pos - 1].1,
                            message: format!("dotted name not allowed as call argument: `{s}`"),
                        });
                    }
                    args.push(Arg::Name(s));
                }
                Tok::Int(v) => args.push(Arg::Lit(Literal::Int(v))),
                Tok::Str(s) => args.push(Arg::Lit(Literal::Str(s))),
                t => {
                    return Err(ParseError::Syntax {
                        source_name: self.lexer.source_name.to_string(),
                        line: self.lexer.line_no,
                        col: self.toks[self.pos - 1].1,
                        message: format!("expected call argument, found {}", t.describe()),
                    })
                }
            }
            match self.next("`,` or `)`")? {
                Tok::Comma => {}
                Tok::RParen => break,
                t => {
                    return Err(ParseError::Syntax {
                        source_name: self.lexer.source_name.to_string(),
                        line: self.lexer.line_no,
                        col: self.toks[self.pos - 1].1,
                        message: format!("expected `,` or `)`, found {}", t.describe()),
                    })
                }
            }
        }
        Ok(args)
    }

    fn statement_body(&mut self) -> Result<StatementBody, ParseError> {
        let first = self.ident("statement")?;
        match first.as_str() {
            "call" => {
                let callee = self.ident("call target")?;
                let args = self.call_args()?;
                let out = if self.peek() == Some(&Tok::Arrow) {
                    self.pos += 1;
                    Some(self.plain_name("call result variable")?)
                } else {
                    None
                };
                Ok(StatementBody::Invoke { callee, args, out })
            }
            "if" => {
                let cond = self.plain_name("condition variable")?;
                let kw = self.ident("`goto`")?;
                if kw != "goto" {
                    return Err(self.err(format!("expected `goto`, found `{kw}`")));
                }
                let target = self.plain_name("branch label")?;
                Ok(StatementBody::If { cond, target })
            }
            "goto" => {
                let target = self.plain_name("goto label")?;
                Ok(StatementBody::Goto { target })
            }
            "return" => {
                let var = match self.peek() {
                    Some(Tok::Ident(_)) => Some(self.plain_name("return variable")?),
                    _ => None,
                };
                Ok(StatementBody::Return { var })
            }
            "nop" => Ok(StatementBody::Nop),
            _ => {
                if first.contains('.') {
                    return Err(self.err(format!(
                        "dotted name not allowed as assignment target: `{first}`"
                    )));
                }
                self.expect(&Tok::Assign, "`=`")?;
                let rhs = self.rhs()?;
                Ok(StatementBody::Assign { target: first, rhs })
            }
        }
    }

    fn rhs(&mut self) -> Result<Rhs, ParseError> {
        let first = self.ident("assignment right-hand side")?;
        match first.as_str() {
            "const" => Ok(Rhs::Const(self.literal()?)),
            "call" => {
                let callee = self.ident("call target")?;
                let args = self.call_args()?;
                Ok(Rhs::Call { callee, args })
            }
            _ => {
                if first.contains('.') {
                    return Err(self.err(format!("dotted name not allowed as operand: `{first}`")));
                }
                if let Some(Tok::Op(_)) = self.peek() {
                    let op = match self.next("operator")? {
                        Tok::Op(o) => o,
                        _ => unreachable!(),
                    };
                    let rhs = self.plain_name("operand")?;
                    Ok(Rhs::Binary {
                        op,
                        lhs: first,
                        rhs,
                    })
                } else {
                    Ok(Rhs::Copy(first))
                }
            }
        }
    }

    fn finish_statement(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
        }
        if let Some(t) = self.peek() {
            return Err(self.err(format!("trailing tokens after statement: {}", t.describe())));
        }
        Ok(())
    }
}

/// Parses MIR source text into a [`Program`].
///
/// Fails on syntax errors (with line and column), on branch targets that
/// resolve to no label in the same method, and on duplicate method names.
/// Structural invariants beyond that are [`validate_program`]'s job.
pub fn parse_program(text: &str, source_name: &str) -> Result<Program, ParseError> {
    let mut methods: Vec<Method> = Vec::new();
    let mut current: Option<(Method, u32)> = None; // method + header line

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = (idx + 1) as u32;
        let lexer = Lexer {
            source_name,
            line_no,
        };
        let toks = lexer.lex_line(raw_line)?;
        if toks.is_empty() {
            continue;
        }
        let mut p = LineParser {
            lexer: Lexer {
                source_name,
                line_no,
            },
            toks,
            pos: 0,
        };
        match &mut current {
            None => {
                let kw = p.ident("`method`")?;
                if kw != "method" {
                    return Err(p.err(format!("expected `method`, found `{kw}`")));
                }
                let name = p.plain_name("method name")?;
                p.expect(&Tok::LParen, "`(`")?;
                let mut params = Vec::new();
                if p.peek() == Some(&Tok::RParen) {
                    p.pos += 1;
                } else {
                    loop {
                        params.push(p.plain_name("parameter name")?);
                        match p.next("`,` or `)`")? {
                            Tok::Comma => {}
                            Tok::RParen => break,
                            t => {
                                return Err(p.err(format!(
                                    "expected `,` or `)`, found {}",
                                    t.describe()
                                )))
                            }
                        }
                    }
                }
                p.expect(&Tok::LBrace, "`{`")?;
                if let Some(t) = p.peek() {
                    return Err(p.err(format!(
                        "trailing tokens after method header: {}",
                        t.describe()
                    )));
                }
                current = Some((
                    Method {
                        name,
                        params,
                        statements: Vec::new(),
                    },
                    line_no,
                ));
            }
            Some((method, header_line)) => {
                if p.peek() == Some(&Tok::RBrace) {
                    p.pos += 1;
                    if let Some(t) = p.peek() {
                        return Err(p.err(format!("trailing tokens after `}}`: {}", t.describe())));
                    }
                    if method.statements.is_empty() {
                        return Err(ParseError::Syntax {
                            source_name: source_name.to_string(),
                            line: *header_line,
                            col: 1,
                            message: format!(
                                "method `{}` must contain at least one statement",
                                method.name
                            ),
                        });
                    }
                    let done = std::mem::replace(
                        method,
                        Method {
                            name: String::new(),
                            params: vec![],
                            statements: vec![],
                        },
                    );
                    methods.push(done);
                    current = None;
                    continue;
                }
                let label = if matches!(p.peek(), Some(Tok::Ident(_)))
                    && p.toks.get(p.pos + 1).map(|(t, _)| t) == Some(&Tok::Colon)
                {
                    let l = p.plain_name("label")?;
                    p.pos += 1; // colon
                    Some(l)
                } else {
                    None
                };
                let body = p.statement_body()?;
                p.finish_statement()?;
                let index = method.statements.len();
                method
                    .statements
                    .push(Statement::new(index, line_no, label, body));
            }
        }
    }

    if let Some((method, header_line)) = current {
        return Err(ParseError::Syntax {
            source_name: source_name.to_string(),
            line: header_line,
            col: 1,
            message: format!("method `{}` is missing its closing `}}`", method.name),
        });
    }
    if methods.is_empty() {
        return Err(ParseError::Syntax {
            source_name: source_name.to_string(),
            line: 1,
            col: 1,
            message: "no methods in input".to_string(),
        });
    }

    // Duplicate method names.
    let mut seen = BTreeSet::new();
    for m in &methods {
        if !seen.insert(m.name.clone()) {
            return Err(ParseError::DuplicateMethod {
                source_name: source_name.to_string(),
                line: m.statements.first().map(|s| s.line.saturating_sub(1)).unwrap_or(1),
                name: m.name.clone(),
            });
        }
    }

    // Unresolved branch targets.
    for m in &methods {
        let labels = m.label_index();
        for s in &m.statements {
            let target = match &s.body {
                StatementBody::If { target, .. } | StatementBody::Goto { target } => Some(target),
                _ => None,
            };
            if let Some(t) = target {
                if !labels.contains_key(t.as_str()) {
                    return Err(ParseError::UnresolvedLabel {
                        source_name: source_name.to_string(),
                        line: s.line,
                        method: m.name.clone(),
                        label: t.clone(),
                    });
                }
            }
        }
    }

    Ok(Program {
        source_name: source_name.to_string(),
        methods,
    })
}

/// Prints a program in canonical form, padding with blank lines so that
/// every statement lands on its recorded physical line. Re-parsing the
/// output therefore reproduces the program, line numbers included.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let mut emitted = 0u32; // lines written so far
    for m in &p.methods {
        let first_line = m.statements.first().map(|s| s.line).unwrap_or(emitted + 2);
        let header_line = first_line.saturating_sub(1).max(emitted + 1);
        while emitted + 1 < header_line {
            out.push('\n');
            emitted += 1;
        }
        out.push_str(&format!("method {}({}) {{\n", m.name, m.params.join(", ")));
        emitted += 1;
        for s in &m.statements {
            while emitted + 1 < s.line {
                out.push('\n');
                emitted += 1;
            }
            match &s.label {
                Some(l) => out.push_str(&format!("{l}: {};\n", s.raw_text)),
                None => out.push_str(&format!("{};\n", s.raw_text)),
            }
            emitted += 1;
        }
        out.push_str("}\n");
        emitted += 1;
    }
    out
}

/// Checks every structural invariant and returns one diagnostic per
/// violation. An empty result means the program is well-formed; builders in
/// the graph layer assume that.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    if p.methods.is_empty() {
        diags.push(Diagnostic {
            method: String::new(),
            stmt_index: None,
            rule: "no-methods",
            message: "program contains no methods".to_string(),
        });
        return diags;
    }

    let mut names = BTreeSet::new();
    for m in &p.methods {
        if !names.insert(m.name.clone()) {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: None,
                rule: "duplicate-method-name",
                message: format!("method `{}` is defined more than once", m.name),
            });
        }
    }

    let mut prev_span_end: Option<u32> = None;
    for m in &p.methods {
        validate_method(m, &mut diags);
        if let (Some(first), Some(last)) = (m.statements.first(), m.statements.last()) {
            if let Some(prev_end) = prev_span_end {
                // `}` of the previous method and this header each need a line.
                if first.line < prev_end + 3 {
                    diags.push(Diagnostic {
                        method: m.name.clone(),
                        stmt_index: Some(0),
                        rule: "line-layout",
                        message: format!(
                            "method `{}` starts at line {} but the previous method ends at line {}",
                            m.name, first.line, prev_end
                        ),
                    });
                }
            } else if first.line < 2 {
                diags.push(Diagnostic {
                    method: m.name.clone(),
                    stmt_index: Some(0),
                    rule: "line-layout",
                    message: "first statement must leave room for the method header".to_string(),
                });
            }
            prev_span_end = Some(last.line);
        }
    }

    diags
}

fn validate_method(m: &Method, diags: &mut Vec<Diagnostic>) {
    if m.statements.is_empty() {
        diags.push(Diagnostic {
            method: m.name.clone(),
            stmt_index: None,
            rule: "empty-method",
            message: format!("method `{}` has no statements", m.name),
        });
        return;
    }

    // Indices, line order, and derived-field consistency.
    let mut prev_line = 0u32;
    for (i, s) in m.statements.iter().enumerate() {
        if s.index != i {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "index-order",
                message: format!("statement index {} at position {i}", s.index),
            });
        }
        if s.line <= prev_line {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "line-layout",
                message: format!(
                    "statement line {} does not increase over previous line {prev_line}",
                    s.line
                ),
            });
        }
        prev_line = s.line;
        if s.kind != s.body.kind() {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "kind-mismatch",
                message: format!("kind {} does not match body", s.kind.name()),
            });
        }
        if s.defs != s.body.defs() || s.uses != s.body.uses() {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "defs-uses-mismatch",
                message: "stored defs/uses differ from statement operands".to_string(),
            });
        }
    }

    // Labels unique and targets resolved.
    let mut labels = BTreeSet::new();
    for s in &m.statements {
        if let Some(l) = &s.label {
            if !labels.insert(l.clone()) {
                diags.push(Diagnostic {
                    method: m.name.clone(),
                    stmt_index: Some(s.index),
                    rule: "duplicate-label",
                    message: format!("label `{l}` is defined more than once"),
                });
            }
        }
    }
    let mut unresolved = false;
    for s in &m.statements {
        let target = match &s.body {
            StatementBody::If { target, .. } | StatementBody::Goto { target } => Some(target),
            _ => None,
        };
        if let Some(t) = target {
            if !labels.contains(t) {
                unresolved = true;
                diags.push(Diagnostic {
                    method: m.name.clone(),
                    stmt_index: Some(s.index),
                    rule: "unresolved-target",
                    message: format!("branch target `{t}` has no matching label"),
                });
            }
        }
    }
    if unresolved {
        // Control-flow checks below would chase missing edges.
        return;
    }

    // Every path must end in `return`: the last statement may not fall off
    // the end, and every statement must both be reachable from entry and
    // have a path to exit.
    let last = m.statements.last().unwrap();
    if !matches!(last.kind, StatementKind::Return | StatementKind::Goto) {
        diags.push(Diagnostic {
            method: m.name.clone(),
            stmt_index: Some(last.index),
            rule: "missing-return",
            message: format!(
                "control falls off the end of method `{}` after {}",
                m.name,
                last.kind.name()
            ),
        });
    }

    let n = m.statements.len();
    let mut succs: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut exits: Vec<bool> = Vec::with_capacity(n);
    for i in 0..n {
        let (s, exit) = m.successor_indices(i);
        succs.push(s);
        exits.push(exit);
    }

    // Forward reachability from entry.
    let mut reach_fwd = vec![false; n];
    let mut work = vec![0usize];
    reach_fwd[0] = true;
    while let Some(i) = work.pop() {
        for &j in &succs[i] {
            if !reach_fwd[j] {
                reach_fwd[j] = true;
                work.push(j);
            }
        }
    }
    for (i, ok) in reach_fwd.iter().enumerate() {
        if !ok {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "unreachable-statement",
                message: "statement cannot be reached from method entry".to_string(),
            });
        }
    }

    // Backward reachability from exit.
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, ss) in succs.iter().enumerate() {
        for &j in ss {
            preds[j].push(i);
        }
    }
    let mut reach_exit = vec![false; n];
    let mut work: Vec<usize> = (0..n).filter(|&i| exits[i]).collect();
    for &i in &work {
        reach_exit[i] = true;
    }
    while let Some(i) = work.pop() {
        for &j in &preds[i] {
            if !reach_exit[j] {
                reach_exit[j] = true;
                work.push(j);
            }
        }
    }
    for (i, ok) in reach_exit.iter().enumerate() {
        if !ok {
            diags.push(Diagnostic {
                method: m.name.clone(),
                stmt_index: Some(i),
                rule: "no-path-to-return",
                message: "no control-flow path from this statement reaches a return".to_string(),
            });
        }
    }
}
