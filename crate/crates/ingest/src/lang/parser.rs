//! Lexer and recursive-descent parser for the ingestion language.
//!
//! Keywords are case-insensitive, identifiers case-sensitive, statements end
//! with `;`. `#` starts a comment running to end of line.

use crate::lang::ast::*;
use crate::lang::LangError;
use crate::plan::{Cmp, ParamValue};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Semi,
    Comma,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("float {v}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Star => "`*`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, expected: &str, found: &str) -> LangError {
        LangError::SyntaxError {
            line: self.line,
            col: self.col,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, LangError> {
        let mut out = Vec::new();
        loop {
            while let Some(b) = self.peek() {
                if b.is_ascii_whitespace() {
                    self.bump();
                } else if b == b'#' {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = Pos::new(self.line, self.col);
            let Some(b) = self.peek() else {
                out.push((Tok::Eof, pos));
                return Ok(out);
            };
            let tok = match b {
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'=' => {
                    self.bump();
                    Tok::Eq
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ne
                    } else {
                        return Err(self.error("`=` after `!`", "other character"));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some(b'"') => break,
                            Some(b'\n') | None => {
                                return Err(self.error("closing `\"`", "end of line"))
                            }
                            Some(c) => s.push(c as char),
                        }
                    }
                    Tok::Str(s)
                }
                b'0'..=b'9' => {
                    let mut text = String::new();
                    let mut is_float = false;
                    while let Some(c) = self.peek() {
                        if c.is_ascii_digit() {
                            text.push(c as char);
                            self.bump();
                        } else if c == b'.'
                            && !is_float
                            && self
                                .src
                                .get(self.pos + 1)
                                .is_some_and(|d| d.is_ascii_digit())
                        {
                            is_float = true;
                            text.push('.');
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if is_float {
                        Tok::Float(text.parse().map_err(|_| self.error("float", &text))?)
                    } else {
                        Tok::Int(text.parse().map_err(|_| self.error("integer", &text))?)
                    }
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(self.error("token", &format!("`{}`", other as char)));
                }
            };
            out.push((tok, pos));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.idx].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.idx].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.idx].0.clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> LangError {
        let pos = self.pos();
        LangError::SyntaxError {
            line: pos.line,
            col: pos.col,
            expected: expected.to_string(),
            found: self.peek().describe(),
        }
    }

    /// True when the current token is the given keyword (case-insensitive).
    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), LangError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&format!("keyword {kw}")))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), LangError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, LangError> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn ident_list(&mut self, what: &str) -> Result<Vec<String>, LangError> {
        let mut names = vec![self.ident(what)?];
        while *self.peek() == Tok::Comma {
            self.bump();
            names.push(self.ident(what)?);
        }
        Ok(names)
    }

    fn literal(&mut self) -> Result<ParamValue, LangError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(ParamValue::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(ParamValue::Float(v))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(ParamValue::Str(s))
            }
            Tok::Minus => {
                self.bump();
                match self.peek().clone() {
                    Tok::Int(v) => {
                        self.bump();
                        Ok(ParamValue::Int(-v))
                    }
                    Tok::Float(v) => {
                        self.bump();
                        Ok(ParamValue::Float(-v))
                    }
                    _ => Err(self.error("number after `-`")),
                }
            }
            _ => Err(self.error("literal (integer, float or string)")),
        }
    }

    fn opref(&mut self) -> Result<OpRef, LangError> {
        let pos = self.pos();
        let name = self.ident("operator reference")?;
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            if *self.peek() != Tok::RParen {
                args.push(self.literal()?);
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.literal()?);
                }
            }
            self.expect(Tok::RParen, "`)`")?;
        }
        Ok(OpRef { name, args, pos })
    }

    fn select(&mut self) -> Result<Statement, LangError> {
        // SELECT already consumed.
        let projection = if *self.peek() == Tok::Star {
            self.bump();
            Projection::Star
        } else {
            Projection::Names(self.ident_list("projection attribute")?)
        };
        self.expect_keyword("FROM")?;
        let from = self.ident("input name")?;
        let mut using = None;
        let mut filter = None;
        let mut replicate = None;
        if self.eat_keyword("USING") {
            using = Some(self.opref()?);
        }
        if self.eat_keyword("WHERE") {
            filter = Some(self.opref()?);
        }
        if self.eat_keyword("REPLICATE") {
            self.expect_keyword("BY")?;
            replicate = Some(match self.peek().clone() {
                Tok::Int(k) => {
                    self.bump();
                    ReplicateBy::K(k)
                }
                _ => ReplicateBy::Op(self.opref()?),
            });
        }
        Ok(Statement::Select(SelectStmt {
            projection,
            from,
            using,
            filter,
            replicate,
        }))
    }

    fn format(&mut self) -> Result<Statement, LangError> {
        let inputs = self.ident_list("input statement name")?;
        let mut clauses = Vec::new();
        loop {
            let clause = if self.at_keyword("PARTITION") {
                self.bump();
                self.expect_keyword("BY")?;
                FormatClause::PartitionBy
            } else if self.at_keyword("CHUNK") {
                self.bump();
                self.expect_keyword("BY")?;
                FormatClause::ChunkBy
            } else if self.at_keyword("ORDER") {
                self.bump();
                self.expect_keyword("BY")?;
                FormatClause::OrderBy
            } else if self.at_keyword("SERIALIZE") {
                self.bump();
                self.expect_keyword("AS")?;
                FormatClause::SerializeAs
            } else {
                break;
            };
            clauses.push((clause, self.opref()?));
        }
        if clauses.is_empty() {
            return Err(self.error("at least one PARTITION BY/CHUNK BY/ORDER BY/SERIALIZE AS clause"));
        }
        Ok(Statement::Format(FormatStmt { inputs, clauses }))
    }

    fn store(&mut self) -> Result<Statement, LangError> {
        let inputs = self.ident_list("input statement name")?;
        let mut locate = None;
        let mut upload = None;
        if self.eat_keyword("LOCATE") {
            self.expect_keyword("USING")?;
            locate = Some(self.opref()?);
        }
        if self.eat_keyword("UPLOAD") {
            self.expect_keyword("TO")?;
            upload = Some(self.opref()?);
        }
        Ok(Statement::Store(StoreStmt {
            inputs,
            locate,
            upload,
        }))
    }

    fn predicate(&mut self) -> Result<PredAst, LangError> {
        let pos = self.pos();
        let label = self.ident("label predicate `l_<op>`")?;
        let op_name = label
            .strip_prefix("l_")
            .ok_or_else(|| LangError::SyntaxError {
                line: pos.line,
                col: pos.col,
                expected: "label reference starting with `l_`".into(),
                found: format!("identifier `{label}`"),
            })?
            .to_string();
        let cmp = match self.peek() {
            Tok::Eq => Cmp::Eq,
            Tok::Ne => Cmp::Ne,
            Tok::Lt => Cmp::Lt,
            Tok::Le => Cmp::Le,
            Tok::Gt => Cmp::Gt,
            Tok::Ge => Cmp::Ge,
            _ => return Err(self.error("comparison operator")),
        };
        self.bump();
        let rhs = match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                PredRhs::Int(v)
            }
            Tok::Minus => {
                self.bump();
                match self.peek().clone() {
                    Tok::Int(v) => {
                        self.bump();
                        PredRhs::Int(-v)
                    }
                    _ => return Err(self.error("integer after `-`")),
                }
            }
            Tok::Str(s) => {
                self.bump();
                PredRhs::Str(s)
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("now") => {
                self.bump();
                let offset = match self.peek() {
                    Tok::Plus => {
                        self.bump();
                        match self.bump() {
                            Tok::Int(v) => v,
                            _ => return Err(self.error("integer after `+`")),
                        }
                    }
                    Tok::Minus => {
                        self.bump();
                        match self.bump() {
                            Tok::Int(v) => -v,
                            _ => return Err(self.error("integer after `-`")),
                        }
                    }
                    _ => 0,
                };
                PredRhs::Now { offset }
            }
            _ => return Err(self.error("integer, string or `now`")),
        };
        Ok(PredAst {
            op_name,
            cmp,
            rhs,
            pos,
        })
    }

    fn stage_stmt(&mut self) -> Result<StageStmt, LangError> {
        let pos = self.pos();
        let kind = if self.eat_keyword("CREATE") {
            self.expect_keyword("STAGE")?;
            StageKind::Create
        } else {
            self.expect_keyword("CHAIN")?;
            self.expect_keyword("STAGE")?;
            StageKind::Chain {
                upstreams: Vec::new(),
            }
        };
        let name = self.ident("stage name")?;
        let kind = match kind {
            StageKind::Chain { .. } => {
                self.expect_keyword("TO")?;
                StageKind::Chain {
                    upstreams: self.ident_list("upstream stage name")?,
                }
            }
            create => create,
        };
        self.expect_keyword("USING")?;
        let using = self.ident_list("statement name")?;
        let mut predicates = Vec::new();
        if self.eat_keyword("WHERE") {
            predicates.push(self.predicate()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                predicates.push(self.predicate()?);
            }
        }
        self.expect(Tok::Semi, "`;`")?;
        Ok(StageStmt {
            kind,
            name,
            using,
            predicates,
            pos,
        })
    }

    fn program(&mut self) -> Result<Program, LangError> {
        let mut assignments = Vec::new();
        let mut stage_stmts = Vec::new();
        while *self.peek() != Tok::Eof {
            if self.at_keyword("CREATE") || self.at_keyword("CHAIN") {
                stage_stmts.push(self.stage_stmt()?);
                continue;
            }
            let pos = self.pos();
            let name = self.ident("statement name or CREATE/CHAIN STAGE")?;
            self.expect(Tok::Eq, "`=`")?;
            let stmt = if self.eat_keyword("SELECT") {
                self.select()?
            } else if self.eat_keyword("FORMAT") {
                self.format()?
            } else if self.eat_keyword("STORE") {
                self.store()?
            } else {
                return Err(self.error("SELECT, FORMAT or STORE"));
            };
            self.expect(Tok::Semi, "`;`")?;
            assignments.push(Assignment { name, stmt, pos });
        }
        Ok(Program {
            assignments,
            stage_stmts,
        })
    }
}

/// Parses an ingestion program.
pub fn parse_program(text: &str) -> Result<Program, LangError> {
    let toks = Lexer::new(text).tokens()?;
    let mut parser = Parser { toks, idx: 0 };
    let program = parser.program()?;

    let mut names = std::collections::HashSet::new();
    for a in &program.assignments {
        if !names.insert(a.name.clone()) {
            return Err(LangError::DuplicateName(a.name.clone()));
        }
    }
    let mut stage_names = std::collections::HashSet::new();
    for s in &program.stage_stmts {
        if !stage_names.insert(s.name.clone()) {
            return Err(LangError::DuplicateName(s.name.clone()));
        }
    }
    Ok(program)
}
