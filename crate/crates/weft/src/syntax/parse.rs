//! Hand-rolled lexer and recursive-descent parser for the concrete syntax.
//!
//! Precedence, loosest to tightest: `;` (right associative), `:=` (right
//! associative), application (left associative), then `!` and `ref<..>`
//! prefixes. The prefix forms (lambda, fix, if, flow, allowed, thread)
//! extend as far right as possible; keywords such as `then`, `at`, or `in`
//! terminate them. Comments run from `#` to end of line, except that `#`
//! may appear inside an identifier (runtime names like `r#0` lex whole).

use thiserror::Error;

use super::{Abs, Expr, Fix, Latent, Type};
use crate::lattice::{Effect, Level, Policy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at {line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBrack,
    RBrack,
    Lt,
    Gt,
    Comma,
    Dot,
    Colon,
    Semi,
    Backslash,
    Bang,
    Eq,
    AssignOp,
    Arrow,
    LatOpen,
    LatClose,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tok::Ident(i) => return write!(f, "`{i}`"),
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBrack => "[",
            Tok::RBrack => "]",
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::Colon => ":",
            Tok::Semi => ";",
            Tok::Backslash => "\\",
            Tok::Bang => "!",
            Tok::Eq => "=",
            Tok::AssignOp => ":=",
            Tok::Arrow => "->",
            Tok::LatOpen => "-[",
            Tok::LatClose => "]->",
        };
        write!(f, "`{s}`")
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().peekable(), line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, col: self.col, msg: msg.into() }
    }

    fn lex(mut self) -> Result<Vec<(Tok, usize, usize)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            if self.chars.peek() == Some(&'#') {
                while !matches!(self.chars.peek(), None | Some('\n')) {
                    self.bump();
                }
                continue;
            }
            let (line, col) = (self.line, self.col);
            let c = match self.chars.peek() {
                None => return Ok(out),
                Some(c) => *c,
            };
            let tok = if c.is_alphabetic() || c == '_' {
                let mut name = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        name.push(c);
                        self.bump();
                    } else if c == '#' {
                        // Identifier-internal marker used by fresh runtime
                        // names; a comment needs `#` at a token boundary.
                        let mut probe = self.chars.clone();
                        probe.next();
                        if matches!(probe.peek(), Some(n) if n.is_alphanumeric()) {
                            name.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    } else {
                        break;
                    }
                }
                Tok::Ident(name)
            } else {
                self.bump();
                match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBrack,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    ',' => Tok::Comma,
                    '.' => Tok::Dot,
                    ';' => Tok::Semi,
                    '\\' => Tok::Backslash,
                    '!' => Tok::Bang,
                    '=' => Tok::Eq,
                    ':' => {
                        if self.chars.peek() == Some(&'=') {
                            self.bump();
                            Tok::AssignOp
                        } else {
                            Tok::Colon
                        }
                    }
                    '-' => match self.chars.peek() {
                        Some('>') => {
                            self.bump();
                            Tok::Arrow
                        }
                        Some('[') => {
                            self.bump();
                            Tok::LatOpen
                        }
                        _ => return Err(self.err("stray `-`; expected `->` or `-[`")),
                    },
                    ']' => {
                        if self.chars.peek() == Some(&'-') {
                            self.bump();
                            if self.chars.peek() == Some(&'>') {
                                self.bump();
                                Tok::LatClose
                            } else {
                                return Err(self.err("expected `]->`"));
                            }
                        } else {
                            Tok::RBrack
                        }
                    }
                    other => return Err(self.err(format!("unexpected character `{other}`"))),
                }
            };
            out.push((tok, line, col));
        }
    }
}

/// Keywords that terminate an expression rather than extend one.
const STOPPERS: &[&str] = &["then", "else", "at", "with", "in", "unit", "bool", "bot", "top"];
/// Keywords that begin a prefix form; not usable as application arguments.
const PREFIX_KEYWORDS: &[&str] = &["if", "flow", "allowed", "thread", "fix"];

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _, _)| t)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l, c)| (*l, *c))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError { line, col, msg: msg.into() }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.err(format!("expected {want}, found {t}"))),
            None => Err(self.err(format!("expected {want}, found end of input"))),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(i)) if i == kw => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.err(format!("expected `{kw}`, found {t}"))),
            None => Err(self.err(format!("expected `{kw}`, found end of input"))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(i)) if !STOPPERS.contains(&i.as_str()) => {
                let i = i.clone();
                self.pos += 1;
                Ok(i)
            }
            Some(t) => Err(self.err(format!("expected an identifier, found {t}"))),
            None => Err(self.err("expected an identifier, found end of input")),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(i)) if i == kw)
    }

    fn starts_prefix(&self) -> bool {
        match self.peek() {
            Some(Tok::Backslash) => true,
            Some(Tok::Ident(i)) => PREFIX_KEYWORDS.contains(&i.as_str()),
            _ => false,
        }
    }

    fn starts_unary(&self) -> bool {
        match self.peek() {
            Some(Tok::Bang) | Some(Tok::LParen) => true,
            Some(Tok::Ident(i)) => {
                !STOPPERS.contains(&i.as_str()) && !PREFIX_KEYWORDS.contains(&i.as_str())
                    || i == "ref"
            }
            _ => false,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let head = if self.starts_prefix() { self.prefix_form()? } else { self.assign_expr()? };
        if self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
            let tail = self.expr()?;
            Ok(Expr::Seq(Box::new(head), Box::new(tail)))
        } else {
            Ok(head)
        }
    }

    fn prefix_form(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Backslash) => {
                self.pos += 1;
                let latent = if self.peek() == Some(&Tok::LBrack) {
                    self.pos += 1;
                    let l = self.latent_fields(Tok::RBrack)?;
                    self.expect(Tok::RBrack)?;
                    l
                } else {
                    Latent::default()
                };
                let var = self.ident()?;
                self.expect(Tok::Colon)?;
                let param = self.ty()?;
                self.expect(Tok::Dot)?;
                let body = self.expr()?;
                Ok(Expr::Abs(Box::new(Abs { var, param, latent, body })))
            }
            Some(Tok::Ident(i)) => match i.as_str() {
                "fix" => {
                    self.pos += 1;
                    let var = self.ident()?;
                    self.expect(Tok::Colon)?;
                    let self_type = self.ty()?;
                    self.expect(Tok::Dot)?;
                    let body = self.expr()?;
                    if !body.is_pseudo_value() {
                        return Err(self.err("fix body must be a value or a nested fix"));
                    }
                    Ok(Expr::Fix(Box::new(Fix { var, self_type, body })))
                }
                "if" => {
                    self.pos += 1;
                    let guard = self.expr()?;
                    self.expect_kw("then")?;
                    let then_br = self.expr()?;
                    self.expect_kw("else")?;
                    let else_br = self.expr()?;
                    Ok(Expr::Cond {
                        guard: Box::new(guard),
                        then_br: Box::new(then_br),
                        else_br: Box::new(else_br),
                    })
                }
                "flow" => {
                    self.pos += 1;
                    let policy = self.policy_lit()?;
                    self.expect_kw("in")?;
                    let body = self.expr()?;
                    Ok(Expr::Flow { policy, body: Box::new(body) })
                }
                "allowed" => {
                    self.pos += 1;
                    let policy = self.policy_lit()?;
                    self.expect_kw("then")?;
                    let then_br = self.expr()?;
                    self.expect_kw("else")?;
                    let else_br = self.expr()?;
                    Ok(Expr::Allowed {
                        policy,
                        then_br: Box::new(then_br),
                        else_br: Box::new(else_br),
                    })
                }
                "thread" => {
                    self.pos += 1;
                    self.expect(Tok::Lt)?;
                    let level = self.level_lit()?;
                    self.expect(Tok::Gt)?;
                    let body = self.expr()?;
                    self.expect_kw("at")?;
                    let domain = self.ident()?;
                    let annot = if self.at_kw("with") {
                        self.pos += 1;
                        Some(self.policy_lit()?)
                    } else {
                        None
                    };
                    Ok(Expr::Thread { level, body: Box::new(body), domain, annot })
                }
                other => Err(self.err(format!("unexpected `{other}`"))),
            },
            _ => Err(self.err("expected an expression")),
        }
    }

    fn assign_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.app_chain()?;
        if self.peek() == Some(&Tok::AssignOp) {
            self.pos += 1;
            let rhs =
                if self.starts_prefix() { self.prefix_form()? } else { self.assign_expr()? };
            Ok(Expr::Assign(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn app_chain(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.unary()?;
        while self.starts_unary() {
            let arg = self.unary()?;
            e = Expr::App(Box::new(e), Box::new(arg));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.pos += 1;
                let t = self.unary()?;
                Ok(Expr::Deref(Box::new(t)))
            }
            Some(Tok::Ident(i)) if i == "ref" => {
                self.pos += 1;
                self.expect(Tok::Lt)?;
                let level = self.level_lit()?;
                self.expect(Tok::Comma)?;
                let vtype = self.ty()?;
                self.expect(Tok::Gt)?;
                let init = self.unary()?;
                Ok(Expr::RefCreate { level, vtype, init: Box::new(init) })
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::RParen) {
                    self.pos += 1;
                    return Ok(Expr::Unit);
                }
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(i)) => match i.as_str() {
                "true" => {
                    self.pos += 1;
                    Ok(Expr::Bool(true))
                }
                "false" => {
                    self.pos += 1;
                    Ok(Expr::Bool(false))
                }
                _ => {
                    let name = self.ident()?;
                    Ok(Expr::Var(name))
                }
            },
            Some(t) => {
                let t = t.clone();
                Err(self.err(format!("expected an expression, found {t}")))
            }
            None => Err(self.err("expected an expression, found end of input")),
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let lhs = self.ty_atom()?;
        match self.peek() {
            Some(Tok::Arrow) => {
                self.pos += 1;
                let rhs = self.ty()?;
                Ok(Type::Arrow(Box::new(lhs), Box::new(rhs), Latent::default()))
            }
            Some(Tok::LatOpen) => {
                self.pos += 1;
                let latent = self.latent_fields(Tok::LatClose)?;
                self.expect(Tok::LatClose)?;
                let rhs = self.ty()?;
                Ok(Type::Arrow(Box::new(lhs), Box::new(rhs), latent))
            }
            _ => Ok(lhs),
        }
    }

    fn ty_atom(&mut self) -> Result<Type, ParseError> {
        match self.peek() {
            Some(Tok::Ident(i)) => match i.as_str() {
                "unit" => {
                    self.pos += 1;
                    Ok(Type::Unit)
                }
                "bool" => {
                    self.pos += 1;
                    Ok(Type::Bool)
                }
                "ref" => {
                    self.pos += 1;
                    self.expect(Tok::Lt)?;
                    let level = self.level_lit()?;
                    self.expect(Tok::Comma)?;
                    let inner = self.ty()?;
                    self.expect(Tok::Gt)?;
                    Ok(Type::Ref(Box::new(inner), level))
                }
                other => Err(self.err(format!("expected a type, found `{other}`"))),
            },
            Some(Tok::LParen) => {
                self.pos += 1;
                let t = self.ty()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Some(t) => {
                let t = t.clone();
                Err(self.err(format!("expected a type, found {t}")))
            }
            None => Err(self.err("expected a type, found end of input")),
        }
    }

    /// Fields of a latent block, up to but not consuming `closing`.
    fn latent_fields(&mut self, closing: Tok) -> Result<Latent, ParseError> {
        let mut latent = Latent::default();
        if self.peek() == Some(&closing) {
            return Ok(latent);
        }
        loop {
            let field = self.ident()?;
            self.expect(Tok::Eq)?;
            match field.as_str() {
                "j" => latent.thread_level = Some(self.level_lit()?),
                "F" => latent.context = Some(self.policy_lit()?),
                "A" => latent.allowed = Some(self.policy_lit()?),
                "s" => latent.decl = Some(self.policy_lit()?),
                "eff" => {
                    self.expect(Tok::LParen)?;
                    let reading = self.level_lit()?;
                    self.expect(Tok::Comma)?;
                    let writing = self.level_lit()?;
                    self.expect(Tok::Comma)?;
                    let termination = self.level_lit()?;
                    self.expect(Tok::RParen)?;
                    latent.effect = Some(Effect { reading, writing, termination });
                }
                other => {
                    return Err(self.err(format!(
                        "unknown latent field `{other}`; expected j, F, eff, A, or s"
                    )))
                }
            }
            if self.peek() == Some(&Tok::Semi) {
                self.pos += 1;
            } else {
                return Ok(latent);
            }
        }
    }

    fn level_lit(&mut self) -> Result<Level, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut names = Vec::new();
        if self.peek() != Some(&Tok::RBrace) {
            loop {
                names.push(self.ident()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(Level::new(names))
    }

    fn policy_lit(&mut self) -> Result<Policy, ParseError> {
        match self.peek() {
            Some(Tok::Ident(i)) if i == "bot" => {
                self.pos += 1;
                Ok(Policy::bottom_marker())
            }
            Some(Tok::Ident(i)) if i == "top" => {
                self.pos += 1;
                Ok(Policy::top())
            }
            _ => {
                self.expect(Tok::LBrace)?;
                let mut pairs = Vec::new();
                if self.peek() != Some(&Tok::RBrace) {
                    loop {
                        let p = self.ident()?;
                        self.expect(Tok::Lt)?;
                        let q = self.ident()?;
                        pairs.push((p, q));
                        if self.peek() == Some(&Tok::Comma) {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(Policy::new(pairs))
            }
        }
    }
}

fn parser_for(text: &str) -> Result<Parser, ParseError> {
    let toks = Lexer::new(text).lex()?;
    Ok(Parser { toks, pos: 0 })
}

/// Parse a whole program.
pub fn parse_program(text: &str) -> Result<Expr, ParseError> {
    let mut p = parser_for(text)?;
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input after the expression"));
    }
    Ok(e)
}

/// Parse a type in the concrete syntax.
pub fn parse_type(text: &str) -> Result<Type, ParseError> {
    let mut p = parser_for(text)?;
    let t = p.ty()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input after the type"));
    }
    Ok(t)
}

/// Parse a level literal such as `{p,q}`.
pub fn parse_level_text(text: &str) -> Result<Level, ParseError> {
    let mut p = parser_for(text)?;
    let l = p.level_lit()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input after the level"));
    }
    Ok(l)
}

/// Parse a policy literal such as `{p<q}`, `bot`, or `top`.
pub fn parse_policy_text(text: &str) -> Result<Policy, ParseError> {
    let mut p = parser_for(text)?;
    let f = p.policy_lit()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input after the policy"));
    }
    Ok(f)
}
