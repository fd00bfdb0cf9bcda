use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::ast::{Func, Node, Rational};
use super::{BlockLayout, ExprError};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Param(String),
    Sym(char),
    DotDot,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v, _) => alloc::format!("number {v}"),
            Tok::Ident(s) => alloc::format!("identifier `{s}`"),
            Tok::Param(s) => alloc::format!("parameter `${s}`"),
            Tok::Sym(c) => alloc::format!("`{c}`"),
            Tok::DotDot => "`..`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut integral = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' && chars.get(i + 1) != Some(&'.') {
                integral = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lexeme: String = chars[start..i].iter().collect();
            let v: f64 = lexeme.parse().map_err(|_| ExprError::Syntax {
                position: pos,
                expected: vec!["number".into()],
                found: lexeme.clone(),
            })?;
            out.push((Tok::Num(v, integral), pos));
        } else if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let is_param = c == '$';
            if is_param {
                i += 1;
            }
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            if name.is_empty() || name.starts_with(|d: char| d.is_ascii_digit()) {
                return Err(ExprError::Syntax {
                    position: pos,
                    expected: vec!["parameter name".into()],
                    found: chars.get(start).map_or("end of input".into(), |c| c.to_string()),
                });
            }
            out.push((if is_param { Tok::Param(name) } else { Tok::Ident(name) }, pos));
        } else if c == '.' && chars.get(i + 1) == Some(&'.') {
            out.push((Tok::DotDot, pos));
            i += 2;
        } else if "+-*/^()[]".contains(c) {
            out.push((Tok::Sym(c), pos));
            i += 1;
        } else {
            return Err(ExprError::Syntax {
                position: pos,
                expected: vec!["expression".into()],
                found: alloc::format!("`{c}`"),
            });
        }
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    layout: &'a BlockLayout,
}

pub(crate) fn parse(text: &str, layout: &BlockLayout) -> Result<Node, ExprError> {
    let mut p = Parser { toks: lex(text)?, at: 0, layout };
    let node = p.expr()?;
    match p.peek() {
        Tok::End => Ok(node),
        _ => Err(p.unexpected(&["operator", "end of input"])),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> ExprError {
        ExprError::Syntax {
            position: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[&alloc::format!("`{c}`")]))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Sym('+') => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Sym('-') => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Sym('*') => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Sym('/') => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Tok::Sym('-') => {
                self.bump();
                Ok(match self.unary()? {
                    Node::Const(c) => Node::Const(-c),
                    n => Node::Neg(Box::new(n)),
                })
            }
            Tok::Sym('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Sym('^') {
            return Ok(base);
        }
        self.bump();
        let r = self.exponent()?;
        Ok(Node::Pow(Box::new(base), r))
    }

    fn signed_int(&mut self) -> Result<i64, ExprError> {
        let mut sign = 1;
        while let Tok::Sym(c @ ('-' | '+')) = self.peek() {
            if *c == '-' {
                sign = -sign;
            }
            self.bump();
        }
        match self.peek().clone() {
            Tok::Num(v, true) if v <= 1e15 => {
                self.bump();
                Ok(sign * v as i64)
            }
            _ => Err(self.unexpected(&["integer exponent"])),
        }
    }

    fn exponent(&mut self) -> Result<Rational, ExprError> {
        if *self.peek() == Tok::Sym('(') {
            self.bump();
            let num = self.signed_int()?;
            let den = if *self.peek() == Tok::Sym('/') {
                self.bump();
                let pos = self.pos();
                let d = self.signed_int()?;
                if d == 0 {
                    return Err(ExprError::Syntax {
                        position: pos,
                        expected: vec!["nonzero denominator".into()],
                        found: "0".into(),
                    });
                }
                d
            } else {
                1
            };
            self.expect(')')?;
            Ok(Rational::new(num, den).expect("checked denominator"))
        } else {
            Ok(Rational::integer(self.signed_int()?))
        }
    }

    fn index(&mut self) -> Result<(usize, usize), ExprError> {
        match self.peek().clone() {
            Tok::Num(v, true) => {
                let pos = self.pos();
                self.bump();
                Ok((v as usize, pos))
            }
            _ => Err(self.unexpected(&["index"])),
        }
    }

    fn slot(&mut self, block: &str, index: usize, pos: usize) -> Result<usize, ExprError> {
        self.layout.slot(block, index).ok_or_else(|| ExprError::IndexOutOfRange {
            block: block.into(),
            index,
            dim: self.layout.dim(block),
            position: pos,
        })
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v, _) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::Param(name) => {
                self.bump();
                Ok(Node::Param(name))
            }
            Tok::Sym('(') => {
                self.bump();
                let n = self.expr()?;
                self.expect(')')?;
                Ok(n)
            }
            Tok::Ident(name) => {
                self.bump();
                self.ident(name, pos)
            }
            _ => Err(self.unexpected(&["number", "variable", "function", "`(`"])),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Node, ExprError> {
        if name == "pi" {
            return Ok(Node::Const(core::f64::consts::PI));
        }
        if name == "norm" {
            self.expect('(')?;
            let bpos = self.pos();
            let Tok::Ident(block) = self.peek().clone() else {
                return Err(self.unexpected(&["block name"]));
            };
            self.bump();
            let Some(blk) = self.layout.block(&block).cloned() else {
                return Err(ExprError::UnknownIdentifier { name: block, position: bpos });
            };
            let (start, len) = if *self.peek() == Tok::Sym('[') {
                self.bump();
                let (i, ipos) = self.index()?;
                let s0 = self.slot(&block, i, ipos)?;
                let s1 = if *self.peek() == Tok::DotDot {
                    self.bump();
                    let (j, jpos) = self.index()?;
                    let s1 = self.slot(&block, j, jpos)?;
                    if s1 < s0 {
                        return Err(ExprError::IndexOutOfRange { block, index: j, dim: blk.dim, position: jpos });
                    }
                    s1
                } else {
                    s0
                };
                self.expect(']')?;
                (s0, s1 - s0 + 1)
            } else {
                (blk.offset, blk.dim)
            };
            self.expect(')')?;
            return Ok(Node::Norm { start, len });
        }
        if let Some(f) = Func::from_name(&name) {
            self.expect('(')?;
            let arg = self.expr()?;
            self.expect(')')?;
            return Ok(Node::Func(f, Box::new(arg)));
        }
        if self.layout.block(&name).is_none() {
            return Err(ExprError::UnknownIdentifier { name, position: pos });
        }
        self.expect('[')?;
        let (i, ipos) = self.index()?;
        let s = self.slot(&name, i, ipos)?;
        self.expect(']')?;
        Ok(Node::Var(s))
    }
}
