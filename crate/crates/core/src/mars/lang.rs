//! A tiny integer language used by the built-in code runner.
//!
//! ```text
//! let n = read          # next integer from stdin
//! let acc = 0
//! while n > 0 do
//!     acc = acc + n
//!     n = n - 1
//! end
//! if acc % 2 == 0 then print acc else print 0 - acc end
//! ```
//!
//! Values are `i64` with checked arithmetic; comparisons yield 0 or 1.
//! `;` is an optional statement separator and `#` starts a comment.

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Ident(String),
    Kw(&'static str),
    Op(&'static str),
}

const KEYWORDS: [&str; 9] = ["let", "print", "while", "do", "if", "then", "else", "end", "read"];
const OPS: [&str; 16] = [
    "==", "!=", "<=", ">=", "&&", "||", "<", ">", "+", "-", "*", "/", "%", "(", ")", "=",
];

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let b = src.as_bytes();
    let mut i = 0;
    'outer: while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() || c == b';' {
            i += 1;
        } else if c == b'#' {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let v = src[start..i]
                .parse()
                .map_err(|_| format!("integer literal {} out of range", &src[start..i]))?;
            out.push(Tok::Int(v));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => out.push(Tok::Kw(k)),
                None => out.push(Tok::Ident(word.to_string())),
            }
        } else {
            for op in OPS {
                if src[i..].starts_with(op) {
                    out.push(Tok::Op(op));
                    i += op.len();
                    continue 'outer;
                }
            }
            return Err(format!("unexpected character {:?} at byte {i}", c as char));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Expr {
    Int(i64),
    Var(String),
    Read,
    Neg(Box<Expr>),
    Bin(&'static str, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone)]
enum Stmt {
    Let(String, Expr),
    Assign(String, Expr),
    Print(Expr),
    While(Expr, Vec<Stmt>),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
}

/// A parsed program.
#[derive(Debug, Clone)]
pub struct Program(Vec<Stmt>);

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(format!("expected {want:?}, found {other:?}")),
        }
    }

    fn block(&mut self, terminators: &[&str]) -> Result<Vec<Stmt>, String> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Kw(k)) if terminators.contains(k) => return Ok(out),
                None if terminators.is_empty() => return Ok(out),
                None => return Err(format!("unterminated block, expected one of {terminators:?}")),
                _ => out.push(self.stmt()?),
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, String> {
        match self.next() {
            Some(Tok::Kw("let")) => {
                let name = self.ident()?;
                self.expect(Tok::Op("="))?;
                Ok(Stmt::Let(name, self.expr()?))
            }
            Some(Tok::Kw("print")) => Ok(Stmt::Print(self.expr()?)),
            Some(Tok::Kw("while")) => {
                let cond = self.expr()?;
                self.expect(Tok::Kw("do"))?;
                let body = self.block(&["end"])?;
                self.expect(Tok::Kw("end"))?;
                Ok(Stmt::While(cond, body))
            }
            Some(Tok::Kw("if")) => {
                let cond = self.expr()?;
                self.expect(Tok::Kw("then"))?;
                let then = self.block(&["else", "end"])?;
                let otherwise = if self.peek() == Some(&Tok::Kw("else")) {
                    self.pos += 1;
                    self.block(&["end"])?
                } else {
                    Vec::new()
                };
                self.expect(Tok::Kw("end"))?;
                Ok(Stmt::If(cond, then, otherwise))
            }
            Some(Tok::Ident(name)) => {
                self.expect(Tok::Op("="))?;
                Ok(Stmt::Assign(name, self.expr()?))
            }
            other => Err(format!("expected a statement, found {other:?}")),
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Ident(n)) => Ok(n),
            other => Err(format!("expected identifier, found {other:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, String> {
        const LEVELS: [&[&str]; 5] = [
            &["||"],
            &["&&"],
            &["==", "!=", "<", "<=", ">", ">="],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        while let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            if !LEVELS[level].contains(&op) {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(level + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Op("-")) => Ok(Expr::Neg(Box::new(self.unary()?))),
            Some(Tok::Op("(")) => {
                let e = self.expr()?;
                self.expect(Tok::Op(")"))?;
                Ok(e)
            }
            Some(Tok::Int(v)) => Ok(Expr::Int(v)),
            Some(Tok::Ident(n)) => Ok(Expr::Var(n)),
            Some(Tok::Kw("read")) => Ok(Expr::Read),
            other => Err(format!("expected an expression, found {other:?}")),
        }
    }
}

pub fn parse(src: &str) -> Result<Program, String> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let body = p.block(&[])?;
    Ok(Program(body))
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Finished { stdout: String },
    RuntimeError { stdout: String, message: String },
    StepLimit { stdout: String },
}

struct Machine<'a> {
    vars: HashMap<String, i64>,
    input: std::str::SplitWhitespace<'a>,
    out: String,
    steps: u64,
    max_steps: u64,
}

enum Halt {
    Error(String),
    Steps,
}

impl Machine<'_> {
    fn tick(&mut self) -> Result<(), Halt> {
        self.steps += 1;
        if self.steps > self.max_steps {
            Err(Halt::Steps)
        } else {
            Ok(())
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<i64, Halt> {
        self.tick()?;
        let err = |m: &str| Halt::Error(m.to_string());
        Ok(match e {
            Expr::Int(v) => *v,
            Expr::Var(n) => *self
                .vars
                .get(n)
                .ok_or_else(|| Halt::Error(format!("undefined variable `{n}`")))?,
            Expr::Read => {
                let w = self.input.next().ok_or_else(|| err("read past end of input"))?;
                w.parse().map_err(|_| Halt::Error(format!("input `{w}` is not an integer")))?
            }
            Expr::Neg(x) => self.eval(x)?.checked_neg().ok_or_else(|| err("overflow"))?,
            Expr::Bin(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                let of = || err("overflow");
                match *op {
                    "+" => x.checked_add(y).ok_or_else(of)?,
                    "-" => x.checked_sub(y).ok_or_else(of)?,
                    "*" => x.checked_mul(y).ok_or_else(of)?,
                    "/" => x.checked_div(y).ok_or_else(|| err("division by zero"))?,
                    "%" => x.checked_rem(y).ok_or_else(|| err("division by zero"))?,
                    "==" => (x == y) as i64,
                    "!=" => (x != y) as i64,
                    "<" => (x < y) as i64,
                    "<=" => (x <= y) as i64,
                    ">" => (x > y) as i64,
                    ">=" => (x >= y) as i64,
                    "&&" => (x != 0 && y != 0) as i64,
                    "||" => (x != 0 || y != 0) as i64,
                    _ => unreachable!("parser only builds known operators"),
                }
            }
        })
    }

    fn exec(&mut self, body: &[Stmt]) -> Result<(), Halt> {
        for s in body {
            self.tick()?;
            match s {
                Stmt::Let(n, e) => {
                    let v = self.eval(e)?;
                    self.vars.insert(n.clone(), v);
                }
                Stmt::Assign(n, e) => {
                    let v = self.eval(e)?;
                    match self.vars.get_mut(n) {
                        Some(slot) => *slot = v,
                        None => return Err(Halt::Error(format!("assignment to undeclared `{n}`"))),
                    }
                }
                Stmt::Print(e) => {
                    let v = self.eval(e)?;
                    self.out.push_str(&v.to_string());
                    self.out.push('\n');
                }
                Stmt::While(c, b) => {
                    while self.eval(c)? != 0 {
                        self.exec(b)?;
                    }
                }
                Stmt::If(c, t, f) => {
                    if self.eval(c)? != 0 {
                        self.exec(t)?;
                    } else {
                        self.exec(f)?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Program {
    pub fn run(&self, stdin: &str, max_steps: u64) -> Outcome {
        let mut m = Machine {
            vars: HashMap::new(),
            input: stdin.split_whitespace(),
            out: String::new(),
            steps: 0,
            max_steps,
        };
        match m.exec(&self.0) {
            Ok(()) => Outcome::Finished { stdout: m.out },
            Err(Halt::Error(message)) => Outcome::RuntimeError {
                stdout: m.out,
                message,
            },
            Err(Halt::Steps) => Outcome::StepLimit { stdout: m.out },
        }
    }
}
