//! Block-uniform integer expressions: grid shapes, tile offsets, loop bounds
//! and branch conditions. Serialized as plain strings, e.g. `"M / 128"`.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("expression parse error: {0}")]
    Parse(String),
    #[error("unbound variable {0:?}")]
    Unbound(String),
    #[error("division by zero in {0:?}")]
    DivByZero(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    CeilDiv,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    fn prec(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div | BinOp::Mod | BinOp::CeilDiv => 5,
        }
    }

    fn token(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::CeilDiv => "cdiv",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

/// Integer expression over literals, named scalars and arithmetic/boolean
/// operators. `/` is floor division; `cdiv(a, b)` is ceiling division.
/// Comparisons and boolean operators yield 0/1.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(i64),
    Var(String),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn lit(v: i64) -> Expr {
        Expr::Lit(v)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn eval(&self, env: &HashMap<String, i64>) -> Result<i64, ExprError> {
        Ok(match self {
            Expr::Lit(v) => *v,
            Expr::Var(n) => *env.get(n).ok_or_else(|| ExprError::Unbound(n.clone()))?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Not(e) => (e.eval(env)? == 0) as i64,
            Expr::Bin(op, a, b) => {
                let x = a.eval(env)?;
                let y = b.eval(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div | BinOp::Mod | BinOp::CeilDiv if y == 0 => {
                        return Err(ExprError::DivByZero(self.to_string()))
                    }
                    BinOp::Div => x.div_euclid(y),
                    BinOp::Mod => x.rem_euclid(y),
                    BinOp::CeilDiv => {
                        let q = x.div_euclid(y);
                        q + (x.rem_euclid(y) != 0) as i64
                    }
                    BinOp::Eq => (x == y) as i64,
                    BinOp::Ne => (x != y) as i64,
                    BinOp::Lt => (x < y) as i64,
                    BinOp::Le => (x <= y) as i64,
                    BinOp::Gt => (x > y) as i64,
                    BinOp::Ge => (x >= y) as i64,
                    BinOp::And => (x != 0 && y != 0) as i64,
                    BinOp::Or => (x != 0 || y != 0) as i64,
                }
            }
        })
    }

    /// Every variable name the expression reads.
    pub fn free_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(n) => {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
            Expr::Neg(e) | Expr::Not(e) => e.free_vars(out),
            Expr::Bin(_, a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn tokenize(s: &str) -> Result<Vec<Tok>, ExprError> {
    let mut toks = Vec::new();
    let b = s.as_bytes();
    let mut p = 0;
    while p < b.len() {
        let c = b[p] as char;
        match c {
            ' ' | '\t' | '\n' => p += 1,
            '0'..='9' => {
                let start = p;
                while p < b.len() && b[p].is_ascii_digit() {
                    p += 1;
                }
                let v: i64 = s[start..p]
                    .parse()
                    .map_err(|_| ExprError::Parse(format!("bad integer in {s:?}")))?;
                toks.push(Tok::Int(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = p;
                while p < b.len() && (b[p].is_ascii_alphanumeric() || b[p] == b'_') {
                    p += 1;
                }
                toks.push(Tok::Ident(s[start..p].to_string()));
            }
            '(' => {
                toks.push(Tok::LParen);
                p += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                p += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                p += 1;
            }
            '+' | '-' | '*' | '/' | '%' => {
                toks.push(Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    _ => "%",
                }));
                p += 1;
            }
            '=' | '!' | '<' | '>' | '&' | '|' => {
                let two = &s[p..(p + 2).min(s.len())];
                let tok = match two {
                    "==" => Some("=="),
                    "!=" => Some("!="),
                    "<=" => Some("<="),
                    ">=" => Some(">="),
                    "&&" => Some("&&"),
                    "||" => Some("||"),
                    _ => None,
                };
                if let Some(t) = tok {
                    toks.push(Tok::Op(t));
                    p += 2;
                } else {
                    match c {
                        '<' => toks.push(Tok::Op("<")),
                        '>' => toks.push(Tok::Op(">")),
                        '!' => toks.push(Tok::Op("!")),
                        _ => return Err(ExprError::Parse(format!("stray {c:?} in {s:?}"))),
                    }
                    p += 1;
                }
            }
            other => return Err(ExprError::Parse(format!("unexpected {other:?} in {s:?}"))),
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), ExprError> {
        if self.next().as_ref() == Some(&t) {
            Ok(())
        } else {
            Err(ExprError::Parse(format!("expected {t:?} in {:?}", self.src)))
        }
    }

    fn binop_at(&self) -> Option<BinOp> {
        let Some(Tok::Op(o)) = self.peek() else { return None };
        Some(match *o {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Mod,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    fn parse_prec(&mut self, min_prec: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_atom()?;
        while let Some(op) = self.binop_at() {
            if op.prec() < min_prec {
                break;
            }
            self.next();
            let rhs = self.parse_prec(op.prec() + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        match self.next() {
            Some(Tok::Int(v)) => Ok(Expr::Lit(v)),
            Some(Tok::Ident(name)) => {
                if name == "cdiv" {
                    self.expect(Tok::LParen)?;
                    let a = self.parse_prec(0)?;
                    self.expect(Tok::Comma)?;
                    let b = self.parse_prec(0)?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::bin(BinOp::CeilDiv, a, b))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                let e = self.parse_prec(0)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Op("-")) => Ok(Expr::Neg(Box::new(self.parse_atom()?))),
            Some(Tok::Op("!")) => Ok(Expr::Not(Box::new(self.parse_atom()?))),
            other => Err(ExprError::Parse(format!(
                "unexpected {other:?} in {:?}",
                self.src
            ))),
        }
    }
}

pub fn parse_expr(s: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(s)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        src: s,
    };
    let e = p.parse_prec(0)?;
    if p.pos != toks.len() {
        return Err(ExprError::Parse(format!("trailing tokens in {s:?}")));
    }
    Ok(e)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(e: &Expr, parent_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Lit(v) => write!(f, "{v}"),
                Expr::Var(n) => write!(f, "{n}"),
                Expr::Neg(x) => {
                    write!(f, "-")?;
                    go(x, 6, f)
                }
                Expr::Not(x) => {
                    write!(f, "!")?;
                    go(x, 6, f)
                }
                Expr::Bin(BinOp::CeilDiv, a, b) => {
                    write!(f, "cdiv(")?;
                    go(a, 0, f)?;
                    write!(f, ", ")?;
                    go(b, 0, f)?;
                    write!(f, ")")
                }
                Expr::Bin(op, a, b) => {
                    let p = op.prec();
                    let parens = p < parent_prec;
                    if parens {
                        write!(f, "(")?;
                    }
                    go(a, p, f)?;
                    write!(f, " {} ", op.token())?;
                    go(b, p + 1, f)?;
                    if parens {
                        write!(f, ")")?;
                    }
                    Ok(())
                }
            }
        }
        go(self, 0, f)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Expr::Lit(v) => s.serialize_i64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Expr, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Expr::Lit(v)),
            Raw::Str(s) => parse_expr(&s).map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, i64)]) -> HashMap<String, i64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn arithmetic_and_precedence() {
        let e = parse_expr("M / 128 + 2 * 3").unwrap();
        assert_eq!(e.eval(&env(&[("M", 256)])).unwrap(), 8);
        assert_eq!(parse_expr("(1 + 2) * 3").unwrap().eval(&env(&[])).unwrap(), 9);
        assert_eq!(parse_expr("7 / 2").unwrap().eval(&env(&[])).unwrap(), 3);
        assert_eq!(parse_expr("cdiv(7, 2)").unwrap().eval(&env(&[])).unwrap(), 4);
        assert_eq!(parse_expr("7 % 4").unwrap().eval(&env(&[])).unwrap(), 3);
        assert_eq!(parse_expr("-3 + 1").unwrap().eval(&env(&[])).unwrap(), -2);
    }

    #[test]
    fn comparisons_and_bools() {
        let e = parse_expr("i < n && !(i % 2 == 0)").unwrap();
        assert_eq!(e.eval(&env(&[("i", 3), ("n", 5)])).unwrap(), 1);
        assert_eq!(e.eval(&env(&[("i", 4), ("n", 5)])).unwrap(), 0);
        assert_eq!(e.eval(&env(&[("i", 9), ("n", 5)])).unwrap(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_expr("M %").unwrap_err(),
            ExprError::Parse(_)
        ));
        assert!(matches!(
            parse_expr("x").unwrap().eval(&env(&[])),
            Err(ExprError::Unbound(_))
        ));
        assert!(matches!(
            parse_expr("1 / 0").unwrap().eval(&env(&[])),
            Err(ExprError::DivByZero(_))
        ));
        assert!(parse_expr("M # 2").is_err());
        assert!(parse_expr("1 2").is_err());
    }

    #[test]
    fn display_round_trip() {
        for s in ["M / 128", "a + b * c", "(a + b) * c", "cdiv(M, BM)", "i < n && j >= 0"] {
            let e = parse_expr(s).unwrap();
            let back = parse_expr(&e.to_string()).unwrap();
            assert_eq!(e, back, "{s} -> {e}");
        }
    }

    #[test]
    fn json_forms() {
        let e: Expr = serde_json::from_str("\"M / 128\"").unwrap();
        assert_eq!(e, parse_expr("M / 128").unwrap());
        let l: Expr = serde_json::from_str("42").unwrap();
        assert_eq!(l, Expr::Lit(42));
        assert_eq!(serde_json::to_string(&l).unwrap(), "42");
    }
}
