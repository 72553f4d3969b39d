//! Minimal arithmetic expression evaluator behind the `custom:` activation
//! tag, `density:` measure tag, and expression-defined test functions.
//!
//! Grammar: `+ - * /`, unary minus, parentheses, numeric literals, the named
//! constant `pi`, single-argument calls `exp`, `tanh`, `sin`, `cos`, and a
//! caller-supplied variable set (`x` for activations, `t1..td` for densities,
//! `x`/`y`/`z` for test functions).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy)]
enum Func {
    Exp,
    Tanh,
    Sin,
    Cos,
}

/// A parsed expression bound to a fixed variable list.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
    source: String,
}

impl Expr {
    /// Parse `src` with the given allowed variable names (position = argument slot).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, vars };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Validation(format!(
                "unexpected trailing input at token {} in expression {:?}",
                p.pos, src
            )));
        }
        Ok(Expr {
            root,
            vars: vars.iter().map(|s| s.to_string()).collect(),
            source: src.to_string(),
        })
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.vars.len());
        eval_node(&self.root, args)
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

fn eval_node(node: &Node, args: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => args[*i],
        Node::Neg(a) => -eval_node(a, args),
        Node::Add(a, b) => eval_node(a, args) + eval_node(b, args),
        Node::Sub(a, b) => eval_node(a, args) - eval_node(b, args),
        Node::Mul(a, b) => eval_node(a, args) * eval_node(b, args),
        Node::Div(a, b) => eval_node(a, args) / eval_node(b, args),
        Node::Call(f, a) => {
            let v = eval_node(a, args);
            match f {
                Func::Exp => v.exp(),
                Func::Tanh => v.tanh(),
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i + 1 < bytes.len()
                        && ((bytes[i + 1] as char).is_ascii_digit()
                            || bytes[i + 1] == b'+'
                            || bytes[i + 1] == b'-')
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad numeric literal {:?}", text)))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::Validation(format!(
                    "unexpected character {:?} in expression {:?}",
                    other, src
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        match self.bump() {
            Some(found) if found == t => Ok(()),
            other => Err(Error::Validation(format!("expected {:?}, found {:?}", t, other))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Token::Slash) => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                let func = match name.as_str() {
                    "exp" => Some(Func::Exp),
                    "tanh" => Some(Func::Tanh),
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    _ => None,
                };
                if let Some(f) = func {
                    self.expect(Token::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen)?;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(idx));
                }
                Err(Error::Validation(format!(
                    "unknown identifier {:?} (allowed variables: {:?})",
                    name, self.vars
                )))
            }
            other => Err(Error::Validation(format!("unexpected token {:?}", other))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_unary() {
        let e = Expr::parse("1 + 2*3 - -4", &[]).unwrap();
        assert_eq!(e.eval(&[]), 11.0);
        let e = Expr::parse("(1+2)*3/2", &[]).unwrap();
        assert_eq!(e.eval(&[]), 4.5);
    }

    #[test]
    fn variables_and_functions() {
        let e = Expr::parse("tanh(x) + exp(-x)", &["x"]).unwrap();
        let x = 0.3;
        assert!((e.eval(&[x]) - (x.tanh() + (-x).exp())).abs() < 1e-15);

        let e = Expr::parse("sin(pi*t1)*cos(pi*t2)", &["t1", "t2"]).unwrap();
        let v = e.eval(&[0.5, 0.0]);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scientific_literals() {
        let e = Expr::parse("1.5e-3 + 2E2", &[]).unwrap();
        assert!((e.eval(&[]) - 200.0015).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknowns() {
        assert!(Expr::parse("y + 1", &["x"]).is_err());
        assert!(Expr::parse("sin(1", &[]).is_err());
        assert!(Expr::parse("1 $ 2", &[]).is_err());
        assert!(Expr::parse("1 2", &[]).is_err());
    }
}
