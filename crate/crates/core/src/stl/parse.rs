//! Concrete syntax:
//!
//! ```text
//! top   := unit ("&" unit)*
//! unit  := ("F" | "G") "[" num "," num "]" inner
//! inner := term | "(" term ("&" term)* ")"
//! term  := ["!"] ident
//! ```

use std::collections::BTreeMap;

use crate::stl::{Formula, Predicate, PredicateShape, StlError, Window};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Eventually,
    Always,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Amp,
    Bang,
    Eof,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Num(x) => format!("number {x}"),
        Tok::Eventually => "`F`".into(),
        Tok::Always => "`G`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Amp => "`&`".into(),
        Tok::Bang => "`!`".into(),
        Tok::Eof => "end of input".into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, StlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            c if c.is_ascii_whitespace() => {
                i += 1;
                continue;
            }
            '[' => out.push((Tok::LBracket, start)),
            ']' => out.push((Tok::RBracket, start)),
            '(' => out.push((Tok::LParen, start)),
            ')' => out.push((Tok::RParen, start)),
            ',' => out.push((Tok::Comma, start)),
            '&' => out.push((Tok::Amp, start)),
            '!' => out.push((Tok::Bang, start)),
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "F" => Tok::Eventually,
                    "G" => Tok::Always,
                    w => Tok::Ident(w.to_string()),
                };
                out.push((tok, start));
                continue;
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                i += 1;
                while i < bytes.len() {
                    let b = bytes[i];
                    let prev = bytes[i - 1];
                    let exp_sign = (b == b'-' || b == b'+') && (prev == b'e' || prev == b'E');
                    if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let x: f64 = lit.parse().map_err(|_| StlError::Syntax {
                    pos: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((Tok::Num(x), start));
                continue;
            }
            other => {
                return Err(StlError::Syntax {
                    pos: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
        i += 1;
    }
    out.push((Tok::Eof, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    table: &'a BTreeMap<String, PredicateShape>,
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

    fn expect(&mut self, want: Tok) -> Result<(), StlError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(StlError::Syntax {
                pos: self.pos(),
                message: format!(
                    "expected {}, found {}",
                    describe(&want),
                    describe(self.peek())
                ),
            })
        }
    }

    fn top(&mut self) -> Result<Formula, StlError> {
        let mut units = vec![self.unit()?];
        while *self.peek() == Tok::Amp {
            self.bump();
            units.push(self.unit()?);
        }
        if *self.peek() != Tok::Eof {
            return Err(StlError::Syntax {
                pos: self.pos(),
                message: format!(
                    "expected `&` or end of input, found {}",
                    describe(self.peek())
                ),
            });
        }
        Ok(if units.len() == 1 {
            units.pop().unwrap()
        } else {
            Formula::TopAnd(units)
        })
    }

    fn unit(&mut self) -> Result<Formula, StlError> {
        let pos = self.pos();
        let kind = match self.peek() {
            Tok::Eventually | Tok::Always => self.bump(),
            Tok::Ident(_) | Tok::Bang | Tok::LParen => {
                return Err(StlError::Fragment(format!(
                    "at {pos}: top-level conjuncts must be wrapped in F[a,b] or G[a,b]"
                )))
            }
            t => {
                return Err(StlError::Syntax {
                    pos,
                    message: format!("expected `F` or `G`, found {}", describe(t)),
                })
            }
        };
        let window = self.window()?;
        let child = Box::new(self.inner()?);
        Ok(match kind {
            Tok::Eventually => Formula::Eventually { window, child },
            _ => Formula::Always { window, child },
        })
    }

    fn number(&mut self) -> Result<f64, StlError> {
        match self.bump() {
            Tok::Num(x) => Ok(x),
            t => Err(StlError::Syntax {
                pos: self.toks[self.at.saturating_sub(1)].1,
                message: format!("expected a number, found {}", describe(&t)),
            }),
        }
    }

    fn window(&mut self) -> Result<Window, StlError> {
        self.expect(Tok::LBracket)?;
        let a = self.number()?;
        self.expect(Tok::Comma)?;
        let b = self.number()?;
        self.expect(Tok::RBracket)?;
        Window::new(a, b)
    }

    fn inner(&mut self) -> Result<Formula, StlError> {
        if *self.peek() != Tok::LParen {
            return self.term();
        }
        self.bump();
        let mut terms = vec![self.term()?];
        while *self.peek() == Tok::Amp {
            self.bump();
            terms.push(self.term()?);
        }
        self.expect(Tok::RParen)?;
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Formula::InnerAnd(terms)
        })
    }

    fn term(&mut self) -> Result<Formula, StlError> {
        let negated = *self.peek() == Tok::Bang;
        if negated {
            self.bump();
        }
        let pos = self.pos();
        match self.bump() {
            Tok::Ident(name) if name == "true" && !negated => Ok(Formula::True),
            Tok::Ident(name) => {
                let entry = self
                    .table
                    .get(&name)
                    .ok_or_else(|| StlError::UnknownIdentifier {
                        name: name.clone(),
                        pos,
                    })?;
                let shape = entry.resolve(self.table)?;
                let p = Predicate { name, shape };
                Ok(if negated {
                    Formula::NegPred(p)
                } else {
                    Formula::Pred(p)
                })
            }
            Tok::Eventually | Tok::Always => Err(StlError::Fragment(format!(
                "at {pos}: temporal operators cannot be nested"
            ))),
            Tok::LParen if negated => Err(StlError::Fragment(format!(
                "at {pos}: negation may only be applied directly to a predicate"
            ))),
            t => Err(StlError::Syntax {
                pos,
                message: format!("expected a predicate name, found {}", describe(&t)),
            }),
        }
    }
}

/// Parses `text` against the predicate names declared in `table`.
pub fn parse(text: &str, table: &BTreeMap<String, PredicateShape>) -> Result<Formula, StlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0, table };
    let f = p.top()?;
    f.validate()?;
    Ok(f)
}
