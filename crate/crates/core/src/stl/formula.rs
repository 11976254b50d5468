use std::fmt;

use crate::stl::{PredicateShape, StlError};

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub name: String,
    pub shape: PredicateShape,
}

/// Closed time window `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self, StlError> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
            return Err(StlError::Fragment(format!(
                "time window [{start}, {end}] must satisfy 0 ≤ start < end"
            )));
        }
        Ok(Window { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalKind {
    Eventually,
    Always,
}

/// Formula of the supported fragment: a conjunction of `F`/`G`-wrapped
/// conjunctions of (possibly negated) predicates.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Pred(Predicate),
    NegPred(Predicate),
    InnerAnd(Vec<Formula>),
    Eventually { window: Window, child: Box<Formula> },
    Always { window: Window, child: Box<Formula> },
    TopAnd(Vec<Formula>),
}

/// One predicate occurrence, with the polarity it appears under.
#[derive(Debug, Clone, Copy)]
pub struct Literal<'a> {
    pub predicate: &'a Predicate,
    pub negated: bool,
}

/// A temporal operator together with the predicate literals it wraps.
#[derive(Debug, Clone)]
pub struct TemporalUnit<'a> {
    pub kind: TemporalKind,
    pub window: Window,
    pub literals: Vec<Literal<'a>>,
    /// Child was a parenthesised conjunction of more than one literal.
    pub conjunction: bool,
}

impl Formula {
    pub fn eventually(start: f64, end: f64, child: Formula) -> Result<Self, StlError> {
        Ok(Formula::Eventually {
            window: Window::new(start, end)?,
            child: Box::new(child),
        })
    }

    pub fn always(start: f64, end: f64, child: Formula) -> Result<Self, StlError> {
        Ok(Formula::Always {
            window: Window::new(start, end)?,
            child: Box::new(child),
        })
    }

    fn is_state_formula(&self) -> bool {
        match self {
            Formula::True | Formula::Pred(_) | Formula::NegPred(_) => true,
            Formula::InnerAnd(xs) => xs
                .iter()
                .all(|x| matches!(x, Formula::True | Formula::Pred(_) | Formula::NegPred(_))),
            _ => false,
        }
    }

    fn is_temporal(&self) -> bool {
        matches!(self, Formula::Eventually { .. } | Formula::Always { .. })
    }

    /// Checks the structural invariants of the fragment.
    pub fn validate(&self) -> Result<(), StlError> {
        let check_unit = |f: &Formula| -> Result<(), StlError> {
            match f {
                Formula::Eventually { window, child } | Formula::Always { window, child } => {
                    Window::new(window.start, window.end)?;
                    if child.is_temporal()
                        || matches!(**child, Formula::InnerAnd(ref xs) if xs.iter().any(Formula::is_temporal))
                    {
                        return Err(StlError::Fragment(
                            "temporal operators cannot be nested".into(),
                        ));
                    }
                    if !child.is_state_formula() {
                        return Err(StlError::Fragment(
                            "a temporal operator must wrap a conjunction of predicates".into(),
                        ));
                    }
                    if let Formula::InnerAnd(xs) = &**child {
                        if xs.is_empty() {
                            return Err(StlError::Fragment("empty conjunction".into()));
                        }
                    }
                    Ok(())
                }
                _ => Err(StlError::Fragment(
                    "top-level conjuncts must be wrapped in F[a,b] or G[a,b]".into(),
                )),
            }
        };
        match self {
            Formula::TopAnd(units) => {
                if units.is_empty() {
                    return Err(StlError::Fragment("empty conjunction".into()));
                }
                units.iter().try_for_each(check_unit)
            }
            f => check_unit(f),
        }
    }

    /// Latest time point needed to decide the formula: max end time.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::Eventually { window, .. } | Formula::Always { window, .. } => window.end,
            Formula::TopAnd(xs) | Formula::InnerAnd(xs) => {
                xs.iter().map(Formula::horizon).fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }

    /// Temporal units in order of appearance.
    pub fn units(&self) -> Vec<TemporalUnit<'_>> {
        let top: Vec<&Formula> = match self {
            Formula::TopAnd(xs) => xs.iter().collect(),
            f => vec![f],
        };
        top.into_iter()
            .filter_map(|f| {
                let (kind, window, child) = match f {
                    Formula::Eventually { window, child } => {
                        (TemporalKind::Eventually, *window, child)
                    }
                    Formula::Always { window, child } => (TemporalKind::Always, *window, child),
                    _ => return None,
                };
                let children: Vec<&Formula> = match &**child {
                    Formula::InnerAnd(xs) => xs.iter().collect(),
                    c => vec![c],
                };
                let literals: Vec<Literal<'_>> = children
                    .iter()
                    .filter_map(|c| match c {
                        Formula::Pred(p) => Some(Literal {
                            predicate: p,
                            negated: false,
                        }),
                        Formula::NegPred(p) => Some(Literal {
                            predicate: p,
                            negated: true,
                        }),
                        _ => None,
                    })
                    .collect();
                Some(TemporalUnit {
                    kind,
                    window,
                    conjunction: literals.len() > 1,
                    literals,
                })
            })
            .collect()
    }

    /// Every predicate shape referenced, in order of appearance.
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Formula::Pred(p) | Formula::NegPred(p) => out.push(p),
            Formula::InnerAnd(xs) | Formula::TopAnd(xs) => {
                xs.iter().for_each(|x| x.collect_predicates(out))
            }
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => {
                child.collect_predicates(out)
            }
            Formula::True => {}
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::Pred(p) => f.write_str(&p.name),
            Formula::NegPred(p) => write!(f, "!{}", p.name),
            Formula::InnerAnd(xs) => {
                f.write_str("(")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
            Formula::Eventually { window, child } => {
                write!(f, "F[{},{}] {child}", window.start, window.end)
            }
            Formula::Always { window, child } => {
                write!(f, "G[{},{}] {child}", window.start, window.end)
            }
            Formula::TopAnd(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}
