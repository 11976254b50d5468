//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to tracked scalars ([`Var`]).
//! Each node stores its parents and the local partial derivative with
//! respect to each parent, so a single reverse sweep from a root yields the
//! gradient with respect to every leaf.
//!
//! Numerical code in this crate is written once against the [`Real`] trait
//! and instantiated both for plain `f64` (fast evaluation, no gradients) and
//! for [`Var`] (recorded on a tape).
//!
//! ```
//! use stlcbf::autodiff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let a = tape.var(1.0);
//! let b = tape.var(0.5);
//! let f = a * b.exp() + b * b;
//! let grads = tape.backward(f).unwrap();
//! assert!((grads.wrt(a) - 0.5f64.exp()).abs() < 1e-12);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("domain error in `{op}` at tape node {node}: input {input}")]
    Domain { op: OpKind, node: usize, input: f64 },
    #[error("backward root is not recorded on this tape")]
    ForeignRoot,
}

/// Kind of a recorded node. Only used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Pow4,
    Sigmoid,
    Softplus,
    Tanh,
    Relu,
    Min,
    Max,
    Abs,
    Custom,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{self:?}").to_lowercase();
        f.write_str(&s)
    }
}

#[derive(Default)]
struct TapeInner {
    values: Vec<f64>,
    ops: Vec<OpKind>,
    // node i owns parents[offsets[i]..offsets[i + 1]]
    offsets: Vec<usize>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    domain_error: Option<AdError>,
}

/// Append-only record of a computation.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let mut inner = TapeInner {
            values: Vec::with_capacity(nodes),
            ops: Vec::with_capacity(nodes),
            offsets: Vec::with_capacity(nodes + 1),
            parents: Vec::with_capacity(nodes * 2),
            partials: Vec::with_capacity(nodes * 2),
            domain_error: None,
        };
        inner.offsets.push(0);
        Self {
            inner: RefCell::new(inner),
        }
    }

    /// Creates a differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(OpKind::Leaf, value, &[], &[]);
        Var {
            tape: Some(self),
            idx,
            value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First domain error recorded by an unchecked primitive, if any.
    pub fn domain_error(&self) -> Option<AdError> {
        self.inner.borrow().domain_error.clone()
    }

    fn push(&self, op: OpKind, value: f64, parents: &[u32], partials: &[f64]) -> u32 {
        let mut t = self.inner.borrow_mut();
        let idx = t.values.len();
        t.values.push(value);
        t.ops.push(op);
        t.parents.extend_from_slice(parents);
        t.partials.extend_from_slice(partials);
        let end = t.parents.len();
        t.offsets.push(end);
        idx as u32
    }

    fn flag_domain(&self, op: OpKind, input: f64) {
        let mut t = self.inner.borrow_mut();
        if t.domain_error.is_none() {
            let node = t.values.len();
            t.domain_error = Some(AdError::Domain { op, node, input });
        }
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        matches!(v.tape, Some(t) if std::ptr::eq(t, self))
    }

    /// Reverse sweep from `root`. Fails if an unchecked primitive hit a
    /// domain error anywhere on the tape or if `root` lives elsewhere.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        if !self.owns(&root) {
            return Err(AdError::ForeignRoot);
        }
        let t = self.inner.borrow();
        if let Some(e) = &t.domain_error {
            return Err(e.clone());
        }
        let root = root.idx as usize;
        let mut adj = vec![0.0; t.values.len()];
        adj[root] = 1.0;
        for i in (0..=root).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            for k in t.offsets[i]..t.offsets[i + 1] {
                adj[t.parents[k] as usize] += g * t.partials[k];
            }
        }
        Ok(Gradients { adj })
    }
}

/// Result of a reverse sweep: adjoint of every node on the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// Derivative of the root with respect to `v`. Zero for constants and
    /// for nodes the root does not depend on.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.is_constant() {
            return 0.0;
        }
        self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

const CONST_IDX: u32 = u32::MAX;

/// A scalar that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            write!(f, "Const({})", self.value)
        } else {
            write!(f, "Var#{}({})", self.idx, self.value)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            idx: CONST_IDX,
            value,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.idx as usize)
    }

    fn unary(self, op: OpKind, value: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(value),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(op, value, &[self.idx], &[d]),
                value,
            },
        }
    }

    fn binary(self, other: Self, op: OpKind, value: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(value),
            (Some(t), None) => Var {
                tape: Some(t),
                idx: t.push(op, value, &[self.idx], &[da]),
                value,
            },
            (None, Some(t)) => Var {
                tape: Some(t),
                idx: t.push(op, value, &[other.idx], &[db]),
                value,
            },
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(op, value, &[self.idx, other.idx], &[da, db]),
                value,
            },
        }
    }

    fn flag(&self, op: OpKind, input: f64) {
        if let Some(t) = self.tape {
            t.flag_domain(op, input);
        }
    }

    /// Division that reports a zero divisor instead of recording it.
    pub fn try_div(self, rhs: Self) -> Result<Self, AdError> {
        if rhs.value == 0.0 {
            return Err(self.domain_err(OpKind::Div, rhs.value));
        }
        Ok(self / rhs)
    }

    pub fn try_ln(self) -> Result<Self, AdError> {
        if self.value <= 0.0 {
            return Err(self.domain_err(OpKind::Ln, self.value));
        }
        Ok(Real::ln(self))
    }

    pub fn try_sqrt(self) -> Result<Self, AdError> {
        if self.value <= 0.0 {
            return Err(self.domain_err(OpKind::Sqrt, self.value));
        }
        Ok(Real::sqrt(self))
    }

    fn domain_err(&self, op: OpKind, input: f64) -> AdError {
        let node = self.tape.map(|t| t.len()).unwrap_or(usize::MAX);
        AdError::Domain { op, node, input }
    }
}

/// Scalar arithmetic shared by `f64` and taped [`Var`]s.
///
/// `min`/`max` route the derivative to the first argument on ties; `relu`
/// and `abs` have derivative 0 at the kink.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn pow4(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn abs(self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;

    /// A node with externally supplied local partials (one per parent).
    fn custom(value: f64, parents: &[Self], partials: &[f64]) -> Self;

    /// `bias + Σ wᵢ·xᵢ`, recorded as a single node on a tape.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let mut value = bias.val();
        let mut parents = Vec::with_capacity(2 * weights.len() + 1);
        let mut partials = Vec::with_capacity(2 * weights.len() + 1);
        for (&w, &x) in weights.iter().zip(inputs) {
            value += w.val() * x.val();
            parents.push(w);
            partials.push(x.val());
            parents.push(x);
            partials.push(w.val());
        }
        parents.push(bias);
        partials.push(1.0);
        Self::custom(value, &parents, &partials)
    }

    fn square(self) -> Self {
        self * self
    }
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn pow4(self) -> Self {
        let s = self * self;
        s * s
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
    fn custom(value: f64, _parents: &[Self], _partials: &[f64]) -> Self {
        value
    }
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        weights
            .iter()
            .zip(inputs)
            .fold(bias, |acc, (w, x)| acc + w * x)
    }
}

impl Real for Var<'_> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn val(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(OpKind::Exp, e, e)
    }
    fn ln(self) -> Self {
        if self.value <= 0.0 {
            self.flag(OpKind::Ln, self.value);
        }
        self.unary(OpKind::Ln, self.value.ln(), 1.0 / self.value)
    }
    fn sqrt(self) -> Self {
        if self.value <= 0.0 {
            self.flag(OpKind::Sqrt, self.value);
        }
        let s = self.value.sqrt();
        self.unary(OpKind::Sqrt, s, 0.5 / s)
    }
    fn pow4(self) -> Self {
        let x = self.value;
        self.unary(OpKind::Pow4, x * x * x * x, 4.0 * x * x * x)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value);
        self.unary(OpKind::Sigmoid, s, s * (1.0 - s))
    }
    fn softplus(self) -> Self {
        self.unary(
            OpKind::Softplus,
            softplus_f64(self.value),
            sigmoid_f64(self.value),
        )
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(OpKind::Tanh, t, 1.0 - t * t)
    }
    fn relu(self) -> Self {
        if self.value > 0.0 {
            self.unary(OpKind::Relu, self.value, 1.0)
        } else {
            self.unary(OpKind::Relu, 0.0, 0.0)
        }
    }
    fn abs(self) -> Self {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(OpKind::Abs, self.value.abs(), d)
    }
    fn min(self, other: Self) -> Self {
        if other.value < self.value {
            self.binary(other, OpKind::Min, other.value, 0.0, 1.0)
        } else {
            self.binary(other, OpKind::Min, self.value, 1.0, 0.0)
        }
    }
    fn max(self, other: Self) -> Self {
        if other.value > self.value {
            self.binary(other, OpKind::Max, other.value, 0.0, 1.0)
        } else {
            self.binary(other, OpKind::Max, self.value, 1.0, 0.0)
        }
    }
    fn custom(value: f64, parents: &[Self], partials: &[f64]) -> Self {
        debug_assert_eq!(parents.len(), partials.len());
        let Some(tape) = parents.iter().find_map(|p| p.tape) else {
            return Var::constant(value);
        };
        let mut idx = Vec::with_capacity(parents.len());
        let mut d = Vec::with_capacity(parents.len());
        for (p, &g) in parents.iter().zip(partials) {
            if !p.is_constant() {
                idx.push(p.idx);
                d.push(g);
            }
        }
        Var {
            tape: Some(tape),
            idx: tape.push(OpKind::Custom, value, &idx, &d),
            value,
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            OpKind::Mul,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        if rhs.value == 0.0 {
            rhs.flag(OpKind::Div, rhs.value);
            self.flag(OpKind::Div, rhs.value);
        }
        let q = self.value / rhs.value;
        self.binary(rhs, OpKind::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self + Var::constant(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self - Var::constant(rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self * Var::constant(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self / Var::constant(rhs)
    }
}
