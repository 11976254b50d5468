//! Compilation of STL formulas into time-varying high-order control
//! barrier functions `b(x, t) = h(x) + γ(t)` and the ledger of bounds that
//! keeps their parameters mutually consistent.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Real;
use crate::dynamics::Dynamics;
use crate::squash;
use crate::stl::{Formula, PredicateShape, StlError, TemporalKind, Window};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HocbfError {
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("predicate `{name}` must be a circle to receive a time-varying barrier")]
    UnsupportedShape { name: String },
    #[error("`{name}` is required from t = 0 but h(x0) = {h0:.6} < 0")]
    InitiallyViolated { name: String, h0: f64 },
    #[error("`{name}` is category {found} at this initial state, expected {expected}")]
    CategoryMismatch {
        name: String,
        expected: Category,
        found: Category,
    },
    #[error("empty parameter interval for `{name}`{}: {detail}", partner.as_ref().map(|p| format!(" against `{p}`")).unwrap_or_default())]
    Infeasible {
        name: String,
        partner: Option<String>,
        detail: String,
    },
    #[error("relative degree {0} is not supported")]
    UnsupportedDegree(usize),
    #[error("state has {have} entries, dynamics need {need}")]
    StateDim { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Category {
    /// Satisfied at `t = 0` with window start 0: fixed barrier `b = h`.
    I,
    /// Eventually-wrapped, linear γ.
    II,
    /// Always-wrapped, exponential γ.
    III,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::I => "I",
            Category::II => "II",
            Category::III => "III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GammaTemplate {
    Zero,
    /// `γ(t) = ω₁ + ω₂·t`, `ω₁ > 0 > ω₂`.
    Linear,
    /// `γ(t) = ω₁·e^{−ω₂·t} − c`, `ω₁, ω₂ > 0`.
    Exponential {
        c: f64,
    },
}

/// A concrete γ; parameters may live on a tape.
#[derive(Debug, Clone, Copy)]
pub enum Gamma<R> {
    Zero,
    Linear { w1: R, w2: R },
    Exponential { w1: R, w2: R, c: f64 },
}

impl<R: Real> Gamma<R> {
    pub fn eval(&self, t: f64) -> R {
        match *self {
            Gamma::Zero => R::cst(0.0),
            Gamma::Linear { w1, w2 } => w1 + w2 * t,
            Gamma::Exponential { w1, w2, c } => w1 * (-(w2 * t)).exp() - c,
        }
    }

    /// `dγ/dt`.
    pub fn d1(&self, t: f64) -> R {
        match *self {
            Gamma::Zero => R::cst(0.0),
            Gamma::Linear { w2, .. } => w2,
            Gamma::Exponential { w1, w2, .. } => -(w1 * w2 * (-(w2 * t)).exp()),
        }
    }

    /// `d²γ/dt²`.
    pub fn d2(&self, t: f64) -> R {
        match *self {
            Gamma::Zero | Gamma::Linear { .. } => R::cst(0.0),
            Gamma::Exponential { w1, w2, .. } => w1 * w2 * w2 * (-(w2 * t)).exp(),
        }
    }

    pub fn to_f64(&self) -> Gamma<f64> {
        match *self {
            Gamma::Zero => Gamma::Zero,
            Gamma::Linear { w1, w2 } => Gamma::Linear {
                w1: w1.val(),
                w2: w2.val(),
            },
            Gamma::Exponential { w1, w2, c } => Gamma::Exponential {
                w1: w1.val(),
                w2: w2.val(),
                c,
            },
        }
    }

    /// Parameter pair `(ω₁, ω₂)`, if any.
    pub fn omega(&self) -> Option<(R, R)> {
        match *self {
            Gamma::Zero => None,
            Gamma::Linear { w1, w2 } | Gamma::Exponential { w1, w2, .. } => Some((w1, w2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeletionRule {
    Never,
    /// Removed once `t > t_b`.
    AtTime {
        t_b: f64,
    },
    /// Removed once `t ≥ t_a` and `h > 0`, or once the deadline `t_b` is reached.
    OnPredicateTrue {
        t_a: f64,
        t_b: f64,
    },
    /// Removed once `t ≥ t_a` and every member of the group has `h > 0`,
    /// or once the deadline `t_b` is reached.
    OnAllTrue {
        group: usize,
        t_a: f64,
        t_b: f64,
    },
}

impl DeletionRule {
    /// Last sampling instant at which the barrier still has to be nonnegative.
    pub fn deadline(&self) -> Option<f64> {
        match *self {
            DeletionRule::Never => None,
            DeletionRule::AtTime { t_b }
            | DeletionRule::OnPredicateTrue { t_b, .. }
            | DeletionRule::OnAllTrue { t_b, .. } => Some(t_b),
        }
    }
}

/// One barrier per predicate occurrence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HocbfSpec {
    /// Predicate name, prefixed with `!` for a negated occurrence.
    pub name: String,
    /// Shape with the polarity of the occurrence folded into its sign.
    pub shape: PredicateShape,
    #[serde(skip)]
    pub kind: TemporalKind,
    #[serde(skip)]
    pub window: Window,
    pub category: Category,
    pub template: GammaTemplate,
    pub relative_degree: usize,
    pub deletion: DeletionRule,
    /// Index of the temporal unit the occurrence belongs to.
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthOptions {
    pub c: f64,
    pub eps: f64,
    pub kappa: f64,
    /// Release every pair with `s_k + s_j ≤ 0` instead of only avoid–avoid.
    pub release_mixed: bool,
    /// Added to every class-K gain on top of its lower bound (continuous rows).
    pub p_floor: f64,
    /// Sampling period of the sampled-data rows; `None` selects the
    /// continuous Lie-derivative rows. When set, the ledger also demands
    /// `γ(Δt) > −h(x₁)` so the barrier is positive at the first sample.
    pub sample_dt: Option<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            c: 0.01,
            eps: 1e-3,
            kappa: 4.0,
            release_mixed: false,
            p_floor: 1.0,
            sample_dt: None,
        }
    }
}

/// Cross-predicate lower bound `γ_target(at) ≥ fixed − γ_partner(at)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossBound {
    pub at: f64,
    pub fixed: f64,
    pub partner: Option<usize>,
    /// The ordered pair `(earlier, later)` that produced the bound.
    pub pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub spec: usize,
    pub template: GammaTemplate,
    pub t_a: f64,
    pub t_b: f64,
    /// `sup h` of the occurrence (`+∞` for avoid circles).
    pub sup_h: f64,
    pub cross: Vec<CrossBound>,
    /// First raw network output consumed by this entry.
    pub raw_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaLedger {
    pub options: SynthOptions,
    /// Category II/III entries in `t_b` order.
    pub entries: Vec<LedgerEntry>,
    /// Pairs skipped because both sides are avoid tasks (or mixed, when
    /// released).
    pub released: Vec<(usize, usize)>,
}

/// Shape of a predicate occurrence.
pub fn literal_shape(shape: &PredicateShape, negated: bool) -> PredicateShape {
    if negated {
        shape.negated()
    } else {
        shape.clone()
    }
}

/// `sup_x h(x)` of a circle predicate.
pub fn sup_h(shape: &PredicateShape) -> Result<f64, HocbfError> {
    match shape {
        PredicateShape::Circle { sign, radius, .. } => {
            Ok(if *sign > 0 { *radius } else { f64::INFINITY })
        }
        _ => Err(HocbfError::UnsupportedShape {
            name: format!("{shape:?}"),
        }),
    }
}

fn position(x0: &[f64]) -> [f64; 2] {
    [x0[0], x0[1]]
}

/// Position after one unforced Euler step; velocity-free states stay put.
fn coast(x0: &[f64], dt: f64) -> [f64; 2] {
    if x0.len() >= 4 {
        [x0[0] + dt * x0[2], x0[1] + dt * x0[3]]
    } else {
        position(x0)
    }
}

struct Occurrence {
    name: String,
    shape: PredicateShape,
    kind: TemporalKind,
    window: Window,
    unit: usize,
    conjunction: bool,
}

fn occurrences(f: &Formula) -> Result<Vec<Occurrence>, HocbfError> {
    f.validate()?;
    let mut out = Vec::new();
    for (u, unit) in f.units().iter().enumerate() {
        for lit in &unit.literals {
            let name = if lit.negated {
                format!("!{}", lit.predicate.name)
            } else {
                lit.predicate.name.clone()
            };
            out.push(Occurrence {
                name,
                shape: literal_shape(&lit.predicate.shape, lit.negated),
                kind: unit.kind,
                window: unit.window,
                unit: u,
                conjunction: unit.conjunction,
            });
        }
    }
    Ok(out)
}

fn category_of(o: &Occurrence, x0: &[f64]) -> Result<Category, HocbfError> {
    let h0 = o.shape.h_f64(position(x0));
    if h0 >= 0.0 && o.window.start == 0.0 {
        return Ok(Category::I);
    }
    match o.kind {
        TemporalKind::Eventually => Ok(Category::II),
        TemporalKind::Always if o.window.start == 0.0 => Err(HocbfError::InitiallyViolated {
            name: o.name.clone(),
            h0,
        }),
        TemporalKind::Always => Ok(Category::III),
    }
}

/// Category of every predicate occurrence, in order of appearance.
pub fn categorize(f: &Formula, x0: &[f64]) -> Result<Vec<Category>, HocbfError> {
    occurrences(f)?.iter().map(|o| category_of(o, x0)).collect()
}

/// Occurrences sorted by window end, with categories taken from `x0_ref`.
pub fn build_specs(
    f: &Formula,
    x0_ref: &[f64],
    dynamics: Dynamics,
    opts: &SynthOptions,
) -> Result<Vec<HocbfSpec>, HocbfError> {
    if x0_ref.len() != dynamics.state_dim() {
        return Err(HocbfError::StateDim {
            have: x0_ref.len(),
            need: dynamics.state_dim(),
        });
    }
    let mut specs = Vec::new();
    for o in occurrences(f)? {
        let category = category_of(&o, x0_ref)?;
        let template = match category {
            Category::I => GammaTemplate::Zero,
            Category::II => GammaTemplate::Linear,
            Category::III => GammaTemplate::Exponential { c: opts.c },
        };
        if category != Category::I {
            sup_h(&o.shape).map_err(|_| HocbfError::UnsupportedShape {
                name: o.name.clone(),
            })?;
        }
        let deletion = match (category, o.kind) {
            (Category::I, _) => DeletionRule::Never,
            (_, TemporalKind::Always) => DeletionRule::AtTime { t_b: o.window.end },
            (_, TemporalKind::Eventually) if o.conjunction => DeletionRule::OnAllTrue {
                group: o.unit,
                t_a: o.window.start,
                t_b: o.window.end,
            },
            (_, TemporalKind::Eventually) => DeletionRule::OnPredicateTrue {
                t_a: o.window.start,
                t_b: o.window.end,
            },
        };
        specs.push(HocbfSpec {
            name: o.name,
            shape: o.shape,
            kind: o.kind,
            window: o.window,
            category,
            template,
            relative_degree: dynamics.relative_degree(),
            deletion,
            group: o.unit,
        });
    }
    specs.sort_by(|a, b| a.window.end.total_cmp(&b.window.end));
    Ok(specs)
}

/// Checks that `x0` induces the categories recorded in `specs`.
pub fn verify_categories(specs: &[HocbfSpec], x0: &[f64]) -> Result<(), HocbfError> {
    for s in specs {
        let o = Occurrence {
            name: s.name.clone(),
            shape: s.shape.clone(),
            kind: s.kind,
            window: s.window,
            unit: s.group,
            conjunction: false,
        };
        let found = category_of(&o, x0)?;
        if found != s.category {
            return Err(HocbfError::CategoryMismatch {
                name: s.name.clone(),
                expected: s.category,
                found,
            });
        }
    }
    Ok(())
}

/// Circle used for pairing: the exact circle for circular shapes, an
/// enclosing disk for avoid tasks and an inscribed disk for reach tasks.
fn pairing_circle(shape: &PredicateShape) -> Option<(f64, [f64; 2], f64)> {
    match shape {
        PredicateShape::Circle {
            sign,
            center,
            radius,
        } => Some((f64::from(*sign), *center, *radius)),
        PredicateShape::Superellipse {
            sign,
            center,
            semi_axes,
        } => {
            let r = if *sign > 0 {
                semi_axes[0].min(semi_axes[1])
            } else {
                shape.bounding_radius()?
            };
            Some((f64::from(*sign), *center, r))
        }
        PredicateShape::Named { .. } => None,
    }
}

/// Builds the ledger for `specs` (already sorted by window end).
pub fn build_ledger(specs: &[HocbfSpec], opts: &SynthOptions) -> Result<OmegaLedger, HocbfError> {
    let mut entries: Vec<LedgerEntry> = Vec::new();
    let mut released = Vec::new();
    let mut entry_of = vec![None; specs.len()];
    let mut raw = 0;
    for (j, s) in specs.iter().enumerate() {
        if s.category == Category::I {
            continue;
        }
        entry_of[j] = Some(entries.len());
        entries.push(LedgerEntry {
            spec: j,
            template: s.template,
            t_a: s.window.start,
            t_b: s.window.end,
            sup_h: sup_h(&s.shape).map_err(|_| HocbfError::UnsupportedShape {
                name: s.name.clone(),
            })?,
            cross: Vec::new(),
            raw_offset: raw,
        });
        raw += 2;
    }
    for j in 0..specs.len() {
        for k in 0..j {
            let (sk, sj) = (&specs[k], &specs[j]);
            if sk.category == Category::I && sj.category == Category::I {
                continue;
            }
            let (Some((sgn_k, ok, rk)), Some((sgn_j, oj, rj))) =
                (pairing_circle(&sk.shape), pairing_circle(&sj.shape))
            else {
                return Err(HocbfError::UnsupportedShape {
                    name: format!("{} / {}", sk.name, sj.name),
                });
            };
            let avoid_avoid = sgn_k < 0.0 && sgn_j < 0.0;
            let mixed = sgn_k * sgn_j < 0.0;
            if avoid_avoid || (mixed && opts.release_mixed) {
                released.push((k, j));
                continue;
            }
            let d = (ok[0] - oj[0]).hypot(ok[1] - oj[1]);
            let fixed = sgn_k * sgn_j * d - sgn_k * rk - sgn_j * rj;
            let at = sk.window.end;
            let (target, partner) = if sj.category != Category::I {
                (j, (sk.category != Category::I).then_some(k))
            } else {
                (k, None)
            };
            let e = entry_of[target].expect("target has a ledger entry");
            entries[e].cross.push(CrossBound {
                at,
                fixed,
                partner,
                pair: (k, j),
            });
        }
    }
    Ok(OmegaLedger {
        options: *opts,
        entries,
        released,
    })
}

impl OmegaLedger {
    /// Number of raw network outputs consumed by the γ parameters.
    pub fn raw_width(&self) -> usize {
        2 * self.entries.len()
    }

    /// Squashes raw outputs into γ parameters, entry by entry in `t_b`
    /// order so cross bounds see the already fixed earlier values.
    /// Returns one γ per spec (`Zero` for category I).
    pub fn resolve<R: Real>(
        &self,
        specs: &[HocbfSpec],
        x0: &[f64],
        raw: &[R],
    ) -> Result<Vec<Gamma<R>>, HocbfError> {
        let mut gammas: Vec<Gamma<R>> = vec![Gamma::Zero; specs.len()];
        for e in &self.entries {
            let s = &specs[e.spec];
            let h0 = s.shape.h_f64(position(x0));
            let first = self.first_sample(s, x0);
            let lows: Vec<(f64, R, Option<usize>)> = e
                .cross
                .iter()
                .map(|cb| {
                    let partner = cb
                        .partner
                        .map(|p| gammas[p].eval(cb.at))
                        .unwrap_or(R::cst(0.0));
                    let other = if cb.pair.0 == e.spec {
                        cb.pair.1
                    } else {
                        cb.pair.0
                    };
                    (cb.at, R::cst(cb.fixed) - partner, Some(other))
                })
                .collect();
            let (r0, r1) = (raw[e.raw_offset], raw[e.raw_offset + 1]);
            gammas[e.spec] = match e.template {
                GammaTemplate::Linear => self.linear(s, specs, e, h0, first, &lows, r0, r1)?,
                GammaTemplate::Exponential { c } => {
                    self.exponential(s, specs, e, h0, first, c, &lows, r0, r1)?
                }
                GammaTemplate::Zero => Gamma::Zero,
            };
        }
        Ok(gammas)
    }

    /// `(Δt, h(x₁))` when sampled rows need `γ(Δt) > −h(x₁)`.
    fn first_sample(&self, s: &HocbfSpec, x0: &[f64]) -> Option<(f64, f64)> {
        let dt = self.options.sample_dt?;
        (s.relative_degree >= 2).then(|| (dt, s.shape.h_f64(coast(x0, dt))))
    }

    #[allow(clippy::too_many_arguments)]
    fn linear<R: Real>(
        &self,
        s: &HocbfSpec,
        specs: &[HocbfSpec],
        e: &LedgerEntry,
        h0: f64,
        first: Option<(f64, f64)>,
        lows: &[(f64, R, Option<usize>)],
        r0: R,
        r1: R,
    ) -> Result<Gamma<R>, HocbfError> {
        let eps = self.options.eps;
        let tb = e.t_b;
        let infeasible = |partner: Option<usize>, detail: String| HocbfError::Infeasible {
            name: s.name.clone(),
            partner: partner.map(|p| specs[p].name.clone()),
            detail,
        };

        // γ(0) anchor
        let base = h0.min(0.0).abs() + eps;
        let mut a0_lo = R::cst(base);
        for &(at, l, _) in lows {
            let tau = at / tb;
            if tau < 1.0 {
                a0_lo = a0_lo.max((l + 3.0 * eps * tau) / (1.0 - tau));
            }
        }
        if let Some((dt, h1)) = first {
            if dt >= tb {
                return Err(infeasible(
                    None,
                    format!("t_b = {tb} is not beyond the first sample"),
                ));
            }
            let f = dt / tb;
            a0_lo = a0_lo.max(R::cst((-h1 + eps + 3.0 * eps * f) / (1.0 - f)));
        }
        let scale = self.options.kappa * (-h0).max(1.0);
        let a0_hi = if a0_lo.val() + eps < scale {
            R::cst(scale)
        } else {
            a0_lo + scale
        };
        let a0 = squash::interval(r0, a0_lo, a0_hi);

        // γ(t_b) anchor
        let ab_hi = R::cst(-eps);
        let mut ab_lo = R::cst(f64::NEG_INFINITY);
        let mut binding = None;
        if e.sup_h.is_finite() {
            ab_lo = R::cst(-e.sup_h + eps);
        }
        for &(at, l, other) in lows {
            let tau = at / tb;
            let cand = if tau < 1.0 {
                (l - a0 * (1.0 - tau)) / tau
            } else {
                l
            };
            if cand.val() > ab_lo.val() {
                binding = other;
            }
            ab_lo = ab_lo.max(cand);
        }
        if let Some((dt, h1)) = first {
            let f = dt / tb;
            let cand = (R::cst(-h1 + eps) - a0 * (1.0 - f)) / f;
            if cand.val() > ab_lo.val() {
                binding = None;
            }
            ab_lo = ab_lo.max(cand);
        }
        if ab_lo.val() >= ab_hi.val() - eps {
            return Err(infeasible(
                binding,
                format!(
                    "γ({tb}) must lie in ({:.6}, {:.6}]",
                    ab_lo.val(),
                    ab_hi.val()
                ),
            ));
        }
        let ab = if ab_lo.val() == f64::NEG_INFINITY {
            squash::below(r1, ab_hi)
        } else {
            squash::interval(r1, ab_lo, ab_hi)
        };
        Ok(Gamma::Linear {
            w1: a0,
            w2: (ab - a0) / tb,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn exponential<R: Real>(
        &self,
        s: &HocbfSpec,
        specs: &[HocbfSpec],
        e: &LedgerEntry,
        h0: f64,
        first: Option<(f64, f64)>,
        c: f64,
        lows: &[(f64, R, Option<usize>)],
        r0: R,
        r1: R,
    ) -> Result<Gamma<R>, HocbfError> {
        let eps = self.options.eps;
        let ta = e.t_a;
        let infeasible = |partner: Option<usize>, detail: String| HocbfError::Infeasible {
            name: s.name.clone(),
            partner: partner.map(|p| specs[p].name.clone()),
            detail,
        };
        if ta <= 0.0 || c <= eps {
            return Err(infeasible(
                None,
                format!("needs t_a > 0 and c > ε, got t_a = {ta}"),
            ));
        }
        if e.sup_h <= c {
            return Err(infeasible(
                None,
                format!("sup h = {} does not exceed c", e.sup_h),
            ));
        }
        let ln_top = (c - eps).ln();

        // ω₁ bounds
        let mut w1_lo = R::cst((c - h0).max(0.0) + eps);
        let mut w1_cap: Option<(R, Option<usize>)> = None;
        let mut binding_lo = None;
        for &(at, l, other) in lows {
            let lc = l + c;
            if lc.val() <= 0.0 {
                continue;
            }
            if at <= 0.0 {
                let cand = lc + eps;
                if cand.val() > w1_lo.val() {
                    binding_lo = other;
                }
                w1_lo = w1_lo.max(cand);
                continue;
            }
            // Need ln(ω₁/lc)/at − ln(ω₁/(c−ε))/ta ≥ 2ε and ln(ω₁/lc)/at ≥ 2ε.
            let k = 1.0 / at - 1.0 / ta;
            let rhs = lc.ln() / at - ln_top / ta + 2.0 * eps;
            if k > 0.0 {
                let cand = (rhs / k).exp().max((lc.ln() + 2.0 * eps * at).exp());
                if cand.val() > w1_lo.val() {
                    binding_lo = other;
                }
                w1_lo = w1_lo.max(cand);
            } else if k < 0.0 {
                let cand = (rhs / k).exp();
                w1_cap = Some(match w1_cap {
                    Some((cur, who)) if cur.val() <= cand.val() => (cur, who),
                    _ => (cand, other),
                });
            } else if rhs.val() > 0.0 {
                return Err(infeasible(
                    other,
                    format!("γ({at}) ≥ {:.6} contradicts γ(t_a) ≤ −ε", l.val()),
                ));
            }
        }
        // γ(Δt) > −h(x₁) caps ω₂ at ln(ω₁/d)/Δt with d = c − h(x₁) + ε.
        let first_cap = first.and_then(|(dt, h1)| {
            let d = c - h1 + eps;
            (d > 0.0).then_some((dt, d.ln()))
        });
        if let Some((dt, ln_d)) = first_cap {
            if ta <= dt {
                return Err(infeasible(
                    None,
                    format!("t_a = {ta} is not beyond the first sample"),
                ));
            }
            let k = 1.0 / dt - 1.0 / ta;
            let l = ((ln_d / dt - ln_top / ta + 3.0 * eps) / k).max(ln_d + 3.0 * eps * dt);
            w1_lo = w1_lo.max(R::cst(l.exp()));
        }
        let scale = self.options.kappa * (c - h0).max(1.0);
        let default_hi = if w1_lo.val() + eps < scale {
            R::cst(scale)
        } else {
            w1_lo + scale
        };
        let w1_hi = match w1_cap {
            Some((cap, who)) => {
                if cap.val() <= w1_lo.val() + eps {
                    return Err(infeasible(
                        who.or(binding_lo),
                        format!("ω₁ must lie in ({:.6}, {:.6})", w1_lo.val(), cap.val()),
                    ));
                }
                cap.min(default_hi)
            }
            None => default_hi,
        };
        let w1 = squash::interval(r0, w1_lo, w1_hi);

        // ω₂ bounds
        let w2_lo = ((w1.ln() - ln_top) / ta).max(R::cst(0.0)) + eps;
        let mut w2_hi: Option<(R, Option<usize>)> = None;
        for &(at, l, other) in lows {
            let lc = l + c;
            if lc.val() <= 0.0 || at <= 0.0 {
                continue;
            }
            let cand = (w1 / lc).ln() / at;
            w2_hi = Some(match w2_hi {
                Some((cur, who)) if cur.val() <= cand.val() => (cur, who),
                _ => (cand, other),
            });
        }
        if let Some((dt, ln_d)) = first_cap {
            let cand = (w1.ln() - ln_d) / dt;
            w2_hi = Some(match w2_hi {
                Some((cur, who)) if cur.val() <= cand.val() => (cur, who),
                _ => (cand, None),
            });
        }
        let w2 = match w2_hi {
            Some((hi, who)) => {
                if hi.val() <= w2_lo.val() {
                    return Err(infeasible(
                        who,
                        format!("ω₂ must lie in ({:.6}, {:.6})", w2_lo.val(), hi.val()),
                    ));
                }
                squash::interval(r1, w2_lo, hi)
            }
            None => squash::above(r1, w2_lo),
        };
        Ok(Gamma::Exponential { w1, w2, c })
    }

    /// Resolves with saturated raw outputs that push every earlier γ to the
    /// bottom of its range, the hardest case for later cross bounds.
    pub fn check_feasible(&self, specs: &[HocbfSpec], x0: &[f64]) -> Result<(), HocbfError> {
        let mut raw = vec![0.0; self.raw_width()];
        for e in &self.entries {
            let (a, b) = match e.template {
                GammaTemplate::Linear => (30.0, -30.0),
                _ => (-30.0, 30.0),
            };
            raw[e.raw_offset] = a;
            raw[e.raw_offset + 1] = b;
        }
        self.resolve::<f64>(specs, x0, &raw).map(|_| ())
    }

    /// Every ledger inequality evaluated on concrete γ values, as
    /// `(description, slack)`; a negative slack is a violation.
    pub fn slacks(
        &self,
        specs: &[HocbfSpec],
        x0: &[f64],
        gammas: &[Gamma<f64>],
    ) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for e in &self.entries {
            let s = &specs[e.spec];
            let g = gammas[e.spec];
            let h0 = s.shape.h_f64(position(x0));
            out.push((format!("{}: γ(0) > −h(x0)", s.name), g.eval(0.0) + h0));
            if let Some((dt, h1)) = self.first_sample(s, x0) {
                out.push((format!("{}: γ(Δt) > −h(x1)", s.name), g.eval(dt) + h1));
            }
            match e.template {
                GammaTemplate::Linear => {
                    out.push((format!("{}: γ(t_b) ≤ 0", s.name), -g.eval(e.t_b)));
                    if e.sup_h.is_finite() {
                        out.push((
                            format!("{}: γ(t_a) > −sup h", s.name),
                            g.eval(e.t_a) + e.sup_h,
                        ));
                    }
                }
                GammaTemplate::Exponential { .. } => {
                    out.push((format!("{}: γ(t_a) ≤ 0", s.name), -g.eval(e.t_a)));
                }
                GammaTemplate::Zero => {}
            }
            if let Some((w1, w2)) = g.omega() {
                let sign_ok = match e.template {
                    GammaTemplate::Linear => w1.min(-w2),
                    _ => w1.min(w2),
                };
                out.push((format!("{}: ω signs", s.name), sign_ok));
            }
            for cb in &e.cross {
                let partner = cb.partner.map(|p| gammas[p].eval(cb.at)).unwrap_or(0.0);
                let lhs = g.eval(cb.at);
                out.push((
                    format!(
                        "{} / {}: cross bound at t = {}",
                        specs[cb.pair.0].name, specs[cb.pair.1].name, cb.at
                    ),
                    lhs - (cb.fixed - partner),
                ));
            }
        }
        out
    }
}

/// `true` once the barrier may be dropped at time `t`; `h` is the
/// occurrence's own value and `group` holds the values of every member of
/// its group at the same sample.
pub fn should_delete(spec: &HocbfSpec, h: f64, t: f64, group: &[f64]) -> bool {
    const TOL: f64 = 1e-9;
    match spec.deletion {
        DeletionRule::Never => false,
        DeletionRule::AtTime { t_b } => t > t_b + TOL,
        DeletionRule::OnPredicateTrue { t_a, t_b } => t + TOL >= t_b || (t + TOL >= t_a && h > 0.0),
        DeletionRule::OnAllTrue { t_a, t_b, .. } => {
            t + TOL >= t_b || (t + TOL >= t_a && group.iter().all(|&v| v > 0.0))
        }
    }
}

/// Sticky per-episode deletion flags.
#[derive(Debug, Clone)]
pub struct DeletionState {
    deleted: Vec<bool>,
}

impl DeletionState {
    pub fn new(n: usize) -> Self {
        DeletionState {
            deleted: vec![false; n],
        }
    }

    /// Updates the flags for position `p` at time `t`.
    pub fn update(&mut self, specs: &[HocbfSpec], p: [f64; 2], t: f64) {
        let h: Vec<f64> = specs.iter().map(|s| s.shape.h_f64(p)).collect();
        for (i, s) in specs.iter().enumerate() {
            if self.deleted[i] {
                continue;
            }
            let group: Vec<f64> = specs
                .iter()
                .zip(&h)
                .filter(|(o, _)| o.group == s.group)
                .map(|(_, &v)| v)
                .collect();
            if should_delete(s, h[i], t, &group) {
                self.deleted[i] = true;
            }
        }
    }

    pub fn is_deleted(&self, i: usize) -> bool {
        self.deleted[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.deleted
    }
}
