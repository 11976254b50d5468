//! Maps from unconstrained network outputs onto constraint sets.

use crate::autodiff::Real;

/// Output set for one network coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Squash {
    Identity,
    /// Open interval `(lo, hi)` through a sigmoid.
    Interval {
        lo: f64,
        hi: f64,
    },
    /// Open half-line `(lo, ∞)` through a softplus.
    Above {
        lo: f64,
    },
    /// Open half-line `(−∞, hi)` through a softplus.
    Below {
        hi: f64,
    },
}

impl Squash {
    pub fn apply<R: Real>(&self, raw: R) -> R {
        match *self {
            Squash::Identity => raw,
            Squash::Interval { lo, hi } => interval(raw, R::cst(lo), R::cst(hi)),
            Squash::Above { lo } => above(raw, R::cst(lo)),
            Squash::Below { hi } => below(raw, R::cst(hi)),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Squash::Identity => v.is_finite(),
            Squash::Interval { lo, hi } => v > lo && v < hi,
            Squash::Above { lo } => v > lo,
            Squash::Below { hi } => v < hi,
        }
    }
}

/// `lo + (hi − lo)·σ(raw)`; bounds may themselves be taped.
///
/// In floating point the sigmoid saturates for `|raw| ≳ 37`, so the
/// result is only guaranteed to lie in the closed interval.
pub fn interval<R: Real>(raw: R, lo: R, hi: R) -> R {
    lo + (hi - lo) * raw.sigmoid()
}

/// `lo + softplus(raw)`.
pub fn above<R: Real>(raw: R, lo: R) -> R {
    lo + raw.softplus()
}

/// `hi − softplus(raw)`.
pub fn below<R: Real>(raw: R, hi: R) -> R {
    hi - raw.softplus()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_and_offsets() {
        let s = Squash::Interval { lo: 1.0, hi: 3.0 };
        assert_eq!(s.apply(0.0), 2.0);
        assert!((Squash::Above { lo: 0.5 }.apply(0.0) - (0.5 + 2f64.ln())).abs() < 1e-15);
        assert!((Squash::Below { hi: 0.0 }.apply(0.0) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn moderate_raw_values_stay_inside() {
        let sets = [
            Squash::Interval { lo: -2.0, hi: -1.0 },
            Squash::Above { lo: 3.0 },
            Squash::Below { hi: -0.5 },
        ];
        for s in sets {
            for k in -30..=30 {
                let v = s.apply(k as f64);
                assert!(s.contains(v), "{s:?} at {k} gave {v}");
            }
        }
    }
}
