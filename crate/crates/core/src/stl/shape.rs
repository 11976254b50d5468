use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::stl::StlError;

/// Geometric region whose signed membership function `h` defines a predicate
/// `h(x) ≥ 0` over the planar position of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateShape {
    /// `sign = +1`: `h = R − ‖p − o‖` (reach). `sign = −1`: `h = ‖p − o‖ − R` (avoid).
    Circle {
        sign: i8,
        center: [f64; 2],
        radius: f64,
    },
    /// `h = sign·(1 − ((Δx/a)⁴ + (Δy/b)⁴)^¼)`.
    Superellipse {
        sign: i8,
        center: [f64; 2],
        semi_axes: [f64; 2],
    },
    /// Alias of another entry in the shape table.
    Named { name: String },
}

/// Value, gradient and Hessian of `h` with respect to the planar position.
#[derive(Debug, Clone, Copy)]
pub struct ShapeDerivs<R> {
    pub value: R,
    pub grad: [R; 2],
    pub hess: [[R; 2]; 2],
}

impl PredicateShape {
    pub fn circle(sign: i8, center: [f64; 2], radius: f64) -> Self {
        PredicateShape::Circle {
            sign,
            center,
            radius,
        }
    }

    pub fn superellipse(sign: i8, center: [f64; 2], semi_axes: [f64; 2]) -> Self {
        PredicateShape::Superellipse {
            sign,
            center,
            semi_axes,
        }
    }

    pub fn validate(&self) -> Result<(), StlError> {
        let bad = |msg: String| Err(StlError::InvalidShape(msg));
        match self {
            PredicateShape::Circle { sign, radius, .. } => {
                if sign.abs() != 1 {
                    return bad(format!("circle sign must be ±1, got {sign}"));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return bad(format!("circle radius must be positive, got {radius}"));
                }
            }
            PredicateShape::Superellipse {
                sign, semi_axes, ..
            } => {
                if sign.abs() != 1 {
                    return bad(format!("superellipse sign must be ±1, got {sign}"));
                }
                if semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
                    return bad(format!("semi-axes must be positive, got {semi_axes:?}"));
                }
            }
            PredicateShape::Named { .. } => {}
        }
        Ok(())
    }

    /// Follows `Named` aliases through `table` to a concrete shape.
    pub fn resolve(
        &self,
        table: &BTreeMap<String, PredicateShape>,
    ) -> Result<PredicateShape, StlError> {
        let mut cur = self;
        for _ in 0..=table.len() {
            match cur {
                PredicateShape::Named { name } => {
                    cur = table.get(name).ok_or_else(|| StlError::UnknownIdentifier {
                        name: name.clone(),
                        pos: 0,
                    })?;
                }
                concrete => {
                    concrete.validate()?;
                    return Ok(concrete.clone());
                }
            }
        }
        Err(StlError::InvalidShape(
            "cyclic alias in shape table".to_string(),
        ))
    }

    pub fn sign(&self) -> i8 {
        match self {
            PredicateShape::Circle { sign, .. } | PredicateShape::Superellipse { sign, .. } => {
                *sign
            }
            PredicateShape::Named { .. } => 1,
        }
    }

    pub fn center(&self) -> Option<[f64; 2]> {
        match self {
            PredicateShape::Circle { center, .. } | PredicateShape::Superellipse { center, .. } => {
                Some(*center)
            }
            PredicateShape::Named { .. } => None,
        }
    }

    /// The same region with the opposite sign (`h ↦ −h`).
    pub fn negated(&self) -> PredicateShape {
        match self.clone() {
            PredicateShape::Circle {
                sign,
                center,
                radius,
            } => PredicateShape::Circle {
                sign: -sign,
                center,
                radius,
            },
            PredicateShape::Superellipse {
                sign,
                center,
                semi_axes,
            } => PredicateShape::Superellipse {
                sign: -sign,
                center,
                semi_axes,
            },
            named => named,
        }
    }

    /// Radius of a disk centred on the shape that contains the whole region.
    pub fn bounding_radius(&self) -> Option<f64> {
        match self {
            PredicateShape::Circle { radius, .. } => Some(*radius),
            // |Δx| ≤ a and |Δy| ≤ b on the region.
            PredicateShape::Superellipse { semi_axes, .. } => {
                Some(semi_axes[0].hypot(semi_axes[1]))
            }
            PredicateShape::Named { .. } => None,
        }
    }

    pub fn h<R: Real>(&self, p: [R; 2]) -> R {
        match self {
            PredicateShape::Circle {
                sign,
                center,
                radius,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let dist = (dx * dx + dy * dy).sqrt();
                (-dist + *radius) * f64::from(*sign)
            }
            PredicateShape::Superellipse {
                sign,
                center,
                semi_axes,
            } => {
                let u = (p[0] - center[0]) / semi_axes[0];
                let w = (p[1] - center[1]) / semi_axes[1];
                let n = (u.pow4() + w.pow4()).sqrt().sqrt();
                (-n + 1.0) * f64::from(*sign)
            }
            PredicateShape::Named { name } => {
                panic!("shape `{name}` must be resolved before evaluation")
            }
        }
    }

    pub fn h_f64(&self, p: [f64; 2]) -> f64 {
        self.h(p)
    }

    /// `h` with its first and second derivatives in closed form.
    pub fn derivs<R: Real>(&self, p: [R; 2]) -> ShapeDerivs<R> {
        match self {
            PredicateShape::Circle {
                sign,
                center,
                radius,
            } => {
                let s = f64::from(*sign);
                let d = [p[0] - center[0], p[1] - center[1]];
                let r2 = d[0] * d[0] + d[1] * d[1];
                let r = r2.sqrt();
                let inv = R::cst(1.0) / r;
                let inv3 = inv * inv * inv;
                let grad = [d[0] * inv * (-s), d[1] * inv * (-s)];
                let mut hess = [[R::cst(0.0); 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        let eye = if i == j { inv } else { R::cst(0.0) };
                        hess[i][j] = (eye - d[i] * d[j] * inv3) * (-s);
                    }
                }
                ShapeDerivs {
                    value: (-r + *radius) * s,
                    grad,
                    hess,
                }
            }
            PredicateShape::Superellipse {
                sign,
                center,
                semi_axes,
            } => {
                let s = f64::from(*sign);
                let (a, b) = (semi_axes[0], semi_axes[1]);
                let u = (p[0] - center[0]) / a;
                let w = (p[1] - center[1]) / b;
                let n = (u.pow4() + w.pow4()).sqrt().sqrt();
                let n3 = n * n * n;
                let n7 = n3 * n3 * n;
                let u2 = u * u;
                let w2 = w * w;
                let u3 = u2 * u;
                let w3 = w2 * w;
                // ∂N/∂x = u³/(a N³), ∂²N/∂x² = 3u²/(a² N³) − 3u⁶/(a² N⁷)
                let nx = u3 / (n3 * a);
                let ny = w3 / (n3 * b);
                let nxx = (u2 * 3.0 / n3 - u3 * u3 * 3.0 / n7) / (a * a);
                let nyy = (w2 * 3.0 / n3 - w3 * w3 * 3.0 / n7) / (b * b);
                let nxy = -(u3 * w3 * 3.0) / (n7 * (a * b));
                ShapeDerivs {
                    value: (-n + 1.0) * s,
                    grad: [nx * (-s), ny * (-s)],
                    hess: [[nxx * (-s), nxy * (-s)], [nxy * (-s), nyy * (-s)]],
                }
            }
            PredicateShape::Named { name } => {
                panic!("shape `{name}` must be resolved before evaluation")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(shape: &PredicateShape, p: [f64; 2]) {
        let d = shape.derivs(p);
        let h = 1e-5;
        for i in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            let g = (shape.h_f64(pp) - shape.h_f64(pm)) / (2.0 * h);
            assert!(
                (d.grad[i] - g).abs() < 1e-7,
                "grad {i}: {} vs {g}",
                d.grad[i]
            );
            let gp = shape.derivs(pp).grad;
            let gm = shape.derivs(pm).grad;
            for j in 0..2 {
                let hh = (gp[j] - gm[j]) / (2.0 * h);
                assert!((d.hess[i][j] - hh).abs() < 1e-6, "hess {i}{j}");
            }
        }
        assert!((d.value - shape.h_f64(p)).abs() < 1e-14);
    }

    #[test]
    fn circle_membership_signs() {
        let reach = PredicateShape::circle(1, [0.0, 0.0], 1.0);
        let avoid = reach.negated();
        assert!((reach.h_f64([0.5, 0.0]) - 0.5).abs() < 1e-15);
        assert!((avoid.h_f64([0.5, 0.0]) + 0.5).abs() < 1e-15);
        assert!(reach.h_f64([3.0, 0.0]) < 0.0);
    }

    #[test]
    fn superellipse_boundary_is_zero() {
        let s = PredicateShape::superellipse(1, [1.0, 2.0], [2.0, 0.5]);
        assert!(s.h_f64([3.0, 2.0]).abs() < 1e-12);
        assert!(s.h_f64([1.0, 2.5]).abs() < 1e-12);
        assert!((s.h_f64([1.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        fd_check(&PredicateShape::circle(1, [0.3, -0.2], 0.8), [1.1, 0.7]);
        fd_check(&PredicateShape::circle(-1, [0.3, -0.2], 0.8), [-1.0, 0.4]);
        fd_check(
            &PredicateShape::superellipse(-1, [2.0, 1.0], [0.7, 1.3]),
            [3.1, 0.2],
        );
    }

    #[test]
    fn validation() {
        assert!(PredicateShape::circle(1, [0.0, 0.0], 0.0)
            .validate()
            .is_err());
        assert!(PredicateShape::circle(2, [0.0, 0.0], 1.0)
            .validate()
            .is_err());
        assert!(PredicateShape::superellipse(1, [0.0, 0.0], [1.0, -1.0])
            .validate()
            .is_err());
    }

    #[test]
    fn aliases_resolve() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), PredicateShape::circle(1, [0.0, 0.0], 1.0));
        t.insert("b".to_string(), PredicateShape::Named { name: "a".into() });
        t.insert("c".to_string(), PredicateShape::Named { name: "c".into() });
        let b = PredicateShape::Named { name: "b".into() };
        assert_eq!(b.resolve(&t).unwrap(), t["a"]);
        assert!(PredicateShape::Named { name: "c".into() }
            .resolve(&t)
            .is_err());
        assert!(PredicateShape::Named { name: "z".into() }
            .resolve(&t)
            .is_err());
    }

    #[test]
    fn bounding_radius_contains_region() {
        let s = PredicateShape::superellipse(1, [0.0, 0.0], [2.0, 1.0]);
        let r = s.bounding_radius().unwrap();
        for k in 0..360 {
            let th = f64::from(k).to_radians();
            // boundary point of the superellipse along direction th
            let (c, sn) = (th.cos(), th.sin());
            let scale = ((c / 2.0).powi(4) + sn.powi(4)).powf(-0.25);
            assert!(scale <= r + 1e-12);
        }
    }
}
