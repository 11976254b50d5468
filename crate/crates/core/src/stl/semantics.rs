use crate::autodiff::Real;
use crate::stl::{Formula, StlError, Window};

/// Uniformly sampled signal; `states[k]` is the state at `t = k·dt`.
/// The first two state coordinates are the planar position.
#[derive(Debug, Clone)]
pub struct Trajectory<R> {
    pub dt: f64,
    pub states: Vec<Vec<R>>,
    pub controls: Vec<Vec<R>>,
}

impl<R: Real> Trajectory<R> {
    pub fn new(dt: f64, states: Vec<Vec<R>>) -> Self {
        Trajectory {
            dt,
            states,
            controls: Vec::new(),
        }
    }

    pub fn position(&self, k: usize) -> [R; 2] {
        [self.states[k][0], self.states[k][1]]
    }

    pub fn to_f64(&self) -> Trajectory<f64> {
        let conv = |v: &Vec<Vec<R>>| -> Vec<Vec<f64>> {
            v.iter()
                .map(|s| s.iter().map(|x| x.val()).collect())
                .collect()
        };
        Trajectory {
            dt: self.dt,
            states: conv(&self.states),
            controls: conv(&self.controls),
        }
    }
}

/// Sample indices inside `t + window`. Endpoints snap to the nearest
/// sample, so an endpoint within half a step of a sample includes it.
pub fn window_samples(t: f64, window: Window, dt: f64) -> (usize, usize) {
    let lo = ((t + window.start) / dt).round().max(0.0) as usize;
    let hi = ((t + window.end) / dt).round().max(0.0) as usize;
    (lo, hi)
}

fn check_length<R>(f: &Formula, traj: &Trajectory<R>, t: f64) -> Result<usize, StlError> {
    let needed = ((t + f.horizon()) / traj.dt).round() as usize + 1;
    if traj.states.len() < needed {
        return Err(StlError::TrajectoryTooShort {
            needed,
            have: traj.states.len(),
        });
    }
    Ok((t / traj.dt).round() as usize)
}

/// Boolean semantics at sample resolution.
pub fn satisfies<R: Real>(f: &Formula, traj: &Trajectory<R>, t: f64) -> Result<bool, StlError> {
    let k = check_length(f, traj, t)?;
    Ok(sat_at(f, traj, k))
}

fn sat_at<R: Real>(f: &Formula, traj: &Trajectory<R>, k: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::Pred(p) => p.shape.h(traj.position(k)).val() >= 0.0,
        Formula::NegPred(p) => p.shape.h(traj.position(k)).val() < 0.0,
        Formula::InnerAnd(xs) | Formula::TopAnd(xs) => xs.iter().all(|x| sat_at(x, traj, k)),
        Formula::Eventually { window, child } => {
            let (lo, hi) = window_samples(k as f64 * traj.dt, *window, traj.dt);
            (lo..=hi).any(|j| sat_at(child, traj, j))
        }
        Formula::Always { window, child } => {
            let (lo, hi) = window_samples(k as f64 * traj.dt, *window, traj.dt);
            (lo..=hi).all(|j| sat_at(child, traj, j))
        }
    }
}

/// Exponential conjunction of child robustness values.
///
/// With `ρ_min = min ρᵢ`, each child contributes an effective value
/// `ρ_min·exp((ρᵢ − ρ_min)/ρ_min)` when `ρ_min < 0`,
/// `ρ_min·(2 − exp((ρ_min − ρᵢ)/ρ_min))` when `ρ_min > 0`, and `0` otherwise.
/// The result is `β·ρ_min + (1 − β)·mean(effective)`; it always has the sign
/// of `ρ_min`. `+∞` entries (from `true`) are ignored.
pub fn exp_and<R: Real>(values: &[R], beta: f64) -> R {
    let finite: Vec<R> = values
        .iter()
        .copied()
        .filter(|v| v.val() != f64::INFINITY)
        .collect();
    let Some((&first, rest)) = finite.split_first() else {
        return R::cst(f64::INFINITY);
    };
    let rmin = rest.iter().fold(first, |m, &v| m.min(v));
    let m = rmin.val();
    let n = finite.len() as f64;
    let mean_eff = if m < 0.0 {
        finite
            .iter()
            .map(|&r| rmin * ((r - rmin) / rmin).exp())
            .fold(R::cst(0.0), |a, b| a + b)
            / n
    } else if m > 0.0 {
        finite
            .iter()
            .map(|&r| rmin * (-((rmin - r) / rmin).exp() + 2.0))
            .fold(R::cst(0.0), |a, b| a + b)
            / n
    } else {
        R::cst(0.0)
    };
    rmin * beta + mean_eff * (1.0 - beta)
}

/// Disjunction through De Morgan: `−and(−ρ₁, …, −ρ_M)`.
pub fn exp_or<R: Real>(values: &[R], beta: f64) -> R {
    let neg: Vec<R> = values.iter().map(|&v| -v).collect();
    -exp_and(&neg, beta)
}

/// Smooth robustness of `f` at time `t`.
pub fn robustness<R: Real>(
    f: &Formula,
    traj: &Trajectory<R>,
    t: f64,
    beta: f64,
) -> Result<R, StlError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(StlError::InvalidBeta(beta));
    }
    let k = check_length(f, traj, t)?;
    Ok(rob_at(f, traj, k, beta))
}

fn rob_at<R: Real>(f: &Formula, traj: &Trajectory<R>, k: usize, beta: f64) -> R {
    match f {
        Formula::True => R::cst(f64::INFINITY),
        Formula::Pred(p) => p.shape.h(traj.position(k)),
        Formula::NegPred(p) => -p.shape.h(traj.position(k)),
        Formula::InnerAnd(xs) | Formula::TopAnd(xs) => {
            let vals: Vec<R> = xs.iter().map(|x| rob_at(x, traj, k, beta)).collect();
            exp_and(&vals, beta)
        }
        Formula::Eventually { window, child } => {
            let (lo, hi) = window_samples(k as f64 * traj.dt, *window, traj.dt);
            let vals: Vec<R> = (lo..=hi).map(|j| rob_at(child, traj, j, beta)).collect();
            exp_or(&vals, beta)
        }
        Formula::Always { window, child } => {
            let (lo, hi) = window_samples(k as f64 * traj.dt, *window, traj.dt);
            let vals: Vec<R> = (lo..=hi).map(|j| rob_at(child, traj, j, beta)).collect();
            exp_and(&vals, beta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::stl::{parse, PredicateShape};
    use std::collections::BTreeMap;

    fn const_traj(x: f64, n: usize) -> Trajectory<f64> {
        Trajectory::new(0.1, vec![vec![x, 0.0, 0.0, 0.0]; n])
    }

    fn half_plane_table() -> BTreeMap<String, PredicateShape> {
        // h = 100 − ‖p − (100, 0)‖ = x on the x-axis
        let mut t = BTreeMap::new();
        t.insert(
            "px".to_string(),
            PredicateShape::circle(1, [100.0, 0.0], 100.0),
        );
        t
    }

    #[test]
    fn constant_trajectories() {
        let t = half_plane_table();
        let g = parse("G[0,1] px", &t).unwrap();
        let f = parse("F[0,1] px", &t).unwrap();
        assert!(satisfies(&g, &const_traj(2.0, 11), 0.0).unwrap());
        assert!(!satisfies(&f, &const_traj(-1.0, 11), 0.0).unwrap());
        assert!(robustness(&g, &const_traj(2.0, 11), 0.0, 0.5).unwrap() > 0.0);
        assert!(robustness(&f, &const_traj(-1.0, 11), 0.0, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn too_short() {
        let t = half_plane_table();
        let g = parse("G[0,1] px", &t).unwrap();
        assert!(matches!(
            satisfies(&g, &const_traj(2.0, 10), 0.0),
            Err(StlError::TrajectoryTooShort {
                needed: 11,
                have: 10
            })
        ));
        assert!(robustness(&g, &const_traj(2.0, 10), 0.0, 0.5).is_err());
    }

    #[test]
    fn all_equal_children_collapse_to_min() {
        for beta in [0.0, 0.3, 1.0] {
            assert_eq!(exp_and(&[2.0, 2.0, 2.0], beta), 2.0);
        }
    }

    #[test]
    fn zero_minimum_gives_zero() {
        assert_eq!(exp_and(&[0.0, 3.0, 1.0], 0.5), 0.0);
        assert_eq!(exp_and(&[0.0, 3.0, 1.0], 0.0), 0.0);
    }

    #[test]
    fn two_children_hand_evaluation() {
        // ρ_min = −1: effective values −1·e⁰ and −1·e^{(3+1)/(−1)}
        let expected = -0.5 + 0.5 * (-1.0 - (-4.0f64).exp()) / 2.0;
        let got: f64 = exp_and(&[-1.0, 3.0], 0.5);
        assert!((got - expected).abs() < 1e-12);
        // ρ_min = 1: effective values 1·(2 − e⁰) and 1·(2 − e^{(1−3)/1})
        let expected = 0.5 * 1.0 + 0.5 * (1.0 + (2.0 - (-2.0f64).exp())) / 2.0;
        let got: f64 = exp_and(&[3.0, 1.0], 0.5);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn beta_one_is_min() {
        assert_eq!(exp_and(&[0.7, -0.2, 5.0], 1.0), -0.2);
        assert_eq!(exp_or(&[0.7, -0.2, 5.0], 1.0), 5.0);
    }

    #[test]
    fn gradient_flows_to_first_argmin() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(1.0);
        let y = exp_and(&[a, b], 1.0);
        let g = tape.backward(y).unwrap();
        assert_eq!((g.wrt(a), g.wrt(b)), (1.0, 0.0));
    }

    #[test]
    fn window_snapping() {
        let w = Window::new(2.0, 5.0).unwrap();
        assert_eq!(window_samples(0.0, w, 0.1), (20, 50));
        let w = Window::new(0.26, 0.5).unwrap();
        assert_eq!(window_samples(0.0, w, 0.1), (3, 5));
    }
}
