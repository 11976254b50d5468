//! Small dense strictly convex QPs
//!
//! ```text
//! minimize ½ uᵀQu + Fᵀu   subject to   Aᵢ·u ≥ cᵢ
//! ```
//!
//! solved exactly with a dual active-set method (Goldfarb–Idnani), plus
//! reverse-mode sensitivities of the minimizer obtained by implicit
//! differentiation of the KKT conditions restricted to the active set.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("cost matrix must be symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error(
        "constraints are infeasible; row {row} cannot be satisfied (violation {violation:.3e})"
    )]
    Infeasible { row: usize, violation: f64 },
    #[error("active-set iteration did not terminate")]
    NoConvergence,
    #[error("KKT system is singular on the active set {active:?}")]
    Degenerate { active: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub f: DVector<f64>,
    /// One constraint per row: `a.row(i)·u ≥ c[i]`.
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// One multiplier per row, zero off the active set.
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpGradients {
    pub q: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        q: DMatrix<f64>,
        f: DVector<f64>,
        a: DMatrix<f64>,
        c: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = f.len();
        if n == 0 || q.shape() != (n, n) {
            return Err(QpError::Shape(format!("Q is {:?}, F has {n}", q.shape())));
        }
        if a.ncols() != n && a.nrows() > 0 {
            return Err(QpError::Shape(format!(
                "A has {} columns, expected {n}",
                a.ncols()
            )));
        }
        if a.nrows() != c.len() {
            return Err(QpError::Shape(format!(
                "A has {} rows, c has {}",
                a.nrows(),
                c.len()
            )));
        }
        let a = if a.nrows() == 0 {
            DMatrix::zeros(0, n)
        } else {
            a
        };
        Ok(QpProblem { q, f, a, c })
    }

    pub fn unconstrained(q: DMatrix<f64>, f: DVector<f64>) -> Result<Self, QpError> {
        let n = f.len();
        Self::new(q, f, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn rows(&self) -> usize {
        self.c.len()
    }

    /// Appends `u_min ≤ u ≤ u_max` as `2q` inequality rows.
    pub fn with_box(mut self, u_min: &[f64], u_max: &[f64]) -> Self {
        let n = self.dim();
        let m = self.rows();
        let mut a = DMatrix::zeros(m + 2 * n, n);
        a.rows_mut(0, m).copy_from(&self.a);
        let mut c = DVector::zeros(m + 2 * n);
        c.rows_mut(0, m).copy_from(&self.c);
        for i in 0..n {
            a[(m + 2 * i, i)] = 1.0;
            c[m + 2 * i] = u_min[i];
            a[(m + 2 * i + 1, i)] = -1.0;
            c[m + 2 * i + 1] = -u_max[i];
        }
        self.a = a;
        self.c = c;
        self
    }

    fn scale(&self) -> f64 {
        1.0 + self.f.amax() + self.q.amax() + self.a.amax() + self.c.amax()
    }

    /// Stationarity, primal feasibility and complementarity violations.
    pub fn kkt_residual(&self, u: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let stat = (&self.q * u + &self.f - self.a.transpose() * lambda).amax();
        let slack = &self.a * u - &self.c;
        let infeas = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
        let compl = slack
            .iter()
            .zip(lambda.iter())
            .map(|(s, l)| (s * l).abs())
            .fold(0.0, f64::max);
        let dual = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
        stat.max(infeas).max(compl).max(dual)
    }
}

fn check_pd(q: &DMatrix<f64>) -> Result<DMatrix<f64>, QpError> {
    let n = q.nrows();
    let tol = 1e-10 * (1.0 + q.amax());
    for i in 0..n {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > tol {
                return Err(QpError::NotPositiveDefinite);
            }
        }
    }
    let chol = q.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

/// Exact minimizer of a strictly convex QP.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    let qinv = check_pd(&p.q)?;
    let n = p.dim();
    let m = p.rows();
    let scale = p.scale();
    let feas_tol = 1e-12 * scale;

    let mut u = -(&qinv * &p.f);
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let row = |i: usize| -> DVector<f64> { p.a.row(i).transpose() };

    let max_iter = 50 * (m + n + 1);
    let mut iter = 0;
    loop {
        // most violated inactive constraint
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = row(i).dot(&u) - p.c[i];
            if s < -feas_tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((np_idx, _)) = pick else { break };
        let np = row(np_idx);
        let mut lam_p = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(QpError::NoConvergence);
            }
            let (z, r) = directions(&qinv, &p.a, &active, &np);
            // dual step length limited by multipliers that would turn negative
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let t = lam[j] / rj;
                    if t < t1 {
                        t1 = t;
                        block = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            if z.amax() <= 1e-13 * (1.0 + np.amax()) || zn <= 0.0 {
                let Some(j) = block else {
                    let violation = p.c[np_idx] - np.dot(&u);
                    return Err(QpError::Infeasible {
                        row: np_idx,
                        violation,
                    });
                };
                for (l, rl) in lam.iter_mut().zip(r.iter()) {
                    *l -= t1 * rl;
                }
                lam_p += t1;
                active.remove(j);
                lam.remove(j);
                continue;
            }
            let t2 = (p.c[np_idx] - np.dot(&u)) / zn;
            let t = t1.min(t2);
            u += &z * t;
            for (l, rl) in lam.iter_mut().zip(r.iter()) {
                *l -= t * rl;
            }
            lam_p += t;
            if t2 <= t1 {
                active.push(np_idx);
                lam.push(lam_p);
                break;
            }
            let j = block.expect("finite t1 has a blocking row");
            active.remove(j);
            lam.remove(j);
        }
    }

    let mut lambda = DVector::zeros(m);
    for (&i, &l) in active.iter().zip(&lam) {
        lambda[i] = l.max(0.0);
    }
    polish(p, &mut u, &mut lambda, &active);
    let mut order = active.clone();
    order.sort_unstable();
    let kkt_residual = p.kkt_residual(&u, &lambda);
    Ok(QpSolution {
        u,
        lambda,
        active: order,
        kkt_residual,
    })
}

/// Primal step `z = H·n` and dual step `r = N*·n` for the current working set.
fn directions(
    qinv: &DMatrix<f64>,
    a: &DMatrix<f64>,
    active: &[usize],
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (qinv * np, DVector::zeros(0));
    }
    let n = np.len();
    let mut nmat = DMatrix::zeros(n, active.len());
    for (k, &i) in active.iter().enumerate() {
        nmat.set_column(k, &a.row(i).transpose());
    }
    let qn = qinv * &nmat;
    let gram = nmat.transpose() * &qn;
    let gram_inv = gram
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| gram.try_inverse())
        .unwrap_or_else(|| DMatrix::zeros(active.len(), active.len()));
    let r = &gram_inv * (qn.transpose() * np);
    let z = qinv * np - &qn * &r;
    (z, r)
}

/// Re-solves the equality-constrained KKT system on the final working set,
/// keeping the refined point only if it stays primal and dual feasible.
fn polish(p: &QpProblem, u: &mut DVector<f64>, lambda: &mut DVector<f64>, active: &[usize]) {
    let n = p.dim();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
    for i in 0..n {
        rhs[i] = -p.f[i];
    }
    for (j, &r) in active.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + j)] = -p.a[(r, i)];
            kkt[(n + j, i)] = p.a[(r, i)];
        }
        rhs[n + j] = p.c[r];
    }
    let Some(sol) = kkt.lu().solve(&rhs) else {
        return;
    };
    let mut cand_l = DVector::zeros(p.rows());
    for (j, &r) in active.iter().enumerate() {
        cand_l[r] = sol[n + j];
    }
    let cand_u = sol.rows(0, n).into_owned();
    if cand_l.iter().any(|l| *l < 0.0) || !cand_u.iter().all(|x| x.is_finite()) {
        return;
    }
    if p.kkt_residual(&cand_u, &cand_l) <= p.kkt_residual(u, lambda) {
        *u = cand_u;
        *lambda = cand_l;
    }
}

/// Multipliers below this (relative) threshold are treated as weakly active
/// and excluded from differentiation.
const WEAK_DUAL: f64 = 1e-10;

/// Vector–Jacobian product of the minimizer: given `dL/du*`, returns
/// `dL/dQ` (symmetrized), `dL/dF`, `dL/dA`, `dL/dc`.
pub fn backward(
    p: &QpProblem,
    s: &QpSolution,
    dl_du: &DVector<f64>,
) -> Result<QpGradients, QpError> {
    let n = p.dim();
    let m = p.rows();
    let thresh = WEAK_DUAL * (1.0 + s.lambda.amax());
    let rows: Vec<usize> = s
        .active
        .iter()
        .copied()
        .filter(|&i| s.lambda[i] > thresh)
        .collect();
    let k = rows.len();
    // Kᵀ z = [g; 0] with K = [Q, −A_Sᵀ; A_S, 0]
    let mut kt = DMatrix::zeros(n + k, n + k);
    kt.view_mut((0, 0), (n, n)).copy_from(&p.q.transpose());
    for (j, &r) in rows.iter().enumerate() {
        for i in 0..n {
            kt[(i, n + j)] = p.a[(r, i)];
            kt[(n + j, i)] = -p.a[(r, i)];
        }
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(dl_du);
    let lu = kt.lu();
    if !lu.is_invertible() {
        return Err(QpError::Degenerate { active: rows });
    }
    let z = lu.solve(&rhs).ok_or(QpError::Degenerate {
        active: rows.clone(),
    })?;
    let zu = z.rows(0, n).into_owned();

    let gf = -&zu;
    let outer = &zu * s.u.transpose();
    let gq = -(&outer + outer.transpose()) * 0.5;
    let mut ga = DMatrix::zeros(m, n);
    let mut gc = DVector::zeros(m);
    for (j, &r) in rows.iter().enumerate() {
        let zl = z[n + j];
        gc[r] = zl;
        for i in 0..n {
            ga[(r, i)] = s.lambda[r] * zu[i] - zl * s.u[i];
        }
    }
    Ok(QpGradients {
        q: gq,
        f: gf,
        a: ga,
        c: gc,
    })
}

/// Diagnostic solve that never fails on infeasibility: a shared slack
/// `s ≥ 0` relaxes every row (`Aᵢ·u + s ≥ cᵢ`) at cost `½·weight·s²`.
/// Returns the solution for `u` and the slack used.
pub fn solve_relaxed(p: &QpProblem, weight: f64) -> Result<(QpSolution, f64), QpError> {
    let n = p.dim();
    let m = p.rows();
    let mut q = DMatrix::zeros(n + 1, n + 1);
    q.view_mut((0, 0), (n, n)).copy_from(&p.q);
    q[(n, n)] = weight;
    let mut f = DVector::zeros(n + 1);
    f.rows_mut(0, n).copy_from(&p.f);
    let mut a = DMatrix::zeros(m + 1, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(&p.a);
    for i in 0..m {
        a[(i, n)] = 1.0;
    }
    a[(m, n)] = 1.0;
    let mut c = DVector::zeros(m + 1);
    c.rows_mut(0, m).copy_from(&p.c);
    let aug = QpProblem::new(q, f, a, c)?;
    let sol = solve(&aug)?;
    let slack = sol.u[n];
    let u = sol.u.rows(0, n).into_owned();
    let lambda = sol.lambda.rows(0, m).into_owned();
    let active = sol.active.iter().copied().filter(|&i| i < m).collect();
    let kkt_residual = p.kkt_residual(&u, &lambda);
    Ok((
        QpSolution {
            u,
            lambda,
            active,
            kkt_residual,
        },
        slack,
    ))
}

/// QP layer on taped scalars with `Q = I`: solves on values and records
/// each output coordinate as one node whose local partials come from
/// [`backward`] with a unit upstream gradient.
pub fn solve_layer<R: Real>(
    f: &[R],
    rows: &[(Vec<R>, R)],
    box_bounds: Option<(&[f64], &[f64])>,
) -> Result<(Vec<R>, QpSolution), QpError> {
    let n = f.len();
    let m = rows.len();
    let fv = DVector::from_iterator(n, f.iter().map(|x| x.val()));
    let mut a = DMatrix::zeros(m, n);
    let mut c = DVector::zeros(m);
    for (i, (ai, ci)) in rows.iter().enumerate() {
        for j in 0..n {
            a[(i, j)] = ai[j].val();
        }
        c[i] = ci.val();
    }
    let mut p = QpProblem::new(DMatrix::identity(n, n), fv, a, c)?;
    if let Some((lo, hi)) = box_bounds {
        p = p.with_box(lo, hi);
    }
    let sol = solve(&p)?;

    let mut parents: Vec<R> = Vec::with_capacity(n + m * (n + 1));
    parents.extend_from_slice(f);
    for (ai, ci) in rows {
        parents.extend_from_slice(ai);
        parents.push(*ci);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let g = backward(&p, &sol, &e)?;
        let mut partials = Vec::with_capacity(parents.len());
        partials.extend(g.f.iter().copied());
        for i in 0..m {
            partials.extend(g.a.row(i).iter().copied());
            partials.push(g.c[i]);
        }
        out.push(R::custom(sol.u[k], &parents, &partials));
    }
    Ok((out, sol))
}
