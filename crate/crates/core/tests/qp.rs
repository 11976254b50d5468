use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::autodiff::Tape;
use stlcbf::dqp::{backward, solve, solve_layer, QpError, QpProblem, QpSolution};

fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(0..=8);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
    let inside = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let c = DVector::from_fn(m, |i, _| {
        (a.row(i) * &inside)[0] - rng.random_range(0.0..1.0)
    });
    QpProblem::new(q, f, a, c).unwrap()
}

/// Hildreth's dual coordinate ascent.
fn hildreth(p: &QpProblem) -> DVector<f64> {
    let qinv = p.q.clone().cholesky().unwrap().inverse();
    let m = p.rows();
    let u0 = -(&qinv * &p.f);
    if m == 0 {
        return u0;
    }
    let h = &p.a * &qinv * p.a.transpose();
    let k = &p.a * &u0 - &p.c;
    let mut lam = DVector::<f64>::zeros(m);
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..m {
            let g = k[i] + (h.row(i) * &lam)[0];
            let next = (lam[i] - g / h[(i, i)]).max(0.0);
            change = change.max((next - lam[i]).abs());
            lam[i] = next;
        }
        if change < 1e-15 {
            break;
        }
    }
    u0 + &qinv * p.a.transpose() * lam
}

fn loss_weights(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn nondegenerate(p: &QpProblem, s: &QpSolution) -> bool {
    let slack = &p.a * &s.u - &p.c;
    (0..p.rows()).all(|i| {
        if s.active.contains(&i) {
            s.lambda[i] > 1e-5
        } else {
            slack[i] > 1e-5
        }
    })
}

#[test]
fn primal_solutions_match_iterative_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..500 {
        let p = random_problem(&mut rng);
        let s = solve(&p).unwrap();
        let oracle = hildreth(&p);
        let err = (&s.u - &oracle).amax();
        assert!(err < 1e-6, "instance {k}: error {err}");
        assert!(s.kkt_residual < 1e-9);
    }
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut checked = 0;
    for _ in 0..500 {
        let p = random_problem(&mut rng);
        let s = solve(&p).unwrap();
        if !nondegenerate(&p, &s) {
            continue;
        }
        checked += 1;
        let w = loss_weights(p.dim(), &mut rng);
        let g = backward(&p, &s, &w).unwrap();
        let loss = |p: &QpProblem| solve(p).unwrap().u.dot(&w);
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-8;
        for i in 0..p.dim() {
            let mut up = p.clone();
            up.f[i] += h;
            let mut dn = p.clone();
            dn.f[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!(close(fd, g.f[i]), "dF[{i}]: {fd} vs {}", g.f[i]);
            for j in 0..=i {
                let mut up = p.clone();
                let mut dn = p.clone();
                up.q[(i, j)] += h;
                dn.q[(i, j)] -= h;
                if i != j {
                    up.q[(j, i)] += h;
                    dn.q[(j, i)] -= h;
                }
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                let an = if i == j {
                    g.q[(i, i)]
                } else {
                    g.q[(i, j)] + g.q[(j, i)]
                };
                assert!(close(fd, an), "dQ[{i},{j}]: {fd} vs {an}");
            }
        }
        for r in 0..p.rows() {
            let mut up = p.clone();
            up.c[r] += h;
            let mut dn = p.clone();
            dn.c[r] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!(close(fd, g.c[r]), "dc[{r}]: {fd} vs {}", g.c[r]);
            for i in 0..p.dim() {
                let mut up = p.clone();
                up.a[(r, i)] += h;
                let mut dn = p.clone();
                dn.a[(r, i)] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!(
                    close(fd, g.a[(r, i)]),
                    "dA[{r},{i}]: {fd} vs {}",
                    g.a[(r, i)]
                );
            }
        }
    }
    assert!(checked > 300, "only {checked} nondegenerate instances");
}

#[test]
fn taped_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let m = rng.random_range(1..=4);
        let f: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rows: Vec<(Vec<f64>, f64)> = (0..m)
            .map(|_| {
                let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let c = rng.random_range(-1.0..0.5);
                (a, c)
            })
            .collect();
        let Ok((u, sol)) = solve_layer::<f64>(&f, &rows, None) else {
            continue;
        };
        let slack: Vec<f64> = rows
            .iter()
            .map(|(a, c)| a[0] * u[0] + a[1] * u[1] - c)
            .collect();
        let clean = (0..m).all(|i| {
            if sol.active.contains(&i) {
                sol.lambda[i] > 1e-5
            } else {
                slack[i] > 1e-5
            }
        });
        if !clean {
            continue;
        }
        let mut flat = f.clone();
        for (a, c) in &rows {
            flat.extend_from_slice(a);
            flat.push(*c);
        }
        let unpack = |v: &[f64]| -> (Vec<f64>, Vec<(Vec<f64>, f64)>) {
            let rows = v[2..].chunks(3).map(|r| (vec![r[0], r[1]], r[2])).collect();
            (v[..2].to_vec(), rows)
        };
        let loss = |v: &[f64]| {
            let (f, rows) = unpack(v);
            let (u, _) = solve_layer::<f64>(&f, &rows, None).unwrap();
            u[0] - 0.3 * u[1]
        };
        let tape = Tape::new();
        let vars = tape.vars(&flat);
        let fv = vars[..2].to_vec();
        let rv: Vec<_> = vars[2..]
            .chunks(3)
            .map(|r| (vec![r[0], r[1]], r[2]))
            .collect();
        let (u, _) = solve_layer(&fv, &rv, None).unwrap();
        let g = tape.backward(u[0] - u[1] * 0.3).unwrap();
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += 1e-6;
            let up = loss(&p);
            p[i] -= 2e-6;
            let fd = (up - loss(&p)) / 2e-6;
            let an = g.wrt(vars[i]);
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-8);
        }
    }
}

#[test]
fn infeasible_and_malformed_inputs_are_reported() {
    let q = DMatrix::identity(1, 1);
    let f = DVector::from_element(1, 0.0);
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let c = DVector::from_row_slice(&[1.0, 0.0]);
    let p = QpProblem::new(q.clone(), f.clone(), a, c).unwrap();
    assert!(matches!(solve(&p), Err(QpError::Infeasible { .. })));
    let bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
    let p = QpProblem::unconstrained(bad, f.clone()).unwrap();
    assert!(matches!(solve(&p), Err(QpError::NotPositiveDefinite)));
    assert!(QpProblem::new(q, f, DMatrix::zeros(1, 2), DVector::zeros(1)).is_err());
}
