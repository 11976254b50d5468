use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::controller::{BarrierNet, ControllerState};
use stlcbf::dynamics::Dynamics;
use stlcbf::hocbf::{
    build_ledger, build_specs, should_delete, Category, DeletionState, Gamma, SynthOptions,
};
use stlcbf::scenario::ScenarioConfig;
use stlcbf::sim::{rollout, InitBox, Policy, TrainConfig};
use stlcbf::stl::{parse, PredicateShape};

fn circle_net(sign: i8, dynamics: Dynamics) -> BarrierNet {
    let mut t = BTreeMap::new();
    t.insert("a".to_string(), PredicateShape::circle(1, [2.0, 1.0], 0.7));
    let text = if sign > 0 { "F[0,3] a" } else { "G[0,3] !a" };
    let f = parse(text, &t).unwrap();
    let x0 = vec![0.0; dynamics.state_dim()];
    BarrierNet::new(f, dynamics, &x0, &SynthOptions::default(), &[4]).unwrap()
}

fn random_gamma(rng: &mut ChaCha8Rng) -> Gamma<f64> {
    let w1 = rng.random_range(0.1..3.0);
    let w2 = rng.random_range(0.05..2.0);
    if rng.random_bool(0.5) {
        Gamma::Linear { w1, w2: -w2 }
    } else {
        Gamma::Exponential { w1, w2, c: 0.01 }
    }
}

fn state(gamma: Gamma<f64>, p: Vec<f64>) -> ControllerState<f64> {
    ControllerState {
        gammas: vec![gamma],
        p: vec![p],
        deletion: DeletionState::new(1),
    }
}

/// `(γ, γ', γ'')` written out per template.
fn gamma_terms(g: &Gamma<f64>, t: f64) -> (f64, f64, f64) {
    match *g {
        Gamma::Linear { w1, w2 } => (w1 + w2 * t, w2, 0.0),
        Gamma::Exponential { w1, w2, c } => {
            let e = (-w2 * t).exp();
            (w1 * e - c, -w1 * w2 * e, w1 * w2 * w2 * e)
        }
        Gamma::Zero => (0.0, 0.0, 0.0),
    }
}

#[test]
fn double_integrator_rows_match_symbolic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (o, radius) = ([2.0, 1.0], 0.7);
    for sign in [1i8, -1] {
        let net = circle_net(sign, Dynamics::DoubleIntegrator2D);
        let s = f64::from(sign);
        for _ in 0..1000 {
            let g = random_gamma(&mut rng);
            let p = vec![rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(0.0..3.0);
            let st = state(g, p.clone());
            let row = net.constraint_row(&st, 0, &x, t).unwrap();
            let (dx, dy) = (x[0] - o[0], x[1] - o[1]);
            let (vx, vy) = (x[2], x[3]);
            let r = (dx * dx + dy * dy).sqrt();
            let dv = dx * vx + dy * vy;
            let h = s * (radius - r);
            let (gm, g1, g2) = gamma_terms(&g, t);
            let b = h + gm;
            let bdot = -s * dv / r + g1;
            let curv = -s * ((vx * vx + vy * vy) - dv * dv / (r * r)) / r;
            let expect_r = curv + g2 + p[0] * bdot + p[1] * (bdot + p[0] * b);
            let expect_a = [-s * dx / r, -s * dy / r];
            let scale = 1.0 + expect_r.abs();
            assert!(
                (row.r - expect_r).abs() < 1e-10 * scale,
                "{} vs {expect_r}",
                row.r
            );
            assert!((row.a[0] - expect_a[0]).abs() < 1e-10);
            assert!((row.a[1] - expect_a[1]).abs() < 1e-10);
        }
    }
}

#[test]
fn single_integrator_rows_match_symbolic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let net = circle_net(1, Dynamics::SingleIntegrator2D);
    for _ in 0..1000 {
        let g = random_gamma(&mut rng);
        let p1 = rng.random_range(0.1..5.0);
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let t = rng.random_range(0.0..3.0);
        let row = net.constraint_row(&state(g, vec![p1]), 0, &x, t).unwrap();
        let (dx, dy) = (x[0] - 2.0, x[1] - 1.0);
        let r = dx.hypot(dy);
        let (gm, g1, _) = gamma_terms(&g, t);
        let expect = g1 + p1 * (0.7 - r + gm);
        assert!((row.r - expect).abs() < 1e-10 * (1.0 + expect.abs()));
        assert!((row.a[0] + dx / r).abs() < 1e-12 && (row.a[1] + dy / r).abs() < 1e-12);
    }
}

#[test]
fn sampled_rows_approach_continuous_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let net = circle_net(-1, Dynamics::DoubleIntegrator2D);
    for _ in 0..50 {
        let g = random_gamma(&mut rng);
        let st = state(
            g,
            vec![rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)],
        );
        let x = [
            rng.random_range(-1.0..0.5),
            rng.random_range(-1.0..0.5),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let t = rng.random_range(0.0..2.0);
        let cont = net.constraint_row(&st, 0, &x, t).unwrap();
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4] {
            let s = net.sampled_row(&st, 0, &x, t, dt).unwrap();
            let err =
                (s.r - cont.r).abs() + (s.a[0] - cont.a[0]).abs() + (s.a[1] - cont.a[1]).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-2 * (1.0 + cont.r.abs()));
    }
}

fn discrete_psi(
    net: &BarrierNet,
    st: &ControllerState<f64>,
    x0: &[f64],
    dt: f64,
) -> Vec<(f64, f64)> {
    net.specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = st.gammas[i];
            let b0 = s.shape.h_f64([x0[0], x0[1]]) + g.eval(0.0);
            let q1 = [x0[0] + dt * x0[2], x0[1] + dt * x0[3]];
            let b1 = s.shape.h_f64(q1) + g.eval(dt);
            (b0, b1 - (1.0 - st.p[i][0] * dt) * b0)
        })
        .collect()
}

#[test]
fn squashed_parameters_satisfy_the_ledger() {
    let sc = ScenarioConfig::reference();
    let net = sc.build().unwrap();
    let dt = sc.train.dt;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for k in 0..300 {
        let mut params = net.init_params(&mut rng);
        let gain = [1.0, 4.0, 20.0][k % 3];
        params.initnet.params.iter_mut().for_each(|w| *w *= gain);
        let mut x0 = sc.init.sample(&mut rng, 4);
        x0[2] = rng.random_range(-0.5..0.5);
        x0[3] = rng.random_range(-0.5..0.5);
        let st = net
            .init_episode(&x0, &params.initnet, &params.initnet.params)
            .unwrap();
        let gammas: Vec<Gamma<f64>> = st.gammas.clone();
        for (what, slack) in net.ledger.slacks(&net.specs, &x0, &gammas) {
            assert!(slack >= -1e-12, "{what}: {slack}");
        }
        for (i, (b0, psi1)) in discrete_psi(&net, &st, &x0, dt).into_iter().enumerate() {
            assert!(
                b0 >= 0.0 && psi1 >= -1e-12,
                "{}: b0 {b0}, ψ1 {psi1}",
                net.specs[i].name
            );
            for &p in &st.p[i] {
                assert!(p > 0.0 && p <= 1.0 / dt + 1e-9);
            }
        }
    }
}

#[test]
fn rollouts_keep_every_live_barrier_nonnegative() {
    let sc = ScenarioConfig::reference();
    let net = sc.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..24 {
        let params = net.init_params(&mut rng);
        let flat = params.flat();
        let x0 = sc.init.sample(&mut rng, 4);
        let policy = Policy::Barriernet {
            net: &net,
            params: &params,
            theta: &flat,
        };
        let out = rollout::<f64>(&net, &policy, &x0, &sc.train).unwrap();
        assert!(
            out.episode.min_barrier >= -1e-6,
            "{}",
            out.episode.min_barrier
        );
        assert!(out.episode.satisfied);
    }
}

/// Largest `min(b_a, b_b)` along the line through the two centres: a dense
/// scan followed by a ternary refinement around the best sample.
fn best_common_margin(a: &PredicateShape, ga: f64, b: &PredicateShape, gb: f64) -> f64 {
    let (ca, cb) = (a.center().unwrap(), b.center().unwrap());
    let d = (cb[0] - ca[0]).hypot(cb[1] - ca[1]);
    let dir = if d > 0.0 {
        [(cb[0] - ca[0]) / d, (cb[1] - ca[1]) / d]
    } else {
        [1.0, 0.0]
    };
    let reach = d + a.bounding_radius().unwrap() + b.bounding_radius().unwrap() + 1.0;
    let m = |s: f64| {
        let p = [ca[0] + s * dir[0], ca[1] + s * dir[1]];
        (a.h_f64(p) + ga).min(b.h_f64(p) + gb)
    };
    let n = 8000;
    let step = 2.0 * reach / f64::from(n);
    let best = (0..=n)
        .map(|i| -reach + step * f64::from(i))
        .max_by(|x, y| m(*x).total_cmp(&m(*y)))
        .unwrap();
    let (mut lo, mut hi) = (best - step, best + step);
    for _ in 0..200 {
        let (l, r) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if m(l) < m(r) {
            lo = l;
        } else {
            hi = r;
        }
    }
    m(best).max(m(0.5 * (lo + hi)))
}

#[test]
fn paired_level_sets_intersect_at_the_earlier_deadline() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let opts = SynthOptions::default();
    let mut checked = 0;
    for _ in 0..400 {
        let mut t = BTreeMap::new();
        let circle = |rng: &mut ChaCha8Rng| {
            PredicateShape::circle(
                1,
                [rng.random_range(1.0..5.0), rng.random_range(1.0..5.0)],
                rng.random_range(0.3..1.0),
            )
        };
        t.insert("r1".to_string(), circle(&mut rng));
        t.insert("r2".to_string(), circle(&mut rng));
        t.insert("o".to_string(), circle(&mut rng));
        let t1 = rng.random_range(1..4) as f64;
        let text = format!("F[0,{t1}] r1 & F[{t1},{}] r2 & G[0,6] !o", t1 + 2.0);
        let f = parse(&text, &t).unwrap();
        let x0 = [0.0, 0.0, 0.0, 0.0];
        let Ok(specs) = build_specs(&f, &x0, Dynamics::DoubleIntegrator2D, &opts) else {
            continue;
        };
        let ledger = build_ledger(&specs, &opts).unwrap();
        if ledger.check_feasible(&specs, &x0).is_err() {
            continue;
        }
        for _ in 0..5 {
            let raw: Vec<f64> = (0..ledger.raw_width())
                .map(|_| rng.random_range(-6.0..6.0))
                .collect();
            let gammas = ledger.resolve::<f64>(&specs, &x0, &raw).unwrap();
            for e in &ledger.entries {
                for cb in &e.cross {
                    let (k, j) = cb.pair;
                    let (gk, gj) = (gammas[k].eval(cb.at), gammas[j].eval(cb.at));
                    let margin = best_common_margin(&specs[k].shape, gk, &specs[j].shape, gj);
                    assert!(
                        margin >= -1e-12,
                        "{} / {} at {}: {margin}",
                        specs[k].name,
                        specs[j].name,
                        cb.at
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 500, "only {checked} pairs checked");
}

#[test]
fn categories_follow_the_initial_state() {
    let mut t = BTreeMap::new();
    t.insert("a".to_string(), PredicateShape::circle(1, [0.0, 0.0], 1.0));
    let f = parse("F[0,2] a & G[1,2] a", &t).unwrap();
    let inside = build_specs(
        &f,
        &[0.0, 0.0],
        Dynamics::SingleIntegrator2D,
        &SynthOptions::default(),
    )
    .unwrap();
    let cats: Vec<Category> = inside.iter().map(|s| s.category).collect();
    assert_eq!(cats, vec![Category::I, Category::III]);
    let outside = build_specs(
        &f,
        &[3.0, 0.0],
        Dynamics::SingleIntegrator2D,
        &SynthOptions::default(),
    )
    .unwrap();
    let cats: Vec<Category> = outside.iter().map(|s| s.category).collect();
    assert_eq!(cats, vec![Category::II, Category::III]);
}

fn deletion_net() -> BarrierNet {
    let sc = ScenarioConfig::reference();
    sc.build().unwrap()
}

proptest! {
    #[test]
    fn deletion_is_sticky_and_monotone(
        path in prop::collection::vec((-1.0f64..6.0, -1.0f64..6.0), 51),
    ) {
        let net = deletion_net();
        let mut d = DeletionState::new(net.specs.len());
        let mut before = vec![false; net.specs.len()];
        for (k, &(x, y)) in path.iter().enumerate() {
            let t = k as f64 * 0.1;
            d.update(&net.specs, [x, y], t);
            for (i, (&now, &was)) in d.flags().iter().zip(&before).enumerate() {
                prop_assert!(now || !was, "spec {} revived at t = {}", i, t);
            }
            before = d.flags().to_vec();
        }
        for (i, s) in net.specs.iter().enumerate() {
            if let Some(tb) = s.deletion.deadline() {
                if tb < 5.0 - 1e-9 {
                    prop_assert!(d.is_deleted(i), "{} alive after its deadline", s.name);
                }
            }
        }
    }

    #[test]
    fn predicate_deletion_needs_the_window_to_open(h in -1.0f64..1.0, t in 0.0f64..5.0) {
        let net = deletion_net();
        let reg2 = net.specs.iter().find(|s| s.name == "reg2").unwrap();
        let del = should_delete(reg2, h, t, &[h]);
        if t < 2.0 - 1e-6 {
            prop_assert!(!del);
        } else if t < 5.0 - 1e-6 {
            prop_assert_eq!(del, h > 0.0);
        } else {
            prop_assert!(del);
        }
    }
}

#[test]
fn init_box_sampling_stays_inside() {
    let b = InitBox {
        min: [0.0, -1.0],
        max: [1.0, 0.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..100 {
        let x = b.sample(&mut rng, 4);
        assert!((0.0..=1.0).contains(&x[0]) && (-1.0..=0.0).contains(&x[1]));
        assert_eq!(&x[2..], &[0.0, 0.0]);
    }
    let _ = TrainConfig::default();
}
