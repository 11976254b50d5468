mod common;

use std::fs;
use std::path::Path;

use common::{code, s, stderr, stdout, stlcbf, write_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::scenario::ScenarioConfig;
use stlcbf::stl::{Formula, PredicateShape};
use tempfile::tempdir;

fn write_csv(path: &Path, dt: f64, points: &[[f64; 2]]) {
    let mut text = String::from("t,px,py,vx,vy,ax,ay\n");
    for (k, p) in points.iter().enumerate() {
        text.push_str(&format!("{},{},{},0,0,0,0\n", k as f64 * dt, p[0], p[1]));
    }
    fs::write(path, text).unwrap();
}

fn verdict(out: &str) -> (f64, bool) {
    let rho = out
        .lines()
        .find_map(|l| l.strip_prefix("robustness: "))
        .unwrap()
        .parse()
        .unwrap();
    let v = out
        .lines()
        .find_map(|l| l.strip_prefix("verdict: "))
        .unwrap();
    (rho, v == "satisfied")
}

#[test]
fn constant_state_in_both_regions_satisfies_the_reach_tasks() {
    let dir = tempdir().unwrap();
    let mut sc = ScenarioConfig::reference();
    sc.shapes
        .insert("reg2".into(), PredicateShape::circle(1, [3.4, 1.0], 0.6));
    let cfg = write_config(dir.path(), "overlap.toml", &sc);
    let csv = dir.path().join("still.csv");
    write_csv(&csv, 0.1, &[[3.2, 1.0]; 51]);
    let o = stlcbf(&[
        "monitor",
        s(&cfg),
        s(&csv),
        "--formula",
        "F[0,2] reg1 & F[2,5] reg2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (rho, ok) = verdict(&stdout(&o));
    assert!(ok && rho > 0.0);
}

#[test]
fn entering_an_obstacle_is_a_violation() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "ref.toml", &ScenarioConfig::reference());
    let csv = dir.path().join("crash.csv");
    let line: Vec<[f64; 2]> = (0..51)
        .map(|k| [k as f64 * 0.06, k as f64 * 0.066])
        .collect();
    write_csv(&csv, 0.1, &line);
    let o = stlcbf(&["monitor", s(&cfg), s(&csv), "--formula", "G[0,5] !obs1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (rho, ok) = verdict(&stdout(&o));
    assert!(!ok && rho < 0.0, "ρ = {rho}");
}

#[test]
fn malformed_tables_are_user_errors() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "ref.toml", &ScenarioConfig::reference());
    let cases = [
        "x,px,py,vx,vy\n0,0,0,0,0\n",
        "t,px,py,vx,vy\n0,0,zero,0,0\n",
        "t,px,py,vx,vy\n0,0,0,0,0\n0.1,0,0,0,0\n0.3,0,0,0,0\n",
        "t,px,py,vx,vy\n0,0,0,0,0\n0.1,0,0,0,0\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let p = dir.path().join(format!("bad{i}.csv"));
        fs::write(&p, text).unwrap();
        let o = stlcbf(&["monitor", s(&cfg), s(&p)]);
        assert_eq!(code(&o), 2, "case {i}: {}", stderr(&o));
    }
}

/// Boolean semantics over sample indices, with windows snapped to the grid.
fn brute(f: &Formula, pos: &[[f64; 2]], dt: f64, k: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::Pred(p) => p.shape.h_f64(pos[k]) >= 0.0,
        Formula::NegPred(p) => p.shape.h_f64(pos[k]) < 0.0,
        Formula::InnerAnd(xs) | Formula::TopAnd(xs) => xs.iter().all(|x| brute(x, pos, dt, k)),
        Formula::Eventually { window, child } | Formula::Always { window, child } => {
            let t = k as f64 * dt;
            let mut inside = (0..pos.len()).filter(|&j| {
                let s = j as f64 * dt;
                s >= t + window.start - dt / 2.0 && s <= t + window.end + dt / 2.0 - 1e-12
            });
            if matches!(f, Formula::Eventually { .. }) {
                inside.any(|j| brute(child, pos, dt, j))
            } else {
                inside.all(|j| brute(child, pos, dt, j))
            }
        }
    }
}

fn random_formula(rng: &mut ChaCha8Rng) -> String {
    let names = ["reg1", "reg2", "obs1", "obs2"];
    (0..rng.random_range(1..4))
        .map(|_| {
            let op = if rng.random_bool(0.5) { "F" } else { "G" };
            let a = rng.random_range(0..12) as f64 * 0.2;
            let b = a + rng.random_range(1..12) as f64 * 0.2;
            let terms: Vec<String> = (0..rng.random_range(1..3))
                .map(|_| {
                    let neg = if rng.random_bool(0.5) { "!" } else { "" };
                    format!("{neg}{}", names[rng.random_range(0..4)])
                })
                .collect();
            format!("{op}[{a:.1},{b:.1}] ({})", terms.join(" & "))
        })
        .collect::<Vec<_>>()
        .join(" & ")
}

#[test]
fn verdicts_match_an_independent_evaluator() {
    let dir = tempdir().unwrap();
    let sc = ScenarioConfig::reference();
    let cfg = write_config(dir.path(), "ref.toml", &sc);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dt = 0.1;
    let mut seen = [0usize; 2];
    for i in 0..100 {
        let text = random_formula(&mut rng);
        let f = stlcbf::stl::parse(&text, &sc.shapes).unwrap();
        let n = (f.horizon() / dt).round() as usize + 1 + rng.random_range(0..5);
        let mut p = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
        let pos: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let here = p;
                p[0] += rng.random_range(-0.25..0.25);
                p[1] += rng.random_range(-0.25..0.25);
                here
            })
            .collect();
        let csv = dir.path().join(format!("walk{i}.csv"));
        write_csv(&csv, dt, &pos);
        let o = stlcbf(&["monitor", s(&cfg), s(&csv), "--formula", &text]);
        assert_eq!(code(&o), 0, "{text}: {}", stderr(&o));
        let (rho, ok) = verdict(&stdout(&o));
        assert_eq!(ok, brute(&f, &pos, dt, 0), "{text}");
        if rho.abs() > 1e-9 {
            assert_eq!(rho > 0.0, ok, "{text}: ρ = {rho}");
        }
        seen[usize::from(ok)] += 1;
    }
    assert!(seen[0] > 5 && seen[1] > 5, "{seen:?}");
}
