use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::Serialize;
use stlcbf::controller::{BarrierNet, Checkpoint, Params};
use stlcbf::hocbf::{DeletionRule, GammaTemplate};
use stlcbf::scenario::{ScenarioConfig, ScenarioError};
use stlcbf::sim::{self, curve_csv, param_rng, EvalReport, Mode};
use stlcbf::stl::{parse, robustness, satisfies, Formula, Trajectory};

use crate::error::CliError;
use crate::output::{trajectory_csv, RunDir, REPORT_SCHEMA};
use crate::svg;
use crate::TrainMode;

/// Trajectories per method drawn on the environment map.
const PLOTTED_PER_METHOD: usize = 20;

fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let sc = ScenarioConfig::load(path)?;
    debug!("loaded {} (hash {})", path.display(), sc.hash());
    Ok(sc)
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub mode: TrainMode,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut sc = load(&a.config)?;
    if let Some(s) = a.seed {
        sc.train.seed = s;
    }
    if let Some(n) = a.iterations {
        sc.train.iterations = n;
    }
    if let Some(b) = a.batch {
        sc.train.batch = b;
    }
    if let Some(lr) = a.lr {
        sc.train.lr = lr;
    }
    sc.train.validate()?;
    let mode = match a.mode {
        TrainMode::Barriernet => Mode::Barriernet,
        TrainMode::Fcnet => Mode::Fcnet,
    };
    let hash = sc.hash();
    let net = sc.build()?;
    let params = net.init_params(&mut param_rng(sc.train.seed));
    let total = sc.train.iterations;
    info!(
        "training {} for {total} iterations, batch {}, {} parameters",
        mode.name(),
        sc.train.batch,
        params.len()
    );
    let report = sim::train(&net, mode, &sc.init, &sc.train, params, |row| {
        let msg = format!(
            "iteration {:>5}/{total}: mean ρ {:+.4}, min ρ {:+.4}, objective {:+.4}",
            row.iteration, row.mean_robustness, row.min_robustness, row.mean_objective
        );
        if row.iteration % 10 == 0 || row.iteration + 1 == total {
            info!("{msg}");
        } else {
            debug!("{msg}");
        }
    })?;

    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&sc.output_dir));
    let mut run = RunDir::create(&out)?;
    let ck = Checkpoint::new(&hash, mode.name(), total, report.params.clone());
    ck.save(&run.path("checkpoint.json"))?;
    run.record("checkpoint.json");
    run.write("curve.csv", curve_csv(&report.curve).as_bytes())?;
    run.write("curve.svg", svg::learning_curve(&report.curve).as_bytes())?;
    run.finish("train", &a.config, hash, sc.train.seed)?;

    if let (Some(first), Some(last)) = (report.curve.first(), report.curve.last()) {
        println!(
            "{}: {total} iterations, mean ρ {:+.4} -> {:+.4}, min ρ at iteration 0 {:+.4}",
            mode.name(),
            first.mean_robustness,
            last.mean_robustness,
            first.min_robustness
        );
    }
    if mode == Mode::Barriernet {
        println!(
            "unsatisfied training episodes: {}, smallest barrier value {:.3e}",
            report.total_unsatisfied(),
            report.min_barrier()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn load_checkpoint(
    path: &Path,
    hash: &str,
    expect: Option<Mode>,
) -> Result<(Mode, Params), CliError> {
    let ck = Checkpoint::load(path, hash)?;
    let mode: Mode = ck.mode.parse().map_err(CliError::Usage)?;
    if let Some(want) = expect {
        if mode != want {
            return Err(CliError::Usage(format!(
                "{} holds a {} checkpoint, expected {}",
                path.display(),
                mode.name(),
                want.name()
            )));
        }
    }
    Ok((mode, ck.params))
}

#[derive(Serialize)]
struct Report<'a> {
    schema: &'static str,
    config_hash: String,
    seed: u64,
    trials: usize,
    methods: Vec<&'a EvalReport>,
}

fn table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<12} {:>7} {:>13} {:>10} {:>10} {:>10}\n",
        "method", "trials", "satisfaction", "mean ρ", "mean J", "µs/step"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>12.1}% {:>10.4} {:>10.4} {:>10.1}",
            r.mode.name(),
            r.trials,
            100.0 * r.satisfaction_rate,
            r.mean_robustness,
            r.mean_objective,
            r.mean_step_micros
        );
    }
    s
}

/// Names that occur negated in the formula.
fn avoided(f: &Formula) -> BTreeSet<String> {
    f.units()
        .iter()
        .flat_map(|u| &u.literals)
        .filter(|l| l.negated)
        .map(|l| l.predicate.name.clone())
        .collect()
}

fn write_results(
    run: &mut RunDir,
    sc: &ScenarioConfig,
    net: &BarrierNet,
    reports: &[EvalReport],
    hash: &str,
    seed: u64,
    trials: usize,
) -> Result<(), CliError> {
    let report = Report {
        schema: REPORT_SCHEMA,
        config_hash: hash.to_string(),
        seed,
        trials,
        methods: reports.iter().collect(),
    };
    run.write_json("report.json", &report)?;
    let mut paths = Vec::new();
    for r in reports {
        for (v, ep) in r.episodes.iter().enumerate() {
            let rel = format!("trajectories/{}/episode_{v:04}.csv", r.mode.name());
            run.write(&rel, &trajectory_csv(net.dynamics, sc.train.dt, ep)?)?;
            if v < PLOTTED_PER_METHOD {
                paths.push(svg::Path {
                    method: r.mode.name(),
                    points: ep.states.iter().map(|x| [x[0], x[1]]).collect(),
                });
            }
        }
    }
    let map = svg::environment(&sc.shapes, &avoided(&net.formula), &sc.init, &paths);
    run.write("environment.svg", map.as_bytes())?;
    Ok(())
}

fn run_method(
    net: &BarrierNet,
    sc: &ScenarioConfig,
    mode: Mode,
    params: &Params,
    trials: usize,
    seed: u64,
) -> Result<EvalReport, CliError> {
    info!("evaluating {} on {trials} initial states", mode.name());
    Ok(sim::evaluate(
        net, mode, params, &sc.init, &sc.train, trials, seed,
    )?)
}

pub fn eval(
    config: &Path,
    checkpoint: Option<&Path>,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let sc = load(config)?;
    let hash = sc.hash();
    let net = sc.build()?;
    let (mode, params) = match checkpoint {
        Some(p) => load_checkpoint(p, &hash, None)?,
        None => (Mode::FixedHocbf, net.init_params(&mut param_rng(seed))),
    };
    let reports = if trials == 0 {
        Vec::new()
    } else {
        vec![run_method(&net, &sc, mode, &params, trials, seed)?]
    };
    print!("{}", table(&reports));
    if let Some(dir) = out {
        let mut run = RunDir::create(dir)?;
        write_results(&mut run, &sc, &net, &reports, &hash, seed, trials)?;
        run.finish("eval", config, hash, seed)?;
    }
    Ok(())
}

pub struct CompareArgs {
    pub config: PathBuf,
    pub barriernet: Option<PathBuf>,
    pub fcnet: Option<PathBuf>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn compare(a: &CompareArgs) -> Result<(), CliError> {
    let sc = load(&a.config)?;
    let hash = sc.hash();
    let net = sc.build()?;
    let mut methods = Vec::new();
    if let Some(p) = &a.barriernet {
        methods.push(load_checkpoint(p, &hash, Some(Mode::Barriernet))?);
    }
    if let Some(p) = &a.fcnet {
        methods.push(load_checkpoint(p, &hash, Some(Mode::Fcnet))?);
    }
    methods.push((Mode::FixedHocbf, net.init_params(&mut param_rng(a.seed))));

    let mut reports = Vec::new();
    if a.trials > 0 {
        for (mode, params) in &methods {
            reports.push(run_method(&net, &sc, *mode, params, a.trials, a.seed)?);
        }
    }
    print!("{}", table(&reports));
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&sc.output_dir).join("compare"));
    let mut run = RunDir::create(&out)?;
    write_results(&mut run, &sc, &net, &reports, &hash, a.seed, a.trials)?;
    run.finish("compare", &a.config, hash, a.seed)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn csv_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a trajectory table whose leading columns are `t` and the state.
fn read_trajectory(
    path: &Path,
    names: &[&str],
    default_dt: f64,
) -> Result<Trajectory<f64>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_error(path, e.to_string()))?;
    let header = rd
        .headers()
        .map_err(|e| csv_error(path, e.to_string()))?
        .clone();
    let expected: Vec<&str> = std::iter::once("t").chain(names.iter().copied()).collect();
    let found: Vec<&str> = header.iter().take(expected.len()).map(str::trim).collect();
    if found != expected {
        return Err(csv_error(
            path,
            format!(
                "expected leading columns `{}`, found `{}`",
                expected.join(","),
                found.join(",")
            ),
        ));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e.to_string()))?;
        let mut vals = Vec::with_capacity(expected.len());
        for (j, col) in expected.iter().enumerate() {
            let cell = rec.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                csv_error(
                    path,
                    format!("line {line}, column `{col}`: `{cell}` is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_error(
                    path,
                    format!("line {line}, column `{col}` is not finite"),
                ));
            }
            vals.push(v);
        }
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    if states.is_empty() {
        return Err(csv_error(path, "no samples"));
    }
    if times[0].abs() > 1e-9 {
        return Err(csv_error(
            path,
            format!("time must start at 0, got {}", times[0]),
        ));
    }
    let dt = if times.len() > 1 {
        times[1] - times[0]
    } else {
        default_dt
    };
    if !(dt > 0.0) {
        return Err(csv_error(path, "time must increase"));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-6 * (1.0 + t.abs()) {
            return Err(csv_error(
                path,
                format!("sample {k} at t = {t} breaks the uniform step {dt}"),
            ));
        }
    }
    Ok(Trajectory::new(dt, states))
}

pub fn monitor(config: &Path, trajectory: &Path, formula: Option<&str>) -> Result<(), CliError> {
    let sc = load(config)?;
    let f = match formula {
        Some(text) => parse(text, &sc.shapes).map_err(|source| ScenarioError::Formula {
            formula: text.to_string(),
            source,
        })?,
        None => sc.parse_formula()?,
    };
    let traj = read_trajectory(trajectory, sc.dynamics.state_names(), sc.train.dt)?;
    let rho: f64 = robustness(&f, &traj, 0.0, sc.train.beta)?;
    let ok = satisfies(&f, &traj, 0.0)?;
    println!("formula: {f}");
    println!("samples: {} at dt = {}", traj.states.len(), traj.dt);
    println!("robustness: {rho}");
    println!("verdict: {}", if ok { "satisfied" } else { "violated" });
    Ok(())
}

fn template(t: &GammaTemplate) -> String {
    match t {
        GammaTemplate::Zero => "zero".into(),
        GammaTemplate::Linear => "linear".into(),
        GammaTemplate::Exponential { c } => format!("exponential (c = {c})"),
    }
}

fn deletion(d: &DeletionRule) -> String {
    match d {
        DeletionRule::Never => "never".into(),
        DeletionRule::AtTime { t_b } => format!("after t = {t_b}"),
        DeletionRule::OnPredicateTrue { t_a, t_b } => {
            format!("once satisfied in [{t_a}, {t_b}]")
        }
        DeletionRule::OnAllTrue { group, t_a, t_b } => {
            format!("once group {group} is satisfied in [{t_a}, {t_b}]")
        }
    }
}

pub fn ledger(config: &Path) -> Result<(), CliError> {
    let sc = load(config)?;
    let net = sc.build()?;
    let mut s = String::new();
    let _ = writeln!(s, "formula: {}", net.formula);
    let _ = writeln!(s, "dynamics: {:?}, config hash {}", net.dynamics, sc.hash());
    let _ = writeln!(s, "barriers:");
    for (i, sp) in net.specs.iter().enumerate() {
        let _ = writeln!(
            s,
            "  [{i}] {:<8} category {:<3} degree {} group {}  γ {}, removed {}",
            sp.name,
            sp.category.to_string(),
            sp.relative_degree,
            sp.group,
            template(&sp.template),
            deletion(&sp.deletion)
        );
    }
    let _ = writeln!(s, "parameter intervals:");
    for e in &net.ledger.entries {
        let name = &net.specs[e.spec].name;
        let _ = writeln!(
            s,
            "  {name}: {} on [{}, {}], sup h = {:.4}, raw outputs from {}",
            template(&e.template),
            e.t_a,
            e.t_b,
            e.sup_h,
            e.raw_offset
        );
        for c in &e.cross {
            let partner = match c.partner {
                Some(p) => format!(" - γ_{}({})", net.specs[p].name, c.at),
                None => String::new(),
            };
            let _ = writeln!(
                s,
                "    γ_{name}({}) ≥ {:.4}{partner}   from pair ({}, {})",
                c.at, c.fixed, net.specs[c.pair.0].name, net.specs[c.pair.1].name
            );
        }
    }
    if net.ledger.released.is_empty() {
        let _ = writeln!(s, "released pairs: none");
    } else {
        let _ = writeln!(s, "released pairs:");
        for (a, b) in &net.ledger.released {
            let _ = writeln!(s, "  ({}, {})", net.specs[*a].name, net.specs[*b].name);
        }
    }
    let _ = writeln!(s, "raw parameter width: {}", net.init_width());
    print!("{s}");
    Ok(())
}
