//! Closed-loop rollouts, the training objective, Adam and the training and
//! evaluation loops.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Real, Tape};
use crate::controller::{fcnet_step, BarrierNet, ControllerError, ControllerState, Params};
use crate::stl::{robustness, satisfies, StlError, Trajectory};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episode {episode} (iteration {iteration}): {source}")]
    Controller {
        iteration: usize,
        episode: usize,
        source: ControllerError,
    },
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("non-finite gradient entry {index} at iteration {iteration}")]
    NonFinite { iteration: usize, index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// InitNet + RefNet + HOCBF QP layer.
    Barriernet,
    /// RefNet output applied directly.
    Fcnet,
    /// HOCBF QP with `F = 0` and randomly drawn feasible parameters.
    FixedHocbf,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Barriernet => "barriernet",
            Mode::Fcnet => "fcnet",
            Mode::FixedHocbf => "fixed-hocbf",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "barriernet" => Ok(Mode::Barriernet),
            "fcnet" => Ok(Mode::Fcnet),
            "fixed-hocbf" => Ok(Mode::FixedHocbf),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dt: f64,
    pub cost_coeff: f64,
    /// Weight of the minimum in the exponential conjunction.
    pub beta: f64,
    pub seed: u64,
    /// Fill the `wall_ms` column of learning curves (otherwise 0).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            iterations: 500,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dt: 0.1,
            cost_coeff: 0.003,
            beta: 0.5,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return bad("Adam hyperparameters out of range");
        }
        if self.cost_coeff < 0.0 {
            return bad("cost_coeff must be non-negative");
        }
        Ok(())
    }
}

/// Axis-aligned box of initial positions; initial velocities are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl InitBox {
    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G, state_dim: usize) -> Vec<f64> {
        let px = rng.random_range(self.min[0]..=self.max[0]);
        let py = rng.random_range(self.min[1]..=self.max[1]);
        self.state([px, py], state_dim)
    }

    pub fn state(&self, p: [f64; 2], state_dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; state_dim];
        x[..2].copy_from_slice(&p);
        x
    }
}

/// Independent, platform-stable random stream number `stream` under `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PARAM_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1 << 40;
const FIXED_STREAM: u64 = (1 << 40) + 1;

/// Stream of iteration `it`'s initial-state batch.
pub fn batch_stream(it: usize) -> u64 {
    1 + it as u64
}

pub fn param_rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, PARAM_STREAM)
}

/// One closed-loop rollout, evaluated in plain floats.
#[derive(Debug, Clone, Serialize)]
pub struct Episode {
    pub x0: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub robustness: f64,
    pub cost: f64,
    pub satisfied: bool,
    /// `barriers[k][i]` is `b_i(x_k, t_k)` for barriers live at sample `k`.
    pub barriers: Vec<Vec<Option<f64>>>,
    /// Smallest live barrier value over the episode (`+∞` if none).
    pub min_barrier: f64,
    /// Mean wall time of one controller evaluation, in microseconds.
    pub step_micros: f64,
}

impl Episode {
    pub fn objective(&self) -> f64 {
        self.robustness - self.cost
    }
}

/// How a rollout obtains its controls.
pub enum Policy<'a, R> {
    Barriernet {
        net: &'a BarrierNet,
        params: &'a Params,
        theta: &'a [R],
    },
    Fcnet {
        params: &'a Params,
        theta: &'a [R],
    },
    FixedHocbf {
        net: &'a BarrierNet,
        raw: &'a [f64],
    },
}

pub struct Rollout<R> {
    pub robustness: R,
    pub cost: R,
    pub episode: Episode,
}

/// Number of Euler steps covering `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt - 1e-9).ceil().max(0.0) as usize
}

/// Forward-Euler closed-loop rollout over the formula horizon.
pub fn rollout<R: Real>(
    net: &BarrierNet,
    policy: &Policy<'_, R>,
    x0: &[f64],
    cfg: &TrainConfig,
) -> Result<Rollout<R>, ControllerError> {
    let dynamics = net.dynamics;
    let n = step_count(net.formula.horizon(), cfg.dt);
    let mut state: Option<ControllerState<R>> = match policy {
        Policy::Barriernet { net, params, theta } => {
            let ni = params.initnet.len();
            Some(net.init_episode(x0, &params.initnet, &theta[..ni])?)
        }
        Policy::FixedHocbf { net, raw } => {
            let raw: Vec<R> = raw.iter().map(|&v| R::cst(v)).collect();
            Some(net.init_from_raw(x0, &raw)?)
        }
        Policy::Fcnet { .. } => None,
    };
    let mut x: Vec<R> = x0.iter().map(|&v| R::cst(v)).collect();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut barriers = Vec::with_capacity(n + 1);
    let mut cost = R::cst(0.0);
    let mut elapsed = 0.0;
    let zero_f = vec![R::cst(0.0); dynamics.control_dim()];
    for k in 0..=n {
        let t = k as f64 * cfg.dt;
        states.push(x.clone());
        if k == n {
            if let Some(st) = state.as_mut() {
                let live = net.live_specs(st, &x, t);
                barriers.push(record_barriers(net, st, &live, &x, t));
            } else {
                barriers.push(Vec::new());
            }
            break;
        }
        let started = Instant::now();
        let u = match policy {
            Policy::Barriernet { params, theta, .. } => {
                let ni = params.initnet.len();
                let st = state.as_mut().expect("initialized");
                net.step(st, &params.refnet, &theta[ni..], &x, t, k)?.0
            }
            Policy::FixedHocbf { .. } => {
                let st = state.as_mut().expect("initialized");
                net.filter(st, &zero_f, &x, t, k)?.0
            }
            Policy::Fcnet { params, theta } => {
                let ni = params.initnet.len();
                fcnet_step(&params.refnet, &theta[ni..], &x)
            }
        };
        elapsed += started.elapsed().as_secs_f64();
        if let Some(st) = state.as_ref() {
            let live: Vec<usize> = (0..net.specs.len())
                .filter(|&i| !st.deletion.is_deleted(i))
                .collect();
            barriers.push(record_barriers(net, st, &live, &x, t));
        } else {
            barriers.push(Vec::new());
        }
        let usq = u.iter().fold(R::cst(0.0), |acc, &ui| acc + ui * ui);
        cost = cost + usq * (cfg.cost_coeff * cfg.dt);
        x = dynamics.euler_step(&x, &u, cfg.dt);
        controls.push(u);
    }
    let traj = Trajectory {
        dt: cfg.dt,
        states,
        controls,
    };
    let rho = robustness(&net.formula, &traj, 0.0, cfg.beta)
        .map_err(|e| ControllerError::Hocbf(crate::hocbf::HocbfError::Stl(e)))?;
    let plain = traj.to_f64();
    let sat = satisfies(&net.formula, &plain, 0.0)
        .map_err(|e| ControllerError::Hocbf(crate::hocbf::HocbfError::Stl(e)))?;
    let min_barrier = barriers
        .iter()
        .flatten()
        .flatten()
        .fold(f64::INFINITY, |m, &b| m.min(b));
    let episode = Episode {
        x0: x0.to_vec(),
        states: plain.states,
        controls: plain.controls,
        robustness: rho.val(),
        cost: cost.val(),
        satisfied: sat,
        barriers,
        min_barrier,
        step_micros: if n > 0 { elapsed * 1e6 / n as f64 } else { 0.0 },
    };
    Ok(Rollout {
        robustness: rho,
        cost,
        episode,
    })
}

fn record_barriers<R: Real>(
    net: &BarrierNet,
    st: &ControllerState<R>,
    live: &[usize],
    x: &[R],
    t: f64,
) -> Vec<Option<f64>> {
    let mut out = vec![None; net.specs.len()];
    for &i in live {
        out[i] = Some(net.barrier(st, i, x, t).val());
    }
    out
}

/// `(1/V)·Σ (ρᵥ − Jᵥ)`.
pub fn objective<R: Real>(terms: &[(R, R)]) -> R {
    let n = terms.len() as f64;
    terms
        .iter()
        .fold(R::cst(0.0), |acc, &(rho, cost)| acc + rho - cost)
        / n
}

/// `coeff · Σₖ ‖uₖ‖² · dt`.
pub fn control_cost(controls: &[Vec<f64>], coeff: f64, dt: f64) -> f64 {
    controls
        .iter()
        .map(|u| u.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        * coeff
        * dt
}

/// Adam on a flat parameter vector, ascending the objective.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// One ascent step; on a non-finite gradient nothing is modified and
    /// the offending index is returned.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), usize> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(i);
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub mean_robustness: f64,
    pub mean_objective: f64,
    pub min_robustness: f64,
    pub wall_ms: f64,
}

pub const CURVE_HEADER: &str = "iteration,mean_robustness,mean_objective,min_robustness,wall_ms";

/// Learning curve as CSV; floats use shortest round-trip formatting.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.mean_robustness, r.mean_objective, r.min_robustness, r.wall_ms
        ));
    }
    s
}

/// Per-iteration statistics beyond the curve, used for guarantee checks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IterationAudit {
    pub unsatisfied: usize,
    pub nonpositive_robustness: usize,
    pub min_barrier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub params: Params,
    pub curve: Vec<CurveRow>,
    pub audit: Vec<IterationAudit>,
}

impl TrainReport {
    pub fn total_unsatisfied(&self) -> usize {
        self.audit.iter().map(|a| a.unsatisfied).sum()
    }

    pub fn total_nonpositive(&self) -> usize {
        self.audit.iter().map(|a| a.nonpositive_robustness).sum()
    }

    pub fn min_barrier(&self) -> f64 {
        self.audit
            .iter()
            .map(|a| a.min_barrier)
            .fold(f64::INFINITY, f64::min)
    }
}

struct EpisodeGrad {
    grad: Vec<f64>,
    episode: Episode,
}

fn episode_gradient(
    net: &BarrierNet,
    mode: Mode,
    params: &Params,
    flat: &[f64],
    x0: &[f64],
    cfg: &TrainConfig,
) -> Result<EpisodeGrad, ControllerError> {
    let tape = Tape::with_capacity(1 << 16);
    let theta = tape.vars(flat);
    let policy = match mode {
        Mode::Barriernet => Policy::Barriernet {
            net,
            params,
            theta: &theta,
        },
        Mode::Fcnet => Policy::Fcnet {
            params,
            theta: &theta,
        },
        Mode::FixedHocbf => unreachable!("fixed-hocbf has no trainable parameters"),
    };
    let out = rollout(net, &policy, x0, cfg)?;
    let obj = (out.robustness - out.cost) / cfg.batch as f64;
    let g = tape
        .backward(obj)
        .map_err(|e| ControllerError::Checkpoint(format!("backward failed: {e}")))?;
    Ok(EpisodeGrad {
        grad: g.wrt_all(&theta),
        episode: out.episode,
    })
}

/// Trains in `mode` (`Barriernet` or `Fcnet`), calling `progress` after
/// every iteration.
pub fn train(
    net: &BarrierNet,
    mode: Mode,
    init: &InitBox,
    cfg: &TrainConfig,
    mut params: Params,
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainReport, SimError> {
    cfg.validate()?;
    if mode == Mode::FixedHocbf {
        return Err(SimError::Config("fixed-hocbf is not trainable".into()));
    }
    let mut flat = params.flat();
    let mut adam = Adam::from_config(flat.len(), cfg);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut audit = Vec::with_capacity(cfg.iterations);
    let started = Instant::now();
    let dim = net.dynamics.state_dim();
    for it in 0..cfg.iterations {
        let mut rng = rng_for(cfg.seed, batch_stream(it));
        let x0s: Vec<Vec<f64>> = (0..cfg.batch).map(|_| init.sample(&mut rng, dim)).collect();
        let results: Vec<Result<EpisodeGrad, SimError>> = x0s
            .par_iter()
            .enumerate()
            .map(|(v, x0)| {
                episode_gradient(net, mode, &params, &flat, x0, cfg).map_err(|source| {
                    SimError::Controller {
                        iteration: it,
                        episode: v,
                        source,
                    }
                })
            })
            .collect();
        let mut grad = vec![0.0; flat.len()];
        let mut rho_sum = 0.0;
        let mut obj_sum = 0.0;
        let mut rho_min = f64::INFINITY;
        let mut a = IterationAudit {
            min_barrier: f64::INFINITY,
            ..Default::default()
        };
        for r in results {
            let eg = r?;
            for (g, e) in grad.iter_mut().zip(&eg.grad) {
                *g += e;
            }
            let ep = &eg.episode;
            rho_sum += ep.robustness;
            obj_sum += ep.objective();
            rho_min = rho_min.min(ep.robustness);
            a.unsatisfied += usize::from(!ep.satisfied);
            a.nonpositive_robustness += usize::from(ep.robustness <= 0.0);
            a.min_barrier = a.min_barrier.min(ep.min_barrier);
        }
        let v = cfg.batch as f64;
        let row = CurveRow {
            iteration: it,
            mean_robustness: rho_sum / v,
            mean_objective: obj_sum / v,
            min_robustness: rho_min,
            wall_ms: if cfg.record_wall_time {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        };
        progress(&row);
        curve.push(row);
        audit.push(a);
        adam.ascend(&mut flat, &grad)
            .map_err(|index| SimError::NonFinite {
                iteration: it,
                index,
            })?;
        params.set_flat(&flat);
    }
    Ok(TrainReport {
        mode,
        params,
        curve,
        audit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub trials: usize,
    pub satisfaction_rate: f64,
    pub mean_robustness: f64,
    pub min_robustness: f64,
    pub mean_cost: f64,
    pub mean_objective: f64,
    pub mean_step_micros: f64,
    pub min_barrier: f64,
    #[serde(skip)]
    pub episodes: Vec<Episode>,
}

/// Initial states shared by every evaluation under `seed`.
pub fn eval_initial_states(init: &InitBox, dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, EVAL_STREAM);
    (0..n).map(|_| init.sample(&mut rng, dim)).collect()
}

/// Raw InitNet-shaped draws `N(0, 1)` for the fixed-parameter baseline.
pub fn fixed_raw_draws(width: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, FIXED_STREAM);
    (0..n)
        .map(|_| (0..width).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Monte-Carlo evaluation on fresh initial states drawn from `seed`.
pub fn evaluate(
    net: &BarrierNet,
    mode: Mode,
    params: &Params,
    init: &InitBox,
    cfg: &TrainConfig,
    trials: usize,
    seed: u64,
) -> Result<EvalReport, SimError> {
    cfg.validate()?;
    let x0s = eval_initial_states(init, net.dynamics.state_dim(), trials, seed);
    let raws = if mode == Mode::FixedHocbf {
        fixed_raw_draws(net.init_width(), trials, seed)
    } else {
        Vec::new()
    };
    let flat = params.flat();
    let episodes: Vec<Result<Episode, SimError>> = x0s
        .par_iter()
        .enumerate()
        .map(|(v, x0)| {
            let policy = match mode {
                Mode::Barriernet => Policy::Barriernet {
                    net,
                    params,
                    theta: &flat,
                },
                Mode::Fcnet => Policy::Fcnet {
                    params,
                    theta: &flat,
                },
                Mode::FixedHocbf => Policy::FixedHocbf { net, raw: &raws[v] },
            };
            rollout::<f64>(net, &policy, x0, cfg)
                .map(|r| r.episode)
                .map_err(|source| SimError::Controller {
                    iteration: 0,
                    episode: v,
                    source,
                })
        })
        .collect();
    let episodes = episodes.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(mode, episodes))
}

pub fn summarize(mode: Mode, episodes: Vec<Episode>) -> EvalReport {
    let n = episodes.len() as f64;
    let mean = |f: &dyn Fn(&Episode) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    EvalReport {
        mode,
        trials: episodes.len(),
        satisfaction_rate: mean(&|e| f64::from(u8::from(e.satisfied))),
        mean_robustness: mean(&|e| e.robustness),
        min_robustness: episodes
            .iter()
            .map(|e| e.robustness)
            .fold(f64::INFINITY, f64::min),
        mean_cost: mean(&|e| e.cost),
        mean_objective: mean(&|e| e.objective()),
        mean_step_micros: mean(&|e| e.step_micros),
        min_barrier: episodes
            .iter()
            .map(|e| e.min_barrier)
            .fold(f64::INFINITY, f64::min),
        episodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(objective(&[(1.0, 0.0)]), 1.0);
        let u = vec![vec![1.0, 1.0]; 50];
        let j = control_cost(&u, 0.003, 0.1);
        assert!((objective(&[(0.0, j)]) + 0.03).abs() < 1e-15);
        let terms = [(1.0, 0.5), (2.0, 0.25), (-1.0, 0.0)];
        let each: f64 = terms.iter().map(|(r, c)| r - c).sum::<f64>() / 3.0;
        assert!((objective(&terms) - each).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
        adam.ascend(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut adam = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
        adam.ascend(&mut p, &[5.0, -0.1]).unwrap();
        assert!((p[0] - 1.001).abs() < 1e-9 && (p[1] + 2.001).abs() < 1e-9);
        assert_eq!(adam.ascend(&mut p, &[f64::NAN, 0.0]), Err(0));
    }

    #[test]
    fn streams_differ() {
        let a: u64 = rng_for(7, batch_stream(0)).random();
        let b: u64 = rng_for(7, batch_stream(1)).random();
        let c: u64 = rng_for(7, batch_stream(0)).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
