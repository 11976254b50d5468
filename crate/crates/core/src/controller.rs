//! The BarrierNet controller: InitNet fixes the barrier parameters once per
//! episode, RefNet supplies the linear cost at every step, and a QP layer
//! with one HOCBF row per live barrier produces the control.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::dqp::{self, QpError, QpSolution};
use crate::dynamics::Dynamics;
use crate::hocbf::{
    build_ledger, build_specs, verify_categories, DeletionState, Gamma, HocbfError, HocbfSpec,
    OmegaLedger, SynthOptions,
};
use crate::squash;
use crate::stl::Formula;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Hocbf(#[from] HocbfError),
    #[error("QP failed at step {step}: {source}")]
    Qp { step: usize, source: QpError },
    #[error("ψ{order} of `{name}` is {value:.3e} < 0 at the initial state")]
    PsiCheck {
        name: String,
        order: usize,
        value: f64,
    },
    #[error("parameter vector has {have} entries, expected {need}")]
    ParamCount { have: usize, need: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully connected network with `tanh` hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    /// Per layer: weights row-major `out × in`, then biases.
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp {
            widths: widths.to_vec(),
            params: vec![0.0; Self::param_count(widths)],
        }
    }

    /// Weights uniform in `±√(6/(fan_in + fan_out))`, zero biases.
    pub fn xavier<G: Rng + ?Sized>(widths: &[usize], rng: &mut G) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            widths: widths.to_vec(),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least one layer")
    }

    /// Forward pass with externally supplied parameters (e.g. tape leaves).
    pub fn forward<R: Real>(&self, params: &[R], input: &[R]) -> Vec<R> {
        debug_assert_eq!(params.len(), self.params.len());
        debug_assert_eq!(input.len(), self.input_dim());
        let mut x = input.to_vec();
        let mut off = 0;
        let layers = self.widths.len() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_out * (n_in + 1);
            let y: Vec<R> = (0..n_out)
                .map(|o| {
                    let z = R::affine(&weights[o * n_in..(o + 1) * n_in], &x, bias[o]);
                    if l + 1 < layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            x = y;
        }
        x
    }

    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        self.forward(&self.params, input)
    }
}

/// Trainable parameters of both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub initnet: Mlp,
    pub refnet: Mlp,
}

impl Params {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.initnet.params.clone();
        v.extend_from_slice(&self.refnet.params);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let n = self.initnet.len();
        self.initnet.params.copy_from_slice(&v[..n]);
        self.refnet.params.copy_from_slice(&v[n..]);
    }

    pub fn len(&self) -> usize {
        self.initnet.len() + self.refnet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Barrier structure of one formula under one dynamics.
#[derive(Debug, Clone)]
pub struct BarrierNet {
    pub dynamics: Dynamics,
    pub formula: Formula,
    pub specs: Vec<HocbfSpec>,
    pub ledger: OmegaLedger,
    pub hidden: Vec<usize>,
    pub control_box: Option<(Vec<f64>, Vec<f64>)>,
}

/// Episode-fixed barrier parameters plus deletion flags.
#[derive(Debug, Clone)]
pub struct ControllerState<R> {
    pub gammas: Vec<Gamma<R>>,
    /// `p[i][k]` scales the class-K function at level `k + 1` of barrier `i`.
    pub p: Vec<Vec<R>>,
    pub deletion: DeletionState,
}

/// One HOCBF inequality `a·u + r ≥ 0`.
#[derive(Debug, Clone)]
pub struct ConstraintRow<R> {
    pub a: Vec<R>,
    pub r: R,
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Spec indices that contributed a row, in row order.
    pub rows: Vec<usize>,
    pub solution: QpSolution,
}

impl BarrierNet {
    /// Categorizes at `x0_ref` and builds specs and ledger; fails if the
    /// ledger has an empty interval at `x0_ref`.
    pub fn new(
        formula: Formula,
        dynamics: Dynamics,
        x0_ref: &[f64],
        opts: &SynthOptions,
        hidden: &[usize],
    ) -> Result<Self, ControllerError> {
        let specs = build_specs(&formula, x0_ref, dynamics, opts)?;
        let ledger = build_ledger(&specs, opts)?;
        ledger.check_feasible(&specs, x0_ref)?;
        Ok(BarrierNet {
            dynamics,
            formula,
            specs,
            ledger,
            hidden: hidden.to_vec(),
            control_box: None,
        })
    }

    pub fn p_width(&self) -> usize {
        self.specs.iter().map(|s| s.relative_degree).sum()
    }

    /// Raw InitNet outputs: `Ω` then `P`.
    pub fn init_width(&self) -> usize {
        self.ledger.raw_width() + self.p_width()
    }

    pub fn initnet_widths(&self) -> Vec<usize> {
        let mut w = vec![self.dynamics.state_dim()];
        w.extend_from_slice(&self.hidden);
        w.push(self.init_width());
        w
    }

    pub fn refnet_widths(&self) -> Vec<usize> {
        let mut w = vec![self.dynamics.state_dim()];
        w.extend_from_slice(&self.hidden);
        w.push(self.dynamics.control_dim());
        w
    }

    pub fn init_params<G: Rng + ?Sized>(&self, rng: &mut G) -> Params {
        Params {
            initnet: Mlp::xavier(&self.initnet_widths(), rng),
            refnet: Mlp::xavier(&self.refnet_widths(), rng),
        }
    }

    /// InitNet forward pass followed by [`Self::init_from_raw`].
    pub fn init_episode<R: Real>(
        &self,
        x0: &[f64],
        initnet: &Mlp,
        params: &[R],
    ) -> Result<ControllerState<R>, ControllerError> {
        if params.len() != initnet.len() {
            return Err(ControllerError::ParamCount {
                have: params.len(),
                need: initnet.len(),
            });
        }
        let input: Vec<R> = x0.iter().map(|&v| R::cst(v)).collect();
        let raw = initnet.forward(params, &input);
        self.init_from_raw(x0, &raw)
    }

    /// Squashes raw outputs into `(Ω, P)` and checks `ψᵢ(x0, 0) ≥ 0`.
    pub fn init_from_raw<R: Real>(
        &self,
        x0: &[f64],
        raw: &[R],
    ) -> Result<ControllerState<R>, ControllerError> {
        if raw.len() != self.init_width() {
            return Err(ControllerError::ParamCount {
                have: raw.len(),
                need: self.init_width(),
            });
        }
        verify_categories(&self.specs, x0)?;
        let floor = self.ledger.options.eps.max(self.ledger.options.p_floor);
        let n_omega = self.ledger.raw_width();
        let gammas = self.ledger.resolve(&self.specs, x0, &raw[..n_omega])?;
        let x: Vec<R> = x0.iter().map(|&v| R::cst(v)).collect();
        let mut p = Vec::with_capacity(self.specs.len());
        let mut off = n_omega;
        for (i, s) in self.specs.iter().enumerate() {
            let m = s.relative_degree;
            let (b, bdot) = self.b_and_rate(i, &gammas[i], &x, 0.0);
            let mut pi = Vec::with_capacity(m);
            if let Some(dt) = self.ledger.options.sample_dt {
                let top = R::cst(1.0 / dt);
                let floor = |lo: R| {
                    if floor < 1.0 / dt {
                        lo.max(R::cst(floor))
                    } else {
                        lo
                    }
                };
                let eps = R::cst(self.ledger.options.eps);
                match m {
                    1 => pi.push(squash::interval(raw[off], floor(eps), top)),
                    2 => {
                        let b1 = self.specs[i].shape.h(coast(&x, dt)) + gammas[i].eval(dt);
                        let lo = if b.val() > 0.0 {
                            ((b - b1) / (b * dt)).max(R::cst(0.0))
                        } else {
                            R::cst(0.0)
                        };
                        if lo.val() >= 1.0 / dt {
                            return Err(ControllerError::PsiCheck {
                                name: s.name.clone(),
                                order: 1,
                                value: b1.val(),
                            });
                        }
                        pi.push(squash::interval(raw[off], floor(lo), top));
                        pi.push(squash::interval(raw[off + 1], floor(eps), top));
                        let psi1 = b1 - (R::cst(1.0) - pi[0] * dt) * b;
                        if psi1.val() < -1e-12 {
                            return Err(ControllerError::PsiCheck {
                                name: s.name.clone(),
                                order: 1,
                                value: psi1.val(),
                            });
                        }
                    }
                    m => return Err(HocbfError::UnsupportedDegree(m).into()),
                }
                if b.val() < 0.0 {
                    return Err(ControllerError::PsiCheck {
                        name: s.name.clone(),
                        order: 0,
                        value: b.val(),
                    });
                }
                off += m;
                p.push(pi);
                continue;
            }
            match m {
                1 => pi.push(squash::above(raw[off], R::cst(floor))),
                2 => {
                    let lo = if b.val() > 0.0 {
                        (-(bdot / b)).max(R::cst(0.0))
                    } else {
                        R::cst(0.0)
                    };
                    pi.push(squash::above(raw[off], lo + floor));
                    pi.push(squash::above(raw[off + 1], R::cst(floor)));
                }
                m => return Err(HocbfError::UnsupportedDegree(m).into()),
            }
            off += m;
            let psi0 = b.val();
            if psi0 < 0.0 {
                return Err(ControllerError::PsiCheck {
                    name: s.name.clone(),
                    order: 0,
                    value: psi0,
                });
            }
            if m == 2 {
                let psi1 = bdot.val() + pi[0].val() * psi0;
                if psi1 < -1e-12 {
                    return Err(ControllerError::PsiCheck {
                        name: s.name.clone(),
                        order: 1,
                        value: psi1,
                    });
                }
            }
            p.push(pi);
        }
        let mut deletion = DeletionState::new(self.specs.len());
        deletion.update(&self.specs, [x0[0], x0[1]], 0.0);
        Ok(ControllerState {
            gammas,
            p,
            deletion,
        })
    }

    fn b_and_rate<R: Real>(&self, i: usize, gamma: &Gamma<R>, x: &[R], t: f64) -> (R, R) {
        let d = self.specs[i].shape.derivs([x[0], x[1]]);
        let v = self.dynamics.velocity(x);
        let b = d.value + gamma.eval(t);
        let bdot = d.grad[0] * v[0] + d.grad[1] * v[1] + gamma.d1(t);
        (b, bdot)
    }

    /// Barrier value `b_i(x, t)`.
    pub fn barrier<R: Real>(&self, state: &ControllerState<R>, i: usize, x: &[R], t: f64) -> R {
        self.specs[i].shape.h([x[0], x[1]]) + state.gammas[i].eval(t)
    }

    /// HOCBF row of spec `i` with `αᵢ(s) = pᵢ·s` at every level.
    pub fn constraint_row<R: Real>(
        &self,
        state: &ControllerState<R>,
        i: usize,
        x: &[R],
        t: f64,
    ) -> Result<ConstraintRow<R>, ControllerError> {
        let s = &self.specs[i];
        let g = &state.gammas[i];
        let p = &state.p[i];
        let d = s.shape.derivs([x[0], x[1]]);
        let b = d.value + g.eval(t);
        let a = d.grad.to_vec();
        match s.relative_degree {
            1 => Ok(ConstraintRow {
                a,
                r: g.d1(t) + p[0] * b,
            }),
            2 => {
                let v = self.dynamics.velocity(x);
                let bdot = d.grad[0] * v[0] + d.grad[1] * v[1] + g.d1(t);
                let psi1 = bdot + p[0] * b;
                let mut curv = R::cst(0.0);
                for (j, &vj) in v.iter().enumerate() {
                    for (k, &vk) in v.iter().enumerate() {
                        curv = curv + d.hess[j][k] * vj * vk;
                    }
                }
                Ok(ConstraintRow {
                    a,
                    r: curv + g.d2(t) + p[0] * bdot + p[1] * psi1,
                })
            }
            m => Err(HocbfError::UnsupportedDegree(m).into()),
        }
    }

    /// Sampled-data counterpart of [`Self::constraint_row`] for the Euler
    /// plant with period `dt`: with `λᵢ = pᵢ·dt` it enforces
    /// `b_{k+1} ≥ (1 − λ₁)·b_k` and `ψ_{k+1} ≥ (1 − λ₂)·ψ_k`, linearizing `h`
    /// in `u` at the unforced prediction. Rows are divided by `dtᵐ`, so they
    /// tend to the continuous rows as `dt → 0`.
    pub fn sampled_row<R: Real>(
        &self,
        state: &ControllerState<R>,
        i: usize,
        x: &[R],
        t: f64,
        dt: f64,
    ) -> Result<ConstraintRow<R>, ControllerError> {
        let c = self.sampled_condition(state, i, x, t, dt)?;
        let zero = vec![R::cst(0.0); self.dynamics.control_dim()];
        Ok(c.linearize(&self.specs[i].shape, &zero))
    }

    fn sampled_condition<R: Real>(
        &self,
        state: &ControllerState<R>,
        i: usize,
        x: &[R],
        t: f64,
        dt: f64,
    ) -> Result<SampledCondition<R>, ControllerError> {
        let s = &self.specs[i];
        let g = &state.gammas[i];
        let p = &state.p[i];
        let one = R::cst(1.0);
        let b0 = s.shape.h([x[0], x[1]]) + g.eval(t);
        match s.relative_degree {
            1 => Ok(SampledCondition {
                base: [x[0], x[1]],
                scale: dt,
                need: (one - p[0] * dt) * b0 - g.eval(t + dt),
            }),
            2 => {
                let v = self.dynamics.velocity(x);
                let q1 = [x[0] + v[0] * dt, x[1] + v[1] * dt];
                let b1 = s.shape.h(q1) + g.eval(t + dt);
                let psi1 = b1 - (one - p[0] * dt) * b0;
                Ok(SampledCondition {
                    base: [x[0] + v[0] * (2.0 * dt), x[1] + v[1] * (2.0 * dt)],
                    scale: dt * dt,
                    need: (one - p[0] * dt) * b1 + (one - p[1] * dt) * psi1 - g.eval(t + 2.0 * dt),
                })
            }
            m => Err(HocbfError::UnsupportedDegree(m).into()),
        }
    }

    /// Refreshes deletion flags at `(x, t)` and returns the live spec indices.
    pub fn live_specs<R: Real>(
        &self,
        state: &mut ControllerState<R>,
        x: &[R],
        t: f64,
    ) -> Vec<usize> {
        state
            .deletion
            .update(&self.specs, [x[0].val(), x[1].val()], t);
        (0..self.specs.len())
            .filter(|&i| !state.deletion.is_deleted(i))
            .collect()
    }

    /// One control step: `u* = argmin ½‖u‖² + Fᵀu` over the live HOCBF rows
    /// with `F = −RefNet(x)`.
    pub fn step<R: Real>(
        &self,
        state: &mut ControllerState<R>,
        refnet: &Mlp,
        ref_params: &[R],
        x: &[R],
        t: f64,
        k: usize,
    ) -> Result<(Vec<R>, StepInfo), ControllerError> {
        let f: Vec<R> = refnet
            .forward(ref_params, x)
            .into_iter()
            .map(|v| -v)
            .collect();
        self.filter(state, &f, x, t, k)
    }

    /// The QP layer for a given linear cost `F`.
    ///
    /// With sampled rows, any row whose exact condition is still violated at
    /// the solution gets a tangent cut at that solution and the QP is solved
    /// again; for convex `h` the first linearization is already exact. A cut
    /// that leaves the QP infeasible is dropped.
    pub fn filter<R: Real>(
        &self,
        state: &mut ControllerState<R>,
        f: &[R],
        x: &[R],
        t: f64,
        k: usize,
    ) -> Result<(Vec<R>, StepInfo), ControllerError> {
        let live = self.live_specs(state, x, t);
        let bounds = self
            .control_box
            .as_ref()
            .map(|(lo, hi)| (lo.as_slice(), hi.as_slice()));
        let solve = |rows: &[(Vec<R>, R)]| {
            dqp::solve_layer(f, rows, bounds)
                .map_err(|source| ControllerError::Qp { step: k, source })
        };
        let Some(dt) = self.ledger.options.sample_dt else {
            let mut rows = Vec::with_capacity(live.len());
            for &i in &live {
                let row = self.constraint_row(state, i, x, t)?;
                rows.push((row.a, -row.r));
            }
            let (u, solution) = solve(&rows)?;
            return Ok((
                u,
                StepInfo {
                    rows: live,
                    solution,
                },
            ));
        };
        // A row whose target sample lies past the deadline constrains nothing.
        let live: Vec<usize> = live
            .into_iter()
            .filter(|&i| {
                let s = &self.specs[i];
                let target = t + s.relative_degree as f64 * dt;
                s.deletion.deadline().is_none_or(|d| target <= d + 1e-9)
            })
            .collect();
        let mut conds = Vec::with_capacity(live.len());
        let mut rows = Vec::with_capacity(live.len());
        let mut owners = live.clone();
        let zero = vec![R::cst(0.0); self.dynamics.control_dim()];
        for &i in &live {
            let c = self.sampled_condition(state, i, x, t, dt)?;
            let row = c.linearize(&self.specs[i].shape, &zero);
            rows.push((row.a, -row.r));
            conds.push(c);
        }
        let (mut u, mut solution) = solve(&rows)?;
        for _ in 0..MAX_CUT_ROUNDS {
            let mut added = false;
            for (c, &i) in conds.iter().zip(&live) {
                let shape = &self.specs[i].shape;
                if c.residual(shape, &u).val() < -CUT_TOL {
                    let row = c.linearize(shape, &u);
                    rows.push((row.a, -row.r));
                    owners.push(i);
                    added = true;
                }
            }
            if !added {
                break;
            }
            match solve(&rows) {
                Ok(next) => (u, solution) = next,
                Err(_) => {
                    owners.truncate(solution.lambda.len());
                    break;
                }
            }
        }
        Ok((
            u,
            StepInfo {
                rows: owners,
                solution,
            },
        ))
    }
}

const MAX_CUT_ROUNDS: usize = 12;
const CUT_TOL: f64 = 1e-12;

/// `h(base + scale·u) ≥ need`, the exact per-step condition of one barrier.
struct SampledCondition<R> {
    base: [R; 2],
    scale: f64,
    need: R,
}

impl<R: Real> SampledCondition<R> {
    fn point(&self, u: &[R]) -> [R; 2] {
        [
            self.base[0] + u[0] * self.scale,
            self.base[1] + u[1] * self.scale,
        ]
    }

    fn residual(&self, shape: &crate::stl::PredicateShape, u: &[R]) -> R {
        shape.h(self.point(u)) - self.need
    }

    /// Tangent row at `u0`, divided by `scale`.
    fn linearize(&self, shape: &crate::stl::PredicateShape, u0: &[R]) -> ConstraintRow<R> {
        let d = shape.derivs(self.point(u0));
        let slope = d.grad[0] * u0[0] + d.grad[1] * u0[1];
        ConstraintRow {
            a: d.grad.to_vec(),
            r: (d.value - self.need) / self.scale - slope,
        }
    }
}

/// Position after one unforced Euler step.
fn coast<R: Real>(x: &[R], dt: f64) -> [R; 2] {
    if x.len() >= 4 {
        [x[0] + x[2] * dt, x[1] + x[3] * dt]
    } else {
        [x[0], x[1]]
    }
}

/// FCNet baseline: the reference network output applied directly.
pub fn fcnet_step<R: Real>(refnet: &Mlp, ref_params: &[R], x: &[R]) -> Vec<R> {
    refnet.forward(ref_params, x)
}

pub const CHECKPOINT_SCHEMA: &str = "stlcbf-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config_hash: String,
    pub mode: String,
    pub iterations: usize,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(config_hash: &str, mode: &str, iterations: usize, params: Params) -> Self {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config_hash: config_hash.to_string(),
            mode: mode.to_string(),
            iterations,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ControllerError> {
        let text =
            serde_json::to_string(self).map_err(|e| ControllerError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a checkpoint and rejects it unless it was written for
    /// `config_hash`.
    pub fn load(path: &Path, config_hash: &str) -> Result<Self, ControllerError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ControllerError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(ControllerError::Checkpoint(format!(
                "unsupported schema `{}`",
                ck.schema
            )));
        }
        if ck.config_hash != config_hash {
            return Err(ControllerError::Checkpoint(format!(
                "written for config {} but the current config hashes to {}",
                ck.config_hash, config_hash
            )));
        }
        Ok(ck)
    }
}
