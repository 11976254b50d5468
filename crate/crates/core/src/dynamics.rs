//! Control-affine systems `ẋ = f(x) + g(x)·u` whose first two state
//! coordinates are the planar position.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// `x = [px, py, vx, vy]`, `u = [ax, ay]`.
    #[serde(rename = "double_integrator_2d")]
    DoubleIntegrator2D,
    /// `x = [px, py]`, `u = [vx, vy]`.
    #[serde(rename = "single_integrator_2d")]
    SingleIntegrator2D,
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::DoubleIntegrator2D => 4,
            Dynamics::SingleIntegrator2D => 2,
        }
    }

    pub fn control_dim(&self) -> usize {
        2
    }

    /// Relative degree of any position-only barrier under these dynamics.
    pub fn relative_degree(&self) -> usize {
        match self {
            Dynamics::DoubleIntegrator2D => 2,
            Dynamics::SingleIntegrator2D => 1,
        }
    }

    pub fn drift<R: Real>(&self, x: &[R]) -> Vec<R> {
        match self {
            Dynamics::DoubleIntegrator2D => {
                vec![x[2], x[3], R::cst(0.0), R::cst(0.0)]
            }
            Dynamics::SingleIntegrator2D => vec![R::cst(0.0); 2],
        }
    }

    /// `g(x)`, row-major `n × q`. Constant for the built-in systems.
    pub fn input_matrix(&self) -> Vec<Vec<f64>> {
        match self {
            Dynamics::DoubleIntegrator2D => vec![
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            Dynamics::SingleIntegrator2D => vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }

    pub fn velocity<R: Real>(&self, x: &[R]) -> [R; 2] {
        match self {
            Dynamics::DoubleIntegrator2D => [x[2], x[3]],
            Dynamics::SingleIntegrator2D => [R::cst(0.0); 2],
        }
    }

    pub fn rate<R: Real>(&self, x: &[R], u: &[R]) -> Vec<R> {
        let mut dx = self.drift(x);
        for (i, row) in self.input_matrix().iter().enumerate() {
            for (j, &gij) in row.iter().enumerate() {
                if gij != 0.0 {
                    dx[i] = dx[i] + u[j] * gij;
                }
            }
        }
        dx
    }

    /// Forward Euler with zero-order-hold control.
    pub fn euler_step<R: Real>(&self, x: &[R], u: &[R], dt: f64) -> Vec<R> {
        self.rate(x, u)
            .into_iter()
            .zip(x)
            .map(|(d, &xi)| xi + d * dt)
            .collect()
    }

    /// Classical RK4 with zero-order-hold control; used as a reference.
    pub fn rk4_step(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let axpy = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let k1 = self.rate(x, u);
        let k2 = self.rate(&axpy(x, &k1, dt / 2.0), u);
        let k3 = self.rate(&axpy(x, &k2, dt / 2.0), u);
        let k4 = self.rate(&axpy(x, &k3, dt), u);
        (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Column names for trajectory export.
    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            Dynamics::DoubleIntegrator2D => &["px", "py", "vx", "vy"],
            Dynamics::SingleIntegrator2D => &["px", "py"],
        }
    }

    pub fn control_names(&self) -> &'static [&'static str] {
        match self {
            Dynamics::DoubleIntegrator2D => &["ax", "ay"],
            Dynamics::SingleIntegrator2D => &["vx", "vy"],
        }
    }
}
