//! State costs and the importance-sampling-corrected running cost.
//!
//! With `Sigma = B B^T`, `calB = G^T Sigma^+ B` and `bb = B^T Sigma^+ B`, the
//! per-step modified cost is
//!
//! ```text
//! q~ = q + 1/2 u^T R u + lambda u^T calB eps / sqrt(dt)
//!        + 1/2 lambda (1 - 1/c) eps^T bb eps / dt
//! ```
//!
//! and a trajectory accumulates `phi(x_N) + sum_j q~_j dt`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{channel_matrix, Channel, DynamicsModel};
use crate::error::{Error, Result};
use crate::types::{ControlSequence, NoiseRealization, StateTrajectory};

pub trait StateCost: Send + Sync {
    /// `q(x, t) >= 0`.
    fn running(&self, x: &[f64], t: f64) -> f64;
    /// `phi(x_N) >= 0`.
    fn terminal(&self, x: &[f64]) -> f64;
}

/// A state cost assembled from two closures.
pub struct FnCost<Q, P> {
    running: Q,
    terminal: P,
}

impl<Q, P> FnCost<Q, P>
where
    Q: Fn(&[f64], f64) -> f64 + Send + Sync,
    P: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(running: Q, terminal: P) -> Self {
        FnCost { running, terminal }
    }
}

impl<Q, P> StateCost for FnCost<Q, P>
where
    Q: Fn(&[f64], f64) -> f64 + Send + Sync,
    P: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn running(&self, x: &[f64], t: f64) -> f64 {
        (self.running)(x, t)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }
}

/// `w1 x^2 + w2 x_dot^2 + w3 (1 + cos theta)^2 + w4 theta_dot^2`; the terminal
/// cost is `terminal_scale * q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleCost {
    pub weights: [f64; 4],
    pub terminal_scale: f64,
}

impl Default for CartpoleCost {
    fn default() -> Self {
        CartpoleCost {
            weights: [2.5, 1.0, 50.0, 1.0],
            terminal_scale: 10.0,
        }
    }
}

impl StateCost for CartpoleCost {
    fn running(&self, x: &[f64], _t: f64) -> f64 {
        let [w1, w2, w3, w4] = self.weights;
        let up = 1.0 + x[2].cos();
        w1 * x[0] * x[0] + w2 * x[1] * x[1] + w3 * up * up + w4 * x[3] * x[3]
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        self.terminal_scale * self.running(x, 0.0)
    }
}

/// `w_p |p - p*|^2 + w_v |v|^2 + w_a (roll^2 + pitch^2) + w_w |omega|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorCost {
    pub weights: [f64; 4],
    pub target: [f64; 3],
    pub terminal_scale: f64,
}

impl Default for QuadrotorCost {
    fn default() -> Self {
        QuadrotorCost {
            weights: [4.0, 1.0, 10.0, 1.0],
            target: [4.0, 4.0, 2.0],
            terminal_scale: 10.0,
        }
    }
}

impl StateCost for QuadrotorCost {
    fn running(&self, x: &[f64], _t: f64) -> f64 {
        let [wp, wv, wa, ww] = self.weights;
        let dp: f64 = (0..3).map(|i| (x[i] - self.target[i]).powi(2)).sum();
        let v: f64 = x[3..6].iter().map(|v| v * v).sum();
        let att = x[6] * x[6] + x[7] * x[7];
        let w: f64 = x[9..12].iter().map(|v| v * v).sum();
        wp * dp + wv * v + wa * att + ww * w
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        self.terminal_scale * self.running(x, 0.0)
    }
}

/// Where `calB` and `bb` come from.
#[derive(Clone)]
pub enum NoiseCoupling {
    /// `B = G`: both matrices are the identity.
    ControlChannel,
    Constant { calb: DMatrix<f64>, bb: DMatrix<f64> },
    /// Re-evaluated from the dynamics at every step.
    StateDependent(Arc<dyn DynamicsModel>),
}

#[derive(Clone)]
pub struct CostModel {
    pub state_cost: Arc<dyn StateCost>,
    pub r: DMatrix<f64>,
    pub lambda: f64,
    pub c: f64,
    pub coupling: NoiseCoupling,
}

impl CostModel {
    /// `q~` at one step of a rollout.
    pub fn modified_step_cost(&self, x: &[f64], t: f64, q: f64, u: &[f64], eps: &[f64], dt: f64) -> f64 {
        match &self.coupling {
            NoiseCoupling::ControlChannel => {
                let ue: f64 = u.iter().zip(eps).map(|(a, b)| a * b).sum();
                let ee: f64 = eps.iter().map(|e| e * e).sum();
                q + 0.5 * quad_form(&self.r, u, u)
                    + self.lambda * ue / dt.sqrt()
                    + 0.5 * self.lambda * (1.0 - 1.0 / self.c) * ee / dt
            }
            NoiseCoupling::Constant { calb, bb } => {
                modified_running_cost(q, u, eps, &self.r, self.lambda, self.c, calb, bb, dt)
            }
            NoiseCoupling::StateDependent(model) => match importance_matrices(model.as_ref(), x, t) {
                Ok(m) => modified_running_cost(q, u, eps, &self.r, self.lambda, self.c, &m.calb, &m.bb, dt),
                Err(_) => f64::INFINITY,
            },
        }
    }
}

pub(crate) fn quad_form(a: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, ui) in u.iter().enumerate() {
        for (k, vk) in v.iter().enumerate() {
            s += ui * a[(i, k)] * vk;
        }
    }
    s
}

/// The matrices of the importance-sampling correction at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrices {
    /// `G^T Sigma^+ G`
    pub calg: DMatrix<f64>,
    /// `G^T Sigma^+ B`
    pub calb: DMatrix<f64>,
    /// `B^T Sigma^+ B`
    pub bb: DMatrix<f64>,
}

impl ImportanceMatrices {
    /// `calG^{-1} calB`, the map from sampled noise to control corrections.
    pub fn control_mapping(&self) -> Result<DMatrix<f64>> {
        let inv = self.calg.clone().try_inverse().ok_or(Error::ControlCostUndefined)?;
        Ok(inv * &self.calb)
    }
}

/// Computes `calG`, `calB` and `bb` with a pseudo-inverse of `Sigma = B B^T`.
///
/// Fails when `G` has a component outside the range of `Sigma`: the control
/// then acts in a direction the noise never excites and `R` is undefined.
pub fn importance_matrices(model: &dyn DynamicsModel, x: &[f64], t: f64) -> Result<ImportanceMatrices> {
    let g = channel_matrix(model, Channel::Control, x, t);
    let b = channel_matrix(model, Channel::Diffusion, x, t);
    let sigma = &b * b.transpose();
    let scale = sigma.amax();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::ControlCostUndefined);
    }
    let pinv = sigma
        .clone()
        .pseudo_inverse(1e-12 * scale)
        .map_err(|_| Error::ControlCostUndefined)?;
    let residual = &sigma * &pinv * &g - &g;
    if residual.amax() > 1e-8 * g.amax().max(1.0) {
        return Err(Error::ControlCostUndefined);
    }
    let gt_pinv = g.transpose() * &pinv;
    Ok(ImportanceMatrices {
        calg: &gt_pinv * &g,
        calb: &gt_pinv * &b,
        bb: b.transpose() * &pinv * &b,
    })
}

/// `R = lambda G^T (B B^T)^+ G`, symmetrized.
pub fn control_cost_matrix_from_dynamics(
    model: &dyn DynamicsModel,
    x: &[f64],
    t: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let calg = importance_matrices(model, x, t)?.calg;
    Ok((&calg + calg.transpose()) * (0.5 * lambda))
}

#[allow(clippy::too_many_arguments)]
pub fn modified_running_cost(
    q: f64,
    u: &[f64],
    eps: &[f64],
    r: &DMatrix<f64>,
    lambda: f64,
    c: f64,
    calb: &DMatrix<f64>,
    bb: &DMatrix<f64>,
    dt: f64,
) -> f64 {
    q + 0.5 * quad_form(r, u, u)
        + lambda * quad_form(calb, u, eps) / dt.sqrt()
        + 0.5 * lambda * (1.0 - 1.0 / c) * quad_form(bb, eps, eps) / dt
}

/// `phi(x_N) + sum_j q~_j dt` along a recorded trajectory. Non-finite totals
/// become `+inf`.
pub fn trajectory_cost(
    states: &StateTrajectory,
    controls: &ControlSequence,
    noise: &NoiseRealization,
    cost: &CostModel,
    dt: f64,
) -> Result<f64> {
    let n = controls.len();
    if states.len() != n + 1 || noise.len() != n {
        return Err(Error::Dimension {
            what: "trajectory length",
            expected: n + 1,
            got: states.len(),
        });
    }
    let mut running = 0.0;
    for j in 0..n {
        let t = j as f64 * dt;
        let x = states.row(j);
        let q = cost.state_cost.running(x, t);
        running += cost.modified_step_cost(x, t, q, controls.row(j), noise.combined_row(j), dt) * dt;
    }
    let total = cost.state_cost.terminal(states.last()) + running;
    Ok(if total.is_finite() { total } else { f64::INFINITY })
}
