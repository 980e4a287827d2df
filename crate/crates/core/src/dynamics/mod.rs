//! Control-affine jump-diffusion dynamics and their Euler discretization.
//!
//! A model supplies the drift `f(x, t)`, control matrix `G(x, t)`, diffusion
//! matrix `B(x, t)` and jump matrix `H(x, t)`. Noise rows are control-space
//! vectors, so `B` and `H` are `n x m` like `G`. One Euler step is
//!
//! ```text
//! x' = x + (f + G u) dt + B eps_d sqrt(dt) + [jump] H eps_j s(dt)
//! ```
//!
//! where `s(dt)` is `sqrt(dt)` unless [`JumpScaling::Unit`] is selected.

mod cartpole;
mod quadrotor;

pub use cartpole::{cartpole_dynamics, CartpoleModel, CartpoleParams};
pub use quadrotor::{quadrotor_dynamics, QuadrotorModel, QuadrotorParams};

use nalgebra::DMatrix;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::types::{ControlSequence, JumpScaling, NoiseRealization, RolloutResult, StateTrajectory};

pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Writes `f(x, t)` into `out` (length `n`).
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Writes `G(x, t)` row-major into `out` (length `n * m`).
    fn control_matrix(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// `drift` and `control_matrix` in one call; models override this to
    /// share trigonometry between the two.
    fn drift_and_control(&self, x: &[f64], t: f64, f: &mut [f64], g: &mut [f64]) {
        self.drift(x, t, f);
        self.control_matrix(x, t, g);
    }

    fn diffusion_matrix(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.control_matrix(x, t, out)
    }

    fn jump_matrix(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.control_matrix(x, t, out)
    }

    /// Whether `B = H = G`, i.e. all noise enters through the control channels.
    /// Implementations overriding `diffusion_matrix` or `jump_matrix` must
    /// return `false`.
    fn noise_through_controls(&self) -> bool {
        true
    }

    /// Per-channel `[min, max]` applied to the nominal control before use.
    fn control_limits(&self) -> Option<&[(f64, f64)]> {
        None
    }

    fn state_names(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn control_names(&self) -> Vec<String> {
        (0..self.control_dim()).map(|i| format!("u{i}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Control,
    Diffusion,
    Jump,
}

/// Evaluates `G`, `B` or `H` at `(x, t)` as a dense `n x m` matrix.
pub fn channel_matrix(model: &dyn DynamicsModel, channel: Channel, x: &[f64], t: f64) -> DMatrix<f64> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut buf = vec![0.0; n * m];
    match channel {
        Channel::Control => model.control_matrix(x, t, &mut buf),
        Channel::Diffusion => model.diffusion_matrix(x, t, &mut buf),
        Channel::Jump => model.jump_matrix(x, t, &mut buf),
    }
    DMatrix::from_row_slice(n, m, &buf)
}

pub fn drift_vector(model: &dyn DynamicsModel, x: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; model.state_dim()];
    model.drift(x, t, &mut out);
    out
}

/// Clamps `u` in place to the model's limits, if any.
pub fn clamp_control(model: &dyn DynamicsModel, u: &mut [f64]) {
    if let Some(limits) = model.control_limits() {
        for (v, &(lo, hi)) in u.iter_mut().zip(limits) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Scratch buffers for [`Integrator::step_into`].
#[derive(Debug, Clone)]
pub struct StepScratch {
    f: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
    u: Vec<f64>,
}

impl StepScratch {
    pub fn new(n: usize, m: usize) -> Self {
        StepScratch {
            f: vec![0.0; n],
            g: vec![0.0; n * m],
            b: vec![0.0; n * m],
            h: vec![0.0; n * m],
            u: vec![0.0; m],
        }
    }

    pub fn for_model(model: &dyn DynamicsModel) -> Self {
        Self::new(model.state_dim(), model.control_dim())
    }
}

/// Explicit Euler integrator for the jump-diffusion SDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub dt: f64,
    pub jump_scaling: JumpScaling,
}

impl Integrator {
    pub fn new(dt: f64) -> Self {
        Integrator {
            dt,
            jump_scaling: JumpScaling::SqrtDt,
        }
    }

    pub fn with_jump_scaling(mut self, scaling: JumpScaling) -> Self {
        self.jump_scaling = scaling;
        self
    }

    /// Advances `x` by one step at index `k` (time `k * dt`).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        model: &dyn DynamicsModel,
        k: usize,
        x: &[f64],
        u: &[f64],
        eps_d: &[f64],
        eps_j: &[f64],
        has_jump: bool,
    ) -> Result<Vec<f64>> {
        let (n, m) = (model.state_dim(), model.control_dim());
        for (what, expected, got) in [
            ("state", n, x.len()),
            ("control", m, u.len()),
            ("diffusion noise", m, eps_d.len()),
            ("jump noise", m, eps_j.len()),
        ] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        let mut scratch = StepScratch::new(n, m);
        let mut out = vec![0.0; n];
        if self.step_into(model, k, x, u, eps_d, eps_j, has_jump, &mut scratch, &mut out) {
            Ok(out)
        } else {
            Err(Error::StateDiverged { step: k })
        }
    }

    /// Allocation-free step; returns `false` when the new state is not finite.
    #[allow(clippy::too_many_arguments)]
    pub fn step_into(
        &self,
        model: &dyn DynamicsModel,
        k: usize,
        x: &[f64],
        u: &[f64],
        eps_d: &[f64],
        eps_j: &[f64],
        has_jump: bool,
        scratch: &mut StepScratch,
        out: &mut [f64],
    ) -> bool {
        let m = u.len();
        let t = k as f64 * self.dt;
        let sqrt_dt = self.dt.sqrt();
        let jump_factor = self.jump_scaling.factor(self.dt);
        scratch.u.copy_from_slice(u);
        clamp_control(model, &mut scratch.u);
        model.drift_and_control(x, t, &mut scratch.f, &mut scratch.g);
        let shared = model.noise_through_controls();
        if !shared {
            model.diffusion_matrix(x, t, &mut scratch.b);
            if has_jump {
                model.jump_matrix(x, t, &mut scratch.h);
            }
        }
        let (g, b, h) = if shared {
            (&scratch.g, &scratch.g, &scratch.g)
        } else {
            (&scratch.g, &scratch.b, &scratch.h)
        };
        let mut finite = true;
        for i in 0..x.len() {
            let row = i * m..(i + 1) * m;
            let gu: f64 = g[row.clone()].iter().zip(&scratch.u).map(|(a, b)| a * b).sum();
            let bd: f64 = b[row.clone()].iter().zip(eps_d).map(|(a, b)| a * b).sum();
            let mut v = x[i] + (scratch.f[i] + gu) * self.dt + bd * sqrt_dt;
            if has_jump {
                let hj: f64 = h[row].iter().zip(eps_j).map(|(a, b)| a * b).sum();
                v += hj * jump_factor;
            }
            finite &= v.is_finite();
            out[i] = v;
        }
        finite
    }
}

fn check_rollout_dims(
    model: &dyn DynamicsModel,
    x0: &[f64],
    controls: &ControlSequence,
    noise: &NoiseRealization,
) -> Result<()> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: model.state_dim(),
            got: x0.len(),
        });
    }
    if controls.control_dim() != model.control_dim() || noise.m != model.control_dim() {
        return Err(Error::Dimension {
            what: "control dimension",
            expected: model.control_dim(),
            got: controls.control_dim(),
        });
    }
    if controls.len() != noise.len() {
        return Err(Error::Dimension {
            what: "noise length",
            expected: controls.len(),
            got: noise.len(),
        });
    }
    Ok(())
}

/// Propagates one sampled trajectory and accumulates its modified cost.
///
/// Returns the cost and, on divergence, the failing step. `visit` sees every
/// state after `x0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate(
    model: &dyn DynamicsModel,
    integ: &Integrator,
    x0: &[f64],
    controls: &ControlSequence,
    noise: &NoiseRealization,
    cost: &CostModel,
    scratch: &mut StepScratch,
    mut visit: impl FnMut(&[f64]),
) -> (f64, Option<usize>) {
    let n = x0.len();
    let m = controls.control_dim();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut running = 0.0;
    for j in 0..controls.len() {
        let t = j as f64 * integ.dt;
        u.copy_from_slice(controls.row(j));
        clamp_control(model, &mut u);
        let q = cost.state_cost.running(&x, t);
        let qt = cost.modified_step_cost(&x, t, q, &u, noise.combined_row(j), integ.dt);
        running += qt * integ.dt;
        let ok = integ.step_into(
            model,
            j,
            &x,
            &u,
            noise.eps_d_row(j),
            noise.eps_j_row(j),
            noise.jump_indicator[j],
            scratch,
            &mut next,
        );
        if !ok {
            return (f64::INFINITY, Some(j));
        }
        std::mem::swap(&mut x, &mut next);
        visit(&x);
    }
    let total = cost.state_cost.terminal(&x) + running;
    (if total.is_finite() { total } else { f64::INFINITY }, None)
}

/// Rolls `controls` out from `x0` under `noise`, recording the trajectory.
///
/// A diverging rollout keeps the states computed before the failure and gets
/// cost `+inf`.
pub fn rollout(
    model: &dyn DynamicsModel,
    integ: &Integrator,
    x0: &[f64],
    controls: &ControlSequence,
    noise: &NoiseRealization,
    cost: &CostModel,
) -> Result<RolloutResult> {
    check_rollout_dims(model, x0, controls, noise)?;
    let mut trajectory = StateTrajectory::from_initial(x0, integ.dt, controls.len());
    let mut scratch = StepScratch::for_model(model);
    let (cost, diverged_at) = propagate(model, integ, x0, controls, noise, cost, &mut scratch, |x| {
        trajectory.push(x)
    });
    Ok(RolloutResult {
        trajectory,
        noise: noise.clone(),
        cost,
        diverged_at,
    })
}
