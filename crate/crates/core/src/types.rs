//! Value types shared by the noise engine, dynamics, cost model and controller.
//!
//! Sequences are stored row-major in time: row `j` of a control sequence is the
//! control applied at step `j`, and row 0 is always the current MPC step.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// How a jump mark enters the Euler step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpScaling {
    /// `H * eps_j * sqrt(dt)`, the discretization used by the jump-aware sampler.
    #[default]
    SqrtDt,
    /// `H * eps_j`, the conventional O(1) compound-Poisson increment.
    Unit,
}

impl JumpScaling {
    pub fn factor(self, dt: f64) -> f64 {
        match self {
            JumpScaling::SqrtDt => dt.sqrt(),
            JumpScaling::Unit => 1.0,
        }
    }
}

/// Every scalar knob of the controller.
///
/// `sigma_d` and `sigma_j` are variances (not standard deviations) in control
/// units squared. Scalar experiment settings are expanded by
/// [`MppiConfig::noise_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    pub lambda: f64,
    pub c: f64,
    pub sigma_d: DMatrix<f64>,
    pub sigma_j: DMatrix<f64>,
    pub nu: f64,
    pub dt: f64,
    pub horizon_n: usize,
    pub samples_m: usize,
    pub u_init: Vec<f64>,
    pub jump_sampling_enabled: bool,
    pub jump_scaling: JumpScaling,
}

impl MppiConfig {
    pub fn control_dim(&self) -> usize {
        self.u_init.len()
    }

    /// `variance * diag(scale_k^2)`; with unit scales this is `variance * I`.
    pub fn noise_matrix(variance: f64, channel_scale: &[f64]) -> DMatrix<f64> {
        let d: Vec<f64> = channel_scale.iter().map(|s| variance * s * s).collect();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
    }

    /// The same config with jump-aware sampling switched off.
    pub fn old_mode(&self) -> Self {
        MppiConfig {
            jump_sampling_enabled: false,
            ..self.clone()
        }
    }
}

pub const ZERO_ONE_LAW_BOUND: f64 = 0.1;

/// Checks every [`MppiConfig`] invariant, reporting all violations at once.
pub fn validate_config(cfg: MppiConfig) -> Result<MppiConfig> {
    let mut bad = Vec::new();
    if !(cfg.lambda > 0.0) {
        bad.push(Violation::NonPositiveLambda(cfg.lambda));
    }
    if !(cfg.c >= 1.0) {
        bad.push(Violation::ScaleBelowOne(cfg.c));
    }
    if !(cfg.dt > 0.0) {
        bad.push(Violation::NonPositiveDt(cfg.dt));
    }
    if !(cfg.nu >= 0.0) {
        bad.push(Violation::NegativeRate(cfg.nu));
    } else if cfg.dt > 0.0 && !(cfg.nu * cfg.dt < ZERO_ONE_LAW_BOUND) {
        bad.push(Violation::ZeroOneLawViolated(cfg.nu * cfg.dt));
    }
    if cfg.horizon_n == 0 {
        bad.push(Violation::EmptyHorizon);
    }
    if cfg.samples_m == 0 {
        bad.push(Violation::NoSamples);
    }
    let m = cfg.control_dim();
    for (name, cov) in [("sigma_d", &cfg.sigma_d), ("sigma_j", &cfg.sigma_j)] {
        if cov.nrows() != m || cov.ncols() != m {
            bad.push(Violation::CovarianceShape {
                name,
                rows: cov.nrows(),
                cols: cov.ncols(),
                expected: m,
            });
        } else if !is_spd(cov) {
            bad.push(Violation::NotPositiveDefinite { name });
        }
    }
    if m == 0 {
        bad.push(Violation::InitLength {
            got: 0,
            expected: cfg.sigma_d.nrows(),
        });
    }
    if bad.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(bad))
    }
}

/// Symmetric to a relative 1e-12 and all eigenvalues strictly positive.
pub fn is_spd(a: &DMatrix<f64>) -> bool {
    if a.nrows() != a.ncols() || a.nrows() == 0 || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    let eig = SymmetricEigen::new(a.clone());
    eig.eigenvalues.iter().all(|&l| l > 0.0)
}

/// `N x m` controls, row `j` applied over `[j dt, (j+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    controls: Vec<f64>,
    m: usize,
    pub dt: f64,
}

impl ControlSequence {
    pub fn new(controls: Vec<f64>, m: usize, dt: f64) -> Result<Self> {
        if m == 0 || !controls.len().is_multiple_of(m) {
            return Err(Error::Dimension {
                what: "control sequence",
                expected: m,
                got: controls.len(),
            });
        }
        Ok(ControlSequence { controls, m, dt })
    }

    pub fn constant(u: &[f64], horizon: usize, dt: f64) -> Self {
        let controls = (0..horizon).flat_map(|_| u.iter().copied()).collect();
        ControlSequence {
            controls,
            m: u.len(),
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.controls[j * self.m..(j + 1) * self.m]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.controls[j * self.m..(j + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.controls
    }
}

/// `(N+1) x n` states; row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    states: Vec<f64>,
    n: usize,
    pub dt: f64,
}

impl StateTrajectory {
    pub fn from_initial(x0: &[f64], dt: f64, capacity: usize) -> Self {
        let mut states = Vec::with_capacity(x0.len() * (capacity + 1));
        states.extend_from_slice(x0);
        StateTrajectory {
            states,
            n: x0.len(),
            dt,
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.n);
        self.states.extend_from_slice(x);
    }

    /// Number of stored states (steps + 1).
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.states[j * self.n..(j + 1) * self.n]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.states
    }
}

/// One rollout's sampled perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub eps_d: Vec<f64>,
    pub jump_indicator: Vec<bool>,
    pub eps_j: Vec<f64>,
    pub eps_combined: Vec<f64>,
    pub m: usize,
}

impl NoiseRealization {
    /// Builds a realization from its parts, zeroing marks where no jump occurred
    /// and forming `eps_combined = eps_d + eps_j`.
    pub fn compose(eps_d: Vec<f64>, jump_indicator: Vec<bool>, mut eps_j: Vec<f64>, m: usize) -> Result<Self> {
        let n = jump_indicator.len();
        for (what, len) in [("eps_d", eps_d.len()), ("eps_j", eps_j.len())] {
            if len != n * m {
                return Err(Error::Dimension {
                    what,
                    expected: n * m,
                    got: len,
                });
            }
        }
        for (j, &hit) in jump_indicator.iter().enumerate() {
            if !hit {
                eps_j[j * m..(j + 1) * m].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let eps_combined = eps_d.iter().zip(&eps_j).map(|(a, b)| a + b).collect();
        Ok(NoiseRealization {
            eps_d,
            jump_indicator,
            eps_j,
            eps_combined,
            m,
        })
    }

    pub fn zeros(steps: usize, m: usize) -> Self {
        NoiseRealization {
            eps_d: vec![0.0; steps * m],
            jump_indicator: vec![false; steps],
            eps_j: vec![0.0; steps * m],
            eps_combined: vec![0.0; steps * m],
            m,
        }
    }

    pub fn len(&self) -> usize {
        self.jump_indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_indicator.is_empty()
    }

    pub fn eps_d_row(&self, j: usize) -> &[f64] {
        &self.eps_d[j * self.m..(j + 1) * self.m]
    }

    pub fn eps_j_row(&self, j: usize) -> &[f64] {
        &self.eps_j[j * self.m..(j + 1) * self.m]
    }

    pub fn combined_row(&self, j: usize) -> &[f64] {
        &self.eps_combined[j * self.m..(j + 1) * self.m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub trajectory: StateTrajectory,
    pub noise: NoiseRealization,
    /// Importance-sampling-modified trajectory cost; `+inf` when diverged.
    pub cost: f64,
    /// Step at which the state stopped being finite.
    pub diverged_at: Option<usize>,
}
