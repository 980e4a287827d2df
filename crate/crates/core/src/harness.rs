//! Closed-loop experiments: a plant driven by true Gaussian and jump noise,
//! controlled by one MPPI update per step, plus batch statistics.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{mppi_iteration, ControllerState};
use crate::cost::{control_cost_matrix_from_dynamics, CartpoleCost, CostModel, NoiseCoupling, QuadrotorCost};
use crate::dynamics::{
    cartpole_dynamics, clamp_control, quadrotor_dynamics, CartpoleParams, DynamicsModel, QuadrotorParams,
    StepScratch,
};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseSampler, RngStream};
use crate::types::MppiConfig;

const CONTROLLER_TAG: u64 = 0xc0;
const PLANT_TAG: u64 = 0x91a7;

/// Iterations slower than this miss the 50 Hz budget.
pub const REAL_TIME_BUDGET_S: f64 = 0.020;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Diffusion-only sampler.
    Old,
    /// Jump-aware sampler.
    New,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Old => "old",
            Variant::New => "new",
        }
    }

    pub fn apply(self, cfg: &MppiConfig) -> MppiConfig {
        MppiConfig {
            jump_sampling_enabled: self == Variant::New,
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleTask {
    pub params: CartpoleParams,
    pub cost: CartpoleCost,
    pub initial_state: [f64; 4],
    pub duration: f64,
    /// Length of the final window that must stay balanced.
    pub hold_window: f64,
    pub angle_band: f64,
    pub position_band: f64,
}

impl Default for CartpoleTask {
    fn default() -> Self {
        CartpoleTask {
            params: CartpoleParams::default(),
            cost: CartpoleCost::default(),
            initial_state: [0.0; 4],
            duration: 10.0,
            hold_window: 2.0,
            angle_band: 0.2,
            position_band: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorTask {
    pub params: QuadrotorParams,
    pub cost: QuadrotorCost,
    pub initial_position: [f64; 3],
    pub duration: f64,
    pub goal_radius: f64,
    pub max_tilt: f64,
}

impl Default for QuadrotorTask {
    fn default() -> Self {
        QuadrotorTask {
            params: QuadrotorParams::default(),
            cost: QuadrotorCost::default(),
            initial_position: [0.0, 0.0, 1.0],
            duration: 8.0,
            goal_radius: 0.5,
            max_tilt: 80f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Cartpole(CartpoleTask),
    Quadrotor(QuadrotorTask),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Cartpole(_) => "cartpole",
            Task::Quadrotor(_) => "quadrotor",
        }
    }

    pub fn model(&self) -> Result<Arc<dyn DynamicsModel>> {
        Ok(match self {
            Task::Cartpole(t) => Arc::new(cartpole_dynamics(t.params.clone())?),
            Task::Quadrotor(t) => Arc::new(quadrotor_dynamics(t.params.clone())?),
        })
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            Task::Cartpole(t) => t.initial_state.to_vec(),
            Task::Quadrotor(t) => {
                let mut x = vec![0.0; 12];
                x[..3].copy_from_slice(&t.initial_position);
                x
            }
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Task::Cartpole(t) => t.duration,
            Task::Quadrotor(t) => t.duration,
        }
    }

    /// `u_init` that holds the task's equilibrium: zero force, or hover thrust.
    pub fn default_u_init(&self) -> Vec<f64> {
        match self {
            Task::Cartpole(_) => vec![0.0],
            Task::Quadrotor(t) => vec![t.params.mass * t.params.gravity, 0.0, 0.0, 0.0],
        }
    }

    /// Cost model with `R = control_weight * lambda G^T (B B^T)^+ G` taken at
    /// the initial state.
    pub fn cost_model(&self, cfg: &MppiConfig, control_weight: f64) -> Result<CostModel> {
        let model = self.model()?;
        let r = control_cost_matrix_from_dynamics(model.as_ref(), &self.initial_state(), 0.0, cfg.lambda)?;
        let state_cost: Arc<dyn crate::cost::StateCost> = match self {
            Task::Cartpole(t) => Arc::new(t.cost.clone()),
            Task::Quadrotor(t) => Arc::new(t.cost.clone()),
        };
        Ok(CostModel {
            state_cost,
            r: r * control_weight,
            lambda: cfg.lambda,
            c: cfg.c,
            coupling: NoiseCoupling::ControlChannel,
        })
    }

    pub fn steps(&self, dt: f64) -> usize {
        (self.duration() / dt).round() as usize
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Whether a state history (row-major, `n` columns, sampled every `dt`)
/// completes the task.
///
/// Cart-pole: pole within `angle_band` of upright and cart within
/// `position_band` for the final `hold_window`. Quadrotor: within
/// `goal_radius` of the target at the end, never at or below `z = 0`, and
/// roll and pitch always under `max_tilt`.
pub fn success_predicate(task: &Task, states: &[f64], dt: f64) -> bool {
    match task {
        Task::Cartpole(t) => {
            let rows = states.len() / 4;
            if rows == 0 {
                return false;
            }
            let window = ((t.hold_window / dt).round() as usize).min(rows - 1);
            states[(rows - 1 - window) * 4..].chunks_exact(4).all(|x| {
                x.iter().all(|v| v.is_finite())
                    && wrap_angle(x[2] - PI).abs() < t.angle_band
                    && x[0].abs() < t.position_band
            })
        }
        Task::Quadrotor(t) => {
            let rows = states.len() / 12;
            if rows == 0 {
                return false;
            }
            let safe = states
                .chunks_exact(12)
                .all(|x| x[2] > 0.0 && x[6].abs() < t.max_tilt && x[7].abs() < t.max_tilt);
            let last = &states[(rows - 1) * 12..];
            let dist = (0..3)
                .map(|i| (last[i] - t.cost.target[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            safe && dist < t.goal_radius
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub config_id: String,
    pub seed: u64,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    /// `(steps + 1) x n`; after a divergence the last finite state is repeated.
    pub states: Vec<f64>,
    /// `steps x m` executed (clamped) controls.
    pub controls: Vec<f64>,
    pub plant_jumps: Vec<bool>,
    pub success: bool,
    pub diverged_at: Option<usize>,
    pub wall_time_per_iteration: Vec<f64>,
}

impl TrialRecord {
    pub fn steps(&self) -> usize {
        self.plant_jumps.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.control_dim..(k + 1) * self.control_dim]
    }
}

/// Seeds for the controller's sampler and the plant's disturbance of trial `seed`.
pub fn trial_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, CONTROLLER_TAG), derive_seed(seed, PLANT_TAG))
}

/// Runs one closed-loop MPC trial.
///
/// Each step runs one MPPI update from the current state, executes the first
/// control on the plant and warm-starts the next step with the shifted
/// sequence. The plant always experiences jumps, whatever the sampler does.
pub fn run_trial(task: &Task, cfg: &MppiConfig, control_weight: f64, seed: u64, config_id: &str) -> Result<TrialRecord> {
    let model = task.model()?;
    let cost = task.cost_model(cfg, control_weight)?;
    let mut ctrl = ControllerState::new(cfg.clone())?;
    let plant = NoiseSampler::plant(cfg)?;
    let integ = ctrl.integrator();
    let (ctrl_seed, plant_seed) = trial_seeds(seed);
    let steps = task.steps(cfg.dt);
    let (n, m) = (model.state_dim(), model.control_dim());

    let mut x = task.initial_state();
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(&x);
    let mut controls = Vec::with_capacity(steps * m);
    let mut plant_jumps = Vec::with_capacity(steps);
    let mut times = Vec::with_capacity(steps);
    let mut scratch = StepScratch::for_model(model.as_ref());
    let mut next = vec![0.0; n];
    let mut diverged_at = None;

    for k in 0..steps {
        if diverged_at.is_some() {
            states.extend_from_slice(&x);
            controls.extend(std::iter::repeat_n(0.0, m));
            plant_jumps.push(false);
            continue;
        }
        let started = Instant::now();
        let (updated, _) = mppi_iteration(&ctrl, model.as_ref(), &cost, &x, ctrl_seed)?;
        times.push(started.elapsed().as_secs_f64());

        let mut u = updated.row(0).to_vec();
        clamp_control(model.as_ref(), &mut u);
        let w = plant.realization(RngStream::new(plant_seed, k as u64));
        let ok = integ.step_into(
            model.as_ref(),
            k,
            &x,
            &u,
            w.eps_d_row(0),
            w.eps_j_row(0),
            w.jump_indicator[0],
            &mut scratch,
            &mut next,
        );
        controls.extend_from_slice(&u);
        plant_jumps.push(w.jump_indicator[0]);
        if ok {
            x.copy_from_slice(&next);
        } else {
            diverged_at = Some(k);
        }
        states.extend_from_slice(&x);
        ctrl.advance(updated);
    }

    let success = diverged_at.is_none() && success_predicate(task, &states, cfg.dt);
    Ok(TrialRecord {
        config_id: config_id.to_string(),
        seed,
        state_dim: n,
        control_dim: m,
        dt: cfg.dt,
        states,
        controls,
        plant_jumps,
        success,
        diverged_at,
        wall_time_per_iteration: times,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub trials: usize,
    pub success_rate: f64,
    /// `(steps + 1) x n` across-trial mean.
    pub mean: Vec<f64>,
    /// `1.96 sd / sqrt(trials)`, same shape as `mean`; zero for a single trial.
    pub ci_half_width: Vec<f64>,
    /// `None` for fewer than two trials.
    pub total_variance: Option<f64>,
    pub mean_iter_ms: f64,
    pub over_budget_iterations: usize,
}

/// Sum over states and steps of the unbiased across-trial variance.
pub fn total_variance(records: &[TrialRecord]) -> Result<f64> {
    let histories: Vec<&[f64]> = records.iter().map(|r| r.states.as_slice()).collect();
    total_variance_of(&histories)
}

/// [`total_variance`] over raw aligned histories.
pub fn total_variance_of(histories: &[&[f64]]) -> Result<f64> {
    if histories.len() < 2 {
        return Err(Error::VarianceUndefined);
    }
    let len = histories[0].len();
    if let Some(h) = histories.iter().find(|h| h.len() != len) {
        return Err(Error::Dimension {
            what: "trial history",
            expected: len,
            got: h.len(),
        });
    }
    let k = histories.len() as f64;
    let mut total = 0.0;
    for i in 0..len {
        let mean = histories.iter().map(|h| h[i]).sum::<f64>() / k;
        let ss: f64 = histories.iter().map(|h| (h[i] - mean).powi(2)).sum();
        total += ss / (k - 1.0);
    }
    Ok(total)
}

pub fn summarize(records: &[TrialRecord]) -> Result<BatchSummary> {
    let trials = records.len();
    if trials == 0 {
        return Err(Error::Config("batch has no trials".into()));
    }
    let len = records[0].states.len();
    let k = trials as f64;
    let mut mean = vec![0.0; len];
    let mut ci = vec![0.0; len];
    for i in 0..len {
        let mu = records.iter().map(|r| r.states[i]).sum::<f64>() / k;
        mean[i] = mu;
        if trials > 1 {
            let var = records.iter().map(|r| (r.states[i] - mu).powi(2)).sum::<f64>() / (k - 1.0);
            ci[i] = 1.96 * var.sqrt() / k.sqrt();
        }
    }
    let total_variance = if trials > 1 { Some(total_variance(records)?) } else { None };
    let times: Vec<f64> = records
        .iter()
        .flat_map(|r| r.wall_time_per_iteration.iter().copied())
        .collect();
    let mean_iter_ms = if times.is_empty() {
        0.0
    } else {
        1e3 * times.iter().sum::<f64>() / times.len() as f64
    };
    Ok(BatchSummary {
        trials,
        success_rate: records.iter().filter(|r| r.success).count() as f64 / k,
        mean,
        ci_half_width: ci,
        total_variance,
        mean_iter_ms,
        over_budget_iterations: times.iter().filter(|&&t| t > REAL_TIME_BUDGET_S).count(),
    })
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub variant: Variant,
    pub summary: BatchSummary,
    pub records: Vec<TrialRecord>,
}

/// Seed of trial `index` in a batch. Variants share it, so their plants see
/// identical disturbances.
pub fn trial_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Runs `trials` paired trials for each variant of `cfg`.
pub fn run_batch(
    task: &Task,
    cfg: &MppiConfig,
    control_weight: f64,
    variants: &[Variant],
    trials: usize,
    base_seed: u64,
    cell_id: &str,
) -> Result<Vec<BatchResult>> {
    if trials == 0 {
        return Err(Error::Config("trial count must be at least 1".into()));
    }
    variants
        .iter()
        .map(|&variant| {
            let vcfg = variant.apply(cfg);
            let id = format!("{cell_id}/{}", variant.name());
            let records = (0..trials)
                .into_par_iter()
                .map(|i| run_trial(task, &vcfg, control_weight, trial_seed(base_seed, i), &id))
                .collect::<Result<Vec<_>>>()?;
            Ok(BatchResult {
                variant,
                summary: summarize(&records)?,
                records,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(states: Vec<f64>, n: usize) -> TrialRecord {
        let steps = states.len() / n - 1;
        TrialRecord {
            config_id: "t".into(),
            seed: 0,
            state_dim: n,
            control_dim: 1,
            dt: 0.02,
            states,
            controls: vec![0.0; steps],
            plant_jumps: vec![false; steps],
            success: true,
            diverged_at: None,
            wall_time_per_iteration: vec![],
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn upright_hold_is_success() {
        let task = Task::Cartpole(CartpoleTask::default());
        let states: Vec<f64> = (0..501).flat_map(|_| [0.0, 0.0, PI, 0.0]).collect();
        assert!(success_predicate(&task, &states, 0.02));
    }

    #[test]
    fn small_oscillation_is_success() {
        let task = Task::Cartpole(CartpoleTask::default());
        let states: Vec<f64> = (0..501)
            .flat_map(|k| [0.0, 0.0, PI + 0.1 * (k as f64 * 0.3).sin(), 0.0])
            .collect();
        assert!(success_predicate(&task, &states, 0.02));
        let fallen: Vec<f64> = (0..501)
            .flat_map(|k| [0.0, 0.0, if k == 450 { PI - 0.5 } else { PI }, 0.0])
            .collect();
        assert!(!success_predicate(&task, &fallen, 0.02));
        // early excursions outside the window do not count
        let early: Vec<f64> = (0..501)
            .flat_map(|k| [0.0, 0.0, if k < 300 { 0.0 } else { PI }, 0.0])
            .collect();
        assert!(success_predicate(&task, &early, 0.02));
    }

    #[test]
    fn quadrotor_touching_ground_crashes() {
        let task = Task::Quadrotor(QuadrotorTask::default());
        let mut states = Vec::new();
        for k in 0..=400 {
            let mut x = [0.0; 12];
            let s = k as f64 / 400.0;
            x[0] = 4.0 * s;
            x[1] = 4.0 * s;
            x[2] = 1.0 + s;
            states.extend_from_slice(&x);
        }
        assert!(success_predicate(&task, &states, 0.02));
        states[200 * 12 + 2] = 0.0;
        assert!(!success_predicate(&task, &states, 0.02));
    }

    #[test]
    fn quadrotor_over_tilt_fails() {
        let task = Task::Quadrotor(QuadrotorTask::default());
        let mut x = [0.0; 12];
        x[..3].copy_from_slice(&[4.0, 4.0, 2.0]);
        let mut states: Vec<f64> = (0..10).flat_map(|_| x).collect();
        assert!(success_predicate(&task, &states, 0.02));
        states[5 * 12 + 7] = 81f64.to_radians();
        assert!(!success_predicate(&task, &states, 0.02));
    }

    #[test]
    fn total_variance_cases() {
        let a: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        let tv = total_variance_of(&[&a, &b]).unwrap();
        assert!((tv - 20.0).abs() < 1e-12);
        assert_eq!(total_variance_of(&[&a, &a, &a]).unwrap(), 0.0);
        let a5: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        let b5: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        assert!((total_variance_of(&[&a5, &b5]).unwrap() - tv).abs() < 1e-12);
        assert!(matches!(total_variance_of(&[&a]), Err(Error::VarianceUndefined)));
    }

    #[test]
    fn single_trial_summary() {
        let s = summarize(&[record(vec![1.0, 2.0, 3.0], 1)]).unwrap();
        assert_eq!(s.success_rate, 1.0);
        assert!(s.ci_half_width.iter().all(|&c| c == 0.0));
        assert_eq!(s.total_variance, None);
    }

    #[test]
    fn ci_is_normal_approximation() {
        let recs = [record(vec![0.0, 1.0], 1), record(vec![0.0, 3.0], 1)];
        let s = summarize(&recs).unwrap();
        assert_eq!(s.mean, vec![0.0, 2.0]);
        let sd = 2f64.sqrt();
        assert!((s.ci_half_width[1] - 1.96 * sd / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.ci_half_width[0], 0.0);
    }
}
