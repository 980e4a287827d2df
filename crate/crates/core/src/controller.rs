//! Importance-weighted control update and the receding-horizon loop body.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cost::CostModel;
use crate::dynamics::{propagate, DynamicsModel, Integrator, StepScratch};
use crate::error::{Error, Result};
use crate::noise::{NoiseSampler, RngStream};
use crate::types::{validate_config, ControlSequence, MppiConfig, NoiseRealization, RolloutResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub nominal_controls: ControlSequence,
    pub iteration_index: u64,
    pub config: MppiConfig,
    /// `calG^{-1} calB`; `None` means identity (noise through the control channels).
    pub mapping: Option<DMatrix<f64>>,
}

impl ControllerState {
    /// Validates `config` and starts from `u_init` repeated over the horizon.
    pub fn new(config: MppiConfig) -> Result<Self> {
        let config = validate_config(config)?;
        let nominal_controls = ControlSequence::constant(&config.u_init, config.horizon_n, config.dt);
        Ok(ControllerState {
            nominal_controls,
            iteration_index: 0,
            config,
            mapping: None,
        })
    }

    pub fn integrator(&self) -> Integrator {
        Integrator::new(self.config.dt).with_jump_scaling(self.config.jump_scaling)
    }

    /// Installs the new sequence, then shifts it for the next step.
    pub fn advance(&mut self, updated: ControlSequence) {
        self.nominal_controls = warm_start_shift(&updated, &self.config.u_init);
        self.iteration_index += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub weights: Vec<f64>,
    pub min_cost: f64,
    pub effective_sample_size: f64,
    pub per_step_update_norm: Vec<f64>,
    /// `sum_m w_m eps_combined[m][j]`, row-major `N x m`, before the
    /// `1/sqrt(dt)` scaling and the mapping.
    pub perturbation_mean: Vec<f64>,
    pub diverged_rollouts: usize,
}

/// Softmax of `-cost / lambda` after subtracting the smallest finite cost.
/// Non-finite costs get weight zero.
pub fn compute_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NoViableRollout);
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - min) / lambda).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

fn perturbation_mean(weights: &[f64], noises: &[&NoiseRealization], steps: usize, m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; steps * m];
    for (w, noise) in weights.iter().zip(noises) {
        for (a, e) in acc.iter_mut().zip(&noise.eps_combined) {
            *a += w * e;
        }
    }
    acc
}

fn apply_update(
    nominal: &ControlSequence,
    mean: &[f64],
    mapping: Option<&DMatrix<f64>>,
) -> (ControlSequence, Vec<f64>) {
    let m = nominal.control_dim();
    let inv_sqrt_dt = 1.0 / nominal.dt.sqrt();
    let mut out = nominal.clone();
    let mut norms = Vec::with_capacity(nominal.len());
    let mut delta = vec![0.0; m];
    for j in 0..nominal.len() {
        let e = &mean[j * m..(j + 1) * m];
        match mapping {
            None => delta.copy_from_slice(e),
            Some(map) => {
                for (i, d) in delta.iter_mut().enumerate() {
                    *d = (0..m).map(|k| map[(i, k)] * e[k]).sum();
                }
            }
        }
        let row = out.row_mut(j);
        let mut sq = 0.0;
        for (u, d) in row.iter_mut().zip(&delta) {
            let step = d * inv_sqrt_dt;
            *u += step;
            sq += step * step;
        }
        norms.push(sq.sqrt());
    }
    (out, norms)
}

/// `u*_j = u_j + mapping * (sum_m w_m eps_combined[m][j]) / sqrt(dt)`.
pub fn update_controls(
    ctrl: &ControllerState,
    rollouts: &[RolloutResult],
    mapping: Option<&DMatrix<f64>>,
) -> Result<ControlSequence> {
    let costs: Vec<f64> = rollouts.iter().map(|r| r.cost).collect();
    let weights = compute_weights(&costs, ctrl.config.lambda)?;
    let noises: Vec<&NoiseRealization> = rollouts.iter().map(|r| &r.noise).collect();
    let nominal = &ctrl.nominal_controls;
    for r in rollouts {
        if r.noise.len() != nominal.len() {
            return Err(Error::Dimension {
                what: "rollout noise length",
                expected: nominal.len(),
                got: r.noise.len(),
            });
        }
    }
    let mean = perturbation_mean(&weights, &noises, nominal.len(), nominal.control_dim());
    Ok(apply_update(nominal, &mean, mapping).0)
}

/// Costs and noises of the `M` sampled rollouts around the nominal sequence.
/// Rollout `k` reads stream `iteration * M + k` of `master_seed`.
pub fn sample_rollouts(
    ctrl: &ControllerState,
    model: &dyn DynamicsModel,
    cost: &CostModel,
    x0: &[f64],
    master_seed: u64,
) -> Result<Vec<(f64, NoiseRealization)>> {
    let cfg = &ctrl.config;
    if x0.len() != model.state_dim() || cfg.control_dim() != model.control_dim() {
        return Err(Error::Dimension {
            what: "controller/model",
            expected: model.state_dim(),
            got: x0.len(),
        });
    }
    let sampler = NoiseSampler::from_config(cfg)?;
    let integ = ctrl.integrator();
    let controls = &ctrl.nominal_controls;
    let samples = (0..cfg.samples_m)
        .into_par_iter()
        .map_init(
            || StepScratch::for_model(model),
            |scratch, k| {
                let stream = RngStream::for_rollout(master_seed, ctrl.iteration_index, cfg.samples_m, k);
                let noise = sampler.realization(stream);
                let (s, _) = propagate(model, &integ, x0, controls, &noise, cost, scratch, |_| {});
                (s, noise)
            },
        )
        .collect();
    Ok(samples)
}

/// One sampling-and-update pass from state `x0`.
pub fn mppi_iteration(
    ctrl: &ControllerState,
    model: &dyn DynamicsModel,
    cost: &CostModel,
    x0: &[f64],
    master_seed: u64,
) -> Result<(ControlSequence, UpdateDiagnostics)> {
    let samples = sample_rollouts(ctrl, model, cost, x0, master_seed)?;
    let costs: Vec<f64> = samples.iter().map(|(c, _)| *c).collect();
    let weights = compute_weights(&costs, ctrl.config.lambda)?;
    let noises: Vec<&NoiseRealization> = samples.iter().map(|(_, n)| n).collect();
    let nominal = &ctrl.nominal_controls;
    let mean = perturbation_mean(&weights, &noises, nominal.len(), nominal.control_dim());
    let (updated, per_step_update_norm) = apply_update(nominal, &mean, ctrl.mapping.as_ref());
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let effective_sample_size = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let diverged_rollouts = costs.iter().filter(|c| !c.is_finite()).count();
    Ok((
        updated,
        UpdateDiagnostics {
            weights,
            min_cost,
            effective_sample_size,
            per_step_update_norm,
            perturbation_mean: mean,
            diverged_rollouts,
        },
    ))
}

/// Drops `u_0`, shifts the rest forward and appends `u_init`.
pub fn warm_start_shift(controls: &ControlSequence, u_init: &[f64]) -> ControlSequence {
    let m = controls.control_dim();
    let mut data = controls.as_slice()[m.min(controls.as_slice().len())..].to_vec();
    data.extend_from_slice(u_init);
    ControlSequence::new(data, m, controls.dt).expect("shift preserves shape")
}
