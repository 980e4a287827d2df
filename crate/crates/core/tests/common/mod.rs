#![allow(dead_code)]

use std::sync::Arc;

use jump_mppi::controller::{compute_weights, mppi_iteration, ControllerState};
use jump_mppi::cost::{importance_matrices, CostModel, FnCost, NoiseCoupling, StateCost};
use jump_mppi::dynamics::{rollout, DynamicsModel, Integrator};
use jump_mppi::harness::{run_trial, CartpoleTask, QuadrotorTask, Task};
use jump_mppi::noise::{sample_jump_events, NoiseSampler, RngStream};
use jump_mppi::theory::{
    girsanov_log_ratio_p_over_q, log_pdf, log_pdf_gradient, stochastic_opt_update, ExpFamilyParams,
};
use jump_mppi::types::{ControlSequence, JumpScaling, MppiConfig, NoiseRealization};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// `A A^T + m I` scaled into a comfortable range.
pub fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, m, m);
    (&a * a.transpose() + DMatrix::identity(m, m) * m as f64) * rng.gen_range(0.2..3.0)
}

/// `x' = A x + G u`, with noise through `B` (defaults to `G`).
pub struct ConstLinear {
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub b: Option<DMatrix<f64>>,
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            out[i * m.ncols() + k] = m[(i, k)];
        }
    }
}

impl DynamicsModel for ConstLinear {
    fn state_dim(&self) -> usize {
        self.g.nrows()
    }

    fn control_dim(&self) -> usize {
        self.g.ncols()
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let v = &self.a * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }

    fn control_matrix(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        write_row_major(&self.g, out);
    }

    fn diffusion_matrix(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.b {
            Some(b) => write_row_major(b, out),
            None => self.control_matrix(x, t, out),
        }
    }

    fn jump_matrix(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.diffusion_matrix(x, t, out)
    }

    fn noise_through_controls(&self) -> bool {
        self.b.is_none()
    }
}

pub fn quadratic_cost() -> Arc<dyn StateCost> {
    Arc::new(FnCost::new(
        |x: &[f64], _t: f64| x.iter().map(|v| v * v).sum::<f64>(),
        |x: &[f64]| 3.0 * x.iter().map(|v| v * v).sum::<f64>(),
    ))
}

/// Central differences of `ln p` in the natural parameter of step `j`.
pub fn fd_natural_gradient(u: &[f64], params: &ExpFamilyParams, j: usize, jump: bool, h: f64) -> DVector<f64> {
    let theta = params.natural_params(j, jump).unwrap();
    let m = theta.len();
    let eval = |th: &DVector<f64>| {
        let mean = params.mean_from_natural(th, jump).unwrap();
        let mut p = params.clone();
        p.mu[j * m..(j + 1) * m].copy_from_slice(mean.as_slice());
        log_pdf(u, &p, j, jump).unwrap()
    };
    DVector::from_fn(m, |i, _| {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += h;
        dn[i] -= h;
        (eval(&up) - eval(&dn)) / (2.0 * h)
    })
}

/// Largest relative gap between the analytic natural-parameter gradient and
/// central differences over `instances` random cases.
pub fn natural_gradient_worst_error(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = r.gen_range(1..=4);
        let n = r.gen_range(1..=5);
        let params = ExpFamilyParams {
            mu: (0..n * m).map(|_| 2.0 * normal(&mut r)).collect(),
            sigma_d: random_spd(&mut r, m),
            sigma_j: random_spd(&mut r, m),
            nu: r.gen_range(0.05..2.0),
            dt: 0.02,
        };
        let j = r.gen_range(0..n);
        let jump = r.gen_bool(0.5);
        let u: Vec<f64> = (0..m).map(|_| 3.0 * normal(&mut r)).collect();
        let analytic = log_pdf_gradient(&u, &params, j, jump).unwrap();
        let fd = fd_natural_gradient(&u, &params, j, jump, 1e-4);
        let err = (&fd - &analytic).norm() / analytic.norm().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Builds the controller and the gradient-ascent reference on shared noise
/// tables (`u = 0`, `c = 1`, `alpha = 1`) and reports the first mismatch.
pub fn update_laws_agree(task: &Task, seed: u64, samples: usize) -> Result<(), String> {
    let model = task.model().unwrap();
    let m = model.control_dim();
    let cfg = MppiConfig {
        lambda: 0.7,
        c: 1.0,
        sigma_d: MppiConfig::noise_matrix(1.0, &vec![1.0; m]),
        sigma_j: MppiConfig::noise_matrix(4.0, &vec![1.0; m]),
        nu: 2.0,
        dt: 0.02,
        horizon_n: 25,
        samples_m: samples,
        u_init: vec![0.0; m],
        jump_sampling_enabled: true,
        jump_scaling: JumpScaling::SqrtDt,
    };
    let cost = CostModel {
        state_cost: quadratic_cost(),
        r: DMatrix::identity(m, m) * cfg.lambda,
        lambda: cfg.lambda,
        c: cfg.c,
        coupling: NoiseCoupling::ControlChannel,
    };
    let ctrl = ControllerState::new(cfg.clone()).map_err(|e| e.to_string())?;
    let x0 = task.initial_state();
    let (updated, diag) = mppi_iteration(&ctrl, model.as_ref(), &cost, &x0, seed).map_err(|e| e.to_string())?;

    // the reference recomputes the plain path cost S = phi + sum q dt
    let sampler = NoiseSampler::from_config(&cfg).unwrap();
    let integ = Integrator::new(cfg.dt).with_jump_scaling(cfg.jump_scaling);
    let mut noises = Vec::new();
    let mut costs = Vec::new();
    for k in 0..samples {
        let noise = sampler.realization(RngStream::for_rollout(seed, 0, samples, k));
        let r = rollout(model.as_ref(), &integ, &x0, &ctrl.nominal_controls, &noise, &cost).unwrap();
        let mut s = 0.0;
        for j in 0..cfg.horizon_n {
            s += cost.state_cost.running(r.trajectory.row(j), j as f64 * cfg.dt) * cfg.dt;
        }
        let s = cost.state_cost.terminal(r.trajectory.last()) + s;
        costs.push(if s.is_finite() { s } else { f64::INFINITY });
        noises.push(noise);
    }
    let mu = vec![0.0; cfg.horizon_n * m];
    let reference = stochastic_opt_update(&mu, &costs, &noises, 1.0, cfg.lambda).map_err(|e| e.to_string())?;

    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&diag.weights) != bits(&reference.weights) {
        return Err("weight vectors differ".into());
    }
    if bits(&diag.perturbation_mean) != bits(&reference.perturbation_mean) {
        return Err("perturbation means differ".into());
    }
    let inv = 1.0 / cfg.dt.sqrt();
    let scaled: Vec<f64> = reference.mu.iter().map(|v| v * inv).collect();
    let ctrl_delta: Vec<f64> = updated.as_slice().to_vec();
    if bits(&ctrl_delta) != bits(&scaled) {
        return Err("control update differs from the natural-parameter step".into());
    }
    if bits(&compute_weights(&costs, cfg.lambda).unwrap()) != bits(&reference.weights) {
        return Err("compute_weights differs from reference weights".into());
    }
    Ok(())
}

/// A random model, path and cost setting for the cost/likelihood identity.
pub struct IdentityCase {
    pub model: Arc<dyn DynamicsModel>,
    pub x0: Vec<f64>,
    pub controls: ControlSequence,
    pub noise: NoiseRealization,
    pub lambda: f64,
    pub c: f64,
    pub dt: f64,
}

pub fn identity_case(r: &mut ChaCha8Rng, which: usize) -> IdentityCase {
    let (model, x0): (Arc<dyn DynamicsModel>, Vec<f64>) = match which % 3 {
        0 => {
            let task = Task::Cartpole(CartpoleTask::default());
            let x0 = (0..4).map(|_| normal(r)).collect();
            (task.model().unwrap(), x0)
        }
        1 => {
            let task = Task::Quadrotor(QuadrotorTask::default());
            let mut x0: Vec<f64> = (0..12).map(|_| 0.3 * normal(r)).collect();
            x0[2] += 2.0;
            (task.model().unwrap(), x0)
        }
        _ => {
            let n = 3;
            let m = 2;
            let g = random_matrix(r, n, m);
            let k = random_spd(r, m);
            let model = ConstLinear {
                a: random_matrix(r, n, n) * 0.3,
                b: Some(&g * k),
                g,
            };
            let x0 = (0..n).map(|_| normal(r)).collect();
            (Arc::new(model), x0)
        }
    };
    let m = model.control_dim();
    let steps = r.gen_range(1..=30);
    let dt = [0.01, 0.02, 0.05][r.gen_range(0..3)];
    let c: f64 = r.gen_range(1.0..6.0);
    let controls =
        ControlSequence::new((0..steps * m).map(|_| 2.0 * normal(r)).collect(), m, dt).unwrap();
    let eps_d: Vec<f64> = (0..steps * m).map(|_| c.sqrt() * normal(r)).collect();
    let jumps: Vec<bool> = (0..steps).map(|_| r.gen_bool(0.2)).collect();
    let eps_j: Vec<f64> = (0..steps * m).map(|_| 2.0 * normal(r)).collect();
    let noise = NoiseRealization::compose(eps_d, jumps, eps_j, m).unwrap();
    IdentityCase {
        model,
        x0,
        controls,
        noise,
        lambda: r.gen_range(0.05..5.0),
        c,
        dt,
    }
}

/// `(S~, S, log dP/dQ)` along the rolled-out path of `case`.
pub fn identity_terms(case: &IdentityCase) -> (f64, f64, f64) {
    let model = case.model.as_ref();
    let mats = importance_matrices(model, &case.x0, 0.0).unwrap();
    let cost = CostModel {
        state_cost: quadratic_cost(),
        r: mats.calg * case.lambda,
        lambda: case.lambda,
        c: case.c,
        coupling: NoiseCoupling::StateDependent(case.model.clone()),
    };
    let integ = Integrator::new(case.dt);
    let r = rollout(model, &integ, &case.x0, &case.controls, &case.noise, &cost).unwrap();
    let states = &r.trajectory;
    let mut s = 0.0;
    for j in 0..case.controls.len() {
        s += cost.state_cost.running(states.row(j), j as f64 * case.dt) * case.dt;
    }
    let s = cost.state_cost.terminal(states.last()) + s;
    let log_ratio =
        girsanov_log_ratio_p_over_q(states, &case.controls, &case.noise, model, case.c, case.dt).unwrap();
    (r.cost, s, log_ratio)
}

/// Largest relative violation of `S~ = S - lambda log dP/dQ` over `paths`
/// random paths. Cases whose control cost matrix varies with the state are
/// excluded by construction: all three model families have constant `calG`.
pub fn cost_identity_worst_error(paths: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..paths {
        let case = identity_case(&mut r, i);
        let (tilde, s, log_ratio) = identity_terms(&case);
        let rhs = s - case.lambda * log_ratio;
        let err = (tilde - rhs).abs() / tilde.abs().max(rhs.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Empirical jump frequency over `steps` draws, split across streams of
/// 1000 steps, and its binomial standard error.
pub fn jump_frequency(nu: f64, dt: f64, steps: usize, seed: u64) -> (f64, f64) {
    let per = 1000;
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut id = 0;
    while total < steps {
        let n = per.min(steps - total);
        hits += sample_jump_events(RngStream::new(seed, id), n, nu, dt).iter().filter(|&&b| b).count();
        total += n;
        id += 1;
    }
    let p = nu * dt;
    (hits as f64 / total as f64, (p * (1.0 - p) / total as f64).sqrt())
}

/// Checks normalization, baseline invariance and monotonicity of the weights
/// on `suites` random cost vectors. Costs and shifts are multiples of a common
/// power of two small enough that every shifted difference is exact.
pub fn weight_properties(suites: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for s in 0..suites {
        let len = r.gen_range(1..200);
        // costs and shifts live on a dyadic grid, so shifted differences are exact
        let quantum = 2f64.powi(r.gen_range(-20..0));
        let scale = 10f64.powf(r.gen_range(-3.0..4.0));
        let costs: Vec<f64> = (0..len)
            .map(|_| ((scale * normal(&mut r).abs()) / quantum).round() * quantum)
            .collect();
        let lambda = 10f64.powf(r.gen_range(-2.0..2.0));
        let w = compute_weights(&costs, lambda).map_err(|e| e.to_string())?;
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(format!("suite {s}: weights sum to {sum}"));
        }
        let shift = ((scale * r.gen_range(-50.0..50.0)) / quantum).round() * quantum;
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let w2 = compute_weights(&shifted, lambda).map_err(|e| e.to_string())?;
        if let Some(i) = (0..len).find(|&i| (w[i] - w2[i]).abs() > 1e-12) {
            return Err(format!("suite {s}: baseline shift moved weight {i}: {} vs {}", w[i], w2[i]));
        }
        for i in 0..len {
            for k in 0..len {
                if costs[i] < costs[k] && w[i] < w[k] {
                    return Err(format!("suite {s}: lower cost {i} has smaller weight than {k}"));
                }
            }
        }
    }
    Ok(())
}

/// Runs a short closed loop for the jump-sampling config at `nu = 0` and for
/// its old-mode twin; `Err` names the first seed whose controls differ.
pub fn zero_rate_matches_old_mode(task: &Task, seeds: std::ops::Range<u64>) -> Result<(), String> {
    let model = task.model().unwrap();
    let m = model.control_dim();
    let short = match task {
        Task::Cartpole(t) => Task::Cartpole(CartpoleTask { duration: 0.2, ..t.clone() }),
        Task::Quadrotor(t) => Task::Quadrotor(QuadrotorTask { duration: 0.2, ..t.clone() }),
    };
    let cfg = MppiConfig {
        lambda: 1.0,
        c: 2.0,
        sigma_d: MppiConfig::noise_matrix(1.0, &vec![1.0; m]),
        sigma_j: MppiConfig::noise_matrix(9.0, &vec![1.0; m]),
        nu: 0.0,
        dt: 0.02,
        horizon_n: 20,
        samples_m: 64,
        u_init: task.default_u_init(),
        jump_sampling_enabled: true,
        jump_scaling: JumpScaling::SqrtDt,
    };
    for seed in seeds {
        let new = run_trial(&short, &cfg, 1.0, seed, "p2").map_err(|e| e.to_string())?;
        let old = run_trial(&short, &cfg.old_mode(), 1.0, seed, "p2").map_err(|e| e.to_string())?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&new.controls) != bits(&old.controls) || bits(&new.states) != bits(&old.states) {
            return Err(format!("{} seed {seed}: controls differ", task.name()));
        }
    }
    Ok(())
}
