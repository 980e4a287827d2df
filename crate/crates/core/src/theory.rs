//! Reference implementations of the objects behind the update law, used to
//! cross-check the controller: the per-step exponential-family density of a
//! jump-diffusion-perturbed control, its natural-parameter gradient, the
//! gradient-ascent update on the control mean, and the discretized
//! likelihood ratio between the uncontrolled and the sampling path measures.
//!
//! Nothing here is on the control loop's hot path.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dynamics::DynamicsModel;
use crate::cost::importance_matrices;
use crate::error::{Error, Result};
use crate::types::{ControlSequence, NoiseRealization, StateTrajectory};

/// Control means and noise parameters of the step-wise Gaussian/jump policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFamilyParams {
    /// `N x m`, row-major.
    pub mu: Vec<f64>,
    pub sigma_d: DMatrix<f64>,
    pub sigma_j: DMatrix<f64>,
    pub nu: f64,
    pub dt: f64,
}

impl ExpFamilyParams {
    pub fn control_dim(&self) -> usize {
        self.sigma_d.nrows()
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        let m = self.control_dim();
        &self.mu[j * m..(j + 1) * m]
    }

    /// `Sigma_D + I_j Sigma_J`.
    pub fn step_covariance(&self, jump: bool) -> DMatrix<f64> {
        if jump {
            &self.sigma_d + &self.sigma_j
        } else {
            self.sigma_d.clone()
        }
    }

    /// `theta_j = (Sigma_D + I_j Sigma_J)^{-1/2} mu_j`.
    pub fn natural_params(&self, j: usize, jump: bool) -> Result<DVector<f64>> {
        let isqrt = sym_power(&self.step_covariance(jump), -0.5)?;
        Ok(isqrt * DVector::from_column_slice(self.mean(j)))
    }

    /// Inverse of [`Self::natural_params`]: `(Sigma_D + I_j Sigma_J)^{1/2} theta`.
    pub fn mean_from_natural(&self, theta: &DVector<f64>, jump: bool) -> Result<DVector<f64>> {
        Ok(sym_power(&self.step_covariance(jump), 0.5)? * theta)
    }
}

/// `A^p` for symmetric positive-definite `A`.
pub fn sym_power(a: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::CovarianceFactorization);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(p)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn gaussian_log_density(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let m = x.len();
    let chol = cov.clone().cholesky().ok_or(Error::CovarianceFactorization)?;
    let diff = DVector::from_iterator(m, x.iter().zip(mean).map(|(a, b)| a - b));
    let sol = chol.solve(&diff);
    let maha = diff.dot(&sol);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (m as f64 * (2.0 * PI).ln() + log_det + maha))
}

/// Log of the indicator-selected branch of the step density, including the
/// `nu dt` or `1 - nu dt` branch probability.
pub fn log_pdf(u: &[f64], params: &ExpFamilyParams, j: usize, jump: bool) -> Result<f64> {
    let p = params.nu * params.dt;
    let branch = if jump { p.ln() } else { (1.0 - p).ln() };
    Ok(branch + gaussian_log_density(u, params.mean(j), &params.step_covariance(jump))?)
}

/// `grad_theta ln p = T(u_j) - theta_j = (Sigma_D + I_j Sigma_J)^{-1/2} (u_j - mu_j)`.
pub fn log_pdf_gradient(u: &[f64], params: &ExpFamilyParams, j: usize, jump: bool) -> Result<DVector<f64>> {
    let isqrt = sym_power(&params.step_covariance(jump), -0.5)?;
    let diff = DVector::from_iterator(u.len(), u.iter().zip(params.mean(j)).map(|(a, b)| a - b));
    Ok(isqrt * diff)
}

/// Result of one gradient step on the control mean.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticOptStep {
    pub mu: Vec<f64>,
    pub weights: Vec<f64>,
    /// `sum_m w_m (eps_D + I eps_J)`, `N x m`.
    pub perturbation_mean: Vec<f64>,
}

/// `mu <- mu + alpha * E[exp(-J/lambda) (eps_D + I eps_J)] / E[exp(-J/lambda)]`
/// over the given samples. The smallest finite cost is subtracted before
/// exponentiating; samples with non-finite cost carry no weight.
pub fn stochastic_opt_update(
    mu: &[f64],
    costs: &[f64],
    noises: &[NoiseRealization],
    alpha: f64,
    lambda: f64,
) -> Result<StochasticOptStep> {
    let mut best = f64::INFINITY;
    for &c in costs {
        if c.is_finite() && c < best {
            best = c;
        }
    }
    if !best.is_finite() {
        return Err(Error::NoViableRollout);
    }
    let mut weights = Vec::with_capacity(costs.len());
    for &c in costs {
        weights.push(if c.is_finite() { (-(c - best) / lambda).exp() } else { 0.0 });
    }
    let norm: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= norm;
    }
    let mut mean = vec![0.0; mu.len()];
    for (w, noise) in weights.iter().zip(noises) {
        if noise.eps_d.len() != mu.len() {
            return Err(Error::Dimension {
                what: "noise table",
                expected: mu.len(),
                got: noise.eps_d.len(),
            });
        }
        for (k, acc) in mean.iter_mut().enumerate() {
            // eps_j rows are zero where no jump occurred
            *acc += w * (noise.eps_d[k] + noise.eps_j[k]);
        }
    }
    let mu = mu.iter().zip(&mean).map(|(m, d)| m + alpha * d).collect();
    Ok(StochasticOptStep {
        mu,
        weights,
        perturbation_mean: mean,
    })
}

/// Exponent of `dP/dQ` for a discretized path sampled under `Q`
/// (mean `G u dt`, noise covariance scaled by `c`):
///
/// ```text
/// -sum_j ( 1/2 u^T calG u dt + u^T calB eps sqrt(dt) + 1/2 (1 - 1/c) eps^T bb eps )
/// ```
///
/// The full log density ratio adds [`sampling_log_normalizer`].
pub fn girsanov_log_ratio_p_over_q(
    states: &StateTrajectory,
    controls: &ControlSequence,
    noise: &NoiseRealization,
    model: &dyn DynamicsModel,
    c: f64,
    dt: f64,
) -> Result<f64> {
    let n = controls.len();
    if states.len() < n || noise.len() != n {
        return Err(Error::Dimension {
            what: "path length",
            expected: n,
            got: noise.len(),
        });
    }
    let mut total = 0.0;
    for j in 0..n {
        let t = j as f64 * dt;
        let mats = importance_matrices(model, states.row(j), t)?;
        let u = DVector::from_column_slice(controls.row(j));
        let e = DVector::from_column_slice(noise.combined_row(j));
        let ugu = u.dot(&(&mats.calg * &u));
        let ube = u.dot(&(&mats.calb * &e));
        let ebe = e.dot(&(&mats.bb * &e));
        total += 0.5 * ugu * dt + ube * dt.sqrt() + 0.5 * (1.0 - 1.0 / c) * ebe;
    }
    Ok(-total)
}

/// `N (m/2) ln c`: the log ratio of Gaussian normalizers between the
/// unscaled and the `c`-scaled noise over `n_steps` steps of `m` channels.
pub fn sampling_log_normalizer(c: f64, m: usize, n_steps: usize) -> f64 {
    n_steps as f64 * 0.5 * m as f64 * c.ln()
}
