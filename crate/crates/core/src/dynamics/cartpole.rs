//! Frictionless cart-pole, force on the cart, pole modelled as a point mass
//! on a massless rod. State `(x, x_dot, theta, theta_dot)` with `theta = 0`
//! hanging down and `theta = pi` upright.

use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Pivot-to-mass distance.
    pub pole_half_length: f64,
    pub gravity: f64,
    pub control_limits: Option<Vec<(f64, f64)>>,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.81,
            control_limits: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CartpoleModel {
    params: CartpoleParams,
}

pub fn cartpole_dynamics(params: CartpoleParams) -> Result<CartpoleModel> {
    for (name, value) in [
        ("cart_mass", params.cart_mass),
        ("pole_mass", params.pole_mass),
        ("pole_half_length", params.pole_half_length),
        ("gravity", params.gravity),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::PhysicalParameter { name, value });
        }
    }
    if let Some(limits) = &params.control_limits {
        if limits.len() != 1 || limits[0].0 > limits[0].1 {
            return Err(Error::Config("cartpole control_limits must be one [min, max] pair".into()));
        }
    }
    Ok(CartpoleModel { params })
}

impl CartpoleModel {
    pub fn params(&self) -> &CartpoleParams {
        &self.params
    }

    /// Kinetic plus potential energy, zero at rest hanging down.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let CartpoleParams {
            cart_mass: mc,
            pole_mass: mp,
            pole_half_length: l,
            gravity: g,
            ..
        } = self.params;
        let (xd, th, thd) = (x[1], x[2], x[3]);
        0.5 * (mc + mp) * xd * xd
            + mp * l * xd * thd * th.cos()
            + 0.5 * mp * l * l * thd * thd
            + mp * g * l * (1.0 - th.cos())
    }
}

impl DynamicsModel for CartpoleModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.drift_and_control(x, t, out, &mut [0.0; 4]);
    }

    fn control_matrix(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.drift_and_control(x, t, &mut [0.0; 4], out);
    }

    fn drift_and_control(&self, x: &[f64], _t: f64, f: &mut [f64], g: &mut [f64]) {
        let CartpoleParams {
            cart_mass: mc,
            pole_mass: mp,
            pole_half_length: l,
            gravity: grav,
            ..
        } = self.params;
        let (s, c) = x[2].sin_cos();
        let thd = x[3];
        let inv_d = 1.0 / (mc + mp * s * s);
        f[0] = x[1];
        f[1] = mp * s * (l * thd * thd + grav * c) * inv_d;
        f[2] = thd;
        f[3] = (-mp * l * thd * thd * c * s - (mc + mp) * grav * s) * inv_d / l;
        g[0] = 0.0;
        g[1] = inv_d;
        g[2] = 0.0;
        g[3] = -c * inv_d / l;
    }

    fn control_limits(&self) -> Option<&[(f64, f64)]> {
        self.params.control_limits.as_deref()
    }

    fn state_names(&self) -> Vec<String> {
        ["x", "x_dot", "theta", "theta_dot"].map(String::from).to_vec()
    }

    fn control_names(&self) -> Vec<String> {
        vec!["force".into()]
    }
}
