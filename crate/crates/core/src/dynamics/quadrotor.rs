//! 12-state rigid-body quadrotor with Z-Y-X Euler angles.
//!
//! State: position (3), world-frame velocity (3), roll/pitch/yaw (3), body
//! rates (3). Controls: total thrust along body z and three body torques.

use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub arm_length: f64,
    pub inertia: [f64; 3],
    pub gravity: f64,
    pub control_limits: Option<Vec<(f64, f64)>>,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        QuadrotorParams {
            mass: 1.0,
            arm_length: 0.2,
            inertia: [0.01, 0.01, 0.02],
            gravity: 9.81,
            control_limits: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadrotorModel {
    params: QuadrotorParams,
}

pub fn quadrotor_dynamics(params: QuadrotorParams) -> Result<QuadrotorModel> {
    let named = [
        ("mass", params.mass),
        ("arm_length", params.arm_length),
        ("inertia_xx", params.inertia[0]),
        ("inertia_yy", params.inertia[1]),
        ("inertia_zz", params.inertia[2]),
        ("gravity", params.gravity),
    ];
    for (name, value) in named {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::PhysicalParameter { name, value });
        }
    }
    if let Some(limits) = &params.control_limits {
        if limits.len() != 4 || limits.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::Config("quadrotor control_limits must be four [min, max] pairs".into()));
        }
    }
    Ok(QuadrotorModel { params })
}

struct Attitude {
    sphi: f64,
    cphi: f64,
    sth: f64,
    cth: f64,
    spsi: f64,
    cpsi: f64,
}

impl Attitude {
    fn new(x: &[f64]) -> Self {
        let (sphi, cphi) = x[6].sin_cos();
        let (sth, cth) = x[7].sin_cos();
        let (spsi, cpsi) = x[8].sin_cos();
        Attitude {
            sphi,
            cphi,
            sth,
            cth,
            spsi,
            cpsi,
        }
    }
}

impl QuadrotorModel {
    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    pub fn hover_thrust(&self) -> f64 {
        self.params.mass * self.params.gravity
    }

    fn fill_drift(&self, x: &[f64], a: &Attitude, out: &mut [f64]) {
        let [ixx, iyy, izz] = self.params.inertia;
        let (p, q, r) = (x[9], x[10], x[11]);
        out[0] = x[3];
        out[1] = x[4];
        out[2] = x[5];
        out[3] = 0.0;
        out[4] = 0.0;
        out[5] = -self.params.gravity;
        let qr = q * a.sphi + r * a.cphi;
        out[6] = p + qr * a.sth / a.cth;
        out[7] = q * a.cphi - r * a.sphi;
        out[8] = qr / a.cth;
        out[9] = (iyy - izz) * q * r / ixx;
        out[10] = (izz - ixx) * p * r / iyy;
        out[11] = (ixx - iyy) * p * q / izz;
    }

    fn fill_control(&self, a: &Attitude, out: &mut [f64]) {
        let [ixx, iyy, izz] = self.params.inertia;
        let inv_m = 1.0 / self.params.mass;
        out.iter_mut().for_each(|v| *v = 0.0);
        // thrust column: R(euler) e_z / m
        out[3 * 4] = (a.cphi * a.sth * a.cpsi + a.sphi * a.spsi) * inv_m;
        out[4 * 4] = (a.cphi * a.sth * a.spsi - a.sphi * a.cpsi) * inv_m;
        out[5 * 4] = a.cphi * a.cth * inv_m;
        out[9 * 4 + 1] = 1.0 / ixx;
        out[10 * 4 + 2] = 1.0 / iyy;
        out[11 * 4 + 3] = 1.0 / izz;
    }
}

impl DynamicsModel for QuadrotorModel {
    fn state_dim(&self) -> usize {
        12
    }

    fn control_dim(&self) -> usize {
        4
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        self.fill_drift(x, &Attitude::new(x), out);
    }

    fn control_matrix(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        self.fill_control(&Attitude::new(x), out);
    }

    fn drift_and_control(&self, x: &[f64], _t: f64, f: &mut [f64], g: &mut [f64]) {
        let a = Attitude::new(x);
        self.fill_drift(x, &a, f);
        self.fill_control(&a, g);
    }

    fn control_limits(&self) -> Option<&[(f64, f64)]> {
        self.params.control_limits.as_deref()
    }

    fn state_names(&self) -> Vec<String> {
        [
            "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
        ]
        .map(String::from)
        .to_vec()
    }

    fn control_names(&self) -> Vec<String> {
        ["thrust", "tau_x", "tau_y", "tau_z"].map(String::from).to_vec()
    }
}
