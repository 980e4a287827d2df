//! Model predictive path integral control for systems driven by Brownian and
//! compound-Poisson noise.

pub mod controller;
pub mod cli;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod noise;
pub mod theory;
pub mod types;

pub use error::{Error, Result};
