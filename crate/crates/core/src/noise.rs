//! Reproducible diffusion, jump-timer and jump-mark sampling.
//!
//! Each draw sequence is keyed by `(master_seed, stream_id)` through a ChaCha8
//! keystream, so a rollout's noise never depends on which worker produced it.
//! Diffusion, jump timers and jump marks read from three disjoint keys derived
//! from the master seed; turning jump sampling off therefore leaves the
//! diffusion draws untouched.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::{MppiConfig, NoiseRealization};

const DIFFUSION: u64 = 0x6466_6675_7369_6f6e;
const JUMP_TIMER: u64 = 0x6a75_6d70_7469_6d72;
const JUMP_MARK: u64 = 0x6a75_6d70_6d61_726b;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a tag into a seed. Used to split one trial seed into independent
/// controller and plant seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut s = seed ^ tag.rotate_left(17);
    splitmix64(&mut s);
    splitmix64(&mut s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStream {
            master_seed,
            stream_id,
        }
    }

    /// Stream id for rollout `rollout` of MPC iteration `iteration`.
    pub fn for_rollout(master_seed: u64, iteration: u64, samples_m: usize, rollout: usize) -> Self {
        RngStream::new(master_seed, iteration * samples_m as u64 + rollout as u64)
    }

    fn generator(&self, purpose: u64) -> ChaCha8Rng {
        let mut state = self.master_seed ^ purpose;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Lower Cholesky factor of a covariance, computed once and reused per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    lower: Vec<f64>,
    m: usize,
}

impl GaussianFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let m = cov.nrows();
        if m == 0 || cov.ncols() != m || !crate::types::is_spd(cov) {
            return Err(Error::CovarianceFactorization);
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::CovarianceFactorization)?;
        let l = chol.l();
        let mut lower = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..=i {
                lower[i * m + k] = l[(i, k)];
            }
        }
        Ok(GaussianFactor { lower, m })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// Writes `scale * L z` with `z ~ N(0, I)` into `out`.
    fn draw_into<R: Rng>(&self, rng: &mut R, scale: f64, z: &mut [f64], out: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, o) in out.iter_mut().enumerate().take(self.m) {
            let row = &self.lower[i * self.m..i * self.m + i + 1];
            *o = scale * row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// `n_steps` independent rows from `N(0, c * Sigma_D)`.
pub fn sample_diffusion(stream: RngStream, n_steps: usize, sigma_d: &GaussianFactor, c: f64) -> Vec<f64> {
    let m = sigma_d.dim();
    let scale = c.sqrt();
    let mut rng = stream.generator(DIFFUSION);
    let mut z = vec![0.0; m];
    let mut out = vec![0.0; n_steps * m];
    for row in out.chunks_exact_mut(m) {
        sigma_d.draw_into(&mut rng, scale, &mut z, row);
    }
    out
}

/// One uniform timer per step; a jump occurs when `p < nu * dt`.
pub fn sample_jump_events(stream: RngStream, n_steps: usize, nu: f64, dt: f64) -> Vec<bool> {
    let threshold = nu * dt;
    let mut rng = stream.generator(JUMP_TIMER);
    (0..n_steps)
        .map(|_| {
            let p: f64 = rng.gen();
            p < threshold
        })
        .collect()
}

/// Marks from `N(0, Sigma_J)` on rows with a jump, exact zeros elsewhere.
pub fn sample_jump_marks(stream: RngStream, indicators: &[bool], sigma_j: &GaussianFactor) -> Vec<f64> {
    let m = sigma_j.dim();
    let mut rng = None;
    let mut z = vec![0.0; m];
    let mut out = vec![0.0; indicators.len() * m];
    for (row, &hit) in out.chunks_exact_mut(m).zip(indicators) {
        if hit {
            let rng = rng.get_or_insert_with(|| stream.generator(JUMP_MARK));
            sigma_j.draw_into(rng, 1.0, &mut z, row);
        }
    }
    out
}

/// Pre-factored sampler for one controller (or plant) configuration.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    diffusion: GaussianFactor,
    marks: GaussianFactor,
    c: f64,
    nu: f64,
    dt: f64,
    n_steps: usize,
    jumps: bool,
}

impl NoiseSampler {
    /// The controller's sampling distribution: diffusion with covariance
    /// `c * Sigma_D`, jumps only when `jump_sampling_enabled`.
    pub fn from_config(cfg: &MppiConfig) -> Result<Self> {
        Ok(NoiseSampler {
            diffusion: GaussianFactor::new(&cfg.sigma_d)?,
            marks: GaussianFactor::new(&cfg.sigma_j)?,
            c: cfg.c,
            nu: cfg.nu,
            dt: cfg.dt,
            n_steps: cfg.horizon_n,
            jumps: cfg.jump_sampling_enabled,
        })
    }

    /// The true disturbance: unscaled `Sigma_D`, jumps always on, one step per draw.
    pub fn plant(cfg: &MppiConfig) -> Result<Self> {
        Ok(NoiseSampler {
            c: 1.0,
            n_steps: 1,
            jumps: true,
            ..Self::from_config(cfg)?
        })
    }

    pub fn realization(&self, stream: RngStream) -> NoiseRealization {
        let m = self.diffusion.dim();
        let eps_d = sample_diffusion(stream, self.n_steps, &self.diffusion, self.c);
        let (indicators, eps_j) = if self.jumps {
            let ind = sample_jump_events(stream, self.n_steps, self.nu, self.dt);
            let marks = sample_jump_marks(stream, &ind, &self.marks);
            (ind, marks)
        } else {
            (vec![false; self.n_steps], vec![0.0; self.n_steps * m])
        };
        // marks are already zero on non-jump rows
        NoiseRealization::compose(eps_d, indicators, eps_j, m).expect("sampler dimensions agree")
    }
}

/// Samples one rollout's noise for `cfg`.
pub fn make_noise_realization(stream: RngStream, cfg: &MppiConfig) -> Result<NoiseRealization> {
    Ok(NoiseSampler::from_config(cfg)?.realization(stream))
}
