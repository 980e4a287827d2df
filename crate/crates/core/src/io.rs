//! Experiment configuration files and CSV output.
//!
//! Configs are TOML. Every section is optional and every omitted key takes the
//! task's default; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::cost::{CartpoleCost, QuadrotorCost};
use crate::dynamics::{CartpoleParams, QuadrotorParams};
use crate::error::{Error, Result};
use crate::harness::{BatchResult, CartpoleTask, QuadrotorTask, Task, TrialRecord, Variant};
use crate::types::{JumpScaling, MppiConfig};

/// How the sweep lists combine into cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Vary one parameter at a time around the base cell.
    #[default]
    Cross,
    /// Full Cartesian product.
    Grid,
}

/// One `(nu, sigma_j, samples_m)` point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub nu: f64,
    pub sigma_j: f64,
    pub samples_m: usize,
}

impl SweepCell {
    pub fn id(&self) -> String {
        format!("nu{}_sj{}_m{}", self.nu, self.sigma_j, self.samples_m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub mode: SweepMode,
    pub nu: Vec<f64>,
    pub sigma_j: Vec<f64>,
    pub samples: Vec<usize>,
    pub base_nu: f64,
    pub base_sigma_j: f64,
    pub base_samples: usize,
}

impl Sweep {
    /// Cells in deterministic order. Cross mode walks `sigma_j`, then `nu`,
    /// then `samples`, skipping cells already listed.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out: Vec<SweepCell> = Vec::new();
        let mut add = |cell: SweepCell| {
            if !out.contains(&cell) {
                out.push(cell);
            }
        };
        match self.mode {
            SweepMode::Grid => {
                for &nu in &self.nu {
                    for &sigma_j in &self.sigma_j {
                        for &samples_m in &self.samples {
                            add(SweepCell { nu, sigma_j, samples_m });
                        }
                    }
                }
            }
            SweepMode::Cross => {
                let base = SweepCell {
                    nu: self.base_nu,
                    sigma_j: self.base_sigma_j,
                    samples_m: self.base_samples,
                };
                for &sigma_j in &self.sigma_j {
                    add(SweepCell { sigma_j, ..base });
                }
                for &nu in &self.nu {
                    add(SweepCell { nu, ..base });
                }
                for &samples_m in &self.samples {
                    add(SweepCell { samples_m, ..base });
                }
            }
        }
        out
    }
}

/// Controller settings shared by every sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MppiSettings {
    pub lambda: f64,
    pub c: f64,
    /// Scalar diffusion variance, expanded per channel by `noise_channel_scale`.
    pub sigma_d: f64,
    pub dt: f64,
    pub horizon: usize,
    pub u_init: Vec<f64>,
    /// Per-control-channel standard-deviation multipliers for both noise
    /// sources.
    pub noise_channel_scale: Vec<f64>,
    pub jump_scaling: JumpScaling,
    /// `R = control_weight * lambda G^T (B B^T)^+ G`.
    pub control_weight: f64,
}

impl MppiSettings {
    pub fn defaults(task: &Task) -> Self {
        match task {
            Task::Cartpole(_) => MppiSettings {
                lambda: 1.0,
                c: 1.5,
                sigma_d: 0.025,
                dt: 0.02,
                horizon: 50,
                u_init: task.default_u_init(),
                noise_channel_scale: vec![2.0],
                jump_scaling: JumpScaling::SqrtDt,
                control_weight: 1.0,
            },
            Task::Quadrotor(_) => MppiSettings {
                lambda: 1.0,
                c: 1.5,
                sigma_d: 0.1,
                dt: 0.02,
                horizon: 50,
                u_init: task.default_u_init(),
                noise_channel_scale: vec![1.0, 0.02, 0.02, 0.02],
                jump_scaling: JumpScaling::SqrtDt,
                control_weight: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub mppi: MppiSettings,
    pub sweep: Sweep,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// When false, timing columns are left empty so outputs are reproducible
    /// byte for byte.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn defaults(task: Task) -> Self {
        let sweep = match task {
            Task::Cartpole(_) => Sweep {
                mode: SweepMode::Cross,
                nu: vec![0.1, 0.25, 0.5],
                sigma_j: vec![1.0, 1.5, 2.0, 3.0],
                samples: vec![1000],
                base_nu: 0.25,
                base_sigma_j: 2.0,
                base_samples: 1000,
            },
            Task::Quadrotor(_) => Sweep {
                mode: SweepMode::Cross,
                nu: vec![0.1, 0.2, 0.5],
                sigma_j: vec![5.0, 10.0, 20.0, 30.0],
                samples: vec![1000],
                base_nu: 0.2,
                base_sigma_j: 20.0,
                base_samples: 1000,
            },
        };
        ExperimentConfig {
            mppi: MppiSettings::defaults(&task),
            task,
            sweep,
            trials: 40,
            seed: 1,
            output_dir: PathBuf::from("results"),
            record_timing: true,
        }
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        self.sweep.cells()
    }

    /// The controller configuration of one sweep cell (jump sampling on).
    pub fn mppi_config(&self, cell: &SweepCell) -> MppiConfig {
        let s = &self.mppi;
        MppiConfig {
            lambda: s.lambda,
            c: s.c,
            sigma_d: MppiConfig::noise_matrix(s.sigma_d, &s.noise_channel_scale),
            sigma_j: MppiConfig::noise_matrix(cell.sigma_j, &s.noise_channel_scale),
            nu: cell.nu,
            dt: s.dt,
            horizon_n: s.horizon,
            samples_m: cell.samples_m,
            u_init: s.u_init.clone(),
            jump_sampling_enabled: true,
            jump_scaling: s.jump_scaling,
        }
    }

    fn check(&self) -> Result<()> {
        let sw = &self.sweep;
        if sw.nu.is_empty() || sw.sigma_j.is_empty() || sw.samples.is_empty() {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let m = self.task.default_u_init().len();
        if self.mppi.noise_channel_scale.len() != m {
            return Err(Error::Config(format!(
                "noise_channel_scale has {} entries, expected {m}",
                self.mppi.noise_channel_scale.len()
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "P: DeserializeOwned + Default, C: DeserializeOwned + Default, T: DeserializeOwned + Default"))]
struct RawConfig<P, C, T> {
    #[allow(dead_code)]
    task: String,
    trials: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    record_timing: Option<bool>,
    #[serde(default)]
    physics: P,
    #[serde(default)]
    cost: C,
    #[serde(default)]
    trial: T,
    #[serde(default)]
    mppi: RawMppi,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMppi {
    lambda: Option<f64>,
    c: Option<f64>,
    sigma_d: Option<f64>,
    dt: Option<f64>,
    horizon: Option<usize>,
    u_init: Option<Vec<f64>>,
    noise_channel_scale: Option<Vec<f64>>,
    jump_scaling: Option<JumpScaling>,
    control_weight: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    mode: Option<SweepMode>,
    nu: Option<Vec<f64>>,
    sigma_j: Option<Vec<f64>>,
    samples: Option<Vec<usize>>,
    base_nu: Option<f64>,
    base_sigma_j: Option<f64>,
    base_samples: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CartpoleTrial {
    initial_state: Option<[f64; 4]>,
    duration: Option<f64>,
    hold_window: Option<f64>,
    angle_band: Option<f64>,
    position_band: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadrotorTrial {
    initial_position: Option<[f64; 3]>,
    duration: Option<f64>,
    goal_radius: Option<f64>,
    max_tilt_deg: Option<f64>,
}

fn toml_error(path: &Path, text: &str, err: toml::de::Error) -> Error {
    let msg = err.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return Error::UnknownKey(rest[..end].to_string());
        }
    }
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

fn apply_common<P, C, T>(cfg: &mut ExperimentConfig, raw: &RawConfig<P, C, T>) {
    let m = &raw.mppi;
    let s = &mut cfg.mppi;
    s.lambda = m.lambda.unwrap_or(s.lambda);
    s.c = m.c.unwrap_or(s.c);
    s.sigma_d = m.sigma_d.unwrap_or(s.sigma_d);
    s.dt = m.dt.unwrap_or(s.dt);
    s.horizon = m.horizon.unwrap_or(s.horizon);
    s.jump_scaling = m.jump_scaling.unwrap_or(s.jump_scaling);
    s.control_weight = m.control_weight.unwrap_or(s.control_weight);
    if let Some(u) = &m.u_init {
        s.u_init = u.clone();
    }
    if let Some(v) = &m.noise_channel_scale {
        s.noise_channel_scale = v.clone();
    }

    let w = &raw.sweep;
    let sw = &mut cfg.sweep;
    sw.mode = w.mode.unwrap_or(sw.mode);
    if let Some(v) = &w.nu {
        sw.base_nu = v.first().copied().unwrap_or(sw.base_nu);
        sw.nu = v.clone();
    }
    if let Some(v) = &w.sigma_j {
        sw.base_sigma_j = v.first().copied().unwrap_or(sw.base_sigma_j);
        sw.sigma_j = v.clone();
    }
    if let Some(v) = &w.samples {
        sw.base_samples = v.first().copied().unwrap_or(sw.base_samples);
        sw.samples = v.clone();
    }
    sw.base_nu = w.base_nu.unwrap_or(sw.base_nu);
    sw.base_sigma_j = w.base_sigma_j.unwrap_or(sw.base_sigma_j);
    sw.base_samples = w.base_samples.unwrap_or(sw.base_samples);

    cfg.trials = raw.trials.unwrap_or(cfg.trials);
    cfg.seed = raw.seed.unwrap_or(cfg.seed);
    cfg.record_timing = raw.record_timing.unwrap_or(cfg.record_timing);
    if let Some(p) = &raw.output_dir {
        cfg.output_dir = p.clone();
    }
}

/// Parses a config from TOML text. `path` is only used in error messages.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let header: toml::Table = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    let task = match header.get("task") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::Config("`task` must be a string".into())),
        None => return Err(Error::Config("missing required key `task`".into())),
    };
    let cfg = match task.as_str() {
        "cartpole" => {
            let raw: RawConfig<CartpoleParams, CartpoleCost, CartpoleTrial> =
                toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
            let d = CartpoleTask::default();
            let t = &raw.trial;
            let task = Task::Cartpole(CartpoleTask {
                params: raw.physics.clone(),
                cost: raw.cost.clone(),
                initial_state: t.initial_state.unwrap_or(d.initial_state),
                duration: t.duration.unwrap_or(d.duration),
                hold_window: t.hold_window.unwrap_or(d.hold_window),
                angle_band: t.angle_band.unwrap_or(d.angle_band),
                position_band: t.position_band.unwrap_or(d.position_band),
            });
            let mut cfg = ExperimentConfig::defaults(task);
            apply_common(&mut cfg, &raw);
            cfg
        }
        "quadrotor" => {
            let raw: RawConfig<QuadrotorParams, QuadrotorCost, QuadrotorTrial> =
                toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
            let d = QuadrotorTask::default();
            let t = &raw.trial;
            let task = Task::Quadrotor(QuadrotorTask {
                params: raw.physics.clone(),
                cost: raw.cost.clone(),
                initial_position: t.initial_position.unwrap_or(d.initial_position),
                duration: t.duration.unwrap_or(d.duration),
                goal_radius: t.goal_radius.unwrap_or(d.goal_radius),
                max_tilt: t.max_tilt_deg.map(f64::to_radians).unwrap_or(d.max_tilt),
            });
            let mut cfg = ExperimentConfig::defaults(task);
            // hover thrust depends on the overridden mass
            cfg.mppi.u_init = cfg.task.default_u_init();
            apply_common(&mut cfg, &raw);
            cfg
        }
        other => return Err(Error::Config(format!("unknown task `{other}`"))),
    };
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// Formats a real with 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "task",
    "variant",
    "nu",
    "sigma_j",
    "samples_m",
    "trials",
    "success_rate",
    "total_variance",
    "mean_iter_ms",
    "seed",
];

/// One summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub variant: Variant,
    pub cell: SweepCell,
    pub trials: usize,
    pub success_rate: f64,
    pub total_variance: Option<f64>,
    pub mean_iter_ms: Option<f64>,
    pub seed: u64,
}

impl SummaryRow {
    pub fn from_batch(task: &Task, cell: SweepCell, seed: u64, batch: &BatchResult, record_timing: bool) -> Self {
        SummaryRow {
            task: task.name().to_string(),
            variant: batch.variant,
            cell,
            trials: batch.summary.trials,
            success_rate: batch.summary.success_rate,
            total_variance: batch.summary.total_variance,
            mean_iter_ms: record_timing.then_some(batch.summary.mean_iter_ms),
            seed,
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.task.clone(),
            self.variant.name().to_string(),
            real(self.cell.nu),
            real(self.cell.sigma_j),
            self.cell.samples_m.to_string(),
            self.trials.to_string(),
            real(self.success_rate),
            self.total_variance.map(real).unwrap_or_default(),
            self.mean_iter_ms.map(real).unwrap_or_default(),
            self.seed.to_string(),
        ]
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

/// Streams summary rows to disk, flushing after every row.
pub struct SummaryWriter {
    inner: csv::Writer<fs::File>,
}

impl SummaryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = create(path)?;
        inner.write_record(SUMMARY_HEADER).map_err(csv_err)?;
        inner.flush().map_err(|e| csv_err(e.into()))?;
        Ok(SummaryWriter { inner })
    }

    pub fn write(&mut self, row: &SummaryRow) -> Result<()> {
        self.inner.write_record(row.fields()).map_err(csv_err)?;
        self.inner.flush().map_err(|e| csv_err(e.into()))
    }
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = SummaryWriter::create(path)?;
    rows.iter().try_for_each(|r| w.write(r))
}

pub fn trajectory_header(task: &Task) -> Result<Vec<String>> {
    let model = task.model()?;
    let mut h = vec!["trial".to_string(), "step".into(), "t".into()];
    h.extend(model.state_names());
    h.extend(model.control_names());
    h.push("jump_indicator".into());
    Ok(h)
}

/// One row per executed step: the state the step started from, the control
/// applied and whether the plant jumped. The `trial` column is the record's
/// position in `records`.
pub fn write_trajectory_csv(task: &Task, records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(trajectory_header(task)?).map_err(csv_err)?;
    for (i, rec) in records.iter().enumerate() {
        for k in 0..rec.steps() {
            let mut row = vec![i.to_string(), k.to_string(), real(k as f64 * rec.dt)];
            row.extend(rec.state(k).iter().map(|&v| real(v)));
            row.extend(rec.control(k).iter().map(|&v| real(v)));
            row.push(u8::from(rec.plant_jumps[k]).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

/// Writes `(iteration, wall_ms)` pairs.
pub fn write_bench_csv(times_s: &[f64], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["iteration", "wall_ms"]).map_err(csv_err)?;
    for (i, t) in times_s.iter().enumerate() {
        w.write_record([i.to_string(), real(t * 1e3)]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}
