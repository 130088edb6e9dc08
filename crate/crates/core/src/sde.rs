//! Euler–Maruyama simulation, invariant sampling and additive functionals.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::models::{Diffusion1D, KineticModel, Model, Observable, OscillatorChain};
use crate::rng::SeedStream;
use crate::stats::{self, Estimate};

/// Resolution of inverse-CDF tables.
pub const CDF_TABLE_POINTS: usize = 200_001;
/// Drift displacement cap in units of the noise scale `sqrt(2 dt)`.
pub const DRIFT_CAP_FACTOR: f64 = 10.0;

// Offset keying the stream used for initial states, so that the dynamics of
// path `i` use the same draws whether its start was sampled or given.
const INITIAL_STREAM_KEY: u64 = 0x5EED_0F1A_57A7_E000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Equilibrium,
    Dirac { x0: Vec<f64> },
    CustomDensity { density: GridFunction },
}

impl InitialLaw {
    pub fn is_equilibrium(&self) -> bool {
        matches!(self, InitialLaw::Equilibrium)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Observation times; `0` and `t_max` are always recorded as well.
    pub checkpoints: Vec<f64>,
    pub initial_law: InitialLaw,
}

impl SimConfig {
    pub fn new(dt: f64, t_max: f64, n_paths: usize, master_seed: u64) -> Self {
        Self {
            dt,
            t_max,
            n_paths,
            master_seed,
            checkpoints: vec![t_max],
            initial_law: InitialLaw::Equilibrium,
        }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<f64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_initial_law(mut self, law: InitialLaw) -> Self {
        self.initial_law = law;
        self
    }

    /// Evenly spaced checkpoints `t_max/n, 2 t_max/n, …, t_max`.
    pub fn with_uniform_checkpoints(self, n: usize) -> Self {
        let t = self.t_max;
        self.with_checkpoints((1..=n).map(|k| t * k as f64 / n as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidInput(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be positive".into()));
        }
        let times = self.recorded_times();
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!("checkpoints must be strictly increasing near {}", w[1])));
            }
            if w[1] - w[0] < self.dt * (1.0 - 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "dt = {} exceeds the checkpoint gap {}",
                    self.dt,
                    w[1] - w[0]
                )));
            }
        }
        if self.checkpoints.iter().any(|t| *t > self.t_max * (1.0 + 1e-12) || *t < 0.0) {
            return Err(Error::InvalidInput("checkpoints must lie in [0, t_max]".into()));
        }
        Ok(())
    }

    /// `0`, the user checkpoints and `t_max`.
    pub fn recorded_times(&self) -> Vec<f64> {
        let mut ts = vec![0.0];
        for &t in &self.checkpoints {
            if t > 0.0 && (t - self.t_max).abs() > 1e-12 * self.t_max {
                ts.push(t);
            }
        }
        ts.push(self.t_max);
        ts
    }

    /// Total number of Euler steps per path.
    pub fn steps_per_path(&self) -> usize {
        let times = self.recorded_times();
        times.windows(2).map(|w| segment_steps(w[1] - w[0], self.dt)).sum()
    }
}

fn segment_steps(gap: f64, dt: f64) -> usize {
    ((gap / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Inverse-CDF sampler built from a density table.
#[derive(Debug, Clone)]
pub struct InvariantSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    heavy_tail: bool,
}

fn cdf_table(xs: &[f64], density: &[f64]) -> Result<Vec<f64>> {
    let mut cdf = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for k in 1..xs.len() {
        acc += 0.5 * (xs[k] - xs[k - 1]) * (density[k] + density[k - 1]);
        cdf.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return Err(Error::NonNormalizable(format!("density table has mass {acc}")));
    }
    for c in &mut cdf {
        *c /= acc;
    }
    Ok(cdf)
}

fn unnormalized_table(model: &Diffusion1D, grid: &Grid1D) -> Result<Vec<f64>> {
    let logs: Vec<f64> = grid.nodes().map(|x| model.log_density_unnorm(x)).collect();
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NonNormalizable(format!("log-density of {} is not finite", model.label())));
    }
    Ok(logs.iter().map(|l| (l - shift).exp()).collect())
}

fn second_moment_on(model: &Diffusion1D, grid: &Grid1D) -> Result<f64> {
    let p = unnormalized_table(model, grid)?;
    let (mut z, mut m2) = (0.0, 0.0);
    for (i, x) in grid.nodes().enumerate() {
        z += grid.weight(i) * p[i];
        m2 += grid.weight(i) * p[i] * x * x;
    }
    Ok(m2 / z)
}

impl InvariantSampler {
    pub fn for_diffusion(model: &Diffusion1D) -> Result<Self> {
        let (a, b) = model.domain_hint();
        let grid = Grid1D::new(a, b, CDF_TABLE_POINTS)?;
        let p = unnormalized_table(model, &grid)?;
        let xs: Vec<f64> = grid.nodes().collect();
        let cdf = cdf_table(&xs, &p)?;
        // the second moment is unstable under domain doubling exactly when
        // x² is not μ-integrable at the scale of the working domain
        let m = second_moment_on(model, &grid)?;
        let m_wide = second_moment_on(model, &grid.doubled_domain())?;
        let heavy_tail = (m_wide / m - 1.0).abs() > 0.01;
        Ok(Self { xs, cdf, heavy_tail })
    }

    pub fn from_density(density: &GridFunction) -> Result<Self> {
        if density.values().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("sampling density has negative values".into()));
        }
        let xs: Vec<f64> = density.grid().nodes().collect();
        let cdf = cdf_table(&xs, density.values())?;
        Ok(Self {
            xs,
            cdf,
            heavy_tail: false,
        })
    }

    /// Set when `∫ x² dμ` moves by more than 1% as the sampling domain is
    /// doubled.
    pub fn heavy_tail(&self) -> bool {
        self.heavy_tail
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|c| *c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let th = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
        self.xs[k - 1] + th * (self.xs[k] - self.xs[k - 1])
    }

    pub fn sample(&self, rng: &mut SeedStream) -> f64 {
        self.quantile(rng.uniform())
    }
}

/// Draws the initial states of every path.
enum InitialSampler {
    Fixed(Vec<f64>),
    Diffusion(InvariantSampler),
    Kinetic { dim: usize, positions: Option<InvariantSampler> },
}

impl InitialSampler {
    fn new(model: &Model, law: &InitialLaw) -> Result<Self> {
        let dim = model.state_dim();
        match law {
            InitialLaw::Dirac { x0 } => {
                if x0.len() != dim {
                    return Err(Error::InvalidInput(format!(
                        "initial state has {} coordinates, model {} needs {dim}",
                        x0.len(),
                        model.id()
                    )));
                }
                Ok(Self::Fixed(x0.clone()))
            }
            InitialLaw::CustomDensity { density } => match model {
                Model::Diffusion(_) => Ok(Self::Diffusion(InvariantSampler::from_density(density)?)),
                _ => Err(Error::InvalidInput("custom initial densities are one-dimensional".into())),
            },
            InitialLaw::Equilibrium => match model {
                Model::Diffusion(d) => Ok(Self::Diffusion(InvariantSampler::for_diffusion(d)?)),
                Model::Kinetic(k) => Ok(Self::Kinetic {
                    dim: k.dim,
                    positions: k.position_marginal().map(|m| InvariantSampler::for_diffusion(&m)).transpose()?,
                }),
                // no closed-form invariant law; give a Dirac start
                Model::Oscillator(_) => Err(Error::NoInvariantSampler("oscillator3".into())),
            },
        }
    }

    fn draw(&self, rng: &mut SeedStream) -> Vec<f64> {
        match self {
            Self::Fixed(x) => x.clone(),
            Self::Diffusion(s) => vec![s.sample(rng)],
            Self::Kinetic { dim, positions } => {
                let mut state = vec![0.0; 2 * dim];
                if let Some(s) = positions {
                    for q in state.iter_mut().take(*dim) {
                        *q = s.sample(rng);
                    }
                }
                for v in state.iter_mut().skip(*dim) {
                    *v = rng.normal();
                }
                state
            }
        }
    }
}

/// Draws `n` states from the invariant law of `model`.
///
/// For the free kinetic model positions are not normalizable; they are set to
/// the origin and only the velocities are drawn.
pub fn sample_invariant(model: &Model, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = InitialSampler::new(model, &InitialLaw::Equilibrium)?;
    Ok((0..n as u64)
        .map(|i| sampler.draw(&mut SeedStream::new(seed ^ INITIAL_STREAM_KEY, i)))
        .collect())
}

#[inline]
fn capped(displacement: f64, cap: f64, caps: &mut u64) -> f64 {
    if displacement.abs() > cap {
        *caps += 1;
        cap.copysign(displacement)
    } else {
        displacement
    }
}

/// One Euler–Maruyama step of `model` with step `dt`.
struct Stepper<'m> {
    model: &'m Model,
    radius: f64,
}

impl<'m> Stepper<'m> {
    fn new(model: &'m Model) -> Self {
        Self {
            model,
            radius: model.blowup_radius(),
        }
    }

    fn step(&self, x: &mut [f64], dt: f64, rng: &mut SeedStream, caps: &mut u64) {
        let noise = (2.0 * dt).sqrt();
        let cap = DRIFT_CAP_FACTOR * noise;
        match self.model {
            Model::Diffusion(d) => {
                let b = d.drift(x[0]);
                x[0] += capped(b * dt, cap, caps) + noise * rng.normal();
            }
            Model::Kinetic(k) => kinetic_step(k, x, dt, rng, caps),
            Model::Oscillator(o) => oscillator_step(o, x, dt, rng, caps),
        }
    }

    fn check(&self, x: &[f64], path_index: u64, time: f64) -> Result<()> {
        for &v in x {
            if !v.is_finite() || v.abs() > self.radius {
                return Err(Error::Blowup { path_index, time, value: v });
            }
        }
        Ok(())
    }
}

fn kinetic_step(k: &KineticModel, x: &mut [f64], dt: f64, rng: &mut SeedStream, caps: &mut u64) {
    let d = k.dim;
    let noise = (2.0 * k.friction * dt).sqrt();
    let cap = DRIFT_CAP_FACTOR * (2.0 * dt).sqrt();
    for i in 0..d {
        let (q, v) = (x[i], x[d + i]);
        let accel = -k.friction * v - k.grad_potential(q);
        x[i] = q + v * dt;
        x[d + i] = v + capped(accel * dt, cap, caps) + noise * rng.normal();
    }
}

fn oscillator_step(o: &OscillatorChain, x: &mut [f64], dt: f64, rng: &mut SeedStream, caps: &mut u64) {
    let q = [x[0], x[1], x[2]];
    let p = [x[3], x[4], x[5]];
    let drift = o.momentum_drift(&q, &p);
    let scales = o.noise_scales();
    let cap = DRIFT_CAP_FACTOR * (2.0 * dt).sqrt();
    let sq = dt.sqrt();
    for i in 0..3 {
        x[i] = q[i] + p[i] * dt;
        let xi = if scales[i] > 0.0 { scales[i] * sq * rng.normal() } else { 0.0 };
        x[3 + i] = p[i] + capped(drift[i] * dt, cap, caps) + xi;
    }
}

/// Full step-by-step record of a single path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub path_index: u64,
    pub dim: usize,
    /// Every step time, starting at 0.
    pub times: Vec<f64>,
    /// States at `times`, flattened row by row.
    pub states: Vec<f64>,
    pub cap_events: u64,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// States at the recorded times of `cfg`.
    pub fn checkpoint_states(&self, checkpoints: &[f64]) -> Vec<Vec<f64>> {
        checkpoints
            .iter()
            .map(|t| {
                let k = nearest_index(&self.times, *t);
                self.state(k).to_vec()
            })
            .collect()
    }
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    let k = times.partition_point(|s| *s < t);
    if k == 0 {
        return 0;
    }
    if k >= times.len() || (t - times[k - 1]) < (times[k] - t) {
        k - 1
    } else {
        k
    }
}

/// Drives one path through the configured checkpoints, calling `visit` after
/// every step with `(time, state)`.
fn drive(
    model: &Model,
    x0: &[f64],
    cfg: &SimConfig,
    path_index: u64,
    mut visit: impl FnMut(bool, f64, f64, &[f64]),
) -> Result<u64> {
    if x0.len() != model.state_dim() {
        return Err(Error::InvalidInput(format!(
            "initial state has {} coordinates, model {} needs {}",
            x0.len(),
            model.id(),
            model.state_dim()
        )));
    }
    let stepper = Stepper::new(model);
    stepper.check(x0, path_index, 0.0)?;
    let mut rng = SeedStream::new(cfg.master_seed, path_index);
    let mut x = x0.to_vec();
    let mut caps = 0;
    let times = cfg.recorded_times();
    for w in times.windows(2) {
        let n = segment_steps(w[1] - w[0], cfg.dt);
        let h = (w[1] - w[0]) / n as f64;
        for j in 1..=n {
            stepper.step(&mut x, h, &mut rng, &mut caps);
            let t = if j == n { w[1] } else { w[0] + j as f64 * h };
            stepper.check(&x, path_index, t)?;
            visit(j == n, t, h, &x);
        }
    }
    Ok(caps)
}

/// Euler–Maruyama path from `x0`, recording every step.
pub fn simulate_path(model: &Model, x0: &[f64], cfg: &SimConfig, path_index: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let dim = model.state_dim();
    let mut times = vec![0.0];
    let mut states = x0.to_vec();
    let cap_events = drive(model, x0, cfg, path_index, |_, t, _, x| {
        times.push(t);
        states.extend_from_slice(x);
    })?;
    Ok(Trajectory {
        path_index,
        dim,
        times,
        states,
        cap_events,
    })
}

/// Trapezoid sums `S_t = ∫_0^t f(X_s) ds` along a recorded trajectory,
/// reported at the step times nearest to each checkpoint.
pub fn accumulate_functional(path: &Trajectory, f: &Observable, checkpoints: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; path.times.len()];
    let mut prev = f.eval(path.state(0));
    let mut acc = 0.0;
    for k in 1..path.times.len() {
        let cur = f.eval(path.state(k));
        acc += 0.5 * (path.times[k] - path.times[k - 1]) * (prev + cur);
        s[k] = acc;
        prev = cur;
    }
    checkpoints.iter().map(|t| s[nearest_index(&path.times, *t)]).collect()
}

/// Checkpointed states and functionals of every path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    config: SimConfig,
    model_id: String,
    observable: String,
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    s_values: Vec<f64>,
    cap_events: Vec<u64>,
    heavy_tail: bool,
}

struct PathRecord {
    states: Vec<f64>,
    s_values: Vec<f64>,
    caps: u64,
}

impl PathEnsemble {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn observable(&self) -> &str {
        &self.observable
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    /// Recorded times, starting at 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Index of the recorded time closest to `t`, if within `1e-9 · t`.
    pub fn checkpoint_index(&self, t: f64) -> Option<usize> {
        let k = nearest_index(&self.times, t);
        ((self.times[k] - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(k)
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let nk = self.times.len();
        let off = (path * nk + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn s(&self, path: usize, k: usize) -> f64 {
        self.s_values[path * self.times.len() + k]
    }

    /// `S_t` across paths at recorded index `k`, in path order.
    pub fn s_column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.s(p, k)).collect()
    }

    /// `S_t` across paths at time `t`.
    pub fn s_at(&self, t: f64) -> Result<Vec<f64>> {
        let k = self
            .checkpoint_index(t)
            .ok_or_else(|| Error::InvalidInput(format!("time {t} is not a checkpoint of the ensemble")))?;
        Ok(self.s_column(k))
    }

    /// Coordinate `i` of the state across paths at recorded index `k`.
    pub fn state_column(&self, k: usize, i: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.state(p, k)[i]).collect()
    }

    pub fn mean_s(&self, k: usize) -> Estimate {
        stats::mean(&self.s_column(k))
    }

    pub fn var_s(&self, k: usize) -> Estimate {
        stats::variance(&self.s_column(k))
    }

    pub fn cap_events(&self) -> &[u64] {
        &self.cap_events
    }

    pub fn total_cap_events(&self) -> u64 {
        self.cap_events.iter().sum()
    }

    /// Set when the initial law was the invariant law of a 1D model whose
    /// second moment is not resolved by the working domain.
    pub fn heavy_tail(&self) -> bool {
        self.heavy_tail
    }

    /// Writes the ensemble as CSV. Leading `#` lines carry the model id, the
    /// configuration as JSON and a provenance string.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidInput(format!("writing ensemble: {e}"));
        let cfg = serde_json::to_string(&self.config).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(w, "# model={}", self.model_id).map_err(io)?;
        writeln!(w, "# observable={}", self.observable).map_err(io)?;
        writeln!(w, "# config={cfg}").map_err(io)?;
        writeln!(w, "# provenance={provenance}").map_err(io)?;
        let mut header = vec!["path_index".to_string(), "t".to_string()];
        header.extend((0..self.dim).map(|i| format!("x{i}")));
        header.push("S".into());
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for p in 0..self.n_paths() {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = format!("{p},{t}");
                for v in self.state(p, k) {
                    row.push_str(&format!(",{v}"));
                }
                row.push_str(&format!(",{}", self.s(p, k)));
                writeln!(w, "{row}").map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("ensemble csv: {m}"));
        let mut model_id = None;
        let mut observable = String::new();
        let mut config: Option<SimConfig> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for line in r.lines() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("model=") {
                    model_id = Some(v.to_string());
                } else if let Some(v) = meta.strip_prefix("observable=") {
                    observable = v.to_string();
                } else if let Some(v) = meta.strip_prefix("config=") {
                    config = Some(serde_json::from_str(v).map_err(|e| bad(e.to_string()))?);
                }
                continue;
            }
            if line.starts_with("path_index") {
                width = Some(line.split(',').count());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| bad(format!("{e} in {c:?}"))))
                .collect::<Result<_>>()?;
            if Some(row.len()) != width {
                return Err(bad("row width differs from header".into()));
            }
            rows.push(row);
        }
        let config = config.ok_or_else(|| bad("missing config line".into()))?;
        let model_id = model_id.ok_or_else(|| bad("missing model line".into()))?;
        let width = width.ok_or_else(|| bad("missing header".into()))?;
        let dim = width - 3;
        let times = config.recorded_times();
        if rows.len() != config.n_paths * times.len() {
            return Err(bad(format!("{} rows, expected {}", rows.len(), config.n_paths * times.len())));
        }
        let mut states = Vec::with_capacity(rows.len() * dim);
        let mut s_values = Vec::with_capacity(rows.len());
        for row in &rows {
            states.extend_from_slice(&row[2..2 + dim]);
            s_values.push(row[2 + dim]);
        }
        Ok(Self {
            cap_events: vec![0; config.n_paths],
            config,
            model_id,
            observable,
            dim,
            times,
            states,
            s_values,
            heavy_tail: false,
        })
    }
}

/// Runs `cfg.n_paths` independent paths on the current rayon pool.
///
/// Path `i` draws from the stream `(master_seed, i)` only, and results are
/// collected in path order, so the ensemble does not depend on the number of
/// worker threads.
pub fn run_ensemble(model: &Model, f: &Observable, cfg: &SimConfig) -> Result<PathEnsemble> {
    cfg.validate()?;
    let init = InitialSampler::new(model, &cfg.initial_law)?;
    let heavy_tail = matches!(&init, InitialSampler::Diffusion(s) if s.heavy_tail());
    let records: Vec<Result<PathRecord>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| record_path(model, f, cfg, &init, i))
        .collect();
    let times = cfg.recorded_times();
    let nk = times.len();
    let dim = model.state_dim();
    let mut states = Vec::with_capacity(cfg.n_paths * nk * dim);
    let mut s_values = Vec::with_capacity(cfg.n_paths * nk);
    let mut cap_events = Vec::with_capacity(cfg.n_paths);
    for r in records {
        let r = r?;
        states.extend(r.states);
        s_values.extend(r.s_values);
        cap_events.push(r.caps);
    }
    Ok(PathEnsemble {
        config: cfg.clone(),
        model_id: model.id().to_string(),
        observable: f.label().to_string(),
        dim,
        times,
        states,
        s_values,
        cap_events,
        heavy_tail,
    })
}

fn record_path(model: &Model, f: &Observable, cfg: &SimConfig, init: &InitialSampler, idx: u64) -> Result<PathRecord> {
    let x0 = init.draw(&mut SeedStream::new(cfg.master_seed ^ INITIAL_STREAM_KEY, idx));
    let nk = cfg.recorded_times().len();
    let mut states = Vec::with_capacity(nk * x0.len());
    let mut s_values = Vec::with_capacity(nk);
    states.extend_from_slice(&x0);
    s_values.push(0.0);
    let mut prev = f.eval(&x0);
    let mut acc = 0.0;
    let mut prev_t = 0.0;
    let caps = drive(model, &x0, cfg, idx, |end, t, _, x| {
        let cur = f.eval(x);
        acc += 0.5 * (t - prev_t) * (prev + cur);
        prev = cur;
        prev_t = t;
        if end {
            states.extend_from_slice(x);
            s_values.push(acc);
        }
    })?;
    Ok(PathRecord { states, s_values, caps })
}

/// [`run_ensemble`] on a dedicated pool of `threads` workers.
pub fn run_ensemble_with_threads(model: &Model, f: &Observable, cfg: &SimConfig, threads: usize) -> Result<PathEnsemble> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| run_ensemble(model, f, cfg))
}
