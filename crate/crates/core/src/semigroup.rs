//! Deterministic 1D semigroup computations.
//!
//! The generator is discretised in divergence form `Lu = (1/p)(p u')'` on a
//! uniform grid with zero-flux ends. With `w_i` the μ-mass of node `i` and
//! `a_{i+1/2} = p(x_{i+1/2}) / h`,
//!
//! ```text
//! w_i (Lu)_i = a_{i+1/2} (u_{i+1} - u_i) - a_{i-1/2} (u_i - u_{i-1}),
//! ```
//!
//! so the discrete operator is symmetric in the discrete `L²(μ)` inner
//! product. Crank–Nicolson then keeps `‖P_t f‖` nonincreasing and `β(s) ≥ 0`
//! exactly, and conserves mass in the forward direction.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::models::{Diffusion1D, Observable};
use crate::sde::PathEnsemble;
use crate::stats::Estimate;
use crate::tail::{fit_tail, TailFit, TailModel};

/// Ratio `dt / h^2` above which the time step is flagged as inaccurate.
pub const CFL_WARNING_RATIO: f64 = 1e4;
/// Largest tolerated share of `∫|u| dμ` sitting in the outer 1% of the grid.
pub const DOMAIN_LEAK_TOLERANCE: f64 = 1e-3;
/// Tail share below which `kv_integral` reports convergence.
pub const KV_TAIL_SHARE: f64 = 0.05;

/// Time-step control for Crank–Nicolson.
///
/// With `growth > 0` the step is allowed to grow to `growth · t`, which keeps
/// the relative accuracy of the slowest surviving modes fixed while making
/// horizons of `10^4` and beyond affordable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStepping {
    pub dt: f64,
    pub growth: f64,
    pub dt_max: f64,
    /// Number of leading implicit-Euler half-steps (Rannacher start-up).
    pub rannacher_half_steps: usize,
}

impl TimeStepping {
    /// Fixed step `min(0.01, h)`.
    pub fn fixed(grid: &Grid1D) -> Self {
        Self {
            dt: grid.spacing().min(0.01),
            growth: 0.0,
            dt_max: f64::INFINITY,
            rannacher_half_steps: 2,
        }
    }

    /// Step `min(0.01, h)` growing geometrically with `dt ≤ 1%·t`.
    pub fn long_horizon(grid: &Grid1D) -> Self {
        Self {
            growth: 0.01,
            ..Self::fixed(grid)
        }
    }

    fn step_at(&self, t: f64) -> f64 {
        if self.growth > 0.0 {
            (self.growth * t).max(self.dt).min(self.dt_max)
        } else {
            self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub grid: Grid1D,
    pub stepping: TimeStepping,
}

impl PdeConfig {
    pub fn new(grid: Grid1D, stepping: TimeStepping) -> Self {
        Self { grid, stepping }
    }

    /// Grid over the model's domain hint with `n` nodes and fixed stepping.
    pub fn for_model(model: &Diffusion1D, n: usize) -> Result<Self> {
        let (a, b) = model.domain_hint();
        let grid = Grid1D::new(a, b, n)?;
        Ok(Self::new(grid, TimeStepping::fixed(&grid)))
    }

    pub fn long_horizon(mut self) -> Self {
        self.stepping = TimeStepping::long_horizon(&self.grid);
        self
    }

    pub fn refined(&self) -> Self {
        let grid = self.grid.refined();
        let mut stepping = self.stepping;
        stepping.dt = stepping.dt.min(grid.spacing());
        Self { grid, stepping }
    }
}

/// Divergence-form generator of a 1D model on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    grid: Grid1D,
    density: GridFunction,
    mass: Vec<f64>,
    flux: Vec<f64>,
}

impl DiscreteGenerator {
    pub fn new(model: &Diffusion1D, grid: &Grid1D) -> Result<Self> {
        let h = grid.spacing();
        let logs: Vec<f64> = grid.nodes().map(|x| model.log_density_unnorm(x)).collect();
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::NonNormalizable(format!("log-density of {} is not finite", model.label())));
        }
        // floor far below any density that matters, keeps weights positive
        let p = |l: f64| (l - shift).max(-600.0).exp();
        let unnorm: Vec<f64> = logs.iter().map(|l| p(*l)).collect();
        let z: f64 = unnorm.iter().enumerate().map(|(i, v)| grid.weight(i) * v).sum();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::NonNormalizable(format!("quadrature mass {z}")));
        }
        let density: Vec<f64> = unnorm.iter().map(|v| v / z).collect();
        let mass = density.iter().enumerate().map(|(i, v)| grid.weight(i) * v).collect();
        let flux = (0..grid.len() - 1)
            .map(|i| {
                let mid = 0.5 * (grid.node(i) + grid.node(i + 1));
                p(model.log_density_unnorm(mid)) / z / h
            })
            .collect();
        Ok(Self {
            grid: *grid,
            density: GridFunction::from_parts_unchecked(*grid, density),
            mass,
            flux,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Quadrature-normalized invariant density.
    pub fn density(&self) -> &GridFunction {
        &self.density
    }

    /// μ-mass carried by each node (sums to one).
    pub fn node_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.mass).map(|(a, w)| a * w).sum()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.mass).map(|((a, b), w)| a * b * w).sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// Samples `f` on the grid and subtracts its discrete μ-mean.
    pub fn centered(&self, f: &Observable) -> GridFunction {
        let vals: Vec<f64> = self.grid.nodes().map(|x| f.eval1(x)).collect();
        let m = self.mean(&vals);
        GridFunction::from_parts_unchecked(self.grid, vals.iter().map(|v| v - m).collect())
    }

    /// `(Lu)_i` for every node.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            if i + 1 < n {
                acc += self.flux[i] * (u[i + 1] - u[i]);
            }
            if i > 0 {
                acc -= self.flux[i - 1] * (u[i] - u[i - 1]);
            }
            out[i] = acc / self.mass[i];
        }
        out
    }

    /// Discrete Dirichlet energy `Σ a_{i+1/2} (u_{i+1} - u_i)^2`, i.e.
    /// `-∫ u Lu dμ`; the carré-du-champ energy is twice this.
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        u.windows(2)
            .zip(&self.flux)
            .map(|(w, a)| a * (w[1] - w[0]).powi(2))
            .sum()
    }

    fn boundary_share(&self, u: &[f64]) -> f64 {
        let n = u.len();
        let layer = (n / 100).max(1);
        let total: f64 = u.iter().zip(&self.mass).map(|(a, w)| a.abs() * w).sum();
        if total == 0.0 {
            return 0.0;
        }
        let edge: f64 = (0..layer)
            .chain(n - layer..n)
            .map(|i| u[i].abs() * self.mass[i])
            .sum();
        edge / total
    }

    /// Solves `(W - θ dt A) x = rhs` with the Thomas algorithm.
    fn solve_implicit(&self, theta_dt: f64, rhs: &mut [f64], scratch: &mut [f64]) {
        let n = rhs.len();
        let a = &self.flux;
        // c' coefficients in scratch
        let diag = |i: usize| {
            let mut d = self.mass[i];
            if i + 1 < n {
                d += theta_dt * a[i];
            }
            if i > 0 {
                d += theta_dt * a[i - 1];
            }
            d
        };
        let mut denom = diag(0);
        scratch[0] = -theta_dt * a[0] / denom;
        rhs[0] /= denom;
        for i in 1..n {
            let lower = -theta_dt * a[i - 1];
            denom = diag(i) - lower * scratch[i - 1];
            if i + 1 < n {
                scratch[i] = -theta_dt * a[i] / denom;
            }
            rhs[i] = (rhs[i] - lower * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
    }

    /// `W u + c A u` into `out`.
    fn explicit_part(&self, c: f64, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut acc = 0.0;
            if i + 1 < n {
                acc += self.flux[i] * (u[i + 1] - u[i]);
            }
            if i > 0 {
                acc -= self.flux[i - 1] * (u[i] - u[i - 1]);
            }
            out[i] = self.mass[i] * u[i] + c * acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    ImplicitEuler,
    CrankNicolson,
}

/// One completed time step, handed to observers of an [`Evolution`].
pub struct StepInfo<'a> {
    pub t0: f64,
    pub t1: f64,
    pub kind: StepKind,
    pub before: &'a [f64],
    pub after: &'a [f64],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionDiagnostics {
    pub steps: usize,
    pub max_cfl_ratio: f64,
    pub warnings: Vec<String>,
}

/// Backward-equation solver state `u(t) = P_t u(0)`.
pub struct Evolution<'g> {
    generator: &'g DiscreteGenerator,
    stepping: TimeStepping,
    u: Vec<f64>,
    t: f64,
    half_steps_left: usize,
    diagnostics: EvolutionDiagnostics,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'g> Evolution<'g> {
    pub fn new(generator: &'g DiscreteGenerator, u0: Vec<f64>, stepping: TimeStepping) -> Result<Self> {
        if u0.len() != generator.grid.len() {
            return Err(Error::InvalidInput("initial data does not match the grid".into()));
        }
        if !(stepping.dt > 0.0) {
            return Err(Error::InvalidInput(format!("pde time step must be positive, got {}", stepping.dt)));
        }
        let n = u0.len();
        Ok(Self {
            generator,
            stepping,
            u: u0,
            t: 0.0,
            half_steps_left: stepping.rannacher_half_steps,
            diagnostics: EvolutionDiagnostics::default(),
            rhs: vec![0.0; n],
            scratch: vec![0.0; n],
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn current(&self) -> GridFunction {
        GridFunction::from_parts_unchecked(self.generator.grid, self.u.clone())
    }

    pub fn diagnostics(&self) -> &EvolutionDiagnostics {
        &self.diagnostics
    }

    fn step(&mut self, dt: f64, observer: &mut dyn FnMut(&StepInfo)) {
        let kind = if self.half_steps_left > 0 {
            self.half_steps_left -= 1;
            StepKind::ImplicitEuler
        } else {
            StepKind::CrankNicolson
        };
        let ratio = dt / self.generator.grid.spacing().powi(2);
        if ratio > self.diagnostics.max_cfl_ratio {
            self.diagnostics.max_cfl_ratio = ratio;
            if ratio > CFL_WARNING_RATIO && self.diagnostics.warnings.is_empty() {
                self.diagnostics
                    .warnings
                    .push(format!("CFLWarning: dt/h^2 = {ratio:.3e} exceeds {CFL_WARNING_RATIO:e}"));
            }
        }
        let mut rhs = std::mem::take(&mut self.rhs);
        match kind {
            StepKind::ImplicitEuler => {
                self.generator.explicit_part(0.0, &self.u, &mut rhs);
                self.generator.solve_implicit(dt, &mut rhs, &mut self.scratch);
            }
            StepKind::CrankNicolson => {
                self.generator.explicit_part(0.5 * dt, &self.u, &mut rhs);
                self.generator.solve_implicit(0.5 * dt, &mut rhs, &mut self.scratch);
            }
        }
        let t0 = self.t;
        self.t += dt;
        observer(&StepInfo {
            t0,
            t1: self.t,
            kind,
            before: &self.u,
            after: &rhs,
        });
        self.rhs = std::mem::replace(&mut self.u, rhs);
        self.diagnostics.steps += 1;
    }

    /// Advances to `t_target`, landing on it exactly.
    pub fn advance_to(&mut self, t_target: f64, observer: &mut dyn FnMut(&StepInfo)) {
        while self.t < t_target * (1.0 - 1e-14) - 1e-300 {
            let remaining = t_target - self.t;
            let mut dt = if self.half_steps_left > 0 {
                0.5 * self.stepping.step_at(self.t)
            } else {
                self.stepping.step_at(self.t)
            };
            if dt >= remaining * (1.0 - 1e-12) {
                dt = remaining;
            } else if dt > 0.5 * remaining {
                // avoid a sliver step at the target
                dt = 0.5 * remaining;
            }
            self.step(dt, observer);
        }
        self.t = self.t.max(t_target);
    }

    pub fn check_domain_leak(&self) -> Result<()> {
        let share = self.generator.boundary_share(&self.u);
        if share > DOMAIN_LEAK_TOLERANCE {
            return Err(Error::DomainLeak {
                mass: share,
                tolerance: DOMAIN_LEAK_TOLERANCE,
            });
        }
        Ok(())
    }
}

fn no_observer(_: &StepInfo) {}

/// `P_t f` by Crank–Nicolson with zero-flux ends.
pub fn evolve_backward(model: &Diffusion1D, f: &GridFunction, t: f64, cfg: &PdeConfig) -> Result<GridFunction> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("evolution time must be nonnegative, got {t}")));
    }
    if f.grid() != &cfg.grid {
        return Err(Error::InvalidInput("function grid differs from the solver grid".into()));
    }
    let gen = DiscreteGenerator::new(model, &cfg.grid)?;
    let mut ev = Evolution::new(&gen, f.values().to_vec(), cfg.stepping)?;
    ev.advance_to(t, &mut no_observer);
    ev.check_domain_leak()?;
    Ok(ev.current())
}

fn check_probability_density(nu0: &GridFunction) -> Result<()> {
    if nu0.values().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("initial density has negative values".into()));
    }
    let mass = nu0.integrate();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("initial density has mass {mass}, expected 1")));
    }
    Ok(())
}

/// Fokker–Planck evolution of densities at each of the increasing `times`.
///
/// Every 1D model is reversible, so `ρ_t = p · P_t(ρ_0 / p)`.
pub fn evolve_forward_series(
    model: &Diffusion1D,
    nu0: &GridFunction,
    times: &[f64],
    cfg: &PdeConfig,
) -> Result<Vec<GridFunction>> {
    check_probability_density(nu0)?;
    if nu0.grid() != &cfg.grid {
        return Err(Error::InvalidInput("density grid differs from the solver grid".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidInput("times must be nonnegative and nondecreasing".into()));
    }
    let gen = DiscreteGenerator::new(model, &cfg.grid)?;
    let p = gen.density().values().to_vec();
    let phi0: Vec<f64> = nu0.values().iter().zip(&p).map(|(r, q)| r / q).collect();
    let mut ev = Evolution::new(&gen, phi0, cfg.stepping)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        ev.advance_to(t, &mut no_observer);
        let rho: Vec<f64> = ev.values().iter().zip(&p).map(|(u, q)| u * q).collect();
        out.push(GridFunction::from_parts_unchecked(cfg.grid, rho));
    }
    Ok(out)
}

pub fn evolve_forward(model: &Diffusion1D, nu0: &GridFunction, t: f64, cfg: &PdeConfig) -> Result<GridFunction> {
    Ok(evolve_forward_series(model, nu0, &[t], cfg)?.remove(0))
}

/// `(1/2) ∫ |ρ1 - ρ2| dx`, clamped to `[0, 1]`.
pub fn tv_distance(rho1: &GridFunction, rho2: &GridFunction) -> Result<f64> {
    let diff = rho1.zip_with(rho2, |a, b| (a - b).abs())?;
    Ok((0.5 * diff.integrate()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    /// `‖P_t f‖_{L²(μ)}`.
    pub norms: Vec<f64>,
}

impl DecayCurve {
    /// Least-squares slope of `log ‖P_t f‖` against `log t` on `[t0, t1]`.
    pub fn loglog_slope(&self, t0: f64, t1: f64) -> f64 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.norms)
            .filter(|(t, n)| **t >= t0 && **t <= t1 && **n > 0.0)
            .map(|(t, n)| (t.ln(), n.ln()))
            .unzip();
        crate::stats::linear_fit(&xs, &ys).1
    }

    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.norms.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

fn sorted_positive_times(times: &[f64]) -> Result<Vec<f64>> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("times must be finite and nonnegative".into()));
    }
    let mut ts = times.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    Ok(ts)
}

/// `‖P_t f‖_{L²(μ)}` at each requested time, from one evolution of the
/// μ-centered `f`.
pub fn decay_curve(model: &Diffusion1D, f: &Observable, times: &[f64], cfg: &PdeConfig) -> Result<DecayCurve> {
    let ts = sorted_positive_times(times)?;
    let gen = DiscreteGenerator::new(model, &cfg.grid)?;
    let f0 = gen.centered(f);
    let mut ev = Evolution::new(&gen, f0.into_values(), cfg.stepping)?;
    let mut norms = Vec::with_capacity(ts.len());
    for &t in &ts {
        ev.advance_to(t, &mut no_observer);
        norms.push(gen.norm(ev.values()));
    }
    ev.check_domain_leak()?;
    Ok(DecayCurve { times: ts, norms })
}

/// `β(s)`, its primitive `η(t)` and the positivity flag, sampled densely on
/// every solver step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCurve {
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    /// `β(s) ≥ -1e-8` beyond the first grid time.
    pub hpos: bool,
    pub reversible: bool,
    pub diagnostics: EvolutionDiagnostics,
}

fn interp_sorted(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|s| *s < t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let th = (t - t0) / (t1 - t0);
    (1.0 - th) * values[k - 1] + th * values[k]
}

impl BetaCurve {
    pub fn s_max(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn beta_at(&self, s: f64) -> f64 {
        interp_sorted(&self.times, &self.beta, s)
    }

    /// `η(t)`; between samples `β` is taken piecewise linear.
    pub fn eta_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|s| *s < t);
        if k == 0 {
            return 0.0;
        }
        if k >= self.times.len() {
            return self.eta[self.eta.len() - 1];
        }
        let t0 = self.times[k - 1];
        self.eta[k - 1] + 0.5 * (t - t0) * (self.beta[k - 1] + self.beta_at(t))
    }

    /// `Var(S_t)/t` as implied by the curve.
    pub fn h_at(&self, t: f64) -> f64 {
        variance_from_beta(self, t) / t
    }
}

/// Dense `β(s) = ‖P_s f‖²` for the μ-centered `f` up to the largest of
/// `t_grid`, which are all hit exactly.
pub fn beta_curve(model: &Diffusion1D, f: &Observable, t_grid: &[f64], cfg: &PdeConfig) -> Result<BetaCurve> {
    let ts = sorted_positive_times(t_grid)?;
    let gen = DiscreteGenerator::new(model, &cfg.grid)?;
    let f0 = gen.centered(f);
    let b0 = gen.inner(f0.values(), f0.values());
    let mut times = vec![0.0];
    let mut beta = vec![b0];
    let mut ev = Evolution::new(&gen, f0.into_values(), cfg.stepping)?;
    for &t in &ts {
        ev.advance_to(t, &mut |step: &StepInfo| {
            times.push(step.t1);
            beta.push(gen.inner(step.after, step.after));
        });
    }
    ev.check_domain_leak()?;
    let mut eta = Vec::with_capacity(beta.len());
    let mut acc = 0.0;
    eta.push(0.0);
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (beta[k] + beta[k - 1]);
        eta.push(acc);
    }
    let hpos = beta.iter().skip(1).all(|b| *b >= -1e-8);
    Ok(BetaCurve {
        times,
        beta,
        eta,
        hpos,
        reversible: true,
        diagnostics: ev.diagnostics().clone(),
    })
}

/// `∫ f · P_{2s} f dμ`, the duality form of `β(s)` valid without
/// reversibility.
pub fn beta_by_duality(model: &Diffusion1D, f: &Observable, s: f64, cfg: &PdeConfig) -> Result<f64> {
    let gen = DiscreteGenerator::new(model, &cfg.grid)?;
    let f0 = gen.centered(f);
    let mut ev = Evolution::new(&gen, f0.values().to_vec(), cfg.stepping)?;
    ev.advance_to(2.0 * s, &mut no_observer);
    Ok(gen.inner(f0.values(), ev.values()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvEstimate {
    /// `V = ∫_0^∞ β(s) ds`.
    pub value: f64,
    pub eta_at_horizon: f64,
    pub tail: f64,
    pub converged: bool,
    pub tail_model: TailModel,
    pub fit_residual: f64,
}

/// Integral of `integrand` over the curve's times plus a fitted tail.
pub(crate) fn integral_with_tail(times: &[f64], integrand: &[f64]) -> Result<(f64, TailFit)> {
    let body: f64 = times
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(t, h)| 0.5 * (t[1] - t[0]) * (h[0] + h[1]))
        .sum();
    let fit = fit_tail(times, integrand)
        .ok_or_else(|| Error::Inconclusive("tail window unavailable or integrand changes sign".into()))?;
    Ok((body, fit))
}

/// Kipnis–Varadhan integral `V = ∫_0^∞ β(s) ds`.
pub fn kv_integral(curve: &BetaCurve) -> Result<KvEstimate> {
    let (body, fit) = integral_with_tail(&curve.times, &curve.beta)?;
    if !fit.integrable {
        return Err(Error::Diverged {
            tail: fit.model.describe(),
        });
    }
    let value = body + fit.tail_integral;
    let share = if value > 0.0 { fit.tail_integral / value } else { 0.0 };
    Ok(KvEstimate {
        value,
        eta_at_horizon: body,
        tail: fit.tail_integral,
        converged: share < KV_TAIL_SHARE && fit.trusted(),
        tail_model: fit.model,
        fit_residual: fit.residual,
    })
}

/// `Var_μ(S_t) = 4 ∫_0^{t/2} (t - 2s) β(s) ds` by the trapezoid rule on the
/// curve's own samples.
pub fn variance_from_beta(curve: &BetaCurve, t: f64) -> f64 {
    let half = 0.5 * t;
    let mut acc = 0.0;
    for k in 1..curve.times.len() {
        let (s0, s1) = (curve.times[k - 1], curve.times[k]);
        if s0 >= half {
            break;
        }
        let (s1c, b1) = if s1 > half { (half, curve.beta_at(half)) } else { (s1, curve.beta[k]) };
        let g0 = (t - 2.0 * s0) * curve.beta[k - 1];
        let g1 = (t - 2.0 * s1c) * b1;
        acc += 0.5 * (s1c - s0) * (g0 + g1);
    }
    4.0 * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutocovPoint {
    pub lag: f64,
    pub value: f64,
    pub stderr: f64,
    pub pairs: usize,
}

/// Monte Carlo `C_f(u) = E_μ[f(X_0) f(X_u)]` from an equilibrium ensemble,
/// pooling every pair of checkpoints separated by `u`. A non-centered `f` is
/// centered by the pooled sample mean.
pub fn autocov_mc(ensemble: &PathEnsemble, f: &Observable, lags: &[f64]) -> Result<Vec<AutocovPoint>> {
    if !ensemble.config().initial_law.is_equilibrium() {
        return Err(Error::OutOfEquilibrium);
    }
    let times = ensemble.times();
    let n_paths = ensemble.n_paths();
    let nk = times.len();
    let mut fv = vec![0.0; n_paths * nk];
    for p in 0..n_paths {
        for k in 0..nk {
            fv[p * nk + k] = f.eval(ensemble.state(p, k));
        }
    }
    let shift = if f.is_centered() {
        0.0
    } else {
        fv.iter().sum::<f64>() / fv.len() as f64
    };
    let tol = 1e-9 * times.last().copied().unwrap_or(1.0).max(1.0);
    let mut out = Vec::with_capacity(lags.len());
    for &u in lags {
        if u > *times.last().unwrap_or(&0.0) + tol || u < 0.0 {
            return Err(Error::InvalidInput(format!("lag {u} exceeds the ensemble horizon")));
        }
        let pairs: Vec<(usize, usize)> = (0..nk)
            .flat_map(|i| (i..nk).map(move |j| (i, j)))
            .filter(|(i, j)| (times[*j] - times[*i] - u).abs() <= tol)
            .collect();
        if pairs.is_empty() {
            return Err(Error::InvalidInput(format!("no checkpoint pair is separated by {u}")));
        }
        let per_path: Vec<f64> = (0..n_paths)
            .map(|p| {
                pairs
                    .iter()
                    .map(|(i, j)| (fv[p * nk + i] - shift) * (fv[p * nk + j] - shift))
                    .sum::<f64>()
                    / pairs.len() as f64
            })
            .collect();
        let Estimate { value, stderr } = crate::stats::mean(&per_path);
        out.push(AutocovPoint {
            lag: u,
            value,
            stderr,
            pairs: pairs.len(),
        });
    }
    Ok(out)
}

/// Writes `(t, value, stderr)` rows with a header; empty stderr for
/// deterministic curves.
pub fn write_curve_csv<W: Write>(mut w: W, rows: impl IntoIterator<Item = (f64, f64, Option<f64>)>) -> io::Result<()> {
    writeln!(w, "t,value,stderr")?;
    for (t, v, se) in rows {
        match se {
            Some(se) => writeln!(w, "{t},{v},{se}")?,
            None => writeln!(w, "{t},{v},")?,
        }
    }
    Ok(())
}
