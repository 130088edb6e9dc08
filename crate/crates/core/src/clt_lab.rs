//! Central limit experiments: KS tests of normalized additive functionals,
//! Brownian correlation checks, uniform-integrability tables, anomalous
//! variance scaling in the Cauchy family, out-of-equilibrium starts and the
//! kinetic diffusion limit.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::models::{CauchyParams, Diffusion1D, KineticModel, Model, Observable, Polynomial};
use crate::sde::{run_ensemble, InitialLaw, PathEnsemble, SimConfig};
use crate::semigroup::{
    beta_curve, evolve_forward_series, kv_integral, tv_distance, variance_from_beta, KvEstimate, PdeConfig,
    TimeStepping,
};
use crate::stats::{self, Estimate, KOLMOGOROV_SD};

/// Largest `|r - 1|` between normalized variances at consecutive times for
/// a candidate normalization to count as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.25;

/// Default cap on scalar Euler steps per experiment.
pub const STEP_BUDGET: f64 = 2e10;

/// Allowed growth of a uniform-integrability tail value from the smallest
/// to the largest time.
pub const UI_GROWTH_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub t: f64,
    pub n_samples: usize,
    /// `s_t` used to normalize `S_t`.
    pub normalization: f64,
    pub var_est: Estimate,
    pub var_pde: Option<f64>,
    /// `E[S_t^2] / Var_est`, which is 1 up to sampling error when the
    /// samples are centred.
    pub normalized_second_moment: Estimate,
    pub ks_stat: f64,
    pub ks_threshold_1pct: f64,
    pub passes: bool,
}

impl CltReport {
    /// Approximate standard error of the KS statistic under the null.
    pub fn ks_stderr(&self) -> f64 {
        KOLMOGOROV_SD / (self.n_samples as f64).sqrt()
    }
}

/// KS test of `samples / normalization` against the standard normal law.
pub fn clt_test_samples(samples: &[f64], t: f64, normalization: f64, var_pde: Option<f64>) -> Result<CltReport> {
    if !(normalization > 0.0) {
        return Err(Error::InvalidInput(format!("normalization must be positive, got {normalization}")));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let z: Vec<f64> = samples.iter().map(|s| s / normalization).collect();
    let var_est = stats::variance(samples);
    let scaled: Vec<f64> = if var_est.value > 0.0 {
        samples.iter().map(|s| s / var_est.value.sqrt()).collect()
    } else {
        vec![0.0; samples.len()]
    };
    let ks_stat = stats::ks_statistic(&z, stats::normal_cdf);
    let ks_threshold_1pct = stats::ks_threshold_1pct(samples.len());
    Ok(CltReport {
        t,
        n_samples: samples.len(),
        normalization,
        var_est,
        var_pde,
        normalized_second_moment: stats::second_moment(&scaled),
        ks_stat,
        ks_threshold_1pct,
        passes: ks_stat <= ks_threshold_1pct,
    })
}

/// [`clt_test_samples`] on the ensemble's `S_t`.
pub fn clt_test(ensemble: &PathEnsemble, t: f64, normalization: f64, var_pde: Option<f64>) -> Result<CltReport> {
    clt_test_samples(&ensemble.s_at(t)?, t, normalization, var_pde)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcltReport {
    pub times: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// `sqrt(min(t_i, t_j) / max(t_i, t_j))`.
    pub target: Vec<Vec<f64>>,
    pub max_abs_deviation: f64,
    /// Largest deviation in units of the correlation standard error.
    pub max_z: f64,
}

impl FcltReport {
    pub fn within(&self, k_sigma: f64) -> bool {
        self.max_z <= k_sigma
    }
}

/// Empirical correlations of `S_{t_i}` against the Brownian target.
/// Correlations do not depend on the normalizations `s_{t_i}`.
pub fn fclt_covariance_test(ensemble: &PathEnsemble, times: &[f64]) -> Result<FcltReport> {
    if times.len() < 2 {
        return Err(Error::InvalidInput("need at least two times".into()));
    }
    if !ensemble.config().initial_law.is_equilibrium() {
        return Err(Error::OutOfEquilibrium);
    }
    let cols = times.iter().map(|t| ensemble.s_at(*t)).collect::<Result<Vec<_>>>()?;
    let n = times.len();
    let mut correlation = vec![vec![0.0; n]; n];
    let mut stderr = vec![vec![0.0; n]; n];
    let mut target = vec![vec![0.0; n]; n];
    let (mut max_dev, mut max_z) = (0.0_f64, 0.0_f64);
    for i in 0..n {
        for j in 0..n {
            let tgt = (times[i].min(times[j]) / times[i].max(times[j])).sqrt();
            let c = if i == j || times[i] == times[j] {
                Estimate { value: 1.0, stderr: 0.0 }
            } else {
                stats::correlation(&cols[i], &cols[j])
            };
            correlation[i][j] = c.value;
            stderr[i][j] = c.stderr;
            target[i][j] = tgt;
            let dev = (c.value - tgt).abs();
            max_dev = max_dev.max(dev);
            if dev > 0.0 {
                max_z = max_z.max(if c.stderr > 0.0 { dev / c.stderr } else { f64::INFINITY });
            }
        }
    }
    Ok(FcltReport {
        times: times.to_vec(),
        correlation,
        stderr,
        target,
        max_abs_deviation: max_dev,
        max_z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiTable {
    pub times: Vec<f64>,
    pub m_grid: Vec<f64>,
    /// `values[i][j] = E[(S²/Var) 1{S²/Var > M_j}]` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub monotone_in_m: bool,
    pub ui_consistent: bool,
}

/// Uniform-integrability table of `S_t² / Var(S_t)`. `samples[i]` holds
/// `S_{t_i}` across paths and `var_estimates[i]` the variance used.
pub fn ui_diagnostic(times: &[f64], samples: &[Vec<f64>], var_estimates: &[f64], m_grid: &[f64]) -> Result<UiTable> {
    if times.len() != samples.len() || times.len() != var_estimates.len() || times.is_empty() {
        return Err(Error::InvalidInput("times, samples and variances must have equal nonzero length".into()));
    }
    let mut ms = m_grid.to_vec();
    ms.sort_by(|a, b| a.total_cmp(b));
    let mut values = Vec::new();
    let mut stderr = Vec::new();
    for (s, v) in samples.iter().zip(var_estimates) {
        let q: Vec<f64> = s.iter().map(|x| if *v > 0.0 { x * x / v } else { 0.0 }).collect();
        let (row, row_se): (Vec<f64>, Vec<f64>) = ms
            .iter()
            .map(|m| {
                let tail: Vec<f64> = q.iter().map(|y| if *y > *m { *y } else { 0.0 }).collect();
                let e = stats::mean(&tail);
                (e.value, e.stderr)
            })
            .unzip();
        values.push(row);
        stderr.push(row_se);
    }
    let monotone_in_m = values.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0]));
    let (first, last) = (0, times.len() - 1);
    let growth_ok = (0..ms.len()).all(|j| values[last][j] <= UI_GROWTH_LIMIT * values[first][j]);
    Ok(UiTable {
        times: times.to_vec(),
        m_grid: ms,
        values,
        stderr,
        monotone_in_m,
        ui_consistent: monotone_in_m && growth_ok,
    })
}

/// Normalization regimes of `Var(S_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// `t`, the diffusive scale.
    Linear,
    /// `t log^power t`.
    LogPower { power: f64 },
    /// `t log log t`.
    LogLog,
    Inconclusive,
}

impl Regime {
    pub fn normalization(&self, t: f64) -> f64 {
        match self {
            Self::Linear => t,
            Self::LogPower { power } => t * t.ln().powf(*power),
            Self::LogLog => t * t.ln().ln(),
            Self::Inconclusive => f64::NAN,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => write!(f, "t"),
            Self::LogPower { power } => write!(f, "t log^{power} t"),
            Self::LogLog => write!(f, "t loglog t"),
            Self::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub regime: Regime,
    /// `Var(S_t) / normalization(t)` at each time.
    pub normalized: Vec<f64>,
    /// Ratios of consecutive normalized values.
    pub ratios: Vec<f64>,
    /// `max |r - 1|`.
    pub score: f64,
    pub plateau: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Pde,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// PDE grid spacing.
    pub spacing: f64,
    /// Optional longer horizon for comparing `Var(S_t)/t` with `4V`.
    pub kv_horizon: Option<f64>,
    pub kv_spacing: f64,
    pub mc_paths: usize,
    pub mc_dt: f64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            spacing: 0.05,
            kv_horizon: None,
            kv_spacing: 0.2,
            mc_paths: 10_000,
            mc_dt: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvComparison {
    pub horizon: f64,
    pub var_over_t: f64,
    pub four_v: f64,
    pub relative_gap: f64,
    pub kv: KvEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub beta: f64,
    pub mode: ScalingMode,
    pub times: Vec<f64>,
    pub variances: Vec<f64>,
    pub variance_stderr: Option<Vec<f64>>,
    pub candidates: Vec<CandidateFit>,
    pub selected: Regime,
    /// `Some` when the KV integral converges on the run's own curve.
    pub kv: Option<KvEstimate>,
    /// The KV integral was declared divergent.
    pub kv_diverged: bool,
    pub kv_comparison: Option<KvComparison>,
    pub domain_half_width: f64,
    pub grid_nodes: usize,
}

impl ScalingReport {
    pub fn regime(&self) -> Result<Regime> {
        match self.selected {
            Regime::Inconclusive => Err(Error::Inconclusive("no candidate normalization plateaus".into())),
            r => Ok(r),
        }
    }
}

/// Candidate normalizations for the Cauchy family with log-exponent `beta`.
pub fn scaling_candidates(beta: f64) -> Vec<Regime> {
    let mut c = vec![Regime::Linear];
    if (1.0 - beta).abs() > 1e-12 {
        c.push(Regime::LogPower { power: 1.0 - beta });
    }
    c.push(Regime::LogLog);
    c
}

/// Scores every candidate and selects the plateau with the smallest score.
pub fn select_regime(beta: f64, times: &[f64], variances: &[f64]) -> (Vec<CandidateFit>, Regime) {
    let fits: Vec<CandidateFit> = scaling_candidates(beta)
        .into_iter()
        .map(|regime| {
            let normalized: Vec<f64> = times.iter().zip(variances).map(|(t, v)| v / regime.normalization(*t)).collect();
            let ratios: Vec<f64> = normalized.windows(2).map(|w| w[1] / w[0]).collect();
            let score = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            let score = if score.is_finite() { score } else { f64::INFINITY };
            CandidateFit {
                regime,
                normalized,
                ratios,
                score,
                plateau: score < PLATEAU_TOLERANCE,
            }
        })
        .collect();
    let selected = fits
        .iter()
        .filter(|c| c.plateau)
        .min_by(|a, b| a.score.total_cmp(&b.score))
        .map_or(Regime::Inconclusive, |c| c.regime);
    (fits, selected)
}

/// Cauchy model with `α = 3` and the given `β` on a domain of half-width
/// `20 sqrt(t_max)`, with the bounded observable `L(x²)`.
pub fn anomalous_setup(beta: f64, t_max: f64) -> Result<(Diffusion1D, Observable)> {
    let params = CauchyParams::new(3.0, beta)?;
    let r = 20.0 * t_max.sqrt();
    let model = Diffusion1D::cauchy(params).with_domain(-r, r);
    let f = Observable::generator_of(&model, Polynomial::monomial(2));
    Ok((model, f))
}

fn pde_config(half_width: f64, spacing: f64) -> Result<PdeConfig> {
    let grid = Grid1D::with_spacing(-half_width, half_width, spacing)?;
    Ok(PdeConfig::new(grid, TimeStepping::long_horizon(&grid)))
}

pub fn anomalous_scaling_experiment(
    beta: f64,
    t_grid: &[f64],
    mode: ScalingMode,
    opts: &ScalingOptions,
) -> Result<ScalingReport> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 1.0) {
        return Err(Error::InvalidInput("t grid must be increasing, above 1, with at least two points".into()));
    }
    let t_max = t_grid[t_grid.len() - 1];
    let (model, f) = anomalous_setup(beta, t_max)?;
    let half = model.domain_hint().1;
    let (variances, variance_stderr, kv, kv_diverged, nodes) = match mode {
        ScalingMode::Pde => {
            let cfg = pde_config(half, opts.spacing)?;
            let curve = beta_curve(&model, &f, &[0.5 * t_max], &cfg)?;
            let vars: Vec<f64> = t_grid.iter().map(|t| variance_from_beta(&curve, *t)).collect();
            let (kv, diverged) = match kv_integral(&curve) {
                Ok(k) => (Some(k), false),
                Err(Error::Diverged { .. }) => (None, true),
                Err(Error::Inconclusive(_)) => (None, false),
                Err(e) => return Err(e),
            };
            (vars, None, kv, diverged, cfg.grid.len())
        }
        ScalingMode::Mc => {
            let cfg = SimConfig::new(opts.mc_dt, t_max, opts.mc_paths, opts.seed).with_checkpoints(t_grid.to_vec());
            let ens = run_ensemble(&Model::Diffusion(model.clone()), &f, &cfg)?;
            let (v, se): (Vec<f64>, Vec<f64>) = t_grid
                .iter()
                .map(|t| {
                    let e = stats::variance(&ens.s_at(*t)?);
                    Ok((e.value, e.stderr))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            (v, Some(se), None, false, 0)
        }
    };
    let (candidates, selected) = select_regime(beta, t_grid, &variances);
    let kv_comparison = match opts.kv_horizon {
        Some(h) if !kv_diverged => Some(kv_comparison(beta, h, opts.kv_spacing)?),
        _ => None,
    };
    Ok(ScalingReport {
        beta,
        mode,
        times: t_grid.to_vec(),
        variances,
        variance_stderr,
        candidates,
        selected,
        kv,
        kv_diverged,
        kv_comparison,
        domain_half_width: half,
        grid_nodes: nodes,
    })
}

/// `Var(S_t)/t` at `horizon` against `4V` from the same curve.
pub fn kv_comparison(beta: f64, horizon: f64, spacing: f64) -> Result<KvComparison> {
    let (model, f) = anomalous_setup(beta, horizon)?;
    let cfg = pde_config(model.domain_hint().1, spacing)?;
    let curve = beta_curve(&model, &f, &[0.5 * horizon], &cfg)?;
    let kv = kv_integral(&curve)?;
    let var_over_t = variance_from_beta(&curve, horizon) / horizon;
    let four_v = 4.0 * kv.value;
    Ok(KvComparison {
        horizon,
        var_over_t,
        four_v,
        relative_gap: (var_over_t / four_v - 1.0).abs(),
        kv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfEquilibriumOptions {
    pub clt_t: f64,
    pub normalization: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub grid_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfEquilibriumReport {
    pub tv_times: Vec<f64>,
    pub tv: Vec<f64>,
    pub tv_nonincreasing: bool,
    pub clt_from_nu0: CltReport,
    pub clt_from_mu: CltReport,
    pub ks_difference: f64,
    pub pooled_stderr: f64,
    pub matches: bool,
}

/// Total-variation decay from `nu0` by the Fokker–Planck solver, and CLT
/// verdicts from `nu0` and from `μ` with a common normalization. A Dirac
/// start is a bump of half-width `2h` on the grid and an exact start for
/// the paths.
pub fn out_of_equilibrium_experiment(
    model: &Diffusion1D,
    f: &Observable,
    nu0: &InitialLaw,
    tv_times: &[f64],
    opts: &OutOfEquilibriumOptions,
) -> Result<OutOfEquilibriumReport> {
    let cfg = PdeConfig::for_model(model, opts.grid_nodes)?;
    let grid = cfg.grid;
    let mu = GridFunction::invariant_density(model, &grid)?;
    let rho0 = match nu0 {
        InitialLaw::Equilibrium => mu.clone(),
        InitialLaw::Dirac { x0 } => {
            let x = *x0
                .first()
                .ok_or_else(|| Error::InvalidInput("empty initial state".into()))?;
            GridFunction::bump(&grid, x)?
        }
        InitialLaw::CustomDensity { density } => {
            let v: Vec<f64> = grid.nodes().map(|x| density.interpolate(x).unwrap_or(0.0)).collect();
            let g = GridFunction::new(grid, v)?;
            let m = g.integrate();
            g.scaled(1.0 / m)
        }
    };
    let series = evolve_forward_series(model, &rho0, tv_times, &cfg)?;
    let tv = series.iter().map(|r| tv_distance(r, &mu)).collect::<Result<Vec<_>>>()?;
    let tv_nonincreasing = tv.windows(2).all(|w| w[1] <= w[0] + 1e-6);

    let m = Model::Diffusion(model.clone());
    let base = SimConfig::new(opts.dt, opts.clt_t, opts.n_paths, opts.seed);
    let from_nu0 = run_ensemble(&m, f, &base.clone().with_initial_law(nu0.clone()))?;
    let from_mu = run_ensemble(&m, f, &base)?;
    let clt_from_nu0 = clt_test(&from_nu0, opts.clt_t, opts.normalization, None)?;
    let clt_from_mu = clt_test(&from_mu, opts.clt_t, opts.normalization, None)?;
    let ks_difference = (clt_from_nu0.ks_stat - clt_from_mu.ks_stat).abs();
    let pooled_stderr = clt_from_nu0.ks_stderr().hypot(clt_from_mu.ks_stderr());
    Ok(OutOfEquilibriumReport {
        tv_times: tv_times.to_vec(),
        tv,
        tv_nonincreasing,
        matches: clt_from_nu0.passes && clt_from_mu.passes && ks_difference < 2.0 * pooled_stderr,
        clt_from_nu0,
        clt_from_mu,
        ks_difference,
        pooled_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticLimitOptions {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub step_budget: f64,
}

impl Default for KineticLimitOptions {
    fn default() -> Self {
        Self {
            n_paths: 40_000,
            dt: 0.01,
            seed: 7,
            step_budget: STEP_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticLimitPoint {
    pub eps: f64,
    pub horizon: f64,
    /// `Var(ε S_{t/ε²})`.
    pub var: Estimate,
    pub ks_stat: f64,
    pub ks_threshold_1pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticLimitReport {
    pub t: f64,
    pub points: Vec<KineticLimitPoint>,
    /// `Var / t` at the smallest `ε`.
    pub sigma2: f64,
    /// Deviations `|Var/t - σ²_ref|` shrink along the `ε` sequence, where
    /// `σ²_ref` is `sigma2`.
    pub monotone: bool,
}

/// Diffusive limit of the first position coordinate: `ε (x_{t/ε²} - x_0)`
/// with `S = ∫ v`, simulated from the velocity equilibrium.
pub fn kinetic_diffusion_limit(
    model: &KineticModel,
    eps_list: &[f64],
    t: f64,
    opts: &KineticLimitOptions,
) -> Result<KineticLimitReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("eps list must be positive and decreasing".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("t must be nonnegative, got {t}")));
    }
    let steps: f64 = eps_list
        .iter()
        .map(|e| (t / (e * e) / opts.dt).ceil() * opts.n_paths as f64 * model.dim as f64)
        .sum();
    if steps > opts.step_budget {
        return Err(Error::Budget {
            steps,
            budget: opts.step_budget,
        });
    }
    let m = Model::Kinetic(model.clone());
    let f = Observable::coordinate(model.dim);
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let horizon = t / (eps * eps);
        let samples = if horizon > 0.0 {
            let cfg = SimConfig::new(opts.dt.min(horizon), horizon, opts.n_paths, opts.seed);
            let ens = run_ensemble(&m, &f, &cfg)?;
            ens.s_at(horizon)?.into_iter().map(|s| eps * s).collect()
        } else {
            vec![0.0; opts.n_paths.max(2)]
        };
        points.push((eps, horizon, samples));
    }
    let last = &points[points.len() - 1].2;
    let sigma2 = if t > 0.0 { stats::variance(last).value / t } else { 0.0 };
    let scale = (sigma2 * t).sqrt();
    let out: Vec<KineticLimitPoint> = points
        .into_iter()
        .map(|(eps, horizon, s)| {
            let ks_stat = if scale > 0.0 {
                stats::ks_statistic(&s.iter().map(|x| x / scale).collect::<Vec<_>>(), stats::normal_cdf)
            } else {
                0.0
            };
            KineticLimitPoint {
                eps,
                horizon,
                var: stats::variance(&s),
                ks_stat,
                ks_threshold_1pct: stats::ks_threshold_1pct(s.len()),
            }
        })
        .collect();
    let monotone = t > 0.0 && {
        let v: Vec<f64> = out.iter().map(|p| p.var.value / t).collect();
        v.windows(2).all(|w| w[1] >= w[0])
    };
    Ok(KineticLimitReport {
        t,
        points: out,
        sigma2,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use crate::stats::{normal_cdf, normal_pdf};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut s = SeedStream::new(seed, 0);
        (0..n).map(|_| s.normal()).collect()
    }

    #[test]
    fn ks_threshold_calibration() {
        // 1% level: at most a few of 100 normal samples should fail
        let passes = (0..100)
            .filter(|k| clt_test_samples(&normals(1000 + k, 10_000), 1.0, 1.0, None).unwrap().passes)
            .count();
        assert!(passes >= 98, "{passes}");
    }

    #[test]
    fn degenerate_samples_fail() {
        let r = clt_test_samples(&vec![0.0; 100], 1.0, 1.0, None).unwrap();
        assert_eq!(r.ks_stat, 0.5);
        assert!(!r.passes);
    }

    #[test]
    fn normalized_second_moment_is_one() {
        let z: Vec<f64> = normals(3, 20_000).into_iter().map(|x| 3.0 * x).collect();
        let r = clt_test_samples(&z, 1.0, 3.0, None).unwrap();
        assert!(r.normalized_second_moment.within(1.0, 3.0), "{:?}", r.normalized_second_moment);
    }

    #[test]
    fn ui_table_gaussian_oracle() {
        // E[Z² 1{Z² > 4}] = 2 (2 φ(2) + Φ(-2))
        let exact = 2.0 * (2.0 * normal_pdf(2.0) + normal_cdf(-2.0));
        // midpoint quadrature of 2 ∫_2^∞ z² φ(z) dz as a cross-check
        let h = 1e-4;
        let quad: f64 = (0..200_000).map(|k| 2.0 + (k as f64 + 0.5) * h).map(|z| 2.0 * z * z * normal_pdf(z) * h).sum();
        assert!((quad - exact).abs() < 1e-8);
        let z = normals(5, 100_000);
        let t = ui_diagnostic(&[1.0], &[z], &[1.0], &[4.0]).unwrap();
        assert!((t.values[0][0] - exact).abs() < 3.0 * t.stderr[0][0], "{} vs {exact}", t.values[0][0]);
    }

    #[test]
    fn ui_table_zero_and_monotone() {
        let t = ui_diagnostic(&[1.0, 2.0], &[vec![0.0; 10], vec![0.0; 10]], &[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!(t.values.iter().flatten().all(|v| *v == 0.0));
        let z = normals(9, 5000);
        let t = ui_diagnostic(&[1.0], &[z], &[1.0], &[4.0, 0.5, 1.0, 2.0]).unwrap();
        assert!(t.monotone_in_m && t.m_grid == vec![0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn regime_selection_on_synthetic_variances() {
        let ts: [f64; 3] = [1e2, 1e3, 1e4];
        let v: Vec<f64> = ts.iter().map(|t| 3.0 * t * t.ln()).collect();
        assert_eq!(select_regime(0.0, &ts, &v).1, Regime::LogPower { power: 1.0 });
        let v: Vec<f64> = ts.iter().map(|t| 2.0 * t).collect();
        assert_eq!(select_regime(2.0, &ts, &v).1, Regime::Linear);
        let v: Vec<f64> = ts.iter().map(|t| t * t.ln().ln()).collect();
        assert_eq!(select_regime(1.0, &ts, &v).1, Regime::LogLog);
        let v: Vec<f64> = ts.iter().map(|t| t * t).collect();
        assert_eq!(select_regime(0.0, &ts, &v).1, Regime::Inconclusive);
        // β = 1 has no separate log-power candidate
        assert_eq!(scaling_candidates(1.0).len(), 2);
    }

    #[test]
    fn fclt_identical_times() {
        let m = Model::Diffusion(Diffusion1D::ou());
        let cfg = SimConfig::new(0.05, 2.0, 200, 4).with_checkpoints(vec![1.0, 2.0]);
        let ens = run_ensemble(&m, &Observable::coordinate(0), &cfg).unwrap();
        let r = fclt_covariance_test(&ens, &[1.0, 1.0]).unwrap();
        assert_eq!(r.correlation[0][1], 1.0);
        assert_eq!(r.max_abs_deviation, 0.0);
        let r = fclt_covariance_test(&ens, &[1.0, 2.0]).unwrap();
        assert!((r.target[0][1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.correlation[0][1], r.correlation[1][0]);
    }

    #[test]
    fn kinetic_degenerate_and_budget() {
        let k = KineticModel::free(1);
        let opts = KineticLimitOptions {
            n_paths: 10,
            ..Default::default()
        };
        let r = kinetic_diffusion_limit(&k, &[1.0], 0.0, &opts).unwrap();
        assert_eq!(r.points[0].var.value, 0.0);
        let opts = KineticLimitOptions {
            step_budget: 1e3,
            ..opts
        };
        assert!(matches!(kinetic_diffusion_limit(&k, &[0.5], 1.0, &opts), Err(Error::Budget { .. })));
    }

    #[test]
    fn equilibrium_start_has_no_tv() {
        let m = Diffusion1D::ou().with_domain(-10.0, 10.0);
        let opts = OutOfEquilibriumOptions {
            clt_t: 5.0,
            normalization: (2.0 * 5.0 - 2.0 + 2.0 * (-5f64).exp()).sqrt(),
            n_paths: 500,
            dt: 0.05,
            seed: 2,
            grid_nodes: 2001,
        };
        let r = out_of_equilibrium_experiment(&m, &Observable::coordinate(0), &InitialLaw::Equilibrium, &[0.5, 1.0], &opts)
            .unwrap();
        assert!(r.tv.iter().all(|v| *v < 1e-10));
        assert!(r.ks_difference == 0.0);
    }
}
