//! Runs one resolved experiment and collects its report and data files.

use anyhow::{anyhow, bail, Context as _, Result};
use serde::Serialize;
use serde_json::{json, Value};

use ergolab_core::clt_lab::{
    anomalous_scaling_experiment, clt_test, fclt_covariance_test, kinetic_diffusion_limit,
    out_of_equilibrium_experiment, ui_diagnostic, KineticLimitOptions, OutOfEquilibriumOptions, Regime, ScalingMode,
    ScalingOptions, STEP_BUDGET,
};
use ergolab_core::grid::Grid1D;
use ergolab_core::models::{Diffusion1D, Model, Observable};
use ergolab_core::poisson::{criteria_report, solve_quadrature};
use ergolab_core::rates::{hardy_constants, lyapunov_check, rate_from_lyapunov, xi_envelope, Phi, WpiSpec};
use ergolab_core::sde::{run_ensemble_with_threads, InitialLaw, PathEnsemble, SimConfig};
use ergolab_core::semigroup::{beta_curve, decay_curve, variance_from_beta, PdeConfig, TimeStepping};
use ergolab_core::stats;

use crate::config::{ExperimentConfig, Kind, Normalization, SimSection, Stepping};
use crate::expr::{self, Context};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn verdict(name: &str, pass: bool, detail: String) -> Verdict {
    Verdict {
        name: name.into(),
        pass,
        detail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub model: String,
    pub observable: String,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    pub results: Value,
}

/// A report plus the CSV files that go next to it.
pub struct Outcome {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    diffusion: Option<Diffusion1D>,
    observable: Observable,
    threads: usize,
}

impl Setup<'_> {
    fn diffusion(&self) -> Result<&Diffusion1D> {
        self.diffusion.as_ref().ok_or_else(|| {
            anyhow!(
                "model.id: experiment '{}' needs a one-dimensional diffusion, not '{}'",
                self.cfg.experiment.name(),
                self.cfg.model.id
            )
        })
    }

    fn pde(&self) -> Result<PdeConfig> {
        let g = self.cfg.grid.as_ref().context("grid section missing")?;
        let hw = g.half_width.context("grid.half_width unresolved")?;
        let grid = match (g.nodes, g.spacing) {
            (Some(n), _) => Grid1D::symmetric(hw, n),
            (None, Some(h)) => Grid1D::with_spacing(-hw, hw, h),
            (None, None) => bail!("grid.nodes unresolved"),
        }
        .context("grid")?;
        let stepping = match g.stepping {
            Stepping::Fixed => TimeStepping::fixed(&grid),
            Stepping::LongHorizon => TimeStepping::long_horizon(&grid),
        };
        Ok(PdeConfig::new(grid, stepping))
    }

    fn sim(&self) -> &SimSection {
        self.cfg.sim.as_ref().expect("resolved config has a sim section")
    }

    fn ensemble(&self, checkpoints: Vec<f64>) -> Result<PathEnsemble> {
        let s = self.sim();
        let t_max = checkpoints.iter().copied().fold(0.0, f64::max);
        let mut sc = SimConfig::new(s.dt, t_max, s.n_paths, s.seed).with_checkpoints(checkpoints);
        if let Some(x0) = &s.x0 {
            sc = sc.with_initial_law(InitialLaw::Dirac { x0: x0.clone() });
        }
        sc.validate().context("sim")?;
        Ok(run_ensemble_with_threads(&self.model, &self.observable, &sc, self.threads)?)
    }

    /// `Var_μ(S_t)` at each time from one semigroup run.
    fn pde_variances(&self, times: &[f64]) -> Result<Vec<f64>> {
        let d = self.diffusion()?;
        let t_max = times.iter().copied().fold(0.0, f64::max);
        let curve = beta_curve(d, &self.observable, &[0.5 * t_max], &self.pde()?)?;
        Ok(times.iter().map(|t| variance_from_beta(&curve, *t)).collect())
    }
}

fn model_label(cfg: &ExperimentConfig) -> String {
    let m = &cfg.model;
    let mut parts = Vec::new();
    for (k, v) in [
        ("alpha", m.alpha),
        ("beta", m.beta),
        ("friction", m.friction),
        ("stiffness", m.stiffness),
        ("gamma0", m.gamma0),
        ("gamma2", m.gamma2),
        ("temp0", m.temp0),
        ("temp2", m.temp2),
        ("k", m.k),
    ] {
        if let Some(v) = v {
            parts.push(format!("{k}={v}"));
        }
    }
    if let Some(d) = m.dim {
        parts.push(format!("dim={d}"));
    }
    if parts.is_empty() {
        m.id.clone()
    } else {
        format!("{}({})", m.id, parts.join(", "))
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Runs a config that has already been resolved and checked.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome> {
    if cfg.experiment == Kind::Anomalous {
        return anomalous(cfg);
    }
    let resolved = cfg.model.build().map_err(|e| anyhow!("{e}"))?;
    let v_index = match &resolved.model {
        Model::Kinetic(k) => Some(k.dim),
        _ => None,
    };
    let observable = expr::compile(
        &cfg.observable,
        Context {
            diffusion: resolved.diffusion.as_ref(),
            v_index,
        },
    )
    .map_err(|e| anyhow!("observable: {e}"))?;
    let setup = Setup {
        cfg,
        model: resolved.model,
        diffusion: resolved.diffusion,
        observable,
        threads,
    };
    let (verdicts, results, files) = match cfg.experiment {
        Kind::Decay => decay(&setup)?,
        Kind::Poisson => poisson(&setup)?,
        Kind::Criteria => criteria(&setup)?,
        Kind::Wpi => wpi(&setup)?,
        Kind::Lyapunov => lyapunov(&setup)?,
        Kind::Clt => clt(&setup)?,
        Kind::Fclt => fclt(&setup)?,
        Kind::Ui => ui(&setup)?,
        Kind::Outeq => outeq(&setup)?,
        Kind::Kinetic => kinetic(&setup)?,
        Kind::Anomalous => unreachable!(),
    };
    Ok(finish(cfg, cfg.observable.clone(), verdicts, results, files))
}

fn finish(
    cfg: &ExperimentConfig,
    observable: String,
    verdicts: Vec<Verdict>,
    results: Value,
    files: Vec<(String, String)>,
) -> Outcome {
    let passed = verdicts.iter().all(|v| v.pass);
    Outcome {
        report: Report {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.experiment.name().into(),
            model: model_label(cfg),
            observable,
            verdicts,
            passed,
            results,
        },
        files,
    }
}

type Parts = (Vec<Verdict>, Value, Vec<(String, String)>);

fn decay(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.decay.as_ref().expect("resolved");
    let curve = decay_curve(s.diffusion()?, &s.observable, &sec.times, &s.pde()?)?;
    let [t0, t1] = sec.window.unwrap_or([curve.times[0], curve.times[curve.times.len() - 1]]);
    let slope = curve.loglog_slope(t0, t1);
    let tol = 1e-9 * curve.norms.first().copied().unwrap_or(0.0);
    let mut v = vec![verdict(
        "nonincreasing",
        curve.is_nonincreasing(tol),
        format!("norm {:.4e} -> {:.4e}", curve.norms[0], curve.norms[curve.norms.len() - 1]),
    )];
    if let Some(e) = sec.expect_slope {
        v.push(verdict(
            "slope",
            (slope - e).abs() <= sec.slope_tolerance,
            format!("slope {slope:.4} on [{t0}, {t1}], expected {e} +- {}", sec.slope_tolerance),
        ));
    }
    let file = csv("t,norm", curve.times.iter().zip(&curve.norms).map(|(t, n)| vec![*t, *n]));
    Ok((v, json!({ "curve": curve, "slope": slope, "window": [t0, t1] }), vec![("decay.csv".into(), file)]))
}

fn poisson(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.poisson.as_ref().expect("resolved");
    let d = s.diffusion()?;
    let sol = solve_quadrature(d, &s.observable, &s.pde()?.grid)?;
    let dual = sol.energy_by_duality(d)?;
    let gap = (sol.energy - dual).abs() / sol.energy.abs().max(f64::MIN_POSITIVE);
    let mut v = vec![verdict(
        "energy_duality",
        gap <= sec.tolerance,
        format!("energy {:.6} vs {:.6} by duality (rel {gap:.2e})", sol.energy, dual),
    )];
    if let Some(e) = sec.expect_energy {
        let r = (sol.energy - e).abs() / e.abs();
        v.push(verdict("energy", r <= sec.tolerance, format!("energy {:.6}, expected {e} (rel {r:.2e})", sol.energy)));
    }
    let mut buf = Vec::new();
    sol.write_csv(d, &mut buf)?;
    let results = json!({
        "energy": sol.energy,
        "energy_by_duality": dual,
        "residual_sup": sol.residual_sup,
        "l2_norm_sq": sol.l2_norm_sq,
        "in_l2": sol.in_l2,
        "flux_leak": sol.flux_leak,
    });
    Ok((v, results, vec![("poisson.csv".into(), String::from_utf8(buf)?)]))
}

fn criteria(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.criteria.as_ref().expect("resolved");
    let r = criteria_report(s.diffusion()?, &s.observable, sec.t_max, &s.pde()?)?;
    let v = vec![verdict(
        "implication",
        r.implication_holds,
        format!(
            "poisson_l2 {}, kipnis_varadhan {}, maxwell_woodroofe {}",
            r.poisson_l2, r.kipnis_varadhan, r.maxwell_woodroofe
        ),
    )];
    Ok((v, serde_json::to_value(&r)?, Vec::new()))
}

fn wpi_spec(s: &Setup) -> Result<WpiSpec> {
    let w = s.cfg.wpi.as_ref().expect("resolved");
    Ok(match w.rate.as_str() {
        "constant" => WpiSpec::constant(w.c.unwrap_or(1.0)),
        "power" => WpiSpec::power(w.d.unwrap_or(1.0), w.q.unwrap_or(1.0)),
        "log_inverse" => WpiSpec::log_inverse(),
        "cauchy" => WpiSpec::cauchy(w.alpha.unwrap_or(3.0), w.beta.unwrap_or(0.0), w.d.unwrap_or(1.0))?,
        other => bail!("wpi.rate: unknown rate '{other}'"),
    })
}

fn wpi(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.wpi.as_ref().expect("resolved");
    let spec = wpi_spec(s)?;
    let env = xi_envelope(&spec, &sec.times).context("wpi.times")?;
    let mut v = vec![verdict(
        "xi_nonincreasing",
        env.is_nonincreasing(),
        format!("xi {:.4e} -> {:.4e}", env.values[0], env.values[env.values.len() - 1]),
    )];
    let hardy = if sec.hardy {
        let h = hardy_constants(s.diffusion()?, &spec, &s.pde()?.grid)?;
        v.push(verdict(
            "hardy_ordered",
            h.b_plus <= h.big_b_plus * (1.0 + 1e-12) && h.b_minus <= h.big_b_minus * (1.0 + 1e-12),
            format!("b+ {:.4e} <= B+ {:.4e}, b- {:.4e} <= B- {:.4e}", h.b_plus, h.big_b_plus, h.b_minus, h.big_b_minus),
        ));
        let (lo, hi) = h.constant_sandwich();
        Some(json!({ "constants": h, "sandwich": [lo, hi] }))
    } else {
        None
    };
    let mut buf = Vec::new();
    env.write_csv(&mut buf)?;
    Ok((v, json!({ "envelope": env, "hardy": hardy }), vec![("xi.csv".into(), String::from_utf8(buf)?)]))
}

fn lyapunov(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.lyapunov.as_ref().expect("resolved");
    let d = s.diffusion()?;
    let poly = expr::parse(&sec.v)
        .map_err(|e| anyhow!("lyapunov.v: {e}"))?
        .to_polynomial()
        .ok_or_else(|| anyhow!("lyapunov.v: must be a polynomial in x"))?;
    let p = &sec.phi;
    let need_a = || p.a.ok_or_else(|| anyhow!("lyapunov.phi.a: required for phi kind '{}'", p.kind));
    let phi = match p.kind.as_str() {
        "linear" => Phi::Linear { c: p.c },
        "power" => Phi::Power { c: p.c, a: need_a()? },
        "constant" => Phi::Constant { c: p.c },
        "log_damped" => Phi::LogDamped { c: p.c, a: need_a()? },
        other => bail!("lyapunov.phi.kind: unknown kind '{other}'"),
    };
    let report = lyapunov_check(d, &poly, &sec.v, &phi, &s.pde()?.grid, &sec.candidates)?;
    let env = rate_from_lyapunov(&phi, &sec.rate_times)?;
    let v = vec![
        verdict(
            "drift_condition",
            report.holds,
            format!("R = {:.4}, kappa = {:.4}, margin {:.3e}", report.r, report.kappa, report.margin),
        ),
        verdict("rate_nonincreasing", env.is_nonincreasing(), format!("psi at {} points", env.values.len())),
    ];
    let mut buf = Vec::new();
    env.write_csv(&mut buf)?;
    Ok((v, json!({ "drift": report, "rate": env }), vec![("rate.csv".into(), String::from_utf8(buf)?)]))
}

fn ensemble_csv(ens: &PathEnsemble, provenance: &str) -> Result<String> {
    let mut buf = Vec::new();
    ens.write_csv(&mut buf, provenance)?;
    Ok(String::from_utf8(buf)?)
}

fn clt(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.clt.as_ref().expect("resolved");
    let ens = s.ensemble(vec![sec.t])?;
    let samples = ens.s_at(sec.t)?;
    let var_pde = match &sec.normalization {
        Normalization::Method(m) if m == "pde" => Some(s.pde_variances(&[sec.t])?[0]),
        _ => None,
    };
    let norm = match &sec.normalization {
        Normalization::Value(v) => *v,
        Normalization::Method(m) if m == "pde" => var_pde.expect("computed above").sqrt(),
        Normalization::Method(m) if m == "sample" => stats::variance(&samples).value.sqrt(),
        Normalization::Method(m) => bail!("clt.normalization: unknown method '{m}'"),
    };
    let r = clt_test(&ens, sec.t, norm, var_pde)?;
    let v = vec![verdict(
        "ks",
        r.passes,
        format!("KS {:.4} vs 1% threshold {:.4} with s_t = {norm:.6}", r.ks_stat, r.ks_threshold_1pct),
    )];
    let results = json!({ "clt": r, "cap_events": ens.total_cap_events() });
    Ok((v, results, vec![("ensemble.csv".into(), ensemble_csv(&ens, "clt")?)]))
}

fn fclt(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.fclt.as_ref().expect("resolved");
    let ens = s.ensemble(sec.times.clone())?;
    let r = fclt_covariance_test(&ens, &sec.times)?;
    let v = vec![verdict(
        "covariance",
        r.within(sec.k_sigma),
        format!("max |corr - target| {:.4} = {:.2} se (limit {})", r.max_abs_deviation, r.max_z, sec.k_sigma),
    )];
    let n = r.times.len();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            rows.push(vec![r.times[i], r.times[j], r.correlation[i][j], r.stderr[i][j], r.target[i][j]]);
        }
    }
    let file = csv("t_i,t_j,correlation,stderr,target", rows);
    Ok((v, json!({ "fclt": r }), vec![("correlation.csv".into(), file)]))
}

fn ui(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.ui.as_ref().expect("resolved");
    let ens = s.ensemble(sec.times.clone())?;
    let samples = sec.times.iter().map(|t| ens.s_at(*t)).collect::<Result<Vec<_>, _>>()?;
    let vars = match sec.variance.as_str() {
        "pde" => s.pde_variances(&sec.times)?,
        _ => samples.iter().map(|x| stats::variance(x).value).collect(),
    };
    let table = ui_diagnostic(&sec.times, &samples, &vars, &sec.m)?;
    let v = vec![
        verdict("monotone_in_m", table.monotone_in_m, "tail values decrease with M".into()),
        verdict("ui_consistent", table.ui_consistent, format!("variances {vars:.4?}")),
    ];
    let mut rows = Vec::new();
    for (i, t) in table.times.iter().enumerate() {
        for (j, m) in table.m_grid.iter().enumerate() {
            rows.push(vec![*t, *m, table.values[i][j], table.stderr[i][j]]);
        }
    }
    let file = csv("t,m,value,stderr", rows);
    Ok((v, json!({ "table": table, "variances": vars }), vec![("ui.csv".into(), file)]))
}

fn outeq(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.outeq.as_ref().expect("resolved");
    let sim = s.sim();
    let d = s.diffusion()?;
    let pde = s.pde()?;
    let normalization = match &sec.normalization {
        Normalization::Value(v) => *v,
        _ => s.pde_variances(&[sec.clt_t])?[0].sqrt(),
    };
    let opts = OutOfEquilibriumOptions {
        clt_t: sec.clt_t,
        normalization,
        n_paths: sim.n_paths,
        dt: sim.dt,
        seed: sim.seed,
        grid_nodes: pde.grid.len(),
    };
    let nu0 = InitialLaw::Dirac { x0: vec![sec.x0] };
    let r = out_of_equilibrium_experiment(d, &s.observable, &nu0, &sec.tv_times, &opts)?;
    let v = vec![
        verdict(
            "tv_nonincreasing",
            r.tv_nonincreasing,
            format!("TV {:.4e} -> {:.4e}", r.tv[0], r.tv[r.tv.len() - 1]),
        ),
        verdict(
            "clt_match",
            r.matches,
            format!(
                "KS from x0 {:.4}, from mu {:.4}, difference {:.4} vs 2 se {:.4}",
                r.clt_from_nu0.ks_stat,
                r.clt_from_mu.ks_stat,
                r.ks_difference,
                2.0 * r.pooled_stderr
            ),
        ),
    ];
    let file = csv("t,tv", r.tv_times.iter().zip(&r.tv).map(|(t, v)| vec![*t, *v]));
    Ok((v, json!({ "report": r, "normalization": normalization }), vec![("tv.csv".into(), file)]))
}

fn kinetic(s: &Setup) -> Result<Parts> {
    let sec = s.cfg.kinetic.as_ref().expect("resolved");
    let Model::Kinetic(k) = &s.model else {
        bail!("model.id: the kinetic experiment needs model 'kinetic'");
    };
    let sim = s.sim();
    let opts = KineticLimitOptions {
        n_paths: sim.n_paths,
        dt: sim.dt,
        seed: sim.seed,
        step_budget: STEP_BUDGET,
    };
    let r = kinetic_diffusion_limit(k, &sec.eps, sec.t, &opts)?;
    let mut v = vec![verdict(
        "monotone",
        r.monotone,
        format!(
            "Var/t {:?}",
            r.points.iter().map(|p| p.var.value / sec.t).collect::<Vec<_>>()
        ),
    )];
    if let Some(e) = sec.expect_sigma2 {
        let rel = (r.sigma2 - e).abs() / e;
        v.push(verdict("sigma2", rel <= sec.tolerance, format!("sigma2 {:.4} vs {e} (rel {rel:.3})", r.sigma2)));
    }
    let file = csv(
        "eps,horizon,var,var_stderr,ks",
        r.points.iter().map(|p| vec![p.eps, p.horizon, p.var.value, p.var.stderr, p.ks_stat]),
    );
    Ok((v, json!({ "limit": r }), vec![("kinetic.csv".into(), file)]))
}

fn regime_name(r: &Regime) -> &'static str {
    match r {
        Regime::Linear => "linear",
        Regime::LogPower { .. } => "log_power",
        Regime::LogLog => "loglog",
        Regime::Inconclusive => "inconclusive",
    }
}

fn anomalous(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sec = cfg.anomalous.as_ref().expect("resolved");
    let sim = cfg.sim.as_ref().expect("resolved");
    let mode = match sec.mode.as_str() {
        "mc" => ScalingMode::Mc,
        _ => ScalingMode::Pde,
    };
    let opts = ScalingOptions {
        spacing: sec.spacing,
        kv_horizon: sec.kv_horizon,
        kv_spacing: sec.kv_spacing,
        mc_paths: sim.n_paths,
        mc_dt: sim.dt,
        seed: sim.seed,
    };
    let r = anomalous_scaling_experiment(sec.beta, &sec.times, mode, &opts)?;
    let mut v = vec![verdict(
        "plateau",
        r.selected != Regime::Inconclusive,
        format!("selected {} (kv diverged: {})", r.selected, r.kv_diverged),
    )];
    if let Some(e) = &sec.expect {
        v.push(verdict("regime", regime_name(&r.selected) == e, format!("selected {}, expected {e}", r.selected)));
    }
    let file = csv("t,var", r.times.iter().zip(&r.variances).map(|(t, v)| vec![*t, *v]));
    let out = finish(
        cfg,
        "L(x^2)".into(),
        v,
        json!({ "scaling": r }),
        vec![("variances.csv".into(), file)],
    );
    Ok(Outcome {
        report: Report {
            model: format!("cauchy(alpha=3, beta={})", sec.beta),
            ..out.report
        },
        files: out.files,
    })
}
