//! Experiment configuration: TOML schema, defaults, model resolution and
//! range checks. Every default is written back into the config before a
//! run so the manifest echo is complete.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ergolab_core::clt_lab::STEP_BUDGET;
use ergolab_core::models::{CauchyParams, Diffusion1D, KineticModel, KineticPotential, Model, OscillatorChain};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    /// Dotted path of the offending field; empty for file-level problems.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn cerr(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Decay,
    Poisson,
    Criteria,
    Wpi,
    Lyapunov,
    Clt,
    Fclt,
    Ui,
    Anomalous,
    Outeq,
    Kinetic,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Decay => "decay",
            Kind::Poisson => "poisson",
            Kind::Criteria => "criteria",
            Kind::Wpi => "wpi",
            Kind::Lyapunov => "lyapunov",
            Kind::Clt => "clt",
            Kind::Fclt => "fclt",
            Kind::Ui => "ui",
            Kind::Anomalous => "anomalous",
            Kind::Outeq => "outeq",
            Kind::Kinetic => "kinetic",
        }
    }

    fn uses_sim(self) -> bool {
        matches!(self, Kind::Clt | Kind::Fclt | Kind::Ui | Kind::Outeq | Kind::Kinetic | Kind::Anomalous)
    }

    fn uses_grid(self) -> bool {
        !matches!(self, Kind::Anomalous | Kind::Kinetic)
    }
}

pub const MODEL_IDS: [&str; 5] = ["ou", "cauchy", "subexp", "kinetic", "oscillator"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Half-width of the working domain of a diffusion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            id: "ou".into(),
            alpha: None,
            beta: None,
            half_width: None,
            dim: None,
            friction: None,
            stiffness: None,
            gamma0: None,
            gamma2: None,
            temp0: None,
            temp2: None,
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Deterministic start; the invariant law when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            n_paths: 10_000,
            seed: 1,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    Fixed,
    LongHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default = "default_stepping")]
    pub stepping: Stepping,
}

fn default_stepping() -> Stepping {
    Stepping::Fixed
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: None,
            nodes: None,
            spacing: None,
            stepping: Stepping::Fixed,
        }
    }
}

/// `s_t` for a KS test: a number, `"pde"` (variance from the semigroup) or
/// `"sample"` (self-normalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Normalization {
    Value(f64),
    Method(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySection {
    pub times: Vec<f64>,
    /// Window `[t0, t1]` of the reported log-log slope.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_slope: Option<f64>,
    pub slope_tolerance: f64,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self {
            times: (0..=20).map(|k| 10f64.powf(k as f64 / 10.0)).collect(),
            window: None,
            expect_slope: None,
            slope_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoissonSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_energy: Option<f64>,
    pub tolerance: f64,
}

impl Default for PoissonSection {
    fn default() -> Self {
        Self {
            expect_energy: None,
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriteriaSection {
    pub t_max: f64,
}

impl Default for CriteriaSection {
    fn default() -> Self {
        Self { t_max: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WpiSection {
    /// `constant`, `power`, `log_inverse` or `cauchy`.
    pub rate: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub times: Vec<f64>,
    /// Also compute the Hardy constants of the configured model.
    pub hardy: bool,
}

impl Default for WpiSection {
    fn default() -> Self {
        Self {
            rate: "log_inverse".into(),
            c: None,
            d: None,
            q: None,
            alpha: None,
            beta: None,
            times: (0..=30).map(|k| 10f64.powf(k as f64 / 10.0)).collect(),
            hardy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiSection {
    /// `linear`, `power`, `constant` or `log_damped`.
    pub kind: String,
    pub c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

impl Default for PhiSection {
    fn default() -> Self {
        Self {
            kind: "linear".into(),
            c: 1.0,
            a: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    /// Polynomial in `x`.
    pub v: String,
    pub phi: PhiSection,
    pub candidates: Vec<f64>,
    pub rate_times: Vec<f64>,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            v: "1 + x^2".into(),
            phi: PhiSection::default(),
            candidates: (1..=40).map(|k| 0.25 * k as f64).collect(),
            rate_times: (0..=24).map(|k| 10f64.powf(k as f64 / 6.0 - 1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltSection {
    pub t: f64,
    pub normalization: Normalization,
}

impl Default for CltSection {
    fn default() -> Self {
        Self {
            t: 50.0,
            normalization: Normalization::Method("pde".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcltSection {
    pub times: Vec<f64>,
    pub k_sigma: f64,
}

impl Default for FcltSection {
    fn default() -> Self {
        Self {
            times: vec![25.0, 50.0],
            k_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UiSection {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    /// `pde` or `sample`.
    pub variance: String,
}

impl Default for UiSection {
    fn default() -> Self {
        Self {
            times: vec![10.0, 50.0, 200.0],
            m: vec![1.0, 2.0, 4.0, 8.0],
            variance: "pde".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalousSection {
    pub beta: f64,
    pub times: Vec<f64>,
    /// `pde` or `mc`.
    pub mode: String,
    pub spacing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kv_horizon: Option<f64>,
    pub kv_spacing: f64,
    /// Expected regime: `linear`, `log_power` or `loglog`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
}

impl Default for AnomalousSection {
    fn default() -> Self {
        Self {
            beta: 0.0,
            times: vec![1e2, 1e3, 1e4],
            mode: "pde".into(),
            spacing: 0.05,
            kv_horizon: None,
            kv_spacing: 0.2,
            expect: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuteqSection {
    pub x0: f64,
    pub tv_times: Vec<f64>,
    pub clt_t: f64,
    pub normalization: Normalization,
}

impl Default for OuteqSection {
    fn default() -> Self {
        Self {
            x0: 2.0,
            tv_times: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            clt_t: 5000.0,
            normalization: Normalization::Method("pde".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticSection {
    pub eps: Vec<f64>,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_sigma2: Option<f64>,
    pub tolerance: f64,
}

impl Default for KineticSection {
    fn default() -> Self {
        Self {
            eps: vec![0.5, 0.25, 0.125],
            t: 1.0,
            expect_sigma2: None,
            tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Kind,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_observable")]
    pub observable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<CriteriaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wpi: Option<WpiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fclt: Option<FcltSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui: Option<UiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomalous: Option<AnomalousSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outeq: Option<OuteqSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinetic: Option<KineticSection>,
}

fn default_output() -> String {
    "ergolab-out".into()
}

fn default_observable() -> String {
    "x".into()
}

/// Reads a TOML config, or the `config` echoed in a `manifest.json`.
pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| cerr("", format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| cerr("", format!("bad JSON: {e}")))?;
        let cfg = v.get("config").ok_or_else(|| cerr("config", "manifest has no config echo"))?;
        return serde_path_to_error::deserialize(cfg).map_err(|e| {
            let path = e.path().to_string();
            cerr(format!("config.{path}"), e.into_inner().to_string())
        });
    }
    parse_toml(&text)
}

pub fn parse_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        cerr(path, e.into_inner().message().trim().to_string())
    })
}

fn check_positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cerr(path, format!("must be positive and finite, got {v}")))
    }
}

fn check_times(path: &str, ts: &[f64]) -> Result<(), ConfigError> {
    if ts.is_empty() {
        return Err(cerr(path, "must not be empty"));
    }
    if ts.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(cerr(path, "times must be positive and finite"));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(cerr(path, "times must be strictly increasing"));
    }
    Ok(())
}

/// The resolved model plus its one-dimensional diffusion, when it is one.
pub struct ResolvedModel {
    pub model: Model,
    pub diffusion: Option<Diffusion1D>,
}

impl ModelConfig {
    fn allowed(&self) -> Result<&'static [&'static str], ConfigError> {
        Ok(match self.id.as_str() {
            "ou" => &["half_width"],
            "cauchy" => &["alpha", "beta", "half_width"],
            "subexp" => &["alpha", "half_width"],
            "kinetic" => &["dim", "friction", "stiffness"],
            "oscillator" => &["gamma0", "gamma2", "temp0", "temp2", "k"],
            other => {
                return Err(cerr(
                    "model.id",
                    format!("unknown model id '{other}'; known ids: {}", MODEL_IDS.join(", ")),
                ))
            }
        })
    }

    fn set_fields(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        for (name, set) in [
            ("alpha", self.alpha.is_some()),
            ("beta", self.beta.is_some()),
            ("half_width", self.half_width.is_some()),
            ("dim", self.dim.is_some()),
            ("friction", self.friction.is_some()),
            ("stiffness", self.stiffness.is_some()),
            ("gamma0", self.gamma0.is_some()),
            ("gamma2", self.gamma2.is_some()),
            ("temp0", self.temp0.is_some()),
            ("temp2", self.temp2.is_some()),
            ("k", self.k.is_some()),
        ] {
            if set {
                v.push(name);
            }
        }
        v
    }

    /// Fills the defaults of the selected model.
    fn fill_defaults(&mut self) -> Result<(), ConfigError> {
        let allowed = self.allowed()?;
        if let Some(bad) = self.set_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(cerr(format!("model.{bad}"), format!("not a parameter of model '{}'", self.id)));
        }
        match self.id.as_str() {
            "ou" => {}
            "cauchy" => {
                self.alpha.get_or_insert(3.0);
                self.beta.get_or_insert(0.0);
            }
            "subexp" => {
                self.alpha.get_or_insert(0.5);
            }
            "kinetic" => {
                self.dim.get_or_insert(1);
                self.friction.get_or_insert(1.0);
            }
            _ => {
                self.gamma0.get_or_insert(1.0);
                self.gamma2.get_or_insert(1.0);
                self.temp0.get_or_insert(1.0);
                self.temp2.get_or_insert(1.0);
                self.k.get_or_insert(2.0);
            }
        }
        if matches!(self.id.as_str(), "ou" | "cauchy" | "subexp") && self.half_width.is_none() {
            let d = self.build()?.diffusion.expect("diffusion model");
            let (a, b) = d.domain_hint();
            self.half_width = Some(a.abs().max(b.abs()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ResolvedModel, ConfigError> {
        let core = |path: &str, e: ergolab_core::Error| cerr(path, e.to_string());
        let diffusion = match self.id.as_str() {
            "ou" => Some(Diffusion1D::ou()),
            "cauchy" => {
                let p = CauchyParams::new(self.alpha.unwrap_or(3.0), self.beta.unwrap_or(0.0))
                    .map_err(|e| core("model.alpha", e))?;
                Some(Diffusion1D::cauchy(p))
            }
            "subexp" => Some(Diffusion1D::subexponential(self.alpha.unwrap_or(0.5)).map_err(|e| core("model.alpha", e))?),
            "kinetic" => {
                let potential = match self.stiffness {
                    Some(stiffness) => KineticPotential::Harmonic { stiffness },
                    None => KineticPotential::Free,
                };
                let k = KineticModel::new(self.dim.unwrap_or(1), self.friction.unwrap_or(1.0), potential)
                    .map_err(|e| core("model", e))?;
                return Ok(ResolvedModel {
                    model: Model::Kinetic(k),
                    diffusion: None,
                });
            }
            "oscillator" => {
                let o = OscillatorChain::new(
                    self.gamma0.unwrap_or(1.0),
                    self.gamma2.unwrap_or(1.0),
                    self.temp0.unwrap_or(1.0),
                    self.temp2.unwrap_or(1.0),
                    self.k.unwrap_or(2.0),
                )
                .map_err(|e| core("model", e))?;
                return Ok(ResolvedModel {
                    model: Model::Oscillator(o),
                    diffusion: None,
                });
            }
            _ => {
                self.allowed()?;
                unreachable!("allowed() rejects unknown ids")
            }
        };
        let mut d = diffusion.expect("diffusion model");
        if let Some(w) = self.half_width {
            check_positive("model.half_width", w)?;
            d = d.with_domain(-w, w);
        }
        Ok(ResolvedModel {
            model: Model::Diffusion(d.clone()),
            diffusion: Some(d),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub errors: Vec<ConfigError>,
    pub warnings: Vec<String>,
    /// Scalar Euler steps the run would take.
    pub estimated_steps: f64,
    pub step_budget: f64,
}

impl Serialize for ConfigError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl ExperimentConfig {
    /// Inserts the section of the selected experiment and every default,
    /// and rejects sections that belong to other experiments.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let kind = self.experiment;
        let present = [
            (Kind::Decay, self.decay.is_some()),
            (Kind::Poisson, self.poisson.is_some()),
            (Kind::Criteria, self.criteria.is_some()),
            (Kind::Wpi, self.wpi.is_some()),
            (Kind::Lyapunov, self.lyapunov.is_some()),
            (Kind::Clt, self.clt.is_some()),
            (Kind::Fclt, self.fclt.is_some()),
            (Kind::Ui, self.ui.is_some()),
            (Kind::Anomalous, self.anomalous.is_some()),
            (Kind::Outeq, self.outeq.is_some()),
            (Kind::Kinetic, self.kinetic.is_some()),
        ];
        if let Some((k, _)) = present.iter().find(|(k, p)| *p && *k != kind) {
            return Err(cerr(k.name(), format!("section does not apply to experiment '{}'", kind.name())));
        }
        if !kind.uses_sim() && self.sim.is_some() {
            return Err(cerr("sim", format!("experiment '{}' does not simulate paths", kind.name())));
        }
        if !kind.uses_grid() && self.grid.is_some() {
            return Err(cerr("grid", format!("experiment '{}' sets up its own grid", kind.name())));
        }
        if kind == Kind::Anomalous {
            if self.model != ModelConfig::default() {
                return Err(cerr("model", "the anomalous experiment fixes its model (Cauchy, alpha = 3)"));
            }
            if self.observable != default_observable() {
                return Err(cerr("observable", "the anomalous experiment fixes its observable L(x^2)"));
            }
        } else {
            self.model.fill_defaults()?;
        }
        match kind {
            Kind::Decay => drop(self.decay.get_or_insert_with(Default::default)),
            Kind::Poisson => drop(self.poisson.get_or_insert_with(Default::default)),
            Kind::Criteria => drop(self.criteria.get_or_insert_with(Default::default)),
            Kind::Wpi => drop(self.wpi.get_or_insert_with(Default::default)),
            Kind::Lyapunov => drop(self.lyapunov.get_or_insert_with(Default::default)),
            Kind::Clt => drop(self.clt.get_or_insert_with(Default::default)),
            Kind::Fclt => drop(self.fclt.get_or_insert_with(Default::default)),
            Kind::Ui => drop(self.ui.get_or_insert_with(Default::default)),
            Kind::Anomalous => drop(self.anomalous.get_or_insert_with(Default::default)),
            Kind::Outeq => drop(self.outeq.get_or_insert_with(Default::default)),
            Kind::Kinetic => drop(self.kinetic.get_or_insert_with(Default::default)),
        }
        if kind.uses_sim() {
            self.sim.get_or_insert_with(Default::default);
        }
        if kind.uses_grid() {
            let hw = self.model.half_width;
            let g = self.grid.get_or_insert_with(Default::default);
            if g.nodes.is_some() && g.spacing.is_some() {
                return Err(cerr("grid.spacing", "give either grid.nodes or grid.spacing, not both"));
            }
            if g.half_width.is_none() {
                g.half_width = hw;
            }
            if g.nodes.is_none() && g.spacing.is_none() {
                g.nodes = Some(4001);
            }
        }
        if kind == Kind::Wpi {
            let w = self.wpi.as_mut().expect("inserted above");
            match w.rate.as_str() {
                "constant" => drop(w.c.get_or_insert(1.0)),
                "power" => {
                    w.d.get_or_insert(1.0);
                    w.q.get_or_insert(1.0);
                }
                "log_inverse" => {}
                "cauchy" => {
                    w.alpha.get_or_insert(3.0);
                    w.beta.get_or_insert(0.0);
                    w.d.get_or_insert(1.0);
                }
                other => {
                    return Err(cerr(
                        "wpi.rate",
                        format!("unknown rate '{other}'; expected constant, power, log_inverse or cauchy"),
                    ))
                }
            }
        }
        Ok(())
    }

    /// The time grid on which paths are observed, in increasing order.
    pub fn checkpoints(&self) -> Vec<f64> {
        let mut ts = match self.experiment {
            Kind::Clt => self.clt.as_ref().map(|c| vec![c.t]).unwrap_or_default(),
            Kind::Fclt => self.fclt.as_ref().map(|c| c.times.clone()).unwrap_or_default(),
            Kind::Ui => self.ui.as_ref().map(|c| c.times.clone()).unwrap_or_default(),
            Kind::Outeq => self.outeq.as_ref().map(|c| vec![c.clt_t]).unwrap_or_default(),
            Kind::Anomalous => self.anomalous.as_ref().map(|c| c.times.clone()).unwrap_or_default(),
            _ => Vec::new(),
        };
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup();
        ts
    }

    fn state_dim(&self) -> f64 {
        match self.model.id.as_str() {
            "kinetic" => 2.0 * self.model.dim.unwrap_or(1) as f64,
            "oscillator" => 6.0,
            _ => 1.0,
        }
    }

    pub fn estimated_steps(&self) -> f64 {
        let Some(sim) = &self.sim else { return 0.0 };
        let n = sim.n_paths as f64;
        match self.experiment {
            Kind::Kinetic => {
                let k = self.kinetic.as_ref().expect("resolved");
                let dim = self.model.dim.unwrap_or(1) as f64;
                k.eps.iter().map(|e| (k.t / (e * e) / sim.dt).ceil() * n * dim).sum()
            }
            Kind::Outeq => {
                let o = self.outeq.as_ref().expect("resolved");
                2.0 * n * (o.clt_t / sim.dt).ceil() * self.state_dim()
            }
            Kind::Anomalous => {
                let a = self.anomalous.as_ref().expect("resolved");
                if a.mode == "mc" {
                    let t = a.times.last().copied().unwrap_or(0.0);
                    n * (t / sim.dt).ceil()
                } else {
                    0.0
                }
            }
            _ => {
                let t = self.checkpoints().last().copied().unwrap_or(0.0);
                n * (t / sim.dt).ceil() * self.state_dim()
            }
        }
    }

    /// Range checks without running anything.
    pub fn diagnostics(&self) -> Diagnostics {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        let mut push = |r: Result<(), ConfigError>| {
            if let Err(e) = r {
                errors.push(e);
            }
        };
        if let Some(sim) = &self.sim {
            push(check_positive("sim.dt", sim.dt));
            if sim.n_paths < 2 {
                push(Err(cerr("sim.n_paths", "need at least two paths")));
            }
            let cps = self.checkpoints();
            let mut prev = 0.0;
            for t in &cps {
                if sim.dt > t - prev {
                    push(Err(cerr(
                        "sim.dt",
                        format!("dt = {} exceeds the checkpoint gap {} before t = {t}", sim.dt, t - prev),
                    )));
                    break;
                }
                prev = *t;
            }
            if self.model.id == "oscillator" && sim.x0.is_none() && self.experiment != Kind::Kinetic {
                push(Err(cerr("sim.x0", "the oscillator chain has no invariant sampler; give a start")));
            }
            if let Some(x0) = &sim.x0 {
                if x0.len() as f64 != self.state_dim() {
                    push(Err(cerr("sim.x0", format!("expected {} coordinates, got {}", self.state_dim(), x0.len()))));
                }
            }
        }
        if let Some(g) = &self.grid {
            if let Some(w) = g.half_width {
                push(check_positive("grid.half_width", w));
            }
            if let Some(n) = g.nodes {
                if n < 3 || n % 2 == 0 {
                    push(Err(cerr("grid.nodes", format!("need an odd node count of at least 3, got {n}"))));
                }
            }
            if let Some(h) = g.spacing {
                push(check_positive("grid.spacing", h));
            }
        }
        match self.experiment {
            Kind::Decay => {
                let d = self.decay.as_ref().expect("resolved");
                push(check_times("decay.times", &d.times));
                if let Some([a, b]) = d.window {
                    if !(b > a) {
                        push(Err(cerr("decay.window", "window must be increasing")));
                    }
                }
            }
            Kind::Criteria => push(check_positive("criteria.t_max", self.criteria.as_ref().expect("resolved").t_max)),
            Kind::Wpi => push(check_times("wpi.times", &self.wpi.as_ref().expect("resolved").times)),
            Kind::Lyapunov => {
                let l = self.lyapunov.as_ref().expect("resolved");
                push(check_times("lyapunov.candidates", &l.candidates));
                push(check_times("lyapunov.rate_times", &l.rate_times));
                if !["linear", "power", "constant", "log_damped"].contains(&l.phi.kind.as_str()) {
                    push(Err(cerr(
                        "lyapunov.phi.kind",
                        format!("unknown phi '{}'; expected linear, power, constant or log_damped", l.phi.kind),
                    )));
                }
            }
            Kind::Clt => {
                let c = self.clt.as_ref().expect("resolved");
                push(check_positive("clt.t", c.t));
                push(check_normalization("clt.normalization", &c.normalization));
            }
            Kind::Fclt => {
                let f = self.fclt.as_ref().expect("resolved");
                push(check_times("fclt.times", &f.times));
                if f.times.len() < 2 {
                    push(Err(cerr("fclt.times", "need at least two times")));
                }
            }
            Kind::Ui => {
                let u = self.ui.as_ref().expect("resolved");
                push(check_times("ui.times", &u.times));
                if !["pde", "sample"].contains(&u.variance.as_str()) {
                    push(Err(cerr("ui.variance", "expected pde or sample")));
                }
            }
            Kind::Anomalous => {
                let a = self.anomalous.as_ref().expect("resolved");
                push(check_times("anomalous.times", &a.times));
                push(check_positive("anomalous.spacing", a.spacing));
                if !["pde", "mc"].contains(&a.mode.as_str()) {
                    push(Err(cerr("anomalous.mode", "expected pde or mc")));
                }
                if let Some(e) = &a.expect {
                    if !["linear", "log_power", "loglog"].contains(&e.as_str()) {
                        push(Err(cerr("anomalous.expect", "expected linear, log_power or loglog")));
                    }
                }
            }
            Kind::Outeq => {
                let o = self.outeq.as_ref().expect("resolved");
                push(check_times("outeq.tv_times", &o.tv_times));
                push(check_positive("outeq.clt_t", o.clt_t));
                push(check_normalization("outeq.normalization", &o.normalization));
                if o.normalization == Normalization::Method("sample".into()) {
                    push(Err(cerr("outeq.normalization", "must be a number or pde")));
                }
            }
            Kind::Kinetic => {
                let k = self.kinetic.as_ref().expect("resolved");
                if k.eps.is_empty() || k.eps.iter().any(|e| !(*e > 0.0)) || k.eps.windows(2).any(|w| !(w[1] < w[0])) {
                    push(Err(cerr("kinetic.eps", "must be positive and strictly decreasing")));
                }
                push(check_positive("kinetic.t", k.t));
                if self.model.id != "kinetic" {
                    push(Err(cerr("model.id", "the kinetic experiment needs model 'kinetic'")));
                }
            }
            Kind::Poisson => {}
        }
        let estimated_steps = self.estimated_steps();
        if estimated_steps > STEP_BUDGET {
            warnings.push(format!(
                "estimated {estimated_steps:.3e} scalar steps exceed the budget of {STEP_BUDGET:.1e}"
            ));
        }
        Diagnostics {
            errors,
            warnings,
            estimated_steps,
            step_budget: STEP_BUDGET,
        }
    }
}

fn check_normalization(path: &str, n: &Normalization) -> Result<(), ConfigError> {
    match n {
        Normalization::Value(v) => check_positive(path, *v),
        Normalization::Method(m) if m == "pde" || m == "sample" => Ok(()),
        Normalization::Method(m) => Err(cerr(path, format!("expected a number, pde or sample, got '{m}'"))),
    }
}
