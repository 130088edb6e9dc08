//! Rate calculus: Hardy-type constants for weak Poincaré inequalities, the
//! `ξ(t)` envelope, Lyapunov drift conditions and the rates they imply,
//! interpolation bounds for `α_{p,r}`, mixing sandwiches and a numerical
//! slow-variation test.
//!
//! Universal constants are never estimated. Envelopes are meaningful up to a
//! multiplicative constant and are compared by their log-log slopes.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::models::{apply_generator, Diffusion1D, ScalarFn, TestFunction};
use crate::semigroup::BetaCurve;

/// Lower end of the `ξ` bisection; below this `β(s) log(1/s)` is not
/// resolved in double precision.
pub const XI_FLOOR: f64 = 1e-16;

/// Log-log growth of the Hardy integrand at the edge above which its
/// supremum is reported as infinite.
pub const HARDY_GROWTH_SLOPE: f64 = 0.01;

/// Slack allowed in the sign of the Lyapunov margin.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-8;

/// Largest ratio deviation on the upper decade accepted as slow variation.
pub const SLOW_VARIATION_THRESHOLD: f64 = 0.15;

/// Rate function `s ↦ β_WPI(s)` of a weak Poincaré inequality
/// `Var(f) ≤ β(s) E(f) + s Osc²(f)`.
#[derive(Clone)]
pub struct WpiSpec {
    pub label: String,
    pub beta_rate: ScalarFn,
    /// Oscillation normalization of the test functions.
    pub osc_bound: f64,
}

impl fmt::Debug for WpiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WpiSpec").field("label", &self.label).finish()
    }
}

impl WpiSpec {
    pub fn custom(label: impl Into<String>, beta: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            beta_rate: Arc::new(beta),
            osc_bound: 1.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::custom(format!("{c}"), move |_| c)
    }

    /// `d s^{-q}`.
    pub fn power(d: f64, q: f64) -> Self {
        Self::custom(format!("{d} s^-{q}"), move |s| d * s.powf(-q))
    }

    /// `log(1/s)`.
    pub fn log_inverse() -> Self {
        Self::custom("log(1/s)", |s: f64| (1.0 / s).ln())
    }

    /// Rate of the generalised Cauchy family,
    /// `d s^{-2/(α-1)} log^{-2β/(α-1)}(1/s)`.
    pub fn cauchy(alpha: f64, beta: f64, d: f64) -> Result<Self> {
        if !(alpha > 1.0) {
            return Err(Error::InvalidInput(format!("cauchy WPI needs alpha > 1, got {alpha}")));
        }
        let q = 2.0 / (alpha - 1.0);
        let l = 2.0 * beta / (alpha - 1.0);
        Ok(Self::custom(
            format!("{d} s^-{q} log^-{l}(1/s)"),
            move |s: f64| d * s.powf(-q) * (1.0 / s).ln().powf(-l),
        ))
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.beta_rate)(s)
    }

    /// Checks monotonicity on `n` log-spaced points of `[XI_FLOOR, 1/2]`.
    pub fn is_nonincreasing(&self, n: usize) -> bool {
        let n = n.max(2);
        let (a, b) = (XI_FLOOR.ln(), 0.5f64.ln());
        let vals: Vec<f64> = (0..n)
            .map(|k| self.eval((a + (b - a) * k as f64 / (n - 1) as f64).exp()))
            .collect();
        vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
    }
}

/// Hardy-type constants of a WPI on the line. `e^V` is taken as
/// `exp(-log_density_unnorm)`; multiplying by `z` gives the constants for
/// the normalized density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyConstants {
    pub median: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    #[serde(rename = "B_plus")]
    pub big_b_plus: f64,
    #[serde(rename = "B_minus")]
    pub big_b_minus: f64,
    /// The right-hand suprema are still growing at the edge; the values are
    /// lower bounds for an infinite constant.
    pub infinite_plus: bool,
    pub infinite_minus: bool,
    /// Total unnormalized mass `∫ exp(log_density_unnorm)`.
    pub z: f64,
}

impl HardyConstants {
    pub fn is_finite(&self) -> bool {
        !self.infinite_plus && !self.infinite_minus
    }

    /// Bounds `[max(b)/4, 12 max(B)]` on the optimal WPI constant.
    pub fn constant_sandwich(&self) -> (f64, f64) {
        (
            0.25 * self.b_plus.max(self.b_minus),
            12.0 * self.big_b_plus.max(self.big_b_minus),
        )
    }
}

/// Supremum of `g` along one side of the median, ordered outward, together
/// with the unbounded-growth flag.
fn side_supremum(dist: &[f64], g: &[f64]) -> (f64, bool) {
    let n = g.len();
    if n == 0 {
        return (0.0, false);
    }
    let (arg, sup) = g
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(k, m), (i, v)| if *v > m { (i, *v) } else { (k, m) });
    let k0 = (0.8 * n as f64) as usize;
    let growing = arg + 1 >= (0.95 * n as f64) as usize
        && n > 10
        && g[k0] > 0.0
        && dist[k0] > 0.0
        && {
            let slope = (g[n - 1] / g[k0]).ln() / (dist[n - 1] / dist[k0]).ln();
            slope > HARDY_GROWTH_SLOPE
        };
    (sup.max(0.0), growing)
}

pub fn hardy_constants(model: &Diffusion1D, spec: &WpiSpec, grid: &Grid1D) -> Result<HardyConstants> {
    let n = grid.len();
    let h = grid.spacing();
    let xs: Vec<f64> = grid.nodes().collect();
    let lp: Vec<f64> = xs.iter().map(|x| model.log_density_unnorm(*x)).collect();
    let shift = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NonNormalizable(format!("log-density of {} is not finite", model.label())));
    }
    let p: Vec<f64> = lp.iter().map(|l| (l - shift).exp()).collect();
    let not_norm = || Error::NonNormalizable(format!("tails of {} are not integrable", model.label()));
    let left_tail = model.edge_tail_mass(grid.x_min(), shift).ok_or_else(not_norm)?;
    let right_tail = model.edge_tail_mass(grid.x_max(), shift).ok_or_else(not_norm)?;
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * h * (p[i - 1] + p[i]);
    }
    let total = left_tail + cum[n - 1] + right_tail;
    let z = total * shift.exp();
    let left_mass: Vec<f64> = cum.iter().map(|c| (left_tail + c) / total).collect();
    let right_mass: Vec<f64> = cum.iter().map(|c| (right_tail + cum[n - 1] - c) / total).collect();

    let k = left_mass.partition_point(|f| *f < 0.5).clamp(1, n - 1);
    let th = (0.5 - left_mass[k - 1]) / (left_mass[k] - left_mass[k - 1]);
    let median = xs[k - 1] + th.clamp(0.0, 1.0) * h;

    // e^V up to the factor exp(-shift)
    let ev: Vec<f64> = lp.iter().map(|l| (shift - l).min(700.0).exp()).collect();
    let ev_m = ev[k - 1] + th.clamp(0.0, 1.0) * (ev[k] - ev[k - 1]);
    let scale = (-shift).exp();
    let beta = |s: f64| spec.eval(s);

    let (mut d_r, mut gb_r, mut gbb_r) = (Vec::new(), Vec::new(), Vec::new());
    let mut acc = 0.0;
    let mut prev = (median, ev_m);
    for i in k..n {
        acc += 0.5 * (xs[i] - prev.0) * (prev.1 + ev[i]);
        prev = (xs[i], ev[i]);
        let u = right_mass[i];
        if u <= 0.0 {
            break;
        }
        d_r.push(xs[i] - median);
        gb_r.push(u / beta(0.25 * u) * acc * scale);
        gbb_r.push(u / beta(u) * acc * scale);
    }
    let (mut d_l, mut gb_l, mut gbb_l) = (Vec::new(), Vec::new(), Vec::new());
    let mut acc = 0.0;
    let mut prev = (median, ev_m);
    for i in (0..k).rev() {
        acc += 0.5 * (prev.0 - xs[i]) * (prev.1 + ev[i]);
        prev = (xs[i], ev[i]);
        let u = left_mass[i];
        if u <= 0.0 {
            break;
        }
        d_l.push(median - xs[i]);
        gb_l.push(u / beta(0.25 * u) * acc * scale);
        gbb_l.push(u / beta(u) * acc * scale);
    }
    let (b_plus, fb_p) = side_supremum(&d_r, &gb_r);
    let (big_b_plus, fbb_p) = side_supremum(&d_r, &gbb_r);
    let (b_minus, fb_m) = side_supremum(&d_l, &gb_l);
    let (big_b_minus, fbb_m) = side_supremum(&d_l, &gbb_l);
    Ok(HardyConstants {
        median,
        b_plus,
        b_minus,
        big_b_plus,
        big_b_minus,
        infinite_plus: fb_p || fbb_p,
        infinite_minus: fb_m || fbb_m,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSolution {
    pub xi: f64,
    /// `β(s) log(1/s) ≤ t` already holds at the floor; `xi` is the floor.
    pub at_floor: bool,
}

/// `ξ(t) = inf{s : β(s) log(1/s) ≤ t}`, by bisection in `log s` on
/// `[XI_FLOOR, 1/2]`.
pub fn xi_from_wpi(spec: &WpiSpec, t: f64) -> Result<XiSolution> {
    let g = |ls: f64| spec.eval(ls.exp()) * (-ls);
    let (mut lo, mut hi) = (XI_FLOOR.ln(), 0.5f64.ln());
    if !(g(hi) <= t) {
        return Err(Error::NoRoot { t });
    }
    if g(lo) <= t {
        return Ok(XiSolution {
            xi: XI_FLOOR,
            at_floor: true,
        });
    }
    while hi - lo > 1e-15 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= t {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(XiSolution {
        xi: hi.exp(),
        at_floor: false,
    })
}

/// Decay bound `2 ξ(t)^{1/2}` for `α(t)` and `α*(t)`.
pub fn xi_bound(spec: &WpiSpec, t: f64) -> Result<f64> {
    Ok(2.0 * xi_from_wpi(spec, t)?.xi.sqrt())
}

/// Nonincreasing positive envelope sampled on `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEnvelope {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl RateEnvelope {
    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    /// Least-squares log-log slope over the samples with `t0 ≤ t ≤ t1`.
    pub fn loglog_slope(&self, t0: f64, t1: f64) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, v)| **t >= t0 && **t <= t1 && **t > 0.0 && **v > 0.0)
            .map(|(t, v)| (t.ln(), v.ln()))
            .unzip();
        (xs.len() >= 2).then(|| crate::stats::linear_fit(&xs, &ys).1)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,value,provenance")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:e},{v:e},{}", self.provenance)?;
        }
        Ok(())
    }
}

pub fn xi_envelope(spec: &WpiSpec, times: &[f64]) -> Result<RateEnvelope> {
    let values = times
        .iter()
        .map(|t| xi_from_wpi(spec, *t).map(|x| x.xi))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateEnvelope {
        times: times.to_vec(),
        values,
        provenance: format!("wpi:{}", spec.label),
    })
}

/// Rate function `φ` of a Lyapunov drift condition.
#[derive(Clone)]
pub enum Phi {
    /// `c u`.
    Linear { c: f64 },
    /// `c u^a`, `0 ≤ a ≤ 1`.
    Power { c: f64, a: f64 },
    Constant { c: f64 },
    /// `c u log^{-a}(e u)`.
    LogDamped { c: f64, a: f64 },
    Custom { label: String, f: ScalarFn },
}

impl fmt::Debug for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Phi {
    /// `c u^{1-1/k}`.
    pub fn polynomial(c: f64, k: f64) -> Self {
        Self::Power { c, a: 1.0 - 1.0 / k }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Linear { c } => c * u,
            Self::Power { c, a } => c * u.powf(*a),
            Self::Constant { c } => *c,
            Self::LogDamped { c, a } => c * u / (1.0 + u.ln()).powf(*a),
            Self::Custom { f, .. } => f(u),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Linear { c } => format!("{c} u"),
            Self::Power { c, a } => format!("{c} u^{a}"),
            Self::Constant { c } => format!("{c}"),
            Self::LogDamped { c, a } => format!("{c} u log^-{a}(e u)"),
            Self::Custom { label, .. } => label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMargin {
    #[serde(rename = "R")]
    pub r: f64,
    pub margin: f64,
}

/// Outcome of a drift-condition check `LV ≤ -φ(V) + κ 1_{[-R, R]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub v_label: String,
    pub phi_label: String,
    pub holds: bool,
    /// Smallest radius, interpolated between grid nodes, beyond which the
    /// drift condition holds.
    #[serde(rename = "R")]
    pub r: f64,
    /// First listed candidate radius that works.
    pub candidate_r: f64,
    pub kappa: f64,
    /// `min_{|x| > R} (-LV - φ(V))` over the grid.
    #[serde(rename = "margin_min")]
    pub margin: f64,
    pub candidates: Vec<CandidateMargin>,
}

impl LyapunovReport {
    pub fn c_interval(&self) -> (f64, f64) {
        (-self.r, self.r)
    }
}

/// `slack[i] = -LV(x_i) - rhs(x_i)`; the condition asks `slack ≥ 0` outside
/// a centred interval.
fn drift_condition(
    xs: &[f64],
    slack: &[f64],
    candidates: &[f64],
    v_label: &str,
    phi_label: String,
) -> Result<LyapunovReport> {
    let mut cands: Vec<f64> = candidates.to_vec();
    cands.sort_by(|a, b| a.total_cmp(b));
    let outside_min = |r: f64| {
        xs.iter()
            .zip(slack)
            .filter(|(x, _)| x.abs() > r)
            .map(|(_, s)| *s)
            .fold(f64::INFINITY, f64::min)
    };
    let margins: Vec<CandidateMargin> = cands
        .iter()
        .map(|r| CandidateMargin {
            r: *r,
            margin: outside_min(*r),
        })
        .collect();
    let chosen = margins.iter().find(|m| m.margin >= -LYAPUNOV_TOLERANCE);
    let Some(chosen) = chosen else {
        let best = margins
            .iter()
            .map(|m| m.margin)
            .filter(|m| m.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::LyapunovFails { best_margin: best });
    };
    // outermost failing node on each side, then the zero crossing beyond it
    let n = xs.len();
    let fails = |i: usize| slack[i] < -LYAPUNOV_TOLERANCE;
    let mut r = 0.0_f64;
    if let Some(i) = (0..n).rev().find(|i| xs[*i] >= 0.0 && fails(*i)) {
        let x = if i + 1 < n {
            let t = -slack[i] / (slack[i + 1] - slack[i]);
            xs[i] + t * (xs[i + 1] - xs[i])
        } else {
            xs[i]
        };
        r = r.max(x.abs());
    }
    if let Some(i) = (0..n).find(|i| xs[*i] <= 0.0 && fails(*i)) {
        let x = if i > 0 {
            let t = -slack[i] / (slack[i - 1] - slack[i]);
            xs[i] + t * (xs[i - 1] - xs[i])
        } else {
            xs[i]
        };
        r = r.max(x.abs());
    }
    let r = r.min(chosen.r);
    let kappa = xs
        .iter()
        .zip(slack)
        .filter(|(x, _)| x.abs() <= r)
        .map(|(_, s)| -s)
        .fold(0.0_f64, f64::max);
    Ok(LyapunovReport {
        v_label: v_label.to_string(),
        phi_label,
        holds: true,
        r,
        candidate_r: chosen.r,
        kappa,
        margin: outside_min(r),
        candidates: margins,
    })
}

/// Checks `LV ≤ -φ(V) + κ 1_{[-R, R]}` on the grid for the first radius in
/// `candidates` that works, then refines `R` between grid nodes.
pub fn lyapunov_check(
    model: &Diffusion1D,
    v: &dyn TestFunction,
    v_label: &str,
    phi: &Phi,
    grid: &Grid1D,
    candidates: &[f64],
) -> Result<LyapunovReport> {
    let xs: Vec<f64> = grid.nodes().collect();
    let mut slack = Vec::with_capacity(xs.len());
    for x in &xs {
        let vx = v.value(*x)?;
        if vx < 1.0 - 1e-12 {
            return Err(Error::InvalidInput(format!("V({x}) = {vx} < 1")));
        }
        slack.push(-apply_generator(model, v, *x)? - phi.eval(vx));
    }
    drift_condition(&xs, &slack, candidates, v_label, phi.label())
}

/// Glynn–Meyn form `L θ ≤ -F + b 1_{[-R, R]}`; for the reversible 1D zoo the
/// adjoint generator equals `L`. The report's `kappa` is `b`.
pub fn glynn_meyn_check(
    model: &Diffusion1D,
    theta: &dyn TestFunction,
    theta_label: &str,
    f: &dyn Fn(f64) -> f64,
    f_label: &str,
    grid: &Grid1D,
    candidates: &[f64],
) -> Result<LyapunovReport> {
    let xs: Vec<f64> = grid.nodes().collect();
    let slack = xs
        .iter()
        .map(|x| Ok(-apply_generator(model, theta, *x)? - f(*x)))
        .collect::<Result<Vec<_>>>()?;
    drift_condition(&xs, &slack, candidates, theta_label, f_label.to_string())
}

/// Largest `log u` explored when inverting `H_φ`.
const MAX_LOG_U: f64 = 700.0;
const H_STEP: f64 = 2e-3;

/// `ψ(t) = 1 / φ(H_φ^{-1}(t))` with `H_φ(u) = ∫_1^u ds/φ(s)`. A linear `φ`
/// gives `e^{-c t}` directly.
pub fn rate_from_lyapunov(phi: &Phi, t_grid: &[f64]) -> Result<RateEnvelope> {
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidInput("time grid must be nonnegative and sorted".into()));
    }
    if let Phi::Linear { c } = phi {
        return Ok(RateEnvelope {
            times: t_grid.to_vec(),
            values: t_grid.iter().map(|t| (-c * t).exp()).collect(),
            provenance: format!("lyapunov:exponential(lambda={c})"),
        });
    }
    // H in the variable y = log u: ∫_0^{log u} e^y / φ(e^y) dy
    let g = |y: f64| -> Result<f64> {
        let u = y.exp();
        let f = phi.eval(u);
        let v = u / f;
        if !(f > 0.0) || !v.is_finite() {
            return Err(Error::NonIntegrable { upper: u });
        }
        Ok(v)
    };
    let simpson = |a: f64, b: f64, ga: f64, gb: f64| -> Result<f64> {
        Ok((b - a) / 6.0 * (ga + 4.0 * g(0.5 * (a + b))? + gb))
    };
    let mut values = Vec::with_capacity(t_grid.len());
    let (mut y, mut hy, mut gy) = (0.0, 0.0, g(0.0)?);
    for &t in t_grid {
        loop {
            let y1 = y + H_STEP;
            let g1 = g(y1)?;
            let h1 = hy + simpson(y, y1, gy, g1)?;
            if h1 >= t {
                break;
            }
            if y1 > MAX_LOG_U {
                return Err(Error::InvalidInput(format!(
                    "H_phi stays below {t} up to u = e^{MAX_LOG_U}; phi grows too fast or psi underflows"
                )));
            }
            (y, hy, gy) = (y1, h1, g1);
        }
        let (mut lo, mut hi) = (y, y + H_STEP);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if hy + simpson(y, mid, gy, g(mid)?)? < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        values.push(1.0 / phi.eval((0.5 * (lo + hi)).exp()));
    }
    Ok(RateEnvelope {
        times: t_grid.to_vec(),
        values,
        provenance: format!("lyapunov:{}", phi.label()),
    })
}

/// Constant and exponent in `α_{p,r}(t) ≤ c α(t)^e`.
pub fn alpha_interp_exponent(p: f64, r: f64) -> Result<(f64, f64)> {
    if p > r {
        return Err(Error::BadOrder { p, r });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p must be at least 1, got {p}")));
    }
    let ratio = if r.is_infinite() { 0.0 } else { p / r };
    let c = 2f64.powf(1.0 + ratio);
    let e = if p <= 2.0 { 1.0 - ratio } else { (2.0 / p) * (1.0 - ratio) };
    Ok((c, e))
}

pub fn alpha_interp_bound(alpha: impl Fn(f64) -> f64, p: f64, r: f64, t: f64) -> Result<f64> {
    let (c, e) = alpha_interp_exponent(p, r)?;
    Ok(c * alpha(t).powf(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub upper: f64,
}

/// `max(α(t)², α*(t)²) ≤ α_mix(t) ≤ α(t/2) α*(t/2)`.
pub fn mixing_sandwich(alpha: impl Fn(f64) -> f64, alpha_star: impl Fn(f64) -> f64, t: f64) -> Result<Sandwich> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let (a, b) = (alpha(t), alpha_star(t));
    Ok(Sandwich {
        lower: (a * a).max(b * b),
        upper: alpha(0.5 * t) * alpha_star(0.5 * t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowVariationReport {
    pub is_slowly_varying: bool,
    /// `max |l(ct)/l(t) - 1|`, `c ∈ {2, 4}`, over the upper decade.
    pub worst_ratio_deviation: f64,
    /// Same quantity one decade lower.
    pub previous_decade_deviation: f64,
    pub decades: f64,
}

fn interp_log(ts: &[f64], ls: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|s| *s < t).clamp(1, ts.len() - 1);
    let (a, b) = (ts[k - 1].ln(), ts[k].ln());
    let th = if b > a { ((t.ln() - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
    (1.0 - th) * ls[k - 1] + th * ls[k]
}

/// Numerical Karamata test on samples `(t, l(t))`: the ratios `l(2t)/l(t)`
/// and `l(4t)/l(t)` must be within `SLOW_VARIATION_THRESHOLD` of 1 on the
/// upper decade and no farther from 1 than one decade lower.
pub fn slow_variation_test(samples: &[(f64, f64)]) -> Result<SlowVariationReport> {
    let mut s: Vec<(f64, f64)> = samples.iter().copied().filter(|(t, _)| *t > 0.0).collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let decades = match (s.first(), s.last()) {
        (Some(a), Some(b)) => (b.0 / a.0).log10(),
        _ => 0.0,
    };
    if !(decades >= 2.0) {
        return Err(Error::InsufficientRange { decades });
    }
    let (ts, ls): (Vec<f64>, Vec<f64>) = s.into_iter().unzip();
    let (t_min, t_max) = (ts[0], ts[ts.len() - 1]);
    let deviation = |lo: f64| {
        (0..=40)
            .map(|k| lo * 10f64.powf(k as f64 / 40.0))
            .map(|t| {
                let l = interp_log(&ts, &ls, t);
                let dev = |c: f64| {
                    let lc = interp_log(&ts, &ls, c * t);
                    if l == 0.0 {
                        if lc == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        (lc / l - 1.0).abs()
                    }
                };
                dev(2.0).max(dev(4.0))
            })
            .fold(0.0_f64, f64::max)
    };
    let upper_lo = t_max / 40.0;
    let prev_lo = (upper_lo / 10.0).max(t_min);
    let worst = deviation(upper_lo);
    let prev = deviation(prev_lo);
    Ok(SlowVariationReport {
        is_slowly_varying: worst < SLOW_VARIATION_THRESHOLD && worst <= prev + 1e-12,
        worst_ratio_deviation: worst,
        previous_decade_deviation: prev,
        decades,
    })
}

fn integral_to(times: &[f64], f: impl Fn(usize) -> f64, t: f64) -> f64 {
    // flat extension before the first sample
    let mut acc = f(0) * times[0].min(t).max(0.0);
    for i in 1..times.len() {
        let (a, b) = (times[i - 1], times[i]);
        if a >= t {
            break;
        }
        if b <= t {
            acc += 0.5 * (b - a) * (f(i - 1) + f(i));
        } else {
            let th = (t - a) / (b - a);
            let ft = (1.0 - th) * f(i - 1) + th * f(i);
            acc += 0.5 * (t - a) * (f(i - 1) + ft);
        }
    }
    acc
}

/// `∫_0^t s β(s) ds / (t ∫_0^{t/2} β(s) ds)`, which tends to 0 when the
/// variance grows like `4 t η(t)`.
pub fn left_border_ratio(times: &[f64], beta: &[f64], t: f64) -> Result<f64> {
    if times.len() < 2 || times.len() != beta.len() {
        return Err(Error::InvalidInput("need at least two (time, beta) samples".into()));
    }
    if t > times[times.len() - 1] * (1.0 + 1e-12) || !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t = {t} lies outside the sampled range")));
    }
    let num = integral_to(times, |i| times[i] * beta[i], t);
    let den = t * integral_to(times, |i| beta[i], 0.5 * t);
    Ok(num / den)
}

pub fn left_border_ratio_curve(curve: &BetaCurve, t: f64) -> Result<f64> {
    left_border_ratio(&curve.times, &curve.beta, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CauchyParams, Polynomial};
    use approx::assert_relative_eq;

    fn two_sided_exponential() -> Diffusion1D {
        Diffusion1D::custom("laplace", |x: f64| -x.signum(), |x: f64| -x.abs(), (-40.0, 40.0))
    }

    #[test]
    fn hardy_two_sided_exponential() {
        let m = two_sided_exponential();
        let g = Grid1D::symmetric(40.0, 40001).unwrap();
        let hc = hardy_constants(&m, &WpiSpec::constant(1.0), &g).unwrap();
        assert!(hc.median.abs() < 1e-9);
        // sup_{x>0} (e^{-x}/2)(e^x - 1) = 1/2
        assert!((hc.big_b_plus - 0.5).abs() < 1e-4, "{hc:?}");
        assert!((hc.big_b_minus - hc.big_b_plus).abs() < 1e-6);
        assert!((hc.b_plus - hc.b_minus).abs() < 1e-6);
        assert!(hc.b_plus <= hc.big_b_plus && hc.is_finite());
        assert!((hc.z - 2.0).abs() < 1e-4);
    }

    #[test]
    fn hardy_cauchy_power_rate_is_finite() {
        let m = Diffusion1D::cauchy(CauchyParams::new(3.0, 0.0).unwrap());
        let g = Grid1D::symmetric(500.0, 100001).unwrap();
        let hc = hardy_constants(&m, &WpiSpec::power(1.0, 1.0), &g).unwrap();
        assert!(hc.is_finite() && hc.big_b_plus > 0.0, "{hc:?}");
        assert!((hc.big_b_plus - hc.big_b_minus).abs() < 1e-6 * hc.big_b_plus);
        // a constant rate is too fast for polynomial tails
        let hc = hardy_constants(&m, &WpiSpec::constant(1.0), &g).unwrap();
        assert!(!hc.is_finite());
    }

    #[test]
    fn xi_log_inverse_oracle() {
        let spec = WpiSpec::log_inverse();
        for t in [1.0, 10.0, 100.0, 1000.0] {
            let x = xi_from_wpi(&spec, t).unwrap();
            let exact = (-t.sqrt()).exp();
            assert!(!x.at_floor);
            assert!((x.xi / exact - 1.0).abs() < 1e-10, "{t}: {} vs {exact}", x.xi);
        }
    }

    #[test]
    fn xi_degenerate_and_no_root() {
        let x = xi_from_wpi(&WpiSpec::constant(0.0), 1.0).unwrap();
        assert!(x.at_floor && x.xi == XI_FLOOR);
        assert!(matches!(xi_from_wpi(&WpiSpec::constant(1e3), 1.0), Err(Error::NoRoot { .. })));
    }

    #[test]
    fn xi_cauchy_slope() {
        // ξ(t) ≍ t^{-(α-1)/2} log^{(α-1)/2-β}(t); the slope is read off after
        // dividing by the log factor
        for (alpha, beta) in [(3.0, 0.0), (3.0, 1.0), (5.0, 0.0)] {
            let spec = WpiSpec::cauchy(alpha, beta, 1.0).unwrap();
            if beta == 0.0 {
                assert!(spec.is_nonincreasing(200));
            }
            let ts: Vec<f64> = (0..=30).map(|k| 1e3 * 10f64.powf(k as f64 / 10.0)).collect();
            let env = xi_envelope(&spec, &ts).unwrap();
            assert!(env.is_nonincreasing());
            let lf = (alpha - 1.0) / 2.0 - beta;
            let corrected = RateEnvelope {
                values: env.values.iter().zip(&ts).map(|(v, t)| v / t.ln().powf(lf)).collect(),
                ..env.clone()
            };
            let slope = corrected.loglog_slope(1e3, 1e6).unwrap();
            let target = -(alpha - 1.0) / 2.0;
            assert!((slope / target - 1.0).abs() < 0.05, "{alpha},{beta}: {slope}");
        }
    }

    #[test]
    fn xi_monotone_in_rate() {
        let a = WpiSpec::power(1.0, 1.0);
        let b = WpiSpec::power(2.0, 1.0);
        for t in [10.0, 100.0, 1e4] {
            let xa = xi_from_wpi(&a, t).unwrap().xi;
            assert!(xa <= xi_from_wpi(&b, t).unwrap().xi);
            assert!(xi_from_wpi(&a, 2.0 * t).unwrap().xi <= xa);
        }
    }

    fn v_quadratic() -> Polynomial {
        Polynomial::new(vec![1.0, 0.0, 1.0])
    }

    #[test]
    fn lyapunov_ou() {
        let m = Diffusion1D::ou();
        let cands: Vec<f64> = (1..=40).map(|k| 0.25 * k as f64).collect();
        for n in [2001, 4001] {
            let g = Grid1D::symmetric(10.0, n).unwrap();
            let rep = lyapunov_check(&m, &v_quadratic(), "1+x^2", &Phi::Linear { c: 1.0 }, &g, &cands).unwrap();
            assert!(rep.holds);
            assert!((rep.r / 3f64.sqrt() - 1.0).abs() < 1e-3, "{rep:?}");
            assert_relative_eq!(rep.kappa, 3.0, max_relative = 1e-9);
            assert!(rep.margin >= -LYAPUNOV_TOLERANCE);
            // first listed radius beyond √3
            assert_eq!(rep.candidate_r, 1.75);
        }
    }

    #[test]
    fn lyapunov_cauchy_constant_rate() {
        // LV = (2 - 4x^2)/(1 + x^2) ≤ -1 exactly when |x| ≥ 1
        let m = Diffusion1D::cauchy(CauchyParams::new(3.0, 0.0).unwrap());
        let g = Grid1D::symmetric(50.0, 10001).unwrap();
        let rep = lyapunov_check(&m, &v_quadratic(), "1+x^2", &Phi::Constant { c: 1.0 }, &g, &[0.5, 1.5, 3.0]).unwrap();
        assert!((rep.r - 1.0).abs() < 1e-3, "{rep:?}");
        assert_relative_eq!(rep.kappa, 3.0, max_relative = 1e-9);
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json.get("R").is_some() && json.get("margin_min").is_some());
    }

    #[test]
    fn lyapunov_failure_reports_best_margin() {
        let m = Diffusion1D::ou();
        let g = Grid1D::symmetric(10.0, 2001).unwrap();
        let err = lyapunov_check(&m, &v_quadratic(), "1+x^2", &Phi::Linear { c: 3.0 }, &g, &[1.0, 5.0]).unwrap_err();
        assert!(matches!(err, Error::LyapunovFails { best_margin } if best_margin < 0.0));
    }

    #[test]
    fn glynn_meyn_ou() {
        // L(x^2/2) = 1 - x^2 ≤ -x^2/2 + b on [-R, R] with R = √2, b = 1
        let m = Diffusion1D::ou();
        let g = Grid1D::symmetric(10.0, 4001).unwrap();
        let theta = Polynomial::new(vec![0.0, 0.0, 0.5]);
        let rep = glynn_meyn_check(&m, &theta, "x^2/2", &|x| 0.5 * x * x, "x^2/2", &g, &[2.0]).unwrap();
        assert!((rep.r - 2f64.sqrt()).abs() < 1e-3);
        assert_relative_eq!(rep.kappa, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn linear_phi_is_exponential() {
        let env = rate_from_lyapunov(&Phi::Linear { c: 0.7 }, &[0.0, 1.0, 2.0]).unwrap();
        assert!(env.provenance.contains("exponential"));
        assert_relative_eq!(env.values[2], (-1.4f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn polynomial_phi_rate() {
        // H(u) = k(u^{1/k} - 1), ψ(t) = (1 + t/k)^{-(k-1)}
        let k = 3.0;
        let ts: Vec<f64> = (0..=40).map(|i| 10f64.powf(i as f64 / 8.0)).collect();
        let env = rate_from_lyapunov(&Phi::polynomial(1.0, k), &ts).unwrap();
        assert!(env.is_nonincreasing());
        for (t, v) in ts.iter().zip(&env.values) {
            let exact = (1.0 + t / k).powf(-(k - 1.0));
            assert!((v / exact - 1.0).abs() < 1e-6, "{t}: {v} vs {exact}");
        }
        let slope = env.loglog_slope(1e3, 1e5).unwrap();
        assert!((slope / -(k - 1.0) - 1.0).abs() < 0.02);
        let psi = |t: f64| rate_from_lyapunov(&Phi::polynomial(1.0, k), &[t]).unwrap().values[0];
        let r = psi(2e5) / psi(1e5);
        assert!((r / 2f64.powf(-(k - 1.0)) - 1.0).abs() < 0.02);
    }

    #[test]
    fn log_damped_phi_rate() {
        // log(e u) = ((a+1) t + 1)^{1/(a+1)}, ψ = log^a(e u) / u
        let a = 1.0;
        let ts = [0.0, 1.0, 10.0, 100.0, 1000.0];
        let env = rate_from_lyapunov(&Phi::LogDamped { c: 1.0, a }, &ts).unwrap();
        for (t, v) in ts.iter().zip(&env.values) {
            let le = ((a + 1.0) * t + 1.0).powf(1.0 / (a + 1.0));
            let exact = le.powf(a) / (le - 1.0).exp();
            assert!((v / exact - 1.0).abs() < 1e-6, "{t}: {v} vs {exact}");
        }
    }

    #[test]
    fn non_integrable_phi() {
        let phi = Phi::Custom {
            label: "zero".into(),
            f: Arc::new(|_| 0.0),
        };
        assert!(matches!(rate_from_lyapunov(&phi, &[1.0]), Err(Error::NonIntegrable { .. })));
    }

    #[test]
    fn alpha_interpolation() {
        let e = |t: f64| (-t).exp();
        assert_relative_eq!(alpha_interp_bound(e, 2.0, f64::INFINITY, 1.0).unwrap(), 2.0 * e(1.0));
        let t = 3.0;
        assert_relative_eq!(alpha_interp_bound(e, 2.0, 4.0, t).unwrap(), 2f64.powf(1.5) * (-t / 2.0).exp(), max_relative = 1e-14);
        assert_relative_eq!(alpha_interp_bound(e, 4.0, 8.0, t).unwrap(), 2f64.powf(1.5) * (-t / 4.0).exp(), max_relative = 1e-14);
        assert!(matches!(alpha_interp_bound(e, 4.0, 2.0, t), Err(Error::BadOrder { .. })));
        // with α = α* both envelopes share the exponent
        let a = alpha_interp_bound(e, 3.0, 6.0, t).unwrap();
        let b = alpha_interp_bound(|s| (-s).exp(), 3.0, 6.0, t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixing_sandwich_cases() {
        let s = mixing_sandwich(|_| 1.0, |_| 1.0, 2.0).unwrap();
        assert_eq!((s.lower, s.upper), (1.0, 1.0));
        let t = 1.3;
        let s = mixing_sandwich(|t: f64| (-t).exp(), |t: f64| (-t).exp(), t).unwrap();
        assert_relative_eq!(s.lower, (-2.0 * t).exp(), max_relative = 1e-14);
        assert_relative_eq!(s.upper, (-t).exp(), max_relative = 1e-14);
        for k in 1..=100 {
            let t = 0.1 * k as f64;
            for a in [|t: f64| 1.0 / (1.0 + t), |t: f64| (1.0 + t).powf(-0.5), |t: f64| (-t * t).exp()] {
                let s = mixing_sandwich(a, a, t).unwrap();
                assert!(s.lower <= s.upper);
            }
        }
    }

    fn samples(l: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..=120).map(|k| 10f64.powf(k as f64 / 20.0)).map(|t| (t, l(t))).collect()
    }

    #[test]
    fn slow_variation_verdicts() {
        let r = slow_variation_test(&samples(|t| t.ln())).unwrap();
        assert!(r.is_slowly_varying, "{r:?}");
        let r = slow_variation_test(&samples(|t| t.sqrt())).unwrap();
        assert!(!r.is_slowly_varying);
        // |l(4t)/l(t) - 1| = 1, up to interpolation between samples
        assert!((r.worst_ratio_deviation - 1.0).abs() < 0.01);
        let r = slow_variation_test(&samples(|_| 1.0)).unwrap();
        assert!(r.is_slowly_varying && r.worst_ratio_deviation == 0.0);
        let short: Vec<(f64, f64)> = (1..=50).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(slow_variation_test(&short), Err(Error::InsufficientRange { .. })));
    }

    #[test]
    fn border_ratio_vanishes() {
        let ts: Vec<f64> = (0..=100_000).map(|k| 0.01 * k as f64).collect();
        let exp: Vec<f64> = ts.iter().map(|s| (-s).exp()).collect();
        // ∫_0^t s e^{-s} ≈ 1 and t ∫_0^{t/2} e^{-s} ≈ t
        let r = left_border_ratio(&ts, &exp, 1000.0).unwrap();
        assert!((r * 1000.0 - 1.0).abs() < 1e-3);
        let slow: Vec<f64> = ts.iter().map(|s| 1.0 / (1.0 + s)).collect();
        let r1 = left_border_ratio(&ts, &slow, 100.0).unwrap();
        let r2 = left_border_ratio(&ts, &slow, 1000.0).unwrap();
        assert!(r2 < r1 && r2 < 0.2);
    }

    #[test]
    fn envelope_csv() {
        let env = xi_envelope(&WpiSpec::log_inverse(), &[1.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,value,provenance\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
