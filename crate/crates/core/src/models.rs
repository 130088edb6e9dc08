//! Generators, invariant densities and the model zoo.
//!
//! Every one-dimensional model is written with `sqrt(2) dB` noise, so the
//! generator is `Lg = g'' + b g'` and the carré du champ is `Γ(g) = 2 (g')^2`.
//! The drift is the derivative of the log-density, which makes each 1D model
//! reversible with respect to its invariant law.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Noise variance rate shared by every 1D model (`sqrt(2) dB`).
pub const DIFFUSION_CONST: f64 = 2.0;

/// Parameters of the generalised Cauchy family
/// `p(x) ∝ (1+x^2)^{-α/2} log^{-β}(e+x^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyParams {
    pub alpha: f64,
    pub beta: f64,
}

impl CauchyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("cauchy alpha must be > 1, got {alpha}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("cauchy beta must be >= 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

pub fn cauchy_drift(x: f64, params: CauchyParams) -> f64 {
    let x2 = x * x;
    let ex = E + x2;
    -(params.alpha * x / (1.0 + x2) + 2.0 * params.beta * x / (ex * ex.ln()))
}

pub fn cauchy_log_density(x: f64, params: CauchyParams) -> f64 {
    let x2 = x * x;
    -0.5 * params.alpha * x2.ln_1p() - params.beta * (E + x2).ln().ln()
}

/// Drift of the subexponential law `p(x) ∝ exp(-|x|^α)`; zero at the origin.
pub fn subexp_drift(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    -alpha * x * x.abs().powf(alpha - 2.0)
}

pub fn subexp_log_density(x: f64, alpha: f64) -> f64 {
    -x.abs().powf(alpha)
}

#[derive(Clone)]
pub enum Potential1D {
    /// Drift `-x`, standard Gaussian invariant law.
    OrnsteinUhlenbeck,
    Cauchy(CauchyParams),
    Subexponential { alpha: f64 },
    Custom { drift: ScalarFn, log_density: ScalarFn },
}

impl fmt::Debug for Potential1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OrnsteinUhlenbeck => write!(f, "OrnsteinUhlenbeck"),
            Self::Cauchy(p) => write!(f, "Cauchy({p:?})"),
            Self::Subexponential { alpha } => write!(f, "Subexponential {{ alpha: {alpha} }}"),
            Self::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// One-dimensional reversible diffusion `dX = b(X) dt + sqrt(2) dB`.
#[derive(Clone, Debug)]
pub struct Diffusion1D {
    label: String,
    potential: Potential1D,
    domain: (f64, f64),
}

impl Diffusion1D {
    pub fn ou() -> Self {
        Self {
            label: "ou".into(),
            potential: Potential1D::OrnsteinUhlenbeck,
            domain: (-20.0, 20.0),
        }
    }

    pub fn cauchy(params: CauchyParams) -> Self {
        Self {
            label: "cauchy".into(),
            potential: Potential1D::Cauchy(params),
            domain: (-500.0, 500.0),
        }
    }

    /// Cauchy model whose domain covers the `sqrt(t)` spatial scale reached
    /// by time `t_max`: half-width `max(500, 20 sqrt(t_max))`.
    pub fn cauchy_for_horizon(params: CauchyParams, t_max: f64) -> Self {
        let r = (20.0 * t_max.max(0.0).sqrt()).max(500.0);
        Self::cauchy(params).with_domain(-r, r)
    }

    pub fn subexponential(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "subexponential alpha must lie in (0, 1), got {alpha}"
            )));
        }
        // |x|^alpha must reach ~30 at the edge for the outside mass to be
        // negligible
        let r = 30f64.powf(1.0 / alpha).max(20.0);
        Ok(Self {
            label: "subexp".into(),
            potential: Potential1D::Subexponential { alpha },
            domain: (-r, r),
        })
    }

    pub fn custom(
        label: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        log_density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: (f64, f64),
    ) -> Self {
        Self {
            label: label.into(),
            potential: Potential1D::Custom {
                drift: Arc::new(drift),
                log_density: Arc::new(log_density),
            },
            domain,
        }
    }

    pub fn with_domain(mut self, x_min: f64, x_max: f64) -> Self {
        self.domain = (x_min, x_max);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn potential(&self) -> &Potential1D {
        &self.potential
    }

    pub fn domain_hint(&self) -> (f64, f64) {
        self.domain
    }

    pub fn diffusion_const(&self) -> f64 {
        DIFFUSION_CONST
    }

    pub fn cauchy_params(&self) -> Option<CauchyParams> {
        match self.potential {
            Potential1D::Cauchy(p) => Some(p),
            _ => None,
        }
    }

    /// `true` when the density is symmetric about 0 by construction.
    pub fn is_symmetric(&self) -> bool {
        !matches!(self.potential, Potential1D::Custom { .. })
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        match &self.potential {
            Potential1D::OrnsteinUhlenbeck => -x,
            Potential1D::Cauchy(p) => cauchy_drift(x, *p),
            Potential1D::Subexponential { alpha } => subexp_drift(x, *alpha),
            Potential1D::Custom { drift, .. } => drift(x),
        }
    }

    pub fn log_density_unnorm(&self, x: f64) -> f64 {
        match &self.potential {
            Potential1D::OrnsteinUhlenbeck => -0.5 * x * x,
            Potential1D::Cauchy(p) => cauchy_log_density(x, *p),
            Potential1D::Subexponential { alpha } => subexp_log_density(x, *alpha),
            Potential1D::Custom { log_density, .. } => log_density(x),
        }
    }

    /// Largest relative gap between the drift and a central difference of the
    /// log-density over the grid nodes. Nodes where the log-density is not
    /// smooth (the origin for the subexponential law) are skipped.
    pub fn reversibility_error(&self, grid: &Grid1D) -> f64 {
        let mut worst = 0.0_f64;
        for x in grid.nodes() {
            if matches!(self.potential, Potential1D::Subexponential { .. }) && x.abs() < 1e-3 {
                continue;
            }
            let h = 1e-4 * x.abs().max(1e-3);
            let fd = (self.log_density_unnorm(x + h) - self.log_density_unnorm(x - h)) / (2.0 * h);
            let b = self.drift(x);
            let scale = b.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((b - fd).abs() / scale);
        }
        worst
    }

    /// Unnormalized mass `∫ exp(log_density_unnorm - shift)` beyond `edge`
    /// (to the right of a positive edge, to the left of a negative one),
    /// extrapolated from the local decay of the density there: a power law or
    /// an exponential, whichever the local slope implies. `None` when the
    /// extrapolated tail is not integrable.
    pub fn edge_tail_mass(&self, edge: f64, shift: f64) -> Option<f64> {
        let r = edge.abs().max(1e-12);
        let sign = edge.signum();
        let x_in = edge - sign * 0.05 * r;
        let lp_in = self.log_density_unnorm(x_in) - shift;
        let lp_edge = self.log_density_unnorm(edge) - shift;
        let p_edge = lp_edge.exp();
        // d log p / d log|x| and d log p / d|x| at the edge
        let slope = (lp_edge - lp_in) / (r.ln() - x_in.abs().ln());
        let rate = (lp_in - lp_edge) / (r - x_in.abs());
        let power_tail = if slope < -1.0 { p_edge * r / (-slope - 1.0) } else { f64::INFINITY };
        let exp_tail = if rate > 0.0 { p_edge / rate } else { f64::INFINITY };
        let t = power_tail.min(exp_tail);
        t.is_finite().then_some(t)
    }

    /// Estimated invariant mass outside the domain hint, relative to the mass
    /// inside. Returns `None` when the extrapolated tail is not integrable.
    pub fn tail_mass_estimate(&self) -> Option<f64> {
        let (a, b) = self.domain;
        let grid = Grid1D::new(a, b, 4001).ok()?;
        let lp: Vec<f64> = grid.nodes().map(|x| self.log_density_unnorm(x)).collect();
        let shift = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let inside: f64 = GridFunction::new(grid, lp.iter().map(|l| (l - shift).exp()).collect())
            .ok()?
            .integrate();
        let tail = self.edge_tail_mass(a, shift)? + self.edge_tail_mass(b, shift)?;
        Some(tail / inside)
    }
}

/// Potential of the kinetic (underdamped Langevin) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KineticPotential {
    /// `F = 0`; positions are not confined, only velocities equilibrate.
    Free,
    /// `F(x) = k |x|^2 / 2`.
    Harmonic { stiffness: f64 },
}

/// `dx = v dt`, `dv = -γ v dt - ∇F(x) dt + sqrt(2γ) dB`, invariant law
/// `exp(-(|v|^2/2 + F(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticModel {
    pub dim: usize,
    pub friction: f64,
    pub potential: KineticPotential,
    /// Half-width of the working box for positions.
    pub box_half_width: f64,
}

impl KineticModel {
    pub fn new(dim: usize, friction: f64, potential: KineticPotential) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("kinetic dimension must be positive".into()));
        }
        if !(friction > 0.0) {
            return Err(Error::InvalidInput(format!("friction must be positive, got {friction}")));
        }
        if let KineticPotential::Harmonic { stiffness } = potential {
            if !(stiffness > 0.0) {
                return Err(Error::InvalidInput("harmonic stiffness must be positive".into()));
            }
        }
        Ok(Self {
            dim,
            friction,
            potential,
            box_half_width: 1e4,
        })
    }

    pub fn free(dim: usize) -> Self {
        Self::new(dim, 1.0, KineticPotential::Free).expect("valid free kinetic model")
    }

    pub fn potential_value(&self, x: &[f64]) -> f64 {
        match self.potential {
            KineticPotential::Free => 0.0,
            KineticPotential::Harmonic { stiffness } => 0.5 * stiffness * x.iter().map(|q| q * q).sum::<f64>(),
        }
    }

    #[inline]
    pub fn grad_potential(&self, x: f64) -> f64 {
        match self.potential {
            KineticPotential::Free => 0.0,
            KineticPotential::Harmonic { stiffness } => stiffness * x,
        }
    }

    /// Position marginal as a 1D model, if the potential confines positions.
    pub fn position_marginal(&self) -> Option<Diffusion1D> {
        match self.potential {
            KineticPotential::Free => None,
            KineticPotential::Harmonic { stiffness } => {
                let w = (40.0 / stiffness).sqrt();
                Some(Diffusion1D::custom(
                    "kinetic-position",
                    move |x| -stiffness * x,
                    move |x| -0.5 * stiffness * x * x,
                    (-w, w),
                ))
            }
        }
    }
}

/// Three-oscillator chain with heat baths at both ends. State layout is
/// `[q0, q1, q2, p0, p1, p2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorChain {
    pub gamma0: f64,
    pub gamma2: f64,
    pub temp0: f64,
    pub temp2: f64,
    pub k: f64,
}

impl OscillatorChain {
    pub fn new(gamma0: f64, gamma2: f64, temp0: f64, temp2: f64, k: f64) -> Result<Self> {
        for (name, v) in [("gamma0", gamma0), ("gamma2", gamma2), ("T0", temp0), ("T2", temp2)] {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(k > 1.5) {
            return Err(Error::InvalidInput(format!("pinning exponent k must exceed 3/2, got {k}")));
        }
        Ok(Self {
            gamma0,
            gamma2,
            temp0,
            temp2,
            k,
        })
    }

    /// Drift of the momenta given positions and momenta.
    pub fn momentum_drift(&self, q: &[f64; 3], p: &[f64; 3]) -> [f64; 3] {
        let pin = |x: f64| x * x.abs().powf(2.0 * self.k - 2.0);
        [
            -self.gamma0 * p[0] - pin(q[0]) - (q[0] - q[1]),
            -pin(q[1]) - (2.0 * q[1] - q[0] - q[2]),
            -self.gamma2 * p[2] - pin(q[2]) - (q[2] - q[1]),
        ]
    }

    pub fn noise_scales(&self) -> [f64; 3] {
        [
            (2.0 * self.gamma0 * self.temp0).sqrt(),
            0.0,
            (2.0 * self.gamma2 * self.temp2).sqrt(),
        ]
    }
}

/// Any model the simulator understands.
#[derive(Clone, Debug)]
pub enum Model {
    Diffusion(Diffusion1D),
    Kinetic(KineticModel),
    Oscillator(OscillatorChain),
}

impl Model {
    /// Number of state coordinates.
    pub fn state_dim(&self) -> usize {
        match self {
            Model::Diffusion(_) => 1,
            Model::Kinetic(k) => 2 * k.dim,
            Model::Oscillator(_) => 6,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Model::Diffusion(d) => d.label(),
            Model::Kinetic(_) => "kinetic",
            Model::Oscillator(_) => "oscillator3",
        }
    }

    /// Radius beyond which a simulated state counts as a blow-up (ten times
    /// the working domain).
    pub fn blowup_radius(&self) -> f64 {
        match self {
            Model::Diffusion(d) => {
                let (a, b) = d.domain_hint();
                10.0 * a.abs().max(b.abs())
            }
            Model::Kinetic(k) => 10.0 * k.box_half_width,
            Model::Oscillator(_) => 1e6,
        }
    }
}

impl From<Diffusion1D> for Model {
    fn from(d: Diffusion1D) -> Self {
        Model::Diffusion(d)
    }
}

impl From<KineticModel> for Model {
    fn from(k: KineticModel) -> Self {
        Model::Kinetic(k)
    }
}

impl From<OscillatorChain> for Model {
    fn from(o: OscillatorChain) -> Self {
        Model::Oscillator(o)
    }
}

/// A scalar function with first and second derivatives available at a point.
pub trait TestFunction {
    fn value(&self, x: f64) -> Result<f64>;
    fn deriv(&self, x: f64) -> Result<f64>;
    fn second_deriv(&self, x: f64) -> Result<f64>;
}

/// Polynomial with coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn monomial(degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = 1.0;
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        Polynomial { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Polynomial::new(vec![]);
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl TestFunction for Polynomial {
    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x))
    }
    fn deriv(&self, x: f64) -> Result<f64> {
        Ok(self.derivative().eval(x))
    }
    fn second_deriv(&self, x: f64) -> Result<f64> {
        Ok(self.derivative().derivative().eval(x))
    }
}

/// Function given together with its derivatives in closed form.
#[derive(Clone)]
pub struct Smooth {
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub d2f: ScalarFn,
}

impl Smooth {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
        }
    }
}

impl TestFunction for Smooth {
    fn value(&self, x: f64) -> Result<f64> {
        Ok((self.f)(x))
    }
    fn deriv(&self, x: f64) -> Result<f64> {
        Ok((self.df)(x))
    }
    fn second_deriv(&self, x: f64) -> Result<f64> {
        Ok((self.d2f)(x))
    }
}

/// `Lg(x) = g''(x) + b(x) g'(x)`.
pub fn apply_generator(model: &Diffusion1D, g: &dyn TestFunction, x: f64) -> Result<f64> {
    Ok(g.second_deriv(x)? + model.drift(x) * g.deriv(x)?)
}

/// `Γ(g)(x) = 2 g'(x)^2`, equal to `L(g^2) - 2 g Lg` for this zoo.
pub fn carre_du_champ(g: &dyn TestFunction, x: f64) -> Result<f64> {
    let d = g.deriv(x)?;
    Ok(DIFFUSION_CONST * d * d)
}

/// Observable `f` of the process state.
#[derive(Clone)]
pub struct Observable {
    label: String,
    eval: StateFn,
    first_deriv: Option<GradFn>,
    lp_class: f64,
    centered: bool,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("lp_class", &self.lp_class)
            .field("centered", &self.centered)
            .finish()
    }
}

impl Observable {
    pub fn new(label: impl Into<String>, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            first_deriv: None,
            lp_class: 1.0,
            centered: false,
        }
    }

    pub fn with_derivative(mut self, d: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.first_deriv = Some(Arc::new(d));
        self
    }

    pub fn with_lp_class(mut self, p: f64) -> Self {
        self.lp_class = p;
        self
    }

    /// Marks the observable as centered under the invariant law.
    pub fn assume_centered(mut self) -> Self {
        self.centered = true;
        self
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0).with_lp_class(f64::INFINITY).assume_centered()
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_| c).with_lp_class(f64::INFINITY)
    }

    /// The `i`-th state coordinate (for kinetic models, `dim + i` is the
    /// `i`-th velocity).
    pub fn coordinate(i: usize) -> Self {
        Self::new(format!("s{i}"), move |s| s[i]).with_derivative(move |s| {
            let mut g = vec![0.0; s.len()];
            g[i] = 1.0;
            g
        })
    }

    pub fn polynomial(p: Polynomial) -> Self {
        let dp = p.derivative();
        Self::new(format!("poly{:?}", p.coeffs), move |s| p.eval(s[0]))
            .with_derivative(move |s| vec![dp.eval(s[0])])
    }

    /// `f = Lg` for a polynomial `g`, evaluated in closed form. Flagged as
    /// centered: `∫ Lg dμ = 0` whenever the boundary flux `p g'` vanishes.
    pub fn generator_of(model: &Diffusion1D, g: Polynomial) -> Self {
        let m = model.clone();
        let d1 = g.derivative();
        let d2 = d1.derivative();
        Self::new(format!("L(poly{:?})", g.coeffs), move |s| {
            let x = s[0];
            d2.eval(x) + m.drift(x) * d1.eval(x)
        })
        .with_lp_class(f64::INFINITY)
        .assume_centered()
    }

    pub fn tanh() -> Self {
        Self::new("tanh(x)", |s| s[0].tanh())
            .with_derivative(|s| {
                let c = s[0].cosh();
                vec![1.0 / (c * c)]
            })
            .with_lp_class(f64::INFINITY)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lp_class(&self) -> f64 {
        self.lp_class
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    #[inline]
    pub fn eval(&self, state: &[f64]) -> f64 {
        (self.eval)(state)
    }

    #[inline]
    pub fn eval1(&self, x: f64) -> f64 {
        (self.eval)(&[x])
    }

    pub fn gradient(&self, state: &[f64]) -> Option<Vec<f64>> {
        self.first_deriv.as_ref().map(|d| d(state))
    }

    /// Observable shifted by a constant: `f - c`.
    pub fn minus(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            label: format!("{} - {c}", self.label),
            eval: Arc::new(move |s| inner(s) - c),
            first_deriv: self.first_deriv.clone(),
            lp_class: self.lp_class,
            centered: self.centered,
        }
    }

    /// Centers the observable under the quadrature-normalized invariant
    /// density of `model` on `grid`.
    pub fn centered_on(&self, model: &Diffusion1D, grid: &Grid1D) -> Result<Self> {
        let density = GridFunction::invariant_density(model, grid)?;
        let mean = density.integrate_product_with(|x| self.eval1(x));
        let mut out = self.minus(mean);
        out.centered = true;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cauchy(a: f64, b: f64) -> CauchyParams {
        CauchyParams::new(a, b).unwrap()
    }

    #[test]
    fn cauchy_drift_values() {
        assert_eq!(cauchy_drift(0.0, cauchy(3.0, 2.0)), 0.0);
        assert_relative_eq!(cauchy_drift(1.0, cauchy(3.0, 0.0)), -1.5, epsilon = 1e-15);
        let expected = -1.5 - 4.0 / ((E + 1.0) * (E + 1.0).ln());
        assert_relative_eq!(cauchy_drift(1.0, cauchy(3.0, 2.0)), expected, epsilon = 1e-14);
        assert!((cauchy_drift(1.0, cauchy(3.0, 2.0)) + 2.3186).abs() < 1e-3);
    }

    #[test]
    fn cauchy_log_density_values() {
        assert_eq!(cauchy_log_density(0.0, cauchy(3.0, 0.0)), 0.0);
        assert_eq!(cauchy_log_density(0.0, cauchy(2.5, 7.0)), 0.0);
        assert_relative_eq!(cauchy_log_density(1.0, cauchy(3.0, 0.0)), -1.5 * 2f64.ln(), epsilon = 1e-15);
        let p = cauchy(3.0, 2.0);
        let h = 1e-5;
        let fd = (cauchy_log_density(1.0 + h, p) - cauchy_log_density(1.0 - h, p)) / (2.0 * h);
        assert!((fd - cauchy_drift(1.0, p)).abs() < 1e-6);
    }

    #[test]
    fn subexp_drift_values() {
        assert_eq!(subexp_drift(0.0, 0.5), 0.0);
        assert_relative_eq!(subexp_drift(4.0, 0.5), -0.25, epsilon = 1e-15);
        assert_relative_eq!(subexp_drift(-4.0, 0.5), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn parameter_validation() {
        assert!(CauchyParams::new(1.0, 0.0).is_err());
        assert!(CauchyParams::new(3.0, -0.1).is_err());
        assert!(Diffusion1D::subexponential(1.2).is_err());
        assert!(OscillatorChain::new(1.0, 1.0, 1.0, 1.0, 1.5).is_err());
        assert!(OscillatorChain::new(1.0, 1.0, 1.0, 1.0, 2.0).is_ok());
        assert!(KineticModel::new(0, 1.0, KineticPotential::Free).is_err());
    }

    #[test]
    fn generator_on_polynomials() {
        let x2 = Polynomial::monomial(2);
        let ou = Diffusion1D::ou();
        let c = Polynomial::new(vec![3.5]);
        for x in [-2.0, 0.0, 0.7, 5.0] {
            assert_eq!(apply_generator(&ou, &c, x).unwrap(), 0.0);
            assert_relative_eq!(apply_generator(&ou, &x2, x).unwrap(), 2.0 - 2.0 * x * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn cauchy_generator_matches_closed_form() {
        // LV for V = x^2 written out by hand
        let lv = |x: f64, a: f64, b: f64| {
            2.0 * (1.0 - (a - 1.0) * x * x) / (1.0 + x * x) - 4.0 * b * x * x / ((E + x * x) * (E + x * x).ln())
        };
        for (a, b) in [(3.0, 0.0), (3.0, 1.0), (3.0, 2.0), (2.5, 0.5)] {
            let m = Diffusion1D::cauchy(cauchy(a, b));
            for x in [0.0, 1.0, -1.0, 10.0, -10.0] {
                let got = apply_generator(&m, &Polynomial::monomial(2), x).unwrap();
                assert!((got - lv(x, a, b)).abs() < 1e-10, "x={x} a={a} b={b}");
            }
        }
    }

    #[test]
    fn carre_du_champ_identity_ou() {
        // Γ(g) = L(g^2) - 2 g Lg at x = 1 for g = x^2
        let ou = Diffusion1D::ou();
        let g = Polynomial::monomial(2);
        let g2 = g.mul(&g);
        let x = 1.0;
        let lhs = apply_generator(&ou, &g2, x).unwrap() - 2.0 * g.eval(x) * apply_generator(&ou, &g, x).unwrap();
        assert_relative_eq!(lhs, 8.0, epsilon = 1e-12);
        assert_relative_eq!(carre_du_champ(&g, x).unwrap(), 8.0);
        assert_eq!(carre_du_champ(&Polynomial::new(vec![2.0]), x).unwrap(), 0.0);
        assert_eq!(carre_du_champ(&Polynomial::monomial(1), -7.0).unwrap(), 2.0);
    }

    #[test]
    fn zoo_is_reversible() {
        let models = vec![
            Diffusion1D::ou(),
            Diffusion1D::cauchy(cauchy(3.0, 0.0)),
            Diffusion1D::cauchy(cauchy(3.0, 2.0)),
            Diffusion1D::cauchy(cauchy(1.5, 1.0)),
            Diffusion1D::subexponential(0.5).unwrap(),
        ];
        for m in models {
            let (a, b) = m.domain_hint();
            let grid = Grid1D::new(a, b, 2001).unwrap();
            let err = m.reversibility_error(&grid);
            assert!(err < 1e-6, "{} reversibility error {err}", m.label());
        }
    }

    #[test]
    fn tail_mass_checks() {
        assert!(Diffusion1D::ou().tail_mass_estimate().unwrap() < 1e-8);
        assert!(Diffusion1D::subexponential(0.5).unwrap().tail_mass_estimate().unwrap() < 1e-8);
        // Cauchy tails are integrable but heavy: the estimate is finite.
        let t = Diffusion1D::cauchy(cauchy(3.0, 0.0)).tail_mass_estimate().unwrap();
        assert!(t > 1e-7 && t < 1e-5, "{t}");
        // A flat "density" is not integrable.
        let flat = Diffusion1D::custom("flat", |_| 0.0, |_| 0.0, (-10.0, 10.0));
        assert!(flat.tail_mass_estimate().is_none());
    }

    proptest! {
        #[test]
        fn carre_du_champ_matches_generator_identity(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 1..5),
            x in -5.0f64..5.0,
        ) {
            let m = Diffusion1D::cauchy(CauchyParams { alpha: 3.0, beta: 1.0 });
            let g = Polynomial::new(coeffs);
            let lhs = apply_generator(&m, &g.mul(&g), x).unwrap()
                - 2.0 * g.eval(x) * apply_generator(&m, &g, x).unwrap();
            let rhs = carre_du_champ(&g, x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-5 * rhs.abs().max(1.0));
        }
    }
}
