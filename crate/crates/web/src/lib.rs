//! Browser front end. Each export takes plain numbers and returns a JSON
//! string that `www/index.html` renders.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ergolab_core::grid::Grid1D;
use ergolab_core::models::{CauchyParams, Diffusion1D, Observable, Polynomial};
use ergolab_core::rates::{lyapunov_check, xi_envelope, Phi, WpiSpec};
use ergolab_core::semigroup::{beta_curve, variance_from_beta, PdeConfig};

#[derive(Debug, Serialize)]
pub struct XiCurve {
    pub times: Vec<f64>,
    pub xi: Vec<f64>,
    /// `2 ξ(t)^{1/2}`.
    pub bound: Vec<f64>,
    pub slope: Option<f64>,
}

/// `ξ(t)` for `β(s) = d s^{-q}` on `n` log-spaced times.
pub fn xi_curve(d: f64, q: f64, t_min: f64, t_max: f64, n: usize) -> Result<XiCurve, String> {
    if !(t_min > 0.0 && t_max > t_min && n >= 2) {
        return Err("need 0 < t_min < t_max and n >= 2".into());
    }
    let r = (t_max / t_min).ln();
    let times: Vec<f64> = (0..n).map(|k| t_min * (r * k as f64 / (n - 1) as f64).exp()).collect();
    let env = xi_envelope(&WpiSpec::power(d, q), &times).map_err(|e| e.to_string())?;
    Ok(XiCurve {
        bound: env.values.iter().map(|x| 2.0 * x.sqrt()).collect(),
        slope: env.loglog_slope(t_min, t_max),
        times: env.times,
        xi: env.values,
    })
}

#[derive(Debug, Serialize)]
pub struct OuVariance {
    pub t: f64,
    pub pde: f64,
    pub exact: f64,
    pub rel_error: f64,
}

/// `Var_μ(∫_0^t X_s ds)` for OU from the semigroup, against `2(t - 1 + e^{-t})`.
pub fn ou_variance(t: f64, nodes: usize) -> Result<OuVariance, String> {
    if !(t > 0.0 && t <= 200.0) {
        return Err("t must lie in (0, 200]".into());
    }
    let ou = Diffusion1D::ou();
    let cfg = PdeConfig::for_model(&ou, nodes).map_err(|e| e.to_string())?;
    let curve = beta_curve(&ou, &Observable::coordinate(0), &[0.5 * t], &cfg).map_err(|e| e.to_string())?;
    let pde = variance_from_beta(&curve, t);
    let exact = 2.0 * (t - 1.0 + (-t).exp());
    Ok(OuVariance {
        t,
        pde,
        exact,
        rel_error: (pde / exact - 1.0).abs(),
    })
}

#[derive(Debug, Serialize)]
pub struct DriftCheck {
    pub holds: bool,
    pub r: f64,
    pub kappa: f64,
    pub margin: f64,
}

/// `L(1 + x²) ≤ -c + κ 1_{[-R, R]}` for the Cauchy model.
pub fn cauchy_drift(alpha: f64, beta: f64, c: f64) -> Result<DriftCheck, String> {
    let params = CauchyParams::new(alpha, beta).map_err(|e| e.to_string())?;
    let model = Diffusion1D::cauchy(params);
    let grid = Grid1D::symmetric(50.0, 4001).map_err(|e| e.to_string())?;
    let v = Polynomial::new(vec![1.0, 0.0, 1.0]);
    let candidates: Vec<f64> = (1..=160).map(|k| 0.25 * k as f64).collect();
    let r = lyapunov_check(&model, &v, "1 + x^2", &Phi::Constant { c }, &grid, &candidates)
        .map_err(|e| e.to_string())?;
    Ok(DriftCheck {
        holds: r.holds,
        r: r.r,
        kappa: r.kappa,
        margin: r.margin,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = xiCurve)]
pub fn xi_curve_js(d: f64, q: f64, t_min: f64, t_max: f64, n: usize) -> Result<String, JsValue> {
    to_js(xi_curve(d, q, t_min, t_max, n))
}

#[wasm_bindgen(js_name = ouVariance)]
pub fn ou_variance_js(t: f64, nodes: usize) -> Result<String, JsValue> {
    to_js(ou_variance(t, nodes))
}

#[wasm_bindgen(js_name = cauchyDrift)]
pub fn cauchy_drift_js(alpha: f64, beta: f64, c: f64) -> Result<String, JsValue> {
    to_js(cauchy_drift(alpha, beta, c))
}
