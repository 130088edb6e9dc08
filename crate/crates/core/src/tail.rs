//! Tail models for integrals `∫_0^∞ h(s) ds` known only up to a finite
//! horizon.
//!
//! The final decade of the sampled integrand is fitted by a power law
//! (`log h` against `log s`) and by an exponential with a power prefactor
//! (`log h` against `s` and `log s`). The exponential wins when it fits
//! better and its factor falls by more than `e^2` across the window. Power
//! laws whose exponent sits near the critical value 1 are refitted as
//! `C s^{-1} log^{-γ}(s)`, because at desk scale a slowly varying factor
//! is indistinguishable from a small change of exponent.

use serde::{Deserialize, Serialize};

use crate::stats::{linear_fit, linear_fit2};

/// Half-width of the band of power exponents treated as critical.
pub const CRITICAL_BAND: f64 = 0.35;

/// Margin by which a fitted log-exponent must exceed 1 for the tail to be
/// declared integrable. One decade of data cannot resolve the log-power of a
/// slowly varying factor better than this.
pub const LOG_POWER_MARGIN: f64 = 0.25;

/// Root-mean-square log residual above which a fit is not trusted (20%).
pub const MAX_FIT_RESIDUAL: f64 = 0.182_321_556_793_954_6; // ln(1.2)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailModel {
    /// The integrand vanishes identically on the final decade.
    Zero,
    /// `h(s) ≈ C s^{-exponent}`.
    Power { exponent: f64 },
    /// `h(s) ≈ C s^prefactor_power exp(-rate s)`.
    Exponential { rate: f64, prefactor_power: f64 },
    /// `h(s) ≈ C s^{-1} log^{-log_power}(s)`.
    CriticalLog { log_power: f64 },
}

impl TailModel {
    pub fn describe(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Power { exponent } => format!("power s^-{exponent:.4}"),
            Self::Exponential { rate, prefactor_power } => {
                format!("exponential s^{prefactor_power:.3} exp(-{rate:.4} s)")
            }
            Self::CriticalLog { log_power } => format!("critical s^-1 log^-{log_power:.4}(s)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub model: TailModel,
    /// RMS residual of the chosen fit, in log units.
    pub residual: f64,
    /// `∫_{s_max}^∞ h`, infinite when the model is not integrable.
    pub tail_integral: f64,
    pub integrable: bool,
}

impl TailFit {
    pub fn trusted(&self) -> bool {
        self.residual <= MAX_FIT_RESIDUAL
    }
}

fn interp(times: &[f64], values: &[f64], s: f64) -> f64 {
    let k = times.partition_point(|t| *t < s);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let th = if t1 > t0 { (s - t0) / (t1 - t0) } else { 0.0 };
    (1.0 - th) * values[k - 1] + th * values[k]
}

/// Fits the tail of `h` sampled at increasing `times`. Returns `None` when
/// the final decade is not available or the integrand changes sign there.
pub fn fit_tail(times: &[f64], values: &[f64]) -> Option<TailFit> {
    let s_max = *times.last()?;
    let s_min = s_max / 10.0;
    if !(s_max > 0.0) || times.first().is_none_or(|t| *t > s_min) {
        return None;
    }
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    const N: usize = 41;
    let ss: Vec<f64> = (0..N)
        .map(|k| s_min * 10f64.powf(k as f64 / (N - 1) as f64))
        .collect();
    let hs: Vec<f64> = ss.iter().map(|s| interp(times, values, *s)).collect();
    let window_max = hs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || window_max <= 1e-14 * scale {
        return Some(TailFit {
            model: TailModel::Zero,
            residual: 0.0,
            tail_integral: 0.0,
            integrable: true,
        });
    }
    if hs.iter().any(|h| *h <= 0.0) {
        return None;
    }
    let h_end = hs[N - 1];
    let log_h: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let log_s: Vec<f64> = ss.iter().map(|s| s.ln()).collect();
    let (_, slope_p, res_p) = linear_fit(&log_s, &log_h);
    let (_, a_e, slope_e, res_e) = linear_fit2(&log_s, &ss, &log_h);
    let rate = -slope_e;

    let fit = if res_e < res_p && rate * (s_max - s_min) > 2.0 {
        // effective decay rate at the end of the window
        let local = rate - a_e / s_max;
        let integrable = local > 0.0;
        TailFit {
            model: TailModel::Exponential {
                rate,
                prefactor_power: a_e,
            },
            residual: res_e,
            tail_integral: if integrable { h_end / local } else { f64::INFINITY },
            integrable,
        }
    } else {
        let exponent = -slope_p;
        if (exponent - 1.0).abs() < CRITICAL_BAND && s_min > std::f64::consts::E {
            let log_log_s: Vec<f64> = ss.iter().map(|s| s.ln().ln()).collect();
            let log_sh: Vec<f64> = log_h.iter().zip(&log_s).map(|(lh, ls)| lh + ls).collect();
            let (_, slope_l, res_l) = linear_fit(&log_log_s, &log_sh);
            let log_power = -slope_l;
            let integrable = log_power > 1.0 + LOG_POWER_MARGIN;
            TailFit {
                model: TailModel::CriticalLog { log_power },
                residual: res_l,
                tail_integral: if integrable {
                    h_end * s_max * s_max.ln() / (log_power - 1.0)
                } else {
                    f64::INFINITY
                },
                integrable,
            }
        } else {
            let integrable = exponent > 1.0;
            TailFit {
                model: TailModel::Power { exponent },
                residual: res_p,
                tail_integral: if integrable {
                    h_end * s_max / (exponent - 1.0)
                } else {
                    f64::INFINITY
                },
                integrable,
            }
        }
    };
    Some(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> f64, s_max: f64) -> (Vec<f64>, Vec<f64>) {
        let ts: Vec<f64> = (0..=2000).map(|k| s_max * k as f64 / 2000.0).collect();
        let vs = ts.iter().map(|t| f(*t)).collect();
        (ts, vs)
    }

    #[test]
    fn exponential_tail() {
        let (t, v) = sample(|s| (-2.0 * s).exp(), 10.0);
        let fit = fit_tail(&t, &v).unwrap();
        match fit.model {
            TailModel::Exponential { rate, .. } => assert!((rate - 2.0).abs() < 1e-3),
            m => panic!("{m:?}"),
        }
        assert!((fit.tail_integral - (-20.0f64).exp() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_with_prefactor() {
        let (t, v) = sample(|s| s * (-s).exp(), 30.0);
        let fit = fit_tail(&t, &v).unwrap();
        match fit.model {
            TailModel::Exponential { rate, prefactor_power } => {
                assert!((rate - 1.0).abs() < 1e-3 && (prefactor_power - 1.0).abs() < 1e-2)
            }
            m => panic!("{m:?}"),
        }
        // ∫_30^∞ s e^{-s} ds = 31 e^{-30}
        let exact = 31.0 * (-30f64).exp();
        assert!((fit.tail_integral / exact - 1.0).abs() < 0.01);
    }

    #[test]
    fn power_tails() {
        let (t, v) = sample(|s| (1.0 + s).powf(-2.5), 1e4);
        let fit = fit_tail(&t, &v).unwrap();
        assert!(matches!(fit.model, TailModel::Power { exponent } if (exponent - 2.5).abs() < 0.01));
        assert!(fit.integrable);
        let (t, v) = sample(|s| (1.0 + s).powf(-0.5), 1e4);
        let fit = fit_tail(&t, &v).unwrap();
        assert!(!fit.integrable && fit.tail_integral.is_infinite());
    }

    #[test]
    fn critical_tails() {
        let f = |g: f64| move |s: f64| if s < 3.0 { 1.0 } else { 1.0 / (s * s.ln().powf(g)) };
        let (t, v) = sample(f(0.0), 1e5);
        let fit = fit_tail(&t, &v).unwrap();
        assert!(matches!(fit.model, TailModel::CriticalLog { log_power } if log_power.abs() < 0.05));
        assert!(!fit.integrable);
        let (t, v) = sample(f(3.0), 1e5);
        let fit = fit_tail(&t, &v).unwrap();
        assert!(matches!(fit.model, TailModel::CriticalLog { log_power } if (log_power - 3.0).abs() < 0.05));
        assert!(fit.integrable);
        let exact = 1.0 / (2.0 * 1e5f64.ln().powi(2));
        assert!((fit.tail_integral / exact - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_and_sign_change() {
        let (t, v) = sample(|_| 0.0, 10.0);
        assert_eq!(fit_tail(&t, &v).unwrap().model, TailModel::Zero);
        let (t, v) = sample(|s| (s).sin(), 100.0);
        assert!(fit_tail(&t, &v).is_none());
    }
}
