//! Probability that an enrolled subject contributes an observed event.
//!
//! A subject enters at `r` (drawn from the accrual density `g` on `[0, R]`),
//! has event time `T0` and independent exponential loss to follow-up with
//! hazard `ϕ`, and is administratively censored at `Tf + R - r`. Swapping
//! the order of integration in `E = ∫ g(r) ∫_0^{Tf+R-r} f(u) e^{-ϕu} du dr`
//! gives the single integral
//!
//! ```text
//! E = ∫_0^Tf f(u) e^{-ϕu} du + ∫_Tf^{Tf+R} f(u) e^{-ϕu} G(Tf + R - u) du
//! ```
//!
//! where `G` is the accrual CDF (`G(s) = s / R` for uniform entry).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate_with_breakpoints, QuadratureSettings};
use crate::survmodels::{Family, SurvivalModel};

/// `-ln(1e-12)`: cumulative hazard beyond which survivor mass is ignored.
const TAIL_CUMULATIVE_HAZARD: f64 = 27.631_021_115_928_547;

/// Distribution of entry times over the accrual window `[0, R]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccrualSpec {
    #[default]
    Uniform,
    /// Density `γ e^{-γ u} / (1 - e^{-γ R})`; `γ > 0` front-loads entry,
    /// `γ < 0` back-loads it.
    TruncatedExponential { rate: f64 },
    /// Relative entry intensity at equally spaced points spanning `[0, R]`,
    /// linearly interpolated and normalised to a density.
    Tabulated { points: Vec<f64> },
}

impl AccrualSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AccrualSpec::Uniform => Ok(()),
            AccrualSpec::TruncatedExponential { rate } => {
                if !rate.is_finite() || *rate == 0.0 {
                    Err(Error::invalid("accrual rate", format!("must be finite and non-zero, got {rate}")))
                } else {
                    Ok(())
                }
            }
            AccrualSpec::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(Error::invalid("accrual points", "need at least two points"));
                }
                if points.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::invalid("accrual points", "values must be finite and >= 0"));
                }
                if tabulated_area(points) <= 0.0 {
                    return Err(Error::invalid("accrual points", "intensity is identically zero"));
                }
                Ok(())
            }
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, AccrualSpec::Uniform)
    }

    /// Entry-time density at `u ∈ [0, R]`.
    pub fn density(&self, u: f64, accrual: f64) -> f64 {
        if !(0.0..=accrual).contains(&u) {
            return 0.0;
        }
        match self {
            AccrualSpec::Uniform => 1.0 / accrual,
            AccrualSpec::TruncatedExponential { rate } => rate * (-rate * u).exp() / -(-rate * accrual).exp_m1(),
            AccrualSpec::Tabulated { points } => {
                let x = u / accrual;
                let step = 1.0 / (points.len() - 1) as f64;
                let j = ((x / step) as usize).min(points.len() - 2);
                let tau = (x - j as f64 * step) / step;
                let v = points[j] + tau * (points[j + 1] - points[j]);
                v / (tabulated_area(points) * accrual)
            }
        }
    }

    /// `P(entry <= s)`.
    pub fn cdf(&self, s: f64, accrual: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= accrual {
            return 1.0;
        }
        match self {
            AccrualSpec::Uniform => s / accrual,
            AccrualSpec::TruncatedExponential { rate } => (-rate * s).exp_m1() / (-rate * accrual).exp_m1(),
            AccrualSpec::Tabulated { points } => {
                let x = s / accrual;
                let step = 1.0 / (points.len() - 1) as f64;
                let j = ((x / step) as usize).min(points.len() - 2);
                let tau = (x - j as f64 * step) / step;
                let mut area = 0.0;
                for w in points[..=j].windows(2) {
                    area += 0.5 * step * (w[0] + w[1]);
                }
                let (v0, v1) = (points[j], points[j + 1]);
                area += step * (v0 * tau + 0.5 * (v1 - v0) * tau * tau);
                (area / tabulated_area(points)).min(1.0)
            }
        }
    }

    /// Entry time for a uniform draw `u ∈ (0, 1)` by inverting the CDF.
    pub fn sample_entry(&self, u: f64, accrual: f64) -> f64 {
        match self {
            AccrualSpec::Uniform => u * accrual,
            AccrualSpec::TruncatedExponential { rate } => -(u * (-rate * accrual).exp_m1()).ln_1p() / rate,
            AccrualSpec::Tabulated { points } => {
                let step = 1.0 / (points.len() - 1) as f64;
                let mut remaining = u * tabulated_area(points);
                for (j, w) in points.windows(2).enumerate() {
                    let seg = 0.5 * step * (w[0] + w[1]);
                    if remaining <= seg || j == points.len() - 2 {
                        // step * (v0 τ + (v1 - v0) τ² / 2) = remaining
                        let a = 0.5 * step * (w[1] - w[0]);
                        let b = step * w[0];
                        let c = remaining.min(seg);
                        let disc = (b * b + 4.0 * a * c).max(0.0);
                        let denom = b + disc.sqrt();
                        let tau = if denom > 0.0 { (2.0 * c / denom).clamp(0.0, 1.0) } else { 0.0 };
                        return ((j as f64 + tau) * step * accrual).min(accrual);
                    }
                    remaining -= seg;
                }
                accrual
            }
        }
    }
}

fn tabulated_area(points: &[f64]) -> f64 {
    let step = 1.0 / (points.len() - 1) as f64;
    points.windows(2).map(|w| 0.5 * step * (w[0] + w[1])).sum()
}

/// Follow-up duration `Tf` after accrual closes, and accrual duration `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowupWindow {
    pub followup: f64,
    pub accrual: f64,
}

impl FollowupWindow {
    pub fn new(followup: f64, accrual: f64) -> Result<Self> {
        let w = Self { followup, accrual };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.followup >= 0.0) || !self.followup.is_finite() {
            return Err(Error::invalid("followup", format!("must be finite and >= 0, got {}", self.followup)));
        }
        if !(self.accrual > 0.0) || !self.accrual.is_finite() {
            return Err(Error::invalid("accrual", format!("must be finite and > 0, got {}", self.accrual)));
        }
        Ok(())
    }

    /// Calendar length of the study, `Tf + R`.
    pub fn total(&self) -> f64 {
        self.followup + self.accrual
    }
}

fn check_censor(phi: f64) -> Result<()> {
    if phi.is_finite() && phi >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("censor hazard", format!("must be finite and >= 0, got {phi}")))
    }
}

/// Time beyond which the model's survivor function is below `1e-12`.
fn tail_time(m: &SurvivalModel) -> f64 {
    m.time_at_cumulative_hazard(TAIL_CUMULATIVE_HAZARD)
}

/// Split points that put quadrature panels where the integrand has mass.
fn breakpoints(m: &SurvivalModel, phi: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = [1e-6, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95, 0.999]
        .iter()
        .map(|&p| m.quantile(p).expect("p is in (0,1)"))
        .collect();
    if phi > 0.0 {
        pts.extend([1.0 / phi, 5.0 / phi, 30.0 / phi]);
    }
    pts
}

/// `E` under the default quadrature settings.
pub fn prob_event(m: &SurvivalModel, phi: f64, window: &FollowupWindow, accrual: &AccrualSpec) -> Result<f64> {
    prob_event_with(m, phi, window, accrual, &QuadratureSettings::default())
}

/// Exponential survival, uniform entry: closed form.
fn prob_event_exponential_uniform(rate: f64, phi: f64, window: &FollowupWindow) -> f64 {
    let s = rate + phi;
    let (tf, r) = (window.followup, window.accrual);
    // e^{-Tf s} - e^{-(Tf+R) s} = e^{-Tf s} (1 - e^{-R s})
    let tail = (-tf * s).exp() * -(-r * s).exp_m1();
    rate / s * (1.0 - tail / (r * s))
}

pub fn prob_event_with(
    m: &SurvivalModel,
    phi: f64,
    window: &FollowupWindow,
    accrual: &AccrualSpec,
    settings: &QuadratureSettings,
) -> Result<f64> {
    check_censor(phi)?;
    window.validate()?;
    accrual.validate()?;
    if m.family() == Family::Exponential && accrual.is_uniform() {
        return Ok(prob_event_exponential_uniform(m.scale(), phi, window));
    }

    let (tf, r) = (window.followup, window.accrual);
    let end = tail_time(m);
    let pts = breakpoints(m, phi);
    let kernel = |u: f64| m.density(u) * (-phi * u).exp();

    let early = integrate_with_breakpoints(kernel, 0.0, tf.min(end), &pts, settings)?.value;
    let late = if tf < end {
        integrate_with_breakpoints(|u| kernel(u) * accrual.cdf(tf + r - u, r), tf, (tf + r).min(end), &pts, settings)?
            .value
    } else {
        0.0
    };
    Ok((early + late).clamp(0.0, 1.0))
}

/// `E` with zero follow-up: every subject is observed only until accrual closes.
pub fn prob_event_at_accrual_end(
    m: &SurvivalModel,
    phi: f64,
    accrual_duration: f64,
    accrual: &AccrualSpec,
) -> Result<f64> {
    prob_event(m, phi, &FollowupWindow::new(0.0, accrual_duration)?, accrual)
}

/// Limit of `E` as follow-up grows without bound: `P(T0 < C)`.
pub fn prob_event_asymptotic(m: &SurvivalModel, phi: f64) -> Result<f64> {
    check_censor(phi)?;
    if phi == 0.0 {
        return Ok(1.0);
    }
    if m.family() == Family::Exponential {
        return Ok(m.scale() / (m.scale() + phi));
    }
    let r = integrate_with_breakpoints(
        |u| m.density(u) * (-phi * u).exp(),
        0.0,
        tail_time(m),
        &breakpoints(m, phi),
        &QuadratureSettings::default(),
    )?;
    Ok(r.value.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate;
    use approx::assert_relative_eq;

    fn window(tf: f64, r: f64) -> FollowupWindow {
        FollowupWindow::new(tf, r).unwrap()
    }

    #[test]
    fn exponential_reference_design() {
        let m = SurvivalModel::exponential(0.139).unwrap();
        let e = prob_event(&m, 0.0, &window(24.0, 22.0), &AccrualSpec::Uniform).unwrap();
        assert!((e - 0.98892).abs() < 1e-5, "{e}");
    }

    #[test]
    fn accrual_end_value() {
        // 1 - (1 - e^{-λR}) / (λR) at λ = 0.139, R = 22
        let m = SurvivalModel::exponential(0.139).unwrap();
        let lr: f64 = 0.139 * 22.0;
        let expected = 1.0 - (1.0 - (-lr).exp()) / lr;
        let e0 = prob_event_at_accrual_end(&m, 0.0, 22.0, &AccrualSpec::Uniform).unwrap();
        assert_relative_eq!(e0, expected, max_relative = 1e-14);
        assert!((e0 - 0.68835).abs() < 1e-4);
        assert_eq!(e0, prob_event(&m, 0.0, &window(0.0, 22.0), &AccrualSpec::Uniform).unwrap());
        assert!(e0 < prob_event(&m, 0.0, &window(0.5, 22.0), &AccrualSpec::Uniform).unwrap());
    }

    #[test]
    fn weibull_unit_shape_matches_closed_form() {
        for (lam, phi, tf, r) in
            [(0.139, 0.0, 24.0, 22.0), (0.5, 0.2, 6.0, 2.0), (0.05, 0.05, 156.0, 48.0), (2.0, 1.0, 0.0, 1.0)]
        {
            let w = SurvivalModel::weibull(lam, 1.0).unwrap();
            let e = SurvivalModel::exponential(lam).unwrap();
            let win = window(tf, r);
            let a = prob_event(&w, phi, &win, &AccrualSpec::Uniform).unwrap();
            let b = prob_event(&e, phi, &win, &AccrualSpec::Uniform).unwrap();
            assert!((a - b).abs() < 1e-8, "{lam} {phi}: {a} vs {b}");
        }
    }

    #[test]
    fn gompertz_small_shape_matches_exponential() {
        let g = SurvivalModel::gompertz(0.139, 1e-6).unwrap();
        let e = SurvivalModel::exponential(0.139).unwrap();
        let win = window(24.0, 22.0);
        let a = prob_event(&g, 0.05, &win, &AccrualSpec::Uniform).unwrap();
        let b = prob_event(&e, 0.05, &win, &AccrualSpec::Uniform).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-4);
    }

    #[test]
    fn asymptotic_closed_forms() {
        let m = SurvivalModel::weibull(0.5, 0.7).unwrap();
        assert_eq!(prob_event_asymptotic(&m, 0.0).unwrap(), 1.0);
        let e = SurvivalModel::exponential(0.3).unwrap();
        assert_relative_eq!(prob_event_asymptotic(&e, 0.2).unwrap(), 0.3 / 0.5, max_relative = 1e-15);
        let w1 = SurvivalModel::weibull(0.3, 1.0).unwrap();
        assert_relative_eq!(prob_event_asymptotic(&w1, 0.2).unwrap(), 0.6, max_relative = 1e-9);
    }

    #[test]
    fn accrual_densities_integrate_to_one() {
        let r = 7.5;
        for a in [
            AccrualSpec::Uniform,
            AccrualSpec::TruncatedExponential { rate: 0.4 },
            AccrualSpec::TruncatedExponential { rate: -0.3 },
            AccrualSpec::Tabulated { points: vec![0.2, 1.0, 3.0, 0.5, 0.0] },
        ] {
            a.validate().unwrap();
            let total = integrate(|u| a.density(u, r), 0.0, r, &QuadratureSettings::default()).unwrap();
            assert!((total.value - 1.0).abs() < 1e-8, "{a:?}: {}", total.value);
            for s in [0.3, 2.0, 5.1, 7.4] {
                let by_quad = integrate(|u| a.density(u, r), 0.0, s, &QuadratureSettings::default()).unwrap().value;
                assert!((a.cdf(s, r) - by_quad).abs() < 1e-9, "{a:?} cdf({s})");
                let u = a.cdf(s, r);
                assert!((a.sample_entry(u, r) - s).abs() < 1e-9, "{a:?} inverse at {s}");
            }
        }
    }

    #[test]
    fn invalid_accrual_rejected() {
        assert!(AccrualSpec::TruncatedExponential { rate: 0.0 }.validate().is_err());
        assert!(AccrualSpec::Tabulated { points: vec![1.0] }.validate().is_err());
        assert!(AccrualSpec::Tabulated { points: vec![0.0, 0.0] }.validate().is_err());
        assert!(AccrualSpec::Tabulated { points: vec![1.0, -1.0, 1.0] }.validate().is_err());
        let m = SurvivalModel::weibull(0.3, 0.7).unwrap();
        let bad = AccrualSpec::Tabulated { points: vec![1.0, -2.0] };
        assert!(prob_event(&m, 0.0, &window(2.0, 1.0), &bad).is_err());
        assert!(prob_event(&m, -0.1, &window(2.0, 1.0), &AccrualSpec::Uniform).is_err());
        assert!(FollowupWindow::new(-1.0, 2.0).is_err());
        assert!(FollowupWindow::new(1.0, 0.0).is_err());
    }

    #[test]
    fn uniform_tabulated_equals_uniform() {
        let m = SurvivalModel::gompertz(0.3, 0.7).unwrap();
        let win = window(2.0, 1.0);
        let a = prob_event(&m, 0.2, &win, &AccrualSpec::Uniform).unwrap();
        let b = prob_event(&m, 0.2, &win, &AccrualSpec::Tabulated { points: vec![1.0, 1.0, 1.0] }).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-9);
    }

    #[test]
    fn front_loaded_accrual_raises_events() {
        let m = SurvivalModel::weibull(0.31, 0.5).unwrap();
        let win = window(6.0, 10.0);
        let uni = prob_event(&m, 0.0, &win, &AccrualSpec::Uniform).unwrap();
        let early = prob_event(&m, 0.0, &win, &AccrualSpec::TruncatedExponential { rate: 0.5 }).unwrap();
        let late = prob_event(&m, 0.0, &win, &AccrualSpec::TruncatedExponential { rate: -0.5 }).unwrap();
        assert!(early > uni && uni > late);
    }

    #[test]
    fn huge_followup_still_sees_mass() {
        let m = SurvivalModel::weibull(0.31, 0.5).unwrap();
        let e = prob_event(&m, 0.2, &window(1e9, 22.0), &AccrualSpec::Uniform).unwrap();
        assert_relative_eq!(e, prob_event_asymptotic(&m, 0.2).unwrap(), max_relative = 1e-8);
    }
}
