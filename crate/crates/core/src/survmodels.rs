//! Parametric survival laws: exponential, Weibull and Gompertz.
//!
//! Parameterisations (all rates per unit time, time units are arbitrary):
//!
//! | family      | hazard            | survivor                        |
//! |-------------|-------------------|---------------------------------|
//! | exponential | `λ`               | `exp(-λ t)`                     |
//! | Weibull     | `k λ t^(k-1)`     | `exp(-λ t^k)`                   |
//! | Gompertz    | `θ exp(α t)`      | `exp((θ/α) (1 - exp(α t)))`     |
//!
//! Within a [`ModelPair`] both arms share family and shape, so the hazard
//! ratio is the ratio of scales and does not depend on time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `|α t|` the Gompertz cumulative hazard switches to a
/// second-order series.
const GOMPERTZ_SERIES_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    Gompertz,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Exponential, Family::Weibull, Family::Gompertz];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Gompertz => "gompertz",
        }
    }

    pub fn has_shape(self) -> bool {
        !matches!(self, Family::Exponential)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" => Ok(Family::Exponential),
            "weibull" => Ok(Family::Weibull),
            "gompertz" => Ok(Family::Gompertz),
            other => Err(Error::invalid("family", format!("unknown family `{other}`"))),
        }
    }
}

/// A validated parametric survival law.
///
/// `scale` is `λ` (exponential, Weibull) or `θ` (Gompertz); `shape` is `k`
/// (Weibull) or `α` (Gompertz) and is fixed at 1 for the exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalModel {
    family: Family,
    scale: f64,
    shape: f64,
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

impl SurvivalModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        check_positive("rate", rate)?;
        Ok(Self { family: Family::Exponential, scale: rate, shape: 1.0 })
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        check_positive("scale", scale)?;
        check_positive("shape", shape)?;
        Ok(Self { family: Family::Weibull, scale, shape })
    }

    pub fn gompertz(scale: f64, shape: f64) -> Result<Self> {
        check_positive("scale", scale)?;
        check_positive("shape", shape)?;
        Ok(Self { family: Family::Gompertz, scale, shape })
    }

    /// Builds a model of `family`; `shape` is ignored for the exponential.
    pub fn new(family: Family, scale: f64, shape: f64) -> Result<Self> {
        match family {
            Family::Exponential => Self::exponential(scale),
            Family::Weibull => Self::weibull(scale, shape),
            Family::Gompertz => Self::gompertz(scale, shape),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Shape parameter, `None` for the exponential.
    pub fn shape(&self) -> Option<f64> {
        self.family.has_shape().then_some(self.shape)
    }

    /// Same family and shape with a different scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        check_positive("scale", scale)?;
        Ok(Self { scale, ..*self })
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("hazard requires t >= 0, got {t}")));
        }
        Ok(match self.family {
            Family::Exponential => self.scale,
            Family::Weibull => {
                if t == 0.0 && self.shape < 1.0 {
                    return Err(Error::Domain("Weibull hazard with shape < 1 diverges at t = 0".into()));
                }
                if self.shape == 1.0 {
                    self.scale
                } else {
                    self.shape * self.scale * t.powf(self.shape - 1.0)
                }
            }
            Family::Gompertz => self.scale * (self.shape * t).exp(),
        })
    }

    /// Integrated hazard `H(t) = -ln S(t)`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "cumulative hazard needs t >= 0");
        match self.family {
            Family::Exponential => self.scale * t,
            Family::Weibull => {
                if self.shape == 1.0 {
                    self.scale * t
                } else {
                    self.scale * t.powf(self.shape)
                }
            }
            Family::Gompertz => self.scale * gompertz_growth(self.shape, t),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// `hazard(t) * survival(t)`. For Weibull with `k < 1` this is `+inf` at
    /// `t = 0`, which is integrable.
    pub fn density(&self, t: f64) -> f64 {
        let h = match self.family {
            Family::Weibull if t == 0.0 && self.shape < 1.0 => return f64::INFINITY,
            _ => self.hazard(t).unwrap_or(f64::NAN),
        };
        h * self.survival(t)
    }

    /// Time `t` with `survival(t) = 1 - p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile requires 0 < p < 1, got {p}")));
        }
        // -ln(1 - p), accurate for small p
        let target = -(-p).ln_1p();
        Ok(self.time_at_cumulative_hazard(target))
    }

    /// Inverse of [`cumulative_hazard`](Self::cumulative_hazard).
    pub(crate) fn time_at_cumulative_hazard(&self, h: f64) -> f64 {
        match self.family {
            Family::Exponential => h / self.scale,
            Family::Weibull => {
                if self.shape == 1.0 {
                    h / self.scale
                } else {
                    (h / self.scale).powf(1.0 / self.shape)
                }
            }
            Family::Gompertz => (self.shape * h / self.scale).ln_1p() / self.shape,
        }
    }

    /// Inverse-transform draw: the event time whose CDF equals `u`.
    pub fn sample_event_time(&self, u: f64) -> Result<f64> {
        self.quantile(u)
    }

    pub fn median(&self) -> f64 {
        self.time_at_cumulative_hazard(std::f64::consts::LN_2)
    }
}

/// `(exp(α t) - 1) / α`, the Gompertz cumulative hazard per unit scale.
pub(crate) fn gompertz_growth(alpha: f64, t: f64) -> f64 {
    let x = alpha * t;
    if x.abs() < GOMPERTZ_SERIES_CUTOFF {
        t * (1.0 + 0.5 * x)
    } else {
        x.exp_m1() / alpha
    }
}

/// Scale `λ` of an exponential or Weibull law with the given median, from
/// `S(median) = 0.5 = exp(-λ median^k)`.
pub fn rate_from_median(family: Family, shape: f64, median: f64) -> Result<f64> {
    check_positive("median", median)?;
    let shape = match family {
        Family::Exponential => 1.0,
        Family::Weibull => {
            check_positive("shape", shape)?;
            shape
        }
        Family::Gompertz => {
            return Err(Error::invalid("family", "median conversion is defined for exponential and Weibull laws"))
        }
    };
    Ok(std::f64::consts::LN_2 / median.powf(shape))
}

/// Control and experimental laws sharing family and shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPair {
    control: SurvivalModel,
    experimental: SurvivalModel,
}

impl ModelPair {
    pub fn new(control: SurvivalModel, experimental: SurvivalModel) -> Result<Self> {
        if control.family != experimental.family {
            return Err(Error::invalid(
                "model pair",
                format!("arms must share a family ({} vs {})", control.family, experimental.family),
            ));
        }
        if control.shape != experimental.shape {
            return Err(Error::invalid(
                "model pair",
                format!("arms must share the shape parameter ({} vs {})", control.shape, experimental.shape),
            ));
        }
        Ok(Self { control, experimental })
    }

    /// Experimental arm = control with scale multiplied by `hazard_ratio`.
    pub fn from_control(control: SurvivalModel, hazard_ratio: f64) -> Result<Self> {
        check_positive("hazard ratio", hazard_ratio)?;
        let experimental = control.with_scale(control.scale * hazard_ratio)?;
        Ok(Self { control, experimental })
    }

    pub fn control(&self) -> &SurvivalModel {
        &self.control
    }

    pub fn experimental(&self) -> &SurvivalModel {
        &self.experimental
    }

    /// Arm 0 is control, arm 1 experimental.
    pub fn arm(&self, arm: u8) -> &SurvivalModel {
        if arm == 0 {
            &self.control
        } else {
            &self.experimental
        }
    }

    pub fn family(&self) -> Family {
        self.control.family
    }

    pub fn hazard_ratio(&self) -> f64 {
        self.experimental.scale / self.control.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn construction_rejects_nonpositive() {
        assert!(SurvivalModel::exponential(0.0).is_err());
        assert!(SurvivalModel::weibull(0.3, -1.0).is_err());
        assert!(SurvivalModel::gompertz(f64::NAN, 0.5).is_err());
        assert!(SurvivalModel::gompertz(0.3, 0.0).is_err());
    }

    #[test]
    fn hazard_examples() {
        let m = SurvivalModel::exponential(0.139).unwrap();
        assert_eq!(m.hazard(7.0).unwrap(), 0.139);
        let w = SurvivalModel::weibull(0.2, 1.0).unwrap();
        assert_eq!(w.hazard(3.0).unwrap(), 0.2);
        let g = SurvivalModel::gompertz(0.3, 0.5).unwrap();
        assert_eq!(g.hazard(0.0).unwrap(), 0.3);
    }

    #[test]
    fn weibull_hazard_at_zero_with_small_shape_is_domain_error() {
        let w = SurvivalModel::weibull(0.31, 0.5).unwrap();
        assert!(matches!(w.hazard(0.0), Err(Error::Domain(_))));
        assert!(w.hazard(1e-9).unwrap().is_finite());
        assert!(w.hazard(-1.0).is_err());
    }

    #[test]
    fn weibull_median_from_rounded_rate() {
        let w = SurvivalModel::weibull(0.310, 0.5).unwrap();
        // 0.310 is ln2/sqrt(5) rounded to three places
        assert_relative_eq!(w.survival(5.0), 0.5, epsilon = 2e-4);
        assert_relative_eq!(w.quantile(0.5).unwrap(), 5.0, epsilon = 5e-3);
        let exact = SurvivalModel::weibull(rate_from_median(Family::Weibull, 0.5, 5.0).unwrap(), 0.5).unwrap();
        assert_relative_eq!(exact.survival(5.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn survival_at_zero_is_one() {
        for m in [
            SurvivalModel::exponential(2.0).unwrap(),
            SurvivalModel::weibull(0.5, 0.7).unwrap(),
            SurvivalModel::gompertz(0.1, 1.5).unwrap(),
        ] {
            assert_eq!(m.survival(0.0), 1.0);
        }
    }

    #[test]
    fn gompertz_small_shape_limit() {
        let g = SurvivalModel::gompertz(0.1, 1e-6).unwrap();
        let closed = (-0.1f64 * 10.0).exp();
        assert_relative_eq!(g.survival(10.0), closed, max_relative = 1e-5);
        // series branch
        assert_relative_eq!(gompertz_growth(1e-12, 3.0), 3.0, max_relative = 1e-11);
    }

    #[test]
    fn density_examples() {
        let m = SurvivalModel::exponential(1.0).unwrap();
        assert_eq!(m.density(0.0), 1.0);
        let w = SurvivalModel::weibull(0.4, 1.0).unwrap();
        for t in [0.0, 0.3, 2.0, 9.5] {
            assert_relative_eq!(w.density(t), 0.4 * (-0.4 * t).exp(), max_relative = 1e-15);
        }
        assert!(SurvivalModel::weibull(0.4, 0.5).unwrap().density(0.0).is_infinite());
    }

    #[test]
    fn quantile_examples() {
        let m = SurvivalModel::exponential(0.139).unwrap();
        assert_relative_eq!(m.quantile(0.5).unwrap(), std::f64::consts::LN_2 / 0.139, max_relative = 1e-15);
        assert_relative_eq!(m.quantile(0.5).unwrap(), 4.987, epsilon = 1e-3);
        assert!(m.quantile(0.0).is_err());
        assert!(m.quantile(1.0).is_err());
        let e = SurvivalModel::exponential(std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(e.sample_event_time(0.5).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn weibull_unit_shape_sampling_matches_exponential() {
        let w = SurvivalModel::weibull(0.7, 1.0).unwrap();
        let e = SurvivalModel::exponential(0.7).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            assert_eq!(w.sample_event_time(u).unwrap(), e.sample_event_time(u).unwrap());
        }
    }

    #[test]
    fn rate_from_median_examples() {
        assert_relative_eq!(rate_from_median(Family::Exponential, 1.0, 13.0).unwrap(), 0.0533, epsilon = 1e-4);
        assert_relative_eq!(rate_from_median(Family::Weibull, 0.5, 5.0).unwrap(), 0.310, epsilon = 1e-3);
        assert_relative_eq!(
            rate_from_median(Family::Exponential, 1.0, std::f64::consts::LN_2).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(rate_from_median(Family::Weibull, 0.5, 0.0).is_err());
        assert!(rate_from_median(Family::Weibull, -0.5, 5.0).is_err());
        assert!(rate_from_median(Family::Gompertz, 0.5, 5.0).is_err());
    }

    #[test]
    fn pair_requires_shared_family_and_shape() {
        let a = SurvivalModel::weibull(0.3, 0.5).unwrap();
        let b = SurvivalModel::weibull(0.45, 0.7).unwrap();
        let c = SurvivalModel::gompertz(0.45, 0.5).unwrap();
        assert!(ModelPair::new(a, b).is_err());
        assert!(ModelPair::new(a, c).is_err());
        let p = ModelPair::from_control(a, 1.5).unwrap();
        assert_relative_eq!(p.hazard_ratio(), 1.5, max_relative = 1e-15);
        assert_eq!(p.experimental().shape(), Some(0.5));
    }
}
