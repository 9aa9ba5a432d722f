//! Sample size for balanced two-arm superiority and non-inferiority trials,
//! and the follow-up duration that achieves a given enrolment.
//!
//! Per-group size is `ETS * (1/E0 + 1/E1)` with
//! `ETS = ((z_{1-α/2} + z_{1-β}) / log_effect)^2`, where `log_effect` is
//! `ln Δ1` (superiority) or `ln Δ̃0 - ln Δ̃1` (non-inferiority), and `E_x`
//! is the event probability of arm `x` from [`crate::event_probability`].

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_probability::{prob_event, prob_event_asymptotic, AccrualSpec, FollowupWindow};
use crate::numerics::{find_root, normal_quantile, RootProblem};
use crate::survmodels::{ModelPair, SurvivalModel};

/// Event probabilities at or below this are treated as "no events".
const MIN_EVENT_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hypothesis {
    /// `H0: Δ = 1` against `H1: Δ ≠ 1`, sized at `Δ = alt_hr`.
    Superiority { alt_hr: f64 },
    /// `H0: Δ >= margin` against `H1: Δ < margin`, sized at `Δ = alt_hr`.
    NonInferiority { margin: f64, alt_hr: f64 },
}

impl Hypothesis {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Hypothesis::Superiority { alt_hr } => {
                if !(alt_hr > 0.0) || !alt_hr.is_finite() {
                    return Err(Error::invalid("alt_hr", format!("must be finite and > 0, got {alt_hr}")));
                }
                if alt_hr == 1.0 {
                    return Err(Error::invalid("alt_hr", "superiority alternative must differ from 1"));
                }
            }
            Hypothesis::NonInferiority { margin, alt_hr } => {
                if !(margin > 1.0) || !margin.is_finite() {
                    return Err(Error::invalid("margin", format!("must be finite and > 1, got {margin}")));
                }
                if !(alt_hr > 0.0) {
                    return Err(Error::invalid("alt_hr", format!("must be > 0, got {alt_hr}")));
                }
                if !(alt_hr < margin) {
                    return Err(Error::invalid("alt_hr", format!("must be below the margin {margin}, got {alt_hr}")));
                }
            }
        }
        Ok(())
    }

    /// Hazard ratio the trial is sized to detect.
    pub fn alt_hr(&self) -> f64 {
        match *self {
            Hypothesis::Superiority { alt_hr } | Hypothesis::NonInferiority { alt_hr, .. } => alt_hr,
        }
    }

    /// `None` for superiority.
    pub fn margin(&self) -> Option<f64> {
        match *self {
            Hypothesis::Superiority { .. } => None,
            Hypothesis::NonInferiority { margin, .. } => Some(margin),
        }
    }

    /// Log hazard ratio under the null boundary.
    pub fn null_log_hr(&self) -> f64 {
        self.margin().map_or(0.0, f64::ln)
    }

    pub fn log_effect(&self) -> f64 {
        match *self {
            Hypothesis::Superiority { alt_hr } => alt_hr.ln(),
            Hypothesis::NonInferiority { margin, alt_hr } => margin.ln() - alt_hr.ln(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::Superiority { .. } => "superiority",
            Hypothesis::NonInferiority { .. } => "non_inferiority",
        }
    }
}

/// Exponential loss-to-follow-up hazard per arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensorHazard {
    pub control: f64,
    pub experimental: f64,
}

impl CensorHazard {
    pub fn shared(phi: f64) -> Self {
        Self { control: phi, experimental: phi }
    }

    pub fn arm(&self, arm: u8) -> f64 {
        if arm == 0 {
            self.control
        } else {
            self.experimental
        }
    }

    fn validate(&self) -> Result<()> {
        for phi in [self.control, self.experimental] {
            if !(phi >= 0.0) || !phi.is_finite() {
                return Err(Error::invalid("censor hazard", format!("must be finite and >= 0, got {phi}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to size a trial. The arms' scale ratio always equals
/// the hypothesis' alternative hazard ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInputs {
    hypothesis: Hypothesis,
    alpha: f64,
    power: f64,
    window: FollowupWindow,
    censor: CensorHazard,
    accrual: AccrualSpec,
    models: ModelPair,
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in (0, 1), got {p}")))
    }
}

impl DesignInputs {
    /// Builds a design from the control-arm law; the experimental arm gets
    /// `scale * alt_hr`.
    pub fn new(
        hypothesis: Hypothesis,
        alpha: f64,
        power: f64,
        window: FollowupWindow,
        censor: CensorHazard,
        accrual: AccrualSpec,
        control: SurvivalModel,
    ) -> Result<Self> {
        hypothesis.validate()?;
        let models = ModelPair::from_control(control, hypothesis.alt_hr())?;
        Self::with_pair(hypothesis, alpha, power, window, censor, accrual, models)
    }

    pub fn with_pair(
        hypothesis: Hypothesis,
        alpha: f64,
        power: f64,
        window: FollowupWindow,
        censor: CensorHazard,
        accrual: AccrualSpec,
        models: ModelPair,
    ) -> Result<Self> {
        hypothesis.validate()?;
        check_probability("alpha", alpha)?;
        check_probability("power", power)?;
        window.validate()?;
        censor.validate()?;
        accrual.validate()?;
        let ratio = models.hazard_ratio();
        let alt = hypothesis.alt_hr();
        if ((ratio - alt) / alt).abs() > 1e-9 {
            return Err(Error::invalid(
                "model pair",
                format!("arm scale ratio {ratio} differs from the alternative hazard ratio {alt}"),
            ));
        }
        Ok(Self { hypothesis, alpha, power, window, censor, accrual, models })
    }

    pub fn hypothesis(&self) -> &Hypothesis {
        &self.hypothesis
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn power(&self) -> f64 {
        self.power
    }
    pub fn window(&self) -> &FollowupWindow {
        &self.window
    }
    pub fn censor(&self) -> &CensorHazard {
        &self.censor
    }
    pub fn accrual(&self) -> &AccrualSpec {
        &self.accrual
    }
    pub fn models(&self) -> &ModelPair {
        &self.models
    }

    /// Same design with a different follow-up duration.
    pub fn with_followup(&self, followup: f64) -> Result<Self> {
        let window = FollowupWindow::new(followup, self.window.accrual)?;
        Ok(Self { window, ..self.clone() })
    }

    fn arm_probability(&self, arm: u8, window: &FollowupWindow) -> Result<f64> {
        prob_event(self.models.arm(arm), self.censor.arm(arm), window, &self.accrual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub ets: f64,
    pub e0: f64,
    pub e1: f64,
    /// Un-rounded per-group requirement.
    pub n_per_group_exact: f64,
    pub n_per_group: u64,
    pub n_total: u64,
    pub expected_events: u64,
}

/// Events-scale term `((z_{1-α/2} + z_{1-β}) / log_effect)^2`.
pub fn effect_term(h: &Hypothesis, alpha: f64, power: f64) -> Result<f64> {
    h.validate()?;
    check_probability("alpha", alpha)?;
    check_probability("power", power)?;
    let log_effect = h.log_effect();
    if log_effect == 0.0 {
        return Err(Error::invalid("hypothesis", "log effect is zero"));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)? + normal_quantile(power)?;
    Ok((z / log_effect).powi(2))
}

fn per_group(ets: f64, e0: f64, e1: f64) -> Result<f64> {
    for (arm, e) in [("control", e0), ("experimental", e1)] {
        if !(e > MIN_EVENT_PROBABILITY) {
            return Err(Error::NoEvents { arm, probability: e });
        }
    }
    Ok(ets * (1.0 / e0 + 1.0 / e1))
}

pub fn required_sample_size(d: &DesignInputs) -> Result<SampleSizeResult> {
    let ets = effect_term(&d.hypothesis, d.alpha, d.power)?;
    let e0 = d.arm_probability(0, &d.window)?;
    let e1 = d.arm_probability(1, &d.window)?;
    let exact = per_group(ets, e0, e1)?;
    let n_per_group = exact.ceil() as u64;
    Ok(SampleSizeResult {
        ets,
        e0,
        e1,
        n_per_group_exact: exact,
        n_per_group,
        n_total: 2 * n_per_group,
        expected_events: (2.0 * ets).ceil() as u64,
    })
}

/// Real-valued total enrolment `2 * ETS * (1/E0 + 1/E1)` at follow-up `tf`.
pub fn total_sample_size_at(d: &DesignInputs, followup: f64) -> Result<f64> {
    let ets = effect_term(&d.hypothesis, d.alpha, d.power)?;
    let window = FollowupWindow::new(followup, d.window.accrual)?;
    let e0 = d.arm_probability(0, &window)?;
    let e1 = d.arm_probability(1, &window)?;
    Ok(2.0 * per_group(ets, e0, e1)?)
}

/// Range of total enrolment reachable by some follow-up duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRange {
    /// Limit as follow-up grows without bound.
    pub lower: f64,
    /// Requirement with zero follow-up.
    pub upper: f64,
}

pub fn feasible_range(d: &DesignInputs) -> Result<FeasibleRange> {
    let ets = effect_term(&d.hypothesis, d.alpha, d.power)?;
    let inf0 = prob_event_asymptotic(d.models.control(), d.censor.control)?;
    let inf1 = prob_event_asymptotic(d.models.experimental(), d.censor.experimental)?;
    let lower = 2.0 * per_group(ets, inf0, inf1)?;
    let upper = total_sample_size_at(d, 0.0)?;
    Ok(FeasibleRange { lower, upper })
}

/// Follow-up duration at which the design needs exactly `n_target` subjects
/// in total. The follow-up stored in `d` is ignored.
pub fn solve_followup_duration(n_target: f64, d: &DesignInputs) -> Result<f64> {
    if !(n_target > 0.0) || !n_target.is_finite() {
        return Err(Error::invalid("n_target", format!("must be finite and > 0, got {n_target}")));
    }
    let FeasibleRange { lower, upper } = feasible_range(d)?;
    if n_target <= lower {
        return Err(Error::InfeasibleBelow { target: n_target, lower, upper });
    }
    if n_target >= upper {
        return Err(Error::InfeasibleAbove { target: n_target, lower, upper });
    }

    let failure: Cell<Option<Error>> = Cell::new(None);
    let objective = |tf: f64| match total_sample_size_at(d, tf) {
        Ok(n) => n - n_target,
        Err(e) => {
            failure.set(Some(e));
            f64::NAN
        }
    };

    let mut hi = d.window.accrual.max(1.0);
    let mut found = false;
    for _ in 0..200 {
        let v = objective(hi);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        if v < 0.0 {
            found = true;
            break;
        }
        hi *= 2.0;
    }
    if !found {
        // N(tf) approaches the lower bound too slowly to bracket
        return Err(Error::InfeasibleBelow { target: n_target, lower, upper });
    }

    let root =
        find_root(&RootProblem { objective: &objective, bracket_lo: 0.0, bracket_hi: hi, tol: 1e-10 * hi.max(1.0) });
    match (root, failure.take()) {
        (_, Some(e)) => Err(e),
        (r, None) => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyDuration {
    pub followup: f64,
    pub accrual: f64,
    pub total: f64,
}

pub fn expected_study_duration_note(d: &DesignInputs) -> StudyDuration {
    StudyDuration { followup: d.window.followup, accrual: d.window.accrual, total: d.window.total() }
}
