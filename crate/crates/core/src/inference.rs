//! Two-arm inference on simulated trials: Cox proportional-hazards fit with
//! Breslow ties, Wald test and hazard-ratio interval, and parametric
//! maximum-likelihood fits with a shared shape and arm-specific scale.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{find_root, normal_quantile, normal_sf, RootProblem};
use crate::survmodels::{gompertz_growth, Family, ModelPair, SurvivalModel};

/// One simulated subject. `time` is the observed (possibly censored) time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub arm: u8,
    pub entry: f64,
    pub time: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub log_hr: f64,
    pub se: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Why the fit did not converge.
    pub diagnostic: Option<String>,
}

impl FitResult {
    pub fn hazard_ratio(&self) -> f64 {
        self.log_hr.exp()
    }
}

const COX_MAX_ITER: usize = 50;
const COX_GRAD_TOL: f64 = 1e-8;
/// Newton step, in log hazard ratio units, treated as converged.
const COX_STEP_TOL: f64 = 1e-10;
const COX_MAX_HALVINGS: usize = 60;

/// Risk-set summary at one distinct event time.
#[derive(Debug, Clone, Copy)]
struct EventTime {
    at_risk0: f64,
    at_risk1: f64,
    deaths: f64,
    deaths1: f64,
}

fn event_times(records: &[SubjectRecord]) -> Vec<EventTime> {
    let mut order: Vec<&SubjectRecord> = records.iter().collect();
    order.sort_by(|a, b| b.time.total_cmp(&a.time));
    let mut out = Vec::new();
    let (mut n0, mut n1) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].time;
        let (mut d, mut d1) = (0.0, 0.0);
        while i < order.len() && order[i].time == t {
            let r = order[i];
            if r.arm == 0 {
                n0 += 1.0;
            } else {
                n1 += 1.0;
            }
            if r.event {
                d += 1.0;
                if r.arm != 0 {
                    d1 += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            out.push(EventTime { at_risk0: n0, at_risk1: n1, deaths: d, deaths1: d1 });
        }
    }
    out
}

/// `ln(n0 + n1 e^β)` without overflow.
fn log_risk(n0: f64, n1: f64, beta: f64) -> f64 {
    if n1 == 0.0 {
        return n0.ln();
    }
    if n0 == 0.0 {
        return n1.ln() + beta;
    }
    let a = n0.ln();
    let b = n1.ln() + beta;
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Share of the risk set's weight carried by arm 1.
fn arm1_share(n0: f64, n1: f64, beta: f64) -> f64 {
    if n1 == 0.0 {
        return 0.0;
    }
    if n0 == 0.0 {
        return 1.0;
    }
    1.0 / (1.0 + (n0 / n1) * (-beta).exp())
}

fn cox_loglik(times: &[EventTime], beta: f64) -> f64 {
    times.iter().map(|e| e.deaths1 * beta - e.deaths * log_risk(e.at_risk0, e.at_risk1, beta)).sum()
}

fn cox_score_info(times: &[EventTime], beta: f64) -> (f64, f64) {
    times.iter().fold((0.0, 0.0), |(u, i), e| {
        let p = arm1_share(e.at_risk0, e.at_risk1, beta);
        (u + e.deaths1 - e.deaths * p, i + e.deaths * p * (1.0 - p))
    })
}

fn check_two_arms(records: &[SubjectRecord]) -> Result<()> {
    let arm1 = records.iter().filter(|r| r.arm != 0).count();
    if arm1 == 0 || arm1 == records.len() {
        return Err(Error::Fit("both arms must be present".into()));
    }
    if records.iter().any(|r| !(r.time >= 0.0) || !r.time.is_finite()) {
        return Err(Error::Fit("observed times must be finite and >= 0".into()));
    }
    Ok(())
}

/// Cox partial-likelihood fit of the arm indicator (Breslow ties).
///
/// Newton iterations from `β = 0` with step halving. When the partial
/// likelihood is monotone (its supremum is at `β = ±∞`) the result is
/// returned with `converged = false`.
pub fn cox_fit(records: &[SubjectRecord]) -> Result<FitResult> {
    check_two_arms(records)?;
    if !records.iter().any(|r| r.event) {
        return Err(Error::Fit("no events".into()));
    }
    let times = event_times(records);

    // Score limits as β → ±∞; the score decreases in β.
    let score_pos_inf: f64 = times.iter().map(|e| e.deaths1 - if e.at_risk1 > 0.0 { e.deaths } else { 0.0 }).sum();
    let score_neg_inf: f64 = times.iter().map(|e| e.deaths1 - if e.at_risk0 > 0.0 { 0.0 } else { e.deaths }).sum();
    if score_pos_inf >= 0.0 || score_neg_inf <= 0.0 {
        let direction = if score_pos_inf >= 0.0 { "+inf" } else { "-inf" };
        return Ok(FitResult {
            log_hr: if score_pos_inf >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            se: f64::INFINITY,
            loglik: cox_loglik(&times, 0.0),
            converged: false,
            iterations: 0,
            diagnostic: Some(format!("monotone partial likelihood: estimate diverges to {direction}")),
        });
    }

    let mut beta = 0.0;
    let mut ll = cox_loglik(&times, beta);
    for iter in 0..=COX_MAX_ITER {
        let (score, info) = cox_score_info(&times, beta);
        if score.abs() < COX_GRAD_TOL || (info > 0.0 && (score / info).abs() < COX_STEP_TOL) {
            return Ok(FitResult {
                log_hr: beta,
                se: 1.0 / info.sqrt(),
                loglik: ll,
                converged: true,
                iterations: iter,
                diagnostic: None,
            });
        }
        if iter == COX_MAX_ITER || !(info > 0.0) {
            break;
        }
        let mut step = score / info;
        let mut accepted = false;
        for _ in 0..COX_MAX_HALVINGS {
            let cand = beta + step;
            let cand_ll = cox_loglik(&times, cand);
            // near the optimum the gain is below the rounding noise of the sum
            if cand_ll >= ll - 1e-13 * (1.0 + ll.abs()) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // at the floating-point optimum: no ascent direction remains
            let (score, info) = cox_score_info(&times, beta);
            let converged = score.abs() < 1e-6 * (1.0 + info);
            return Ok(FitResult {
                log_hr: beta,
                se: 1.0 / info.sqrt(),
                loglik: ll,
                converged,
                iterations: iter + 1,
                diagnostic: (!converged).then(|| "step halving failed to increase the likelihood".into()),
            });
        }
    }
    let (_, info) = cox_score_info(&times, beta);
    Ok(FitResult {
        log_hr: beta,
        se: 1.0 / info.sqrt(),
        loglik: ll,
        converged: false,
        iterations: COX_MAX_ITER,
        diagnostic: Some("Newton iteration limit reached".into()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub z: f64,
    pub p_two_sided: f64,
}

pub fn wald_test(f: &FitResult, null_log_hr: f64) -> Result<WaldTest> {
    if !f.converged {
        return Err(Error::Fit("Wald test needs a converged fit".into()));
    }
    let z = (f.log_hr - null_log_hr) / f.se;
    Ok(WaldTest { z, p_two_sided: (2.0 * normal_sf(z.abs())).min(1.0) })
}

/// Two-sided interval for the hazard ratio at confidence `level`.
pub fn hr_confidence_interval(f: &FitResult, level: f64) -> Result<(f64, f64)> {
    if !f.converged {
        return Err(Error::Fit("confidence interval needs a converged fit".into()));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::invalid("level", format!("must lie in [0, 1), got {level}")));
    }
    let z = if level == 0.0 { 0.0 } else { normal_quantile(0.5 * (1.0 + level))? };
    Ok(((f.log_hr - z * f.se).exp(), (f.log_hr + z * f.se).exp()))
}

/// Maximum-likelihood fit of a two-arm parametric model with arm scale
/// `scale0 * exp(log_hr * arm)` and a shared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub family: Family,
    pub scale0: f64,
    pub log_hr: f64,
    pub shape: Option<f64>,
    /// From the observed information of the full likelihood.
    pub log_hr_se: f64,
    pub loglik: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl ParametricFit {
    /// Coefficients on the unconstrained fitting scale:
    /// `[ln scale0, log_hr, ln shape]` (the last is 0 for exponential).
    pub fn coefficients(&self) -> [f64; 3] {
        [self.scale0.ln(), self.log_hr, self.shape.map_or(0.0, f64::ln)]
    }

    pub fn control_model(&self) -> Result<SurvivalModel> {
        SurvivalModel::new(self.family, self.scale0, self.shape.unwrap_or(1.0))
    }

    pub fn model_pair(&self) -> Result<ModelPair> {
        ModelPair::from_control(self.control_model()?, self.log_hr.exp())
    }
}

struct ArmSums {
    events: [f64; 2],
    event_log_time: f64,
    event_time: f64,
}

fn arm_sums(records: &[SubjectRecord]) -> ArmSums {
    let mut s = ArmSums { events: [0.0; 2], event_log_time: 0.0, event_time: 0.0 };
    for r in records.iter().filter(|r| r.event) {
        s.events[usize::from(r.arm != 0)] += 1.0;
        s.event_log_time += r.time.ln();
        s.event_time += r.time;
    }
    s
}

/// Full log-likelihood in fitting coordinates `[ln scale0, log_hr, ln shape]`.
pub fn parametric_loglik(records: &[SubjectRecord], family: Family, coef: [f64; 3]) -> f64 {
    let [a, b, c] = coef;
    let shape = c.exp();
    records
        .iter()
        .map(|r| {
            let x = f64::from(u8::from(r.arm != 0));
            let log_scale = a + b * x;
            let scale = log_scale.exp();
            let t = r.time;
            let (log_h, cum_h) = match family {
                Family::Exponential => (log_scale, scale * t),
                Family::Weibull => (c + log_scale + (shape - 1.0) * t.ln(), scale * t.powf(shape)),
                Family::Gompertz => (log_scale + shape * t, scale * gompertz_growth(shape, t)),
            };
            if r.event {
                log_h - cum_h
            } else {
                -cum_h
            }
        })
        .sum()
}

fn log_hr_se_from_hessian(records: &[SubjectRecord], family: Family, coef: [f64; 3]) -> f64 {
    let h = 1e-4;
    let ll = |p: [f64; 3]| parametric_loglik(records, family, p);
    let f0 = ll(coef);
    let mut hess = Matrix3::<f64>::zeros();
    for i in 0..3 {
        for j in i..3 {
            let shifted = |di: f64, dj: f64| {
                let mut p = coef;
                p[i] += di;
                p[j] += dj;
                ll(p)
            };
            let v = if i == j {
                (shifted(h, 0.0) - 2.0 * f0 + shifted(-h, 0.0)) / (h * h)
            } else {
                (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h)
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    match (-hess).try_inverse() {
        Some(cov) if cov[(1, 1)] > 0.0 => cov[(1, 1)].sqrt(),
        _ => f64::NAN,
    }
}

/// Maximum-likelihood fit of `family` with arm-specific scale and shared shape.
///
/// For fixed shape the arm scales have closed forms, so the fit reduces to
/// a one-dimensional root of the profile score in `ln shape`.
pub fn parametric_fit(records: &[SubjectRecord], family: Family) -> Result<ParametricFit> {
    check_two_arms(records)?;
    let sums = arm_sums(records);
    if sums.events[0] == 0.0 || sums.events[1] == 0.0 {
        return Err(Error::Fit("each arm needs at least one event".into()));
    }
    if family != Family::Exponential && records.iter().any(|r| r.time <= 0.0) {
        return Err(Error::Fit("observed times must be > 0".into()));
    }
    match family {
        Family::Exponential => Ok(fit_exponential(records, &sums)),
        Family::Weibull => fit_weibull(records, &sums),
        Family::Gompertz => fit_gompertz(records, &sums),
    }
}

fn fit_exponential(records: &[SubjectRecord], sums: &ArmSums) -> ParametricFit {
    let mut exposure = [0.0; 2];
    for r in records {
        exposure[usize::from(r.arm != 0)] += r.time;
    }
    let rate0 = sums.events[0] / exposure[0];
    let rate1 = sums.events[1] / exposure[1];
    let loglik = (0..2)
        .map(|x| {
            let rate = sums.events[x] / exposure[x];
            sums.events[x] * rate.ln() - sums.events[x]
        })
        .sum();
    ParametricFit {
        family: Family::Exponential,
        scale0: rate0,
        log_hr: (rate1 / rate0).ln(),
        shape: None,
        log_hr_se: (1.0 / sums.events[0] + 1.0 / sums.events[1]).sqrt(),
        loglik,
        converged: true,
        diagnostic: None,
    }
}

fn not_converged(family: Family, reason: String) -> ParametricFit {
    ParametricFit {
        family,
        scale0: f64::NAN,
        log_hr: f64::NAN,
        shape: None,
        log_hr_se: f64::NAN,
        loglik: f64::NAN,
        converged: false,
        diagnostic: Some(reason),
    }
}

/// Finds the root of a profile score that is positive at small `ln shape`
/// and negative at large `ln shape`, or explains why none is bracketed.
fn profile_root(score: impl Fn(f64) -> f64, lo_limit: f64, hi_limit: f64) -> std::result::Result<f64, String> {
    let (mut lo, mut hi) = ((-1.0f64).max(lo_limit), 1.0f64.min(hi_limit));
    while score(lo) <= 0.0 {
        if lo <= lo_limit {
            return Err(format!("shape estimate at the lower boundary (ln shape <= {lo_limit})"));
        }
        hi = lo;
        lo = (lo - 2.0).max(lo_limit);
    }
    while score(hi) >= 0.0 {
        if hi >= hi_limit {
            return Err(format!("shape estimate at the upper boundary (ln shape >= {hi_limit})"));
        }
        lo = hi;
        hi = (hi + 1.0).min(hi_limit);
    }
    find_root(&RootProblem { objective: &score, bracket_lo: lo, bracket_hi: hi, tol: 1e-12 }).map_err(|e| e.to_string())
}

fn fit_weibull(records: &[SubjectRecord], sums: &ArmSums) -> Result<ParametricFit> {
    // Work in u = t / t_ref so that u^k <= 1 for any shape.
    let t_ref = records.iter().map(|r| r.time).fold(0.0, f64::max);
    let units: Vec<(usize, f64, f64)> =
        records.iter().map(|r| (usize::from(r.arm != 0), r.time / t_ref, (r.time / t_ref).ln())).collect();
    let d_total = sums.events[0] + sums.events[1];
    let event_log_u = sums.event_log_time - d_total * t_ref.ln();

    let moments = |k: f64| {
        let mut s = [0.0; 2];
        let mut sl = [0.0; 2];
        for &(x, u, lu) in &units {
            let p = if u > 0.0 { (k * lu).exp() } else { 0.0 };
            s[x] += p;
            if u > 0.0 {
                sl[x] += p * lu;
            }
        }
        (s, sl)
    };
    // d loglik / d k, which has the sign of the score in ln k
    let score = |c: f64| {
        let k = c.exp();
        let (s, sl) = moments(k);
        d_total / k + event_log_u - (0..2).map(|x| sums.events[x] * sl[x] / s[x]).sum::<f64>()
    };

    let c = match profile_root(score, -12.0, 6.0) {
        Ok(c) => c,
        Err(reason) => return Ok(not_converged(Family::Weibull, reason)),
    };
    let k = c.exp();
    let (s, _) = moments(k);
    // scale in u-units is D_x / S_x; λ_t = λ_u / t_ref^k
    let log_scale: Vec<f64> = (0..2).map(|x| sums.events[x].ln() - s[x].ln() - k * t_ref.ln()).collect();
    let coef = [log_scale[0], log_scale[1] - log_scale[0], c];
    Ok(ParametricFit {
        family: Family::Weibull,
        scale0: log_scale[0].exp(),
        log_hr: coef[1],
        shape: Some(k),
        log_hr_se: log_hr_se_from_hessian(records, Family::Weibull, coef),
        loglik: parametric_loglik(records, Family::Weibull, coef),
        converged: true,
        diagnostic: None,
    })
}

/// `d/dα [(e^{α u} - 1)/α]`.
fn gompertz_growth_derivative(alpha: f64, u: f64) -> f64 {
    let x = alpha * u;
    if x.abs() < 1e-3 {
        // u²/2 + α u³/3 + α² u⁴/8 + α³ u⁵/30
        u * u * (0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x / 30.0)))
    } else {
        (x * x.exp() - x.exp_m1()) / (alpha * alpha)
    }
}

fn fit_gompertz(records: &[SubjectRecord], sums: &ArmSums) -> Result<ParametricFit> {
    // u = t / t_ref keeps α u bounded by the bracket limit.
    let t_ref = records.iter().map(|r| r.time).fold(0.0, f64::max);
    let units: Vec<(usize, f64)> = records.iter().map(|r| (usize::from(r.arm != 0), r.time / t_ref)).collect();
    let event_u = sums.event_time / t_ref;

    let growth = |alpha: f64| {
        let mut a = [0.0; 2];
        let mut da = [0.0; 2];
        for &(x, u) in &units {
            a[x] += gompertz_growth(alpha, u);
            da[x] += gompertz_growth_derivative(alpha, u);
        }
        (a, da)
    };
    let score = |c: f64| {
        let alpha = c.exp();
        let (a, da) = growth(alpha);
        event_u - (0..2).map(|x| sums.events[x] * da[x] / a[x]).sum::<f64>()
    };

    // upper limit keeps exp(α u) finite
    let c = match profile_root(score, -20.0, 600f64.ln()) {
        Ok(c) => c,
        Err(reason) => {
            return Ok(not_converged(
                Family::Gompertz,
                format!("{reason}; a Gompertz law with increasing hazard does not fit"),
            ))
        }
    };
    let alpha_u = c.exp();
    let (a, _) = growth(alpha_u);
    // θ_t = θ_u / t_ref, α_t = α_u / t_ref
    let log_scale: Vec<f64> = (0..2).map(|x| sums.events[x].ln() - a[x].ln() - t_ref.ln()).collect();
    let alpha = alpha_u / t_ref;
    let coef = [log_scale[0], log_scale[1] - log_scale[0], alpha.ln()];
    Ok(ParametricFit {
        family: Family::Gompertz,
        scale0: log_scale[0].exp(),
        log_hr: coef[1],
        shape: Some(alpha),
        log_hr_se: log_hr_se_from_hessian(records, Family::Gompertz, coef),
        loglik: parametric_loglik(records, Family::Gompertz, coef),
        converged: true,
        diagnostic: None,
    })
}
