mod common;

use common::{invert_survival, seeded};
use rand::Rng;
use survplan_core::inference::{cox_fit, parametric_fit, parametric_loglik, SubjectRecord};
use survplan_core::survmodels::{Family, SurvivalModel};

fn rec(arm: u8, time: f64, event: bool) -> SubjectRecord {
    SubjectRecord { arm, entry: 0.0, time, event }
}

/// Breslow partial log-likelihood written out directly.
fn breslow_loglik(data: &[SubjectRecord], beta: f64) -> f64 {
    let mut times: Vec<f64> = data.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&t| {
            let dying: Vec<&SubjectRecord> = data.iter().filter(|r| r.event && r.time == t).collect();
            let risk: f64 = data.iter().filter(|r| r.time >= t).map(|r| (beta * f64::from(r.arm)).exp()).sum();
            dying.iter().map(|r| beta * f64::from(r.arm)).sum::<f64>() - dying.len() as f64 * risk.ln()
        })
        .sum()
}

fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap()
}

#[test]
fn cox_four_subjects_matches_grid_search() {
    // log PL = -ln(2 + 2e^β) + β - ln(1 + 2e^β) - ln(1 + e^β)
    let data = [rec(0, 1.0, true), rec(1, 2.0, true), rec(0, 3.0, true), rec(1, 4.0, false)];
    let hand = |b: f64| -(2.0 + 2.0 * b.exp()).ln() + b - (1.0 + 2.0 * b.exp()).ln() - (1.0 + b.exp()).ln();
    for b in [-1.0, 0.0, 0.7] {
        assert!((hand(b) - breslow_loglik(&data, b)).abs() < 1e-12);
    }
    let oracle = grid_argmax(hand, -5.0, 5.0, 1e-4);
    let fit = cox_fit(&data).unwrap();
    assert!(fit.converged);
    assert!((fit.log_hr - oracle).abs() < 1e-4, "{} vs {oracle}", fit.log_hr);
    assert!((fit.loglik - hand(fit.log_hr)).abs() < 1e-12);
    // standard error from the curvature of the hand-written likelihood
    let h = 1e-4;
    let curv = (hand(fit.log_hr + h) - 2.0 * hand(fit.log_hr) + hand(fit.log_hr - h)) / (h * h);
    assert!((fit.se - (-1.0 / curv).sqrt()).abs() < 1e-5);
}

#[test]
fn cox_tied_times_use_breslow() {
    let data = [
        rec(0, 1.0, true),
        rec(1, 1.0, true),
        rec(0, 2.0, true),
        rec(0, 2.0, true),
        rec(1, 2.0, true),
        rec(1, 3.0, false),
        rec(0, 3.5, true),
        rec(1, 4.0, true),
    ];
    let oracle = grid_argmax(|b| breslow_loglik(&data, b), -5.0, 5.0, 1e-4);
    let fit = cox_fit(&data).unwrap();
    assert!((fit.log_hr - oracle).abs() < 1e-4, "{} vs {oracle}", fit.log_hr);
}

fn simulate(control: SurvivalModel, hr: f64, n: usize, censor_rate: f64, seed: u64) -> Vec<SubjectRecord> {
    let mut rng = seeded(seed);
    let exp_arm = control.with_scale(control.scale() * hr).unwrap();
    let mut out = Vec::with_capacity(2 * n);
    for arm in 0..2u8 {
        let m = if arm == 0 { control } else { exp_arm };
        for _ in 0..n {
            let t = invert_survival(&m, 1.0 - rng.random::<f64>());
            let c = -(1.0 - rng.random::<f64>()).ln() / censor_rate;
            out.push(rec(arm, t.min(c), t <= c));
        }
    }
    out
}

#[test]
fn exponential_mle_is_closed_form() {
    let data = simulate(SurvivalModel::exponential(0.4).unwrap(), 0.6, 80, 0.2, 3);
    let fit = parametric_fit(&data, Family::Exponential).unwrap();
    let (mut d, mut t) = ([0.0; 2], [0.0; 2]);
    for r in &data {
        let a = usize::from(r.arm);
        t[a] += r.time;
        if r.event {
            d[a] += 1.0;
        }
    }
    let rate0 = d[0] / t[0];
    let rate1 = d[1] / t[1];
    assert_eq!(fit.scale0, rate0);
    assert_eq!(fit.log_hr, (rate1 / rate0).ln());
    assert_eq!(fit.log_hr_se, (1.0 / d[0] + 1.0 / d[1]).sqrt());
}

#[test]
fn weibull_fit_is_consistent() {
    let truth = SurvivalModel::weibull(0.3, 1.5).unwrap();
    let data = simulate(truth, 0.7, 5000, 0.1, 11);
    let fit = parametric_fit(&data, Family::Weibull).unwrap();
    assert!(fit.converged, "{:?}", fit.diagnostic);
    assert!((fit.log_hr - 0.7f64.ln()).abs() < 4.0 * fit.log_hr_se, "{fit:?}");
    assert!((fit.shape.unwrap() - 1.5).abs() < 0.05, "{fit:?}");
    assert!((fit.scale0 - 0.3).abs() < 0.03, "{fit:?}");
    // the Cox estimate targets the same hazard ratio
    let cox = cox_fit(&data).unwrap();
    assert!((cox.log_hr - 0.7f64.ln()).abs() < 4.0 * cox.se);
}

#[test]
fn gompertz_fit_is_consistent() {
    let truth = SurvivalModel::gompertz(0.1, 0.4).unwrap();
    let data = simulate(truth, 1.4, 5000, 0.05, 12);
    let fit = parametric_fit(&data, Family::Gompertz).unwrap();
    assert!(fit.converged, "{:?}", fit.diagnostic);
    assert!((fit.log_hr - 1.4f64.ln()).abs() < 4.0 * fit.log_hr_se, "{fit:?}");
    assert!((fit.shape.unwrap() - 0.4).abs() < 0.04, "{fit:?}");
}

#[test]
fn parametric_optimum_beats_dense_grid() {
    let truth = SurvivalModel::weibull(0.5, 0.8).unwrap();
    let data = simulate(truth, 0.8, 40, 0.3, 9);
    for family in [Family::Weibull, Family::Gompertz] {
        let fit = parametric_fit(&data, family).unwrap();
        if !fit.converged {
            continue;
        }
        let c = fit.coefficients();
        let mut best = f64::NEG_INFINITY;
        for i in -20..=20 {
            for j in -20..=20 {
                for k in -20..=20 {
                    let p = [c[0] + 0.01 * i as f64, c[1] + 0.01 * j as f64, c[2] + 0.01 * k as f64];
                    best = best.max(parametric_loglik(&data, family, p));
                }
            }
        }
        assert!(fit.loglik >= best - 1e-6, "{family}: {} < {best}", fit.loglik);
        assert!((fit.loglik - parametric_loglik(&data, family, c)).abs() < 1e-9);
    }
}

#[test]
fn simulated_cox_fits_converge() {
    let truth = SurvivalModel::exponential(0.139).unwrap();
    for seed in 0..200 {
        let data = simulate(truth, 1.0, 60, 0.05, seed);
        let fit = cox_fit(&data).unwrap();
        assert!(fit.converged, "seed {seed}: {fit:?}");
    }
}
