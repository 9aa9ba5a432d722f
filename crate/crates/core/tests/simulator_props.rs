use survplan_core::design::{CensorHazard, Hypothesis};
use survplan_core::event_probability::{prob_event, AccrualSpec, FollowupWindow};
use survplan_core::simulator::{
    derive_seed, empirical_power, generate_trial, pilot_parameters, run_grid, PilotSpec, ScenarioGrid, TrialSpec,
    STREAM_POWER,
};
use survplan_core::survmodels::{Family, ModelPair, SurvivalModel};

fn spec(control: SurvivalModel, hr: f64, n: usize, phi: f64, tf: f64, r: f64) -> TrialSpec {
    TrialSpec {
        n_per_group: n,
        models: ModelPair::from_control(control, hr).unwrap(),
        censor: CensorHazard::shared(phi),
        window: FollowupWindow::new(tf, r).unwrap(),
        accrual: AccrualSpec::Uniform,
    }
}

#[test]
fn power_independent_of_thread_count() {
    let s = spec(SurvivalModel::weibull(0.2, 0.8).unwrap(), 0.7, 50, 0.1, 3.0, 2.0);
    let h = Hypothesis::Superiority { alt_hr: 0.7 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| empirical_power(&s, &h, 0.05, 400, 77).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
    assert_eq!(one.replicates, 400);
    assert!(one.rejections + one.non_converged <= one.replicates);
}

#[test]
fn event_fraction_matches_prob_event() {
    let cases = [
        (SurvivalModel::exponential(0.3).unwrap(), 0.1, 2.0, 3.0),
        (SurvivalModel::exponential(0.05).unwrap(), 0.0, 10.0, 5.0),
        (SurvivalModel::weibull(0.3, 0.6).unwrap(), 0.2, 1.0, 2.0),
        (SurvivalModel::weibull(0.1, 2.0).unwrap(), 0.05, 3.0, 1.0),
        (SurvivalModel::gompertz(0.1, 0.5).unwrap(), 0.2, 2.0, 1.0),
        (SurvivalModel::gompertz(0.05, 0.1).unwrap(), 0.0, 12.0, 2.0),
    ];
    for (i, (m, phi, tf, r)) in cases.into_iter().enumerate() {
        let s = spec(m, 1.0, 100_000, phi, tf, r);
        let data = generate_trial(&s, i as u64).unwrap();
        let n = data.len() as f64;
        let p = data.iter().filter(|r| r.event).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let e = prob_event(&m, phi, &s.window, &s.accrual).unwrap();
        assert!((p - e).abs() <= 3.0 * se, "{m:?}: {p} vs {e} ± {se}");
    }
}

#[test]
fn reference_design_event_fraction() {
    let s = spec(SurvivalModel::exponential(0.139).unwrap(), 1.0, 50_000, 0.0, 24.0, 22.0);
    let data = generate_trial(&s, 8).unwrap();
    let p = data.iter().filter(|r| r.event).count() as f64 / data.len() as f64;
    assert!((p - 0.989).abs() < 0.001, "{p}");
}

#[test]
fn superiority_size_under_null() {
    let s = spec(SurvivalModel::exponential(0.139).unwrap(), 1.0, 100, 0.05, 24.0, 22.0);
    let h = Hypothesis::Superiority { alt_hr: 1.0 / 1.5 };
    let est = empirical_power(&s, &h, 0.05, 2000, 5).unwrap();
    assert!((est.power - 0.05).abs() <= 0.015, "{est:?}");
    assert_eq!(est, empirical_power(&s, &h, 0.05, 2000, 5).unwrap());
}

#[test]
fn reference_design_design_reaches_nominal_power() {
    let s = spec(SurvivalModel::exponential(0.139).unwrap(), 1.0, 141, 0.0, 24.0, 22.0);
    let h = Hypothesis::NonInferiority { margin: 1.4, alt_hr: 1.0 };
    let est = empirical_power(&s, &h, 0.05, 2000, 12).unwrap();
    assert!((0.77..=0.83).contains(&est.power), "{est:?}");
    assert_eq!(est.non_converged, 0);
}

#[test]
fn large_pilot_recovers_exponential_truth() {
    let pair = ModelPair::from_control(SurvivalModel::exponential(0.2).unwrap(), 0.8).unwrap();
    let pilot = PilotSpec { n_trials: 50, n_subjects: 10_000, seed: Some(3) };
    let window = FollowupWindow::new(6.0, 2.0).unwrap();
    let est = pilot_parameters(&pair, &CensorHazard::shared(0.0), &window, &AccrualSpec::Uniform, &pilot).unwrap();
    let exp = est.iter().find(|p| p.family == Family::Exponential).unwrap();
    assert_eq!(exp.converged, 50);
    let e = exp.estimate.unwrap();
    assert!((e.scale0 - 0.2).abs() < 0.02 * 0.2, "{e:?}");
    assert!((e.log_hr.exp() - 0.8).abs() < 0.02 * 0.8, "{e:?}");
}

#[test]
fn pilot_shape_near_one_for_exponential_weibull_truth() {
    let pair = ModelPair::from_control(SurvivalModel::weibull(0.3, 1.0).unwrap(), 1.0 / 1.5).unwrap();
    let window = FollowupWindow::new(6.0, 2.0).unwrap();
    let est =
        pilot_parameters(&pair, &CensorHazard::shared(0.0), &window, &AccrualSpec::Uniform, &PilotSpec::with_seed(10))
            .unwrap();
    let w = est.iter().find(|p| p.family == Family::Weibull).unwrap();
    let shape = w.estimate.unwrap().shape.unwrap();
    assert!((shape - 1.0).abs() < 0.15, "{shape}");
}

#[test]
fn single_point_grid_is_one_power_call_per_family() {
    let grid = ScenarioGrid {
        true_family: Family::Weibull,
        shapes: vec![1.2],
        scales: vec![0.5],
        phis: vec![0.2],
        window: FollowupWindow::new(6.0, 2.0).unwrap(),
        accrual: AccrualSpec::Uniform,
        hypotheses: vec![Hypothesis::Superiority { alt_hr: 1.0 / 1.5 }],
        alpha: 0.05,
        power: 0.8,
    };
    let rows = run_grid(&grid, &Family::ALL, 100, 42, &PilotSpec::default()).unwrap();
    assert_eq!(rows.len(), 3);
    let truth = ModelPair::from_control(SurvivalModel::weibull(0.5, 1.2).unwrap(), 1.0 / 1.5).unwrap();
    for row in rows {
        let Some(n) = row.n_per_group else { continue };
        let s = TrialSpec {
            n_per_group: n as usize,
            models: truth,
            censor: CensorHazard::shared(0.2),
            window: grid.window,
            accrual: AccrualSpec::Uniform,
        };
        let direct = empirical_power(&s, &grid.hypotheses[0], 0.05, 100, row.seed).unwrap();
        assert_eq!(row.power, Some(direct.power));
        assert_eq!(row.non_converged, Some(direct.non_converged));
    }
}

#[test]
fn replicate_seeds_do_not_collide() {
    let mut seeds: Vec<u64> = (0..100_000).map(|i| derive_seed(1, STREAM_POWER, i)).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 100_000);
}
