//! Entry points shared by the command line and the HTTP service, so both
//! produce identical numbers for identical inputs.

use std::sync::atomic::AtomicUsize;

use serde::{Deserialize, Serialize};

use crate::config::{CurvesDoc, DesignDoc, DurationRequest, PowerRequest};
use crate::design::{
    feasible_range, required_sample_size, solve_followup_duration, total_sample_size_at, FeasibleRange,
    SampleSizeResult,
};
use crate::error::{Error, Result};
use crate::simulator::{
    empirical_power_with_progress, pilot_parameters, run_grid, CurveRow, FamilyPilot, PowerEstimate, TrialSpec,
};
use crate::survmodels::Family;

/// Header of the power-curve CSV, in column order.
pub const CURVES_CSV_HEADER: [&str; 14] = [
    "true_family",
    "shape",
    "scale0",
    "phi",
    "hypothesis",
    "margin",
    "alt_hr",
    "formula_family",
    "n_per_group",
    "power",
    "se",
    "non_converged",
    "replicates",
    "seed",
];

pub fn size(doc: &DesignDoc) -> Result<SampleSizeResult> {
    required_sample_size(&doc.to_inputs()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationReport {
    pub followup: f64,
    pub accrual: f64,
    /// Accrual plus follow-up.
    pub study_duration: f64,
    pub n_target: f64,
    /// Real-valued total requirement at the solved follow-up.
    pub n_total_at_followup: f64,
    pub bounds: FeasibleRange,
}

pub fn duration(req: &DurationRequest) -> Result<DurationReport> {
    // any positive follow-up will do; the solver ignores it
    let d = req.design.inputs_at(req.design.followup.unwrap_or(1.0))?;
    let followup = solve_followup_duration(req.n_target, &d)?;
    let accrual = d.window().accrual;
    Ok(DurationReport {
        followup,
        accrual,
        study_duration: followup + accrual,
        n_target: req.n_target,
        n_total_at_followup: total_sample_size_at(&d, followup)?,
        bounds: feasible_range(&d)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingSource {
    /// `n_per_group` given explicitly.
    Fixed,
    /// Formula evaluated at the true parameters.
    TrueParams,
    /// Formula evaluated at pilot estimates.
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub true_family: Family,
    pub formula_family: Family,
    pub sizing: SizingSource,
    pub n_per_group: u64,
    /// Present when sizing came from pilot data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<FamilyPilot>,
    pub estimate: PowerEstimate,
    pub seed: u64,
}

/// Validates `req` and returns the replicate count, without simulating.
pub fn check_power_request(req: &PowerRequest) -> Result<u64> {
    req.design.to_inputs()?;
    let sim = &req.simulation;
    sim.pilot.validate()?;
    if sim.replicates == 0 {
        return Err(Error::invalid("replicates", "must be >= 1"));
    }
    if let Some(n) = sim.n_per_group {
        if n < 2 {
            return Err(Error::invalid("n_per_group", "must be >= 2"));
        }
    }
    let truth = req.design.control.family;
    if sim.true_params && sim.formula_family.is_some_and(|f| f != truth) {
        return Err(Error::invalid("formula_family", "true parameters exist only for the true family"));
    }
    Ok(sim.replicates)
}

/// Sizes the trial (fixed, true-parameter or pilot-based) and simulates its
/// power under the design's true law.
pub fn power(req: &PowerRequest, progress: Option<&AtomicUsize>) -> Result<PowerReport> {
    check_power_request(req)?;
    let d = req.design.to_inputs()?;
    let sim = &req.simulation;
    let truth = *d.models();
    let formula_family = sim.formula_family.unwrap_or(truth.family());

    let (sizing, n_per_group, pilot) = if let Some(n) = sim.n_per_group {
        (SizingSource::Fixed, n, None)
    } else if sim.true_params {
        (SizingSource::TrueParams, required_sample_size(&d)?.n_per_group, None)
    } else {
        let pilots = pilot_parameters(&truth, d.censor(), d.window(), d.accrual(), &sim.pilot.for_point(sim.seed, 0))?;
        let fp = pilots.into_iter().find(|p| p.family == formula_family).expect("pilot covers every family");
        let est = fp.estimate.ok_or_else(|| {
            Error::Fit(format!("no pilot fit converged for the {formula_family} family ({} attempted)", fp.attempted))
        })?;
        let sized = req.design.to_inputs_with_control(est.control_model()?)?;
        (SizingSource::Pilot, required_sample_size(&sized)?.n_per_group, Some(fp))
    };

    let spec = TrialSpec {
        n_per_group: usize::try_from(n_per_group).map_err(|_| Error::invalid("n_per_group", "too large"))?,
        models: truth,
        censor: *d.censor(),
        window: *d.window(),
        accrual: d.accrual().clone(),
    };
    let estimate = empirical_power_with_progress(&spec, d.hypothesis(), d.alpha(), sim.replicates, sim.seed, progress)?;
    Ok(PowerReport {
        true_family: truth.family(),
        formula_family,
        sizing,
        n_per_group,
        pilot,
        estimate,
        seed: sim.seed,
    })
}

pub fn curves(doc: &CurvesDoc) -> Result<Vec<CurveRow>> {
    let grid = doc.resolve_grid()?;
    run_grid(&grid, &doc.formula_families, doc.replicates, doc.seed, &doc.pilot)
}

/// CSV fields for one row; missing values are empty.
pub fn curve_row_fields(row: &CurveRow) -> [String; 14] {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    [
        row.true_family.to_string(),
        row.shape.to_string(),
        row.scale0.to_string(),
        row.phi.to_string(),
        row.hypothesis.clone(),
        opt(row.margin),
        row.alt_hr.to_string(),
        row.formula_family.to_string(),
        opt(row.n_per_group),
        opt(row.power),
        opt(row.se),
        opt(row.non_converged),
        row.replicates.to_string(),
        row.seed.to_string(),
    ]
}
