//! JSON documents accepted by the command line and the HTTP API.
//!
//! Parsing is strict: unknown keys are rejected and errors carry the path of
//! the offending field. Times are in whatever unit the caller uses
//! consistently; rates are per that unit.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::design::{CensorHazard, DesignInputs, Hypothesis};
use crate::error::{Error, Result};
use crate::event_probability::{AccrualSpec, FollowupWindow};
use crate::simulator::{PilotSpec, ScenarioGrid};
use crate::survmodels::{rate_from_median, Family, SurvivalModel};

/// A document failed to parse or match the schema.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("schema error at `{path}`: {message}")]
pub struct SchemaError {
    /// Dotted path to the offending field, `.` for the document root.
    pub path: String,
    pub message: String,
}

/// Deserializes `text` as `T`, reporting the failing field path.
pub fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| SchemaError { path: e.path().to_string(), message: e.inner().to_string() })
}

/// Control-arm survival law, given by scale or by median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Alternative to `scale`; not available for Gompertz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median: Option<f64>,
    /// Required for Weibull and Gompertz, rejected for exponential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
}

impl ModelDoc {
    pub fn to_model(&self) -> Result<SurvivalModel> {
        let shape = match (self.family.has_shape(), self.shape) {
            (true, Some(k)) => k,
            (true, None) => return Err(Error::invalid("shape", format!("required for {}", self.family))),
            (false, Some(_)) => return Err(Error::invalid("shape", "not used by the exponential family")),
            (false, None) => 1.0,
        };
        let scale = match (self.scale, self.median) {
            (Some(s), None) => s,
            (None, Some(m)) => rate_from_median(self.family, shape, m)?,
            _ => return Err(Error::invalid("model", "give exactly one of `scale` and `median`")),
        };
        SurvivalModel::new(self.family, scale, shape)
    }
}

impl From<SurvivalModel> for ModelDoc {
    fn from(m: SurvivalModel) -> Self {
        Self { family: m.family(), scale: Some(m.scale()), median: None, shape: m.shape() }
    }
}

/// A single loss-to-follow-up hazard or one per arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CensorDoc {
    Shared(f64),
    PerArm(CensorHazard),
}

impl Default for CensorDoc {
    fn default() -> Self {
        CensorDoc::Shared(0.0)
    }
}

impl CensorDoc {
    pub fn to_hazard(self) -> CensorHazard {
        match self {
            CensorDoc::Shared(phi) => CensorHazard::shared(phi),
            CensorDoc::PerArm(c) => c,
        }
    }
}

/// Trial design. `followup` may be omitted when solving for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDoc {
    pub hypothesis: Hypothesis,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup: Option<f64>,
    pub accrual_period: f64,
    #[serde(default)]
    pub censor_hazard: CensorDoc,
    #[serde(default)]
    pub accrual: AccrualSpec,
    pub control: ModelDoc,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_power() -> f64 {
    0.8
}

impl DesignDoc {
    /// Design inputs with `followup` required.
    pub fn to_inputs(&self) -> Result<DesignInputs> {
        self.to_inputs_with_control(self.control.to_model()?)
    }

    /// Design inputs at an explicit follow-up, ignoring `self.followup`.
    pub fn inputs_at(&self, followup: f64) -> Result<DesignInputs> {
        self.build(followup, self.control.to_model()?)
    }

    /// Design inputs with the control law replaced, e.g. by a pilot estimate.
    pub fn to_inputs_with_control(&self, control: SurvivalModel) -> Result<DesignInputs> {
        let tf = self.followup.ok_or_else(|| Error::invalid("followup", "required for sample size"))?;
        self.build(tf, control)
    }

    fn build(&self, followup: f64, control: SurvivalModel) -> Result<DesignInputs> {
        DesignInputs::new(
            self.hypothesis,
            self.alpha,
            self.power,
            FollowupWindow::new(followup, self.accrual_period)?,
            self.censor_hazard.to_hazard(),
            self.accrual.clone(),
            control,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationRequest {
    pub design: DesignDoc,
    /// Total enrolment across both arms.
    pub n_target: f64,
}

/// How a power run chooses its sample size and what it simulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerOptions {
    /// Fixed per-group size; when absent the size formula is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_group: Option<u64>,
    /// Family whose formula sizes the trial; defaults to the true family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula_family: Option<Family>,
    /// Size with the true parameters instead of pilot estimates.
    #[serde(default)]
    pub true_params: bool,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pilot: PilotSpec,
}

fn default_replicates() -> u64 {
    2000
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            n_per_group: None,
            formula_family: None,
            true_params: false,
            replicates: default_replicates(),
            seed: 0,
            pilot: PilotSpec::default(),
        }
    }
}

/// Power simulation request: the design's control law and alternative
/// hazard ratio are the truth being simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    pub design: DesignDoc,
    #[serde(default)]
    pub simulation: PowerOptions,
}

/// Power-curve run over an explicit grid or a built-in preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ScenarioGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<u8>,
    #[serde(default = "all_families")]
    pub formula_families: Vec<Family>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pilot: PilotSpec,
}

fn all_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

impl CurvesDoc {
    pub fn resolve_grid(&self) -> Result<ScenarioGrid> {
        let grid = match (&self.grid, self.preset) {
            (Some(g), None) => g.clone(),
            (None, Some(n)) => ScenarioGrid::preset(n)?,
            _ => return Err(Error::invalid("curves", "give exactly one of `grid` and `preset`")),
        };
        grid.validate()?;
        if self.formula_families.is_empty() {
            return Err(Error::invalid("formula_families", "must be non-empty"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDoc {
    #[serde(default = "default_addr")]
    pub addr: String,
}

pub fn default_addr() -> String {
    "127.0.0.1:8080".into()
}

impl Default for ServiceDoc {
    fn default() -> Self {
        Self { addr: default_addr() }
    }
}

/// Command-line configuration. Each subcommand reads the sections it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignDoc>,
    /// Total enrolment for `duration`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<PowerOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurvesDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceDoc>,
    /// Output file; stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}
