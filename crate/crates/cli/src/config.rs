use std::fs;
use std::path::{Path, PathBuf};

use cdnsla_core::competition::SweepSide;
use cdnsla_core::coverage::{GeometryMode, ServerLayout};
use cdnsla_core::queueing::ArrivalModel;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Reads and parses a JSON file, reporting the offending field path on
/// schema violations.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(path, None, e.to_string()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let field = (field != ".").then_some(field);
        CliError::config(path, field, e.into_inner().to_string())
    })
}

/// Checks `schema_version`, then parses the rest of the file as `T`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let mut value: serde_json::Value = read_json(path)?;
    let field = Some("schema_version".to_string());
    let Some(obj) = value.as_object_mut() else {
        return Err(CliError::config(
            path,
            None,
            "config must be a JSON object".into(),
        ));
    };
    match obj.remove("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => {
            return Err(CliError::config(
                path,
                field,
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ))
        }
        None => {
            return Err(CliError::config(
                path,
                field,
                "missing field `schema_version`".into(),
            ))
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        let field = (field != ".").then_some(field);
        CliError::config(path, field, e.into_inner().to_string())
    })
}

/// A layout given inline or as a path relative to the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(transparent)]
pub struct LayoutSource(serde_json::Value);

impl LayoutSource {
    /// `field` names where the layout sits in the config, for error paths.
    pub fn resolve(&self, base: &Path, field: &str) -> Result<ServerLayout, CliError> {
        let (layout, origin, field): (ServerLayout, PathBuf, String) = match &self.0 {
            serde_json::Value::String(p) => {
                let path = relative_to(base, p);
                (read_json(&path)?, path, String::new())
            }
            v => {
                let layout = serde_path_to_error::deserialize(v).map_err(|e| {
                    let inner = e.path().to_string();
                    let at = if inner == "." {
                        field.to_string()
                    } else {
                        format!("{field}.{inner}")
                    };
                    CliError::config(base, Some(at), e.into_inner().to_string())
                })?;
                (layout, base.to_path_buf(), field.to_string())
            }
        };
        layout.validate().map_err(|e| {
            CliError::config(&origin, (!field.is_empty()).then_some(field), e.to_string())
        })?;
        Ok(layout)
    }
}

/// Resolves `p` against the directory holding the config file `base`.
pub fn relative_to(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    ClosedForm,
    Iteration,
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RowLayout {
    /// One row per market with revenue ratios, as in the paper's tables.
    #[default]
    Ratios,
    PerCdn,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
pub struct IterationOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            damping: default_damping(),
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    10_000
}
fn default_damping() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub betas: Vec<f64>,
    #[serde(default = "one")]
    pub population: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub markets: Vec<MarketSpec>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub iteration: IterationOptions,
    #[serde(default)]
    pub rows: RowLayout,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BetaGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl BetaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            BetaGrid::List(v) => v.clone(),
            BetaGrid::Range { start, stop, step } => {
                if step.is_nan() || *step <= 0.0 || stop < start {
                    return Vec::new();
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| start + i as f64 * step).collect()
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSweepConfig {
    pub beta_fixed: f64,
    pub side: SweepSide,
    pub beta_varying: BetaGrid,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub mu: f64,
    pub psi: f64,
    pub arrivals: ArrivalModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub factors: Vec<f64>,
    #[serde(default)]
    pub chain: Option<ChainSpec>,
    #[serde(default)]
    pub simulation: Option<SimSpec>,
}

fn default_samples() -> usize {
    200_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub layout: LayoutSource,
    /// Defaults to exact geometry when the layout allows it.
    #[serde(default)]
    pub geometry: Option<GeometryMode>,
    /// Points used to place region cuts and estimate throughput.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct MdpSpec {
    pub geometry: Option<GeometryMode>,
    pub state_cap: Option<usize>,
    pub allow_origin: bool,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub layout: LayoutSource,
    #[serde(default)]
    pub geometry: Option<GeometryMode>,
    #[serde(default)]
    pub state_cap: Option<usize>,
    #[serde(default)]
    pub allow_origin: bool,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// How a simulated policy is obtained.
#[derive(Debug, Deserialize, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Static {
        /// A `static-solve` JSON artifact to reuse instead of planning.
        #[serde(default)]
        plan: Option<String>,
        #[serde(default)]
        geometry: Option<GeometryMode>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Dynamic {
        /// A `dp-solve` JSON artifact to reuse instead of solving.
        #[serde(default)]
        solution: Option<String>,
        #[serde(default)]
        geometry: Option<GeometryMode>,
        #[serde(default)]
        state_cap: Option<usize>,
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        max_iter: Option<usize>,
    },
    NearestFeasible,
    RandomFeasible,
    ExclusiveOnly,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub layout: LayoutSource,
    pub policy: PolicySpec,
    pub horizon: f64,
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default = "one")]
    pub price: f64,
    #[serde(default)]
    pub penalty: f64,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub layout: LayoutSource,
    pub policies: Vec<PolicySpec>,
    pub horizon: f64,
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default = "one")]
    pub price: f64,
    #[serde(default)]
    pub penalty: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}
