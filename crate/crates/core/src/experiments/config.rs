//! Experiment configuration: a TOML document with a fixed set of keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{CboParams, NoiseKind};
use crate::error::{CboError, Result};
use crate::laws::{InitialLaw, LawKind};
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constants,
    Simulate,
    Optimize,
    Moments,
    Mfl,
    Stability,
    Concentration,
    WmMc,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Constants,
        ExperimentKind::Simulate,
        ExperimentKind::Optimize,
        ExperimentKind::Moments,
        ExperimentKind::Mfl,
        ExperimentKind::Stability,
        ExperimentKind::Concentration,
        ExperimentKind::WmMc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Mfl => "mfl",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::WmMc => "wm-mc",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = CboError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CboError::Config(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub name: String,
    pub dimension: usize,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimizer: Option<Vec<f64>>,
    /// Length scale of `soft-rastrigin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub alpha: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub name: LawKind,
    /// One coordinate per dimension, or a single value used for every coordinate.
    pub location: Vec<f64>,
    pub scale: f64,
}

/// Reference level of the excursion events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// `M_2` of the initial law.
    #[default]
    Population,
    /// Replicate mean of `M_2` of the initial empirical measures.
    Empirical,
}

fn default_dt() -> f64 {
    1e-2
}
fn default_horizon() -> f64 {
    10.0
}
fn default_replicates() -> usize {
    64
}
fn default_ladder() -> Vec<usize> {
    vec![16, 32, 64, 128, 256, 512]
}
fn default_oversample() -> usize {
    16
}
fn default_stride() -> u64 {
    10
}
fn default_fit_window() -> f64 {
    0.6
}
fn default_q() -> f64 {
    2.0
}
fn default_threshold() -> f64 {
    1.0
}
fn default_orders() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}
fn default_success_radius() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_ladder")]
    pub j_ladder: Vec<usize>,
    /// Mean-field ensemble size is `oversample * max(j_ladder)`.
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    /// Reference sample size of `wm-mc`; defaults to `100 * max(j_ladder)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_size: Option<usize>,
    /// Observation stride in steps.
    #[serde(default = "default_stride")]
    pub stride: u64,
    /// Fraction of the horizon used by decay-rate fits.
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
    /// Output directory; not part of the echoed configuration.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Run even when `sigma >= sigma_tilde` or `kappa` is inadmissible.
    #[serde(default)]
    pub allow_supercritical: bool,
    pub objective: ObjectiveSpec,
    pub params: ParamsSpec,
    pub law: LawSpec,
    /// Second initial law of the stability coupling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law_b: Option<LawSpec>,
    /// Draw both stability copies from the same initial streams.
    #[serde(default)]
    pub shared_init: bool,
    #[serde(default = "default_q")]
    pub q: f64,
    /// Defaults to `lambda_8 / 8`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Excursion threshold `A`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default = "default_orders")]
    pub moment_orders: Vec<f64>,
    /// Marcinkiewicz–Zygmund constants as `[p, value]` pairs.
    #[serde(default)]
    pub c_mz: Vec<[f64; 2]>,
    /// `optimize` counts a run as successful when the final consensus is this close to the minimizer.
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `path` (dot-separated) in `doc` to the TOML value `raw`; bare words
/// that are not TOML literals are taken as strings.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CboError::Config(format!(
            "override '{assignment}' is not of the form key=value"
        ))
    })?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CboError::Config(format!(
            "override key '{path}' is malformed"
        )));
    }
    let mut table = doc;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CboError::Config(format!("override key '{path}': '{key}' is not a table"))
        })?;
    }
    table.insert(
        keys[keys.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document, applying `overrides` before typed decoding so
    /// overridden keys are checked like any other.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CboError::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CboError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CboError::io(path, e))?;
        ExperimentConfig::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CboError::Config(m));
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.j_ladder.is_empty() || self.j_ladder[0] == 0 {
            return fail("j_ladder must be a nonempty list of positive sizes".into());
        }
        if self.j_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!(
                "j_ladder must be strictly increasing, got {:?}",
                self.j_ladder
            ));
        }
        if self.oversample == 0 || self.stride == 0 {
            return fail("oversample and stride must be positive".into());
        }
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return fail(format!(
                "fit_window must lie in (0, 1], got {}",
                self.fit_window
            ));
        }
        if !(self.threshold > 0.0) {
            return fail(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        if !(self.q >= 0.5 && self.q.is_finite()) {
            return fail(format!("q must be finite and >= 1/2, got {}", self.q));
        }
        if self
            .moment_orders
            .iter()
            .any(|p| !(*p >= 1.0 && p.is_finite()))
        {
            return fail("moment orders must be finite and >= 1".into());
        }
        if !(self.success_radius > 0.0) {
            return fail("success_radius must be positive".into());
        }
        self.params().validate()?;
        self.objective()?;
        self.initial_law()?;
        if self.law_b.is_some() {
            self.second_law()?;
        }
        Ok(())
    }

    /// Fails when the file names a different experiment than the subcommand.
    pub fn check_kind(&self, requested: ExperimentKind) -> Result<()> {
        match self.kind {
            Some(k) if k != requested => Err(CboError::Config(format!(
                "configuration is for '{k}' but '{requested}' was requested"
            ))),
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> CboParams {
        let p = self.params;
        CboParams {
            alpha: p.alpha,
            sigma: p.sigma,
            noise: p.noise,
            dt: p.dt,
            horizon: p.horizon,
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dimension
    }

    pub fn objective(&self) -> Result<Objective> {
        let spec = &self.objective;
        let minimizer = spec
            .minimizer
            .clone()
            .unwrap_or_else(|| vec![0.0; spec.dimension]);
        Objective::builtin(&spec.name, spec.dimension, &minimizer, spec.scale)
    }

    fn build_law(&self, spec: &LawSpec, which: &str) -> Result<InitialLaw> {
        let d = self.dim();
        let location = match spec.location.len() {
            1 => vec![spec.location[0]; d],
            n if n == d => spec.location.clone(),
            n => {
                return Err(CboError::Config(format!(
                    "{which}.location has {n} coordinates, expected 1 or {d}"
                )))
            }
        };
        InitialLaw::new(spec.name, location, spec.scale)
    }

    pub fn initial_law(&self) -> Result<InitialLaw> {
        self.build_law(&self.law, "law")
    }

    pub fn second_law(&self) -> Result<InitialLaw> {
        let spec = self.law_b.as_ref().ok_or_else(|| {
            CboError::Config("this experiment needs a second initial law [law_b]".into())
        })?;
        self.build_law(spec, "law_b")
    }

    pub fn max_j(&self) -> usize {
        *self.j_ladder.last().unwrap()
    }

    /// Deterministic JSON echo (keys sorted).
    pub fn echo(&self) -> String {
        let value = serde_json::to_value(self).expect("configuration serializes");
        serde_json::to_string(&value).expect("configuration serializes")
    }
}
