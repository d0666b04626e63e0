//! Experiment drivers shared by the `cbo` binary and the tests.

pub mod config;
pub mod output;
mod runners;

use std::time::Instant;

use serde::Serialize;

use crate::constants::ConstantsReport;
use crate::error::{CboError, Result};

pub use config::{
    apply_override, Baseline, ExperimentConfig, ExperimentKind, LawSpec, ObjectiveSpec, ParamsSpec,
};
pub use output::{
    aggregate_csv, format_float, series_csv, table_csv, write_result, Aggregate, SeriesSet, Table,
};
pub use runners::{
    decay_fit, run_concentration, run_constants, run_mfl, run_moments, run_optimize, run_simulate,
    run_stability, run_wm_mc, wilson_interval, ConcentrationEntry, ConcentrationSummary,
    ConstantsSummary, DecayFit, MflEntry, MflSummary, MomentsEntry, MomentsSummary, OptimizeEntry,
    OptimizeSummary, SimulateEntry, SimulateSummary, StabilityEntry, StabilitySummary, WmMcEntry,
    WmMcSummary,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-experiment headline numbers written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Summary {
    None,
    Constants(ConstantsSummary),
    Simulate(SimulateSummary),
    Optimize(OptimizeSummary),
    Moments(MomentsSummary),
    Mfl(MflSummary),
    Stability(StabilitySummary),
    Concentration(ConcentrationSummary),
    WmMc(WmMcSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub series: Vec<SeriesSet>,
    pub aggregates: Vec<Aggregate>,
    pub tables: Vec<Table>,
    pub summary: Summary,
    pub constants: Option<ConstantsReport>,
}

#[derive(Serialize)]
pub struct SummaryDocument<'a> {
    pub version: &'static str,
    pub kind: ExperimentKind,
    pub config: serde_json::Value,
    pub summary: &'a Summary,
}

impl ExperimentResult {
    pub fn new(config: &ExperimentConfig, summary: Summary) -> Self {
        ExperimentResult {
            kind: config.kind.unwrap_or(ExperimentKind::Constants),
            config: config.clone(),
            series: Vec::new(),
            aggregates: Vec::new(),
            tables: Vec::new(),
            summary,
            constants: None,
        }
    }

    pub fn summary_document(&self) -> SummaryDocument<'_> {
        SummaryDocument {
            version: VERSION,
            kind: self.kind,
            config: serde_json::to_value(&self.config).expect("configuration serializes"),
            summary: &self.summary,
        }
    }

    pub fn aggregate(&self, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.name == name)
    }

    pub fn series_set(&self, name: &str) -> Option<&SeriesSet> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Validates `config` and runs experiment `kind` on the current thread pool.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.check_kind(kind)?;
    config.validate()?;
    let started = Instant::now();
    let mut result = match kind {
        ExperimentKind::Constants => run_constants(config),
        ExperimentKind::Simulate => run_simulate(config),
        ExperimentKind::Optimize => run_optimize(config),
        ExperimentKind::Moments => run_moments(config),
        ExperimentKind::Mfl => run_mfl(config),
        ExperimentKind::Stability => run_stability(config),
        ExperimentKind::Concentration => run_concentration(config),
        ExperimentKind::WmMc => run_wm_mc(config),
    }?;
    result.kind = kind;
    log::info!("{kind} finished in {:.2?}", started.elapsed());
    Ok(result)
}

/// [`run_experiment`] on a dedicated pool of `threads` workers. Results do not
/// depend on the thread count.
pub fn run_with_threads(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentResult> {
    match threads {
        None => run_experiment(kind, config),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CboError::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| run_experiment(kind, config))
        }
    }
}
