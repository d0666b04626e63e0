use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    centered_moment, estimate, excursion_probability, fit_exp_decay, fit_power_law, raw_moment,
    FitResult, MomentSeries, SeriesKind,
};
use crate::constants::{theorem_constants, LawMoments, ProblemProfile};
use crate::coupling::{coupled_increments, init_stability_coupling, MflLadderSystem};
use crate::dynamics::{simulate, CboParams, Ensemble};
use crate::error::{CboError, Result};
use crate::laws::InitialLaw;
use crate::matrix::{squared_distance, Matrix};
use crate::objectives::Objective;
use crate::rng::{RngStream, StreamDomain};

use super::config::{Baseline, ExperimentConfig};
use super::output::{Aggregate, SeriesSet, Table};
use super::ExperimentResult;

fn replicate_stream(config: &ExperimentConfig, r: u64) -> RngStream {
    RngStream::new(config.seed).with_replicate(r)
}

/// Runs `f` for replicates `0..n` on the current pool, in replicate order.
fn par_replicates<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64)
        .into_par_iter()
        .map(|r| f(r).map_err(|e| e.with_context(format!("replicate {r}"))))
        .collect()
}

fn fmt_order(p: f64) -> String {
    format!("{p}").replace('.', "_")
}

/// Observation schedule shared with [`simulate`]: step 0, every `stride`-th
/// step and the final step.
fn is_observed(step: u64, stride: u64, steps: u64) -> bool {
    step % stride == 0 || step == steps
}

/// Runs one interacting system, evaluating `observe` on every observed state.
fn observed_run<F>(
    init: &Ensemble,
    params: &CboParams,
    obj: &Objective,
    stream: &RngStream,
    stride: u64,
    observe: F,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Ensemble)>
where
    F: Fn(&Ensemble, &[f64]) -> Vec<f64>,
{
    let mut times = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let dt = params.dt;
    let mut obs = |step: u64, e: &Ensemble, m: &[f64]| {
        times.push(step as f64 * dt);
        let row = observe(e, m);
        if values.is_empty() {
            values = vec![Vec::new(); row.len()];
        }
        for (column, v) in values.iter_mut().zip(row) {
            column.push(v);
        }
    };
    let last = simulate(
        init,
        params,
        obj,
        &stream.with_domain(StreamDomain::Increments),
        &mut [&mut obs],
        stride,
    )?;
    Ok((times, values, last))
}

fn sup_over(agg: &Aggregate, keep: impl Fn(f64) -> bool) -> f64 {
    agg.times
        .iter()
        .zip(&agg.mean)
        .filter(|(t, _)| keep(**t))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

struct Halves {
    first: f64,
    second: f64,
    at_half: f64,
}

fn halves(agg: &Aggregate) -> Halves {
    let end = *agg.times.last().unwrap();
    let half = 0.5 * end;
    let tol = 1e-9 * end.max(1.0);
    let at_half = agg
        .times
        .iter()
        .position(|t| *t >= half - tol)
        .map(|i| agg.mean[i])
        .unwrap_or(f64::NAN);
    Halves {
        first: sup_over(agg, |t| t <= half + tol),
        second: sup_over(agg, |t| t >= half - tol),
        at_half,
    }
}

/// Moments of the initial laws needed by every constant chain.
fn profile_for(config: &ExperimentConfig, with_second_law: bool) -> Result<ProblemProfile> {
    let mut orders = vec![2.0, 4.0, 8.0, 2.0 * config.q, 8.0 * config.q];
    orders.sort_by(f64::total_cmp);
    orders.dedup();
    let law = config.initial_law()?;
    let mut profile = ProblemProfile::new(
        &config.params(),
        &config.objective()?,
        LawMoments::from_law(&law, &orders, &[8.0]),
    )?;
    if with_second_law {
        profile.moments_b = Some(LawMoments::from_law(&config.second_law()?, &orders, &[8.0]));
    }
    profile.c_mz = config.c_mz.clone();
    Ok(profile)
}

fn guard_subcritical(config: &ExperimentConfig, profile: &ProblemProfile) -> Result<()> {
    let threshold = profile.sigma_tilde();
    if profile.sigma >= threshold {
        if config.allow_supercritical {
            log::warn!(
                "sigma = {} >= sigma~ = {threshold:.6}; continuing as requested",
                profile.sigma
            );
        } else {
            return Err(CboError::Precondition(format!(
                "sigma = {} is not below the critical level {threshold:.6}; pass --allow-supercritical to run anyway",
                profile.sigma
            )));
        }
    }
    Ok(())
}

/// Decay fit of a replicate-mean series with its jackknife standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub fit: FitResult,
    pub rate_stderr: Option<f64>,
    pub note: Option<String>,
}

/// Fits `mean(t) ~ e^{-rate t}` over the first `fit_window` of the horizon.
///
/// The window ends before the first point whose mean is within ten standard
/// errors of zero, unless that happens within the first two points.
pub fn decay_fit(runs: &[MomentSeries], agg: &Aggregate, fit_window: f64) -> Result<DecayFit> {
    let end = *agg.times.last().unwrap();
    let limit = fit_window * end * (1.0 + 1e-12);
    let len = agg.times.len();
    let nominal = agg
        .times
        .iter()
        .take_while(|t| **t <= limit)
        .count()
        .clamp(2.min(len), len);
    let mut hi = nominal;
    let mut note = None;
    if let Some(i) = (0..nominal).find(|&i| agg.mean[i] <= 10.0 * agg.stderr[i]) {
        if i >= 2 {
            hi = i;
            let msg = format!(
                "fit window ends at t = {}: mean is within 10 standard errors of zero",
                agg.times[i]
            );
            log::info!("{}: {msg}", agg.name);
            note = Some(msg);
        } else {
            note = Some("noise floor reached within two points; nominal window kept".into());
        }
    }
    let kind = runs.first().map(|r| r.kind).unwrap_or(SeriesKind::Centered);
    let p = runs.first().and_then(|r| r.p);
    let series = MomentSeries::new(kind, p, 0, agg.times.clone(), agg.mean.clone())?;
    let fit = fit_exp_decay(&series, 0..hi)?;

    let r = runs.len();
    let rate_stderr = if r > 1 {
        let totals: Vec<f64> = (0..hi)
            .map(|i| runs.iter().map(|s| s.values[i]).sum())
            .collect();
        let mut estimates = Vec::with_capacity(r);
        for left_out in runs {
            let values: Vec<f64> = (0..hi)
                .map(|i| (totals[i] - left_out.values[i]) / (r - 1) as f64)
                .collect();
            let loo = MomentSeries::new(kind, p, 0, agg.times[..hi].to_vec(), values)?;
            match fit_exp_decay(&loo, 0..hi) {
                Ok(f) => estimates.push(f.estimate),
                Err(_) => break,
            }
        }
        (estimates.len() == r).then(|| {
            let mean = estimates.iter().sum::<f64>() / r as f64;
            let ss: f64 = estimates.iter().map(|e| (e - mean) * (e - mean)).sum();
            ((r - 1) as f64 / r as f64 * ss).sqrt()
        })
    } else {
        None
    };
    Ok(DecayFit {
        fit,
        rate_stderr,
        note,
    })
}

fn to_series(
    kind: SeriesKind,
    p: Option<f64>,
    r: u64,
    times: &[f64],
    values: Vec<f64>,
) -> Result<MomentSeries> {
    MomentSeries::new(kind, p, r, times.to_vec(), values)
}

fn push_set(result: &mut ExperimentResult, name: String, runs: Vec<MomentSeries>) -> Result<()> {
    result
        .aggregates
        .push(Aggregate::from_series(&name, &runs)?);
    result.series.push(SeriesSet { name, runs });
    Ok(())
}

// ----------------------------------------------------------------------------
// constants

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsSummary {
    pub sigma_tilde: f64,
    pub kappa: f64,
    pub lambda_2: f64,
    pub lambda_8: f64,
    pub c_mfl: Option<f64>,
    pub ln_c_mfl: Option<f64>,
    pub c_stab_1: Option<f64>,
    pub c_stab_2: Option<f64>,
    pub ln_c_stab_1: Option<f64>,
    pub ln_c_stab_2: Option<f64>,
}

pub fn run_constants(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let profile = profile_for(config, config.law_b.is_some())?;
    let report = theorem_constants(&profile, config.q)?;
    let summary = ConstantsSummary {
        sigma_tilde: report.sigma_tilde,
        kappa: report.kappa,
        lambda_2: profile.lambda_p(2.0),
        lambda_8: profile.lambda_p(8.0),
        c_mfl: report.c_mfl,
        ln_c_mfl: report.ln_c_mfl,
        c_stab_1: report.c_stab_1,
        c_stab_2: report.c_stab_2,
        ln_c_stab_1: report.ln_c_stab_1,
        ln_c_stab_2: report.ln_c_stab_2,
    };
    let mut result = ExperimentResult::new(config, super::Summary::Constants(summary));
    result.constants = Some(report);
    Ok(result)
}

// ----------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateEntry {
    pub j: usize,
    pub final_centered_2: f64,
    pub final_centered_2_stderr: f64,
    pub final_consensus_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub sizes: Vec<SimulateEntry>,
}

pub fn run_simulate(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law = config.initial_law()?;
    let orders = config.moment_orders.clone();
    let mut result = ExperimentResult::new(
        config,
        super::Summary::Simulate(SimulateSummary { sizes: Vec::new() }),
    );
    let mut entries = Vec::new();
    for &j in &config.j_ladder {
        let runs = par_replicates(config.replicates, |r| {
            let stream = replicate_stream(config, r);
            let init = law.sample(&stream.with_domain(StreamDomain::InitA), j)?;
            observed_run(&init, &params, &obj, &stream, config.stride, |e, m| {
                let mut row: Vec<f64> = orders.iter().map(|&p| centered_moment(e, p)).collect();
                row.push(raw_moment(e, 2.0));
                row.push(obj.eval(m));
                row
            })
        })?;
        let n_obs = orders.len() + 2;
        let mut columns: Vec<Vec<MomentSeries>> = vec![Vec::new(); n_obs];
        for (r, (times, values, _)) in runs.iter().enumerate() {
            for (k, v) in values.iter().enumerate() {
                let (kind, p) = if k < orders.len() {
                    (SeriesKind::Centered, Some(orders[k]))
                } else if k == orders.len() {
                    (SeriesKind::Raw, Some(2.0))
                } else {
                    (SeriesKind::Raw, None)
                };
                columns[k].push(to_series(kind, p, r as u64, times, v.clone())?);
            }
        }
        let mut names: Vec<String> = orders
            .iter()
            .map(|&p| format!("centered_p{}_J{j}", fmt_order(p)))
            .collect();
        names.push(format!("raw_p2_J{j}"));
        names.push(format!("consensus_value_J{j}"));
        for (name, runs) in names.into_iter().zip(columns) {
            push_set(&mut result, name, runs)?;
        }
        let finals: Vec<f64> = runs
            .iter()
            .map(|(_, _, e)| centered_moment(e, 2.0))
            .collect();
        let fin = estimate(&finals);
        let last_value = runs
            .iter()
            .map(|(_, v, _)| *v[n_obs - 1].last().unwrap())
            .sum::<f64>()
            / runs.len() as f64;
        entries.push(SimulateEntry {
            j,
            final_centered_2: fin.mean,
            final_centered_2_stderr: fin.stderr,
            final_consensus_value: last_value,
        });
        let last = &runs[0].2;
        result.tables.push(Table {
            name: format!("final_positions_J{j}"),
            columns: (0..last.dim()).map(|k| format!("x{k}")).collect(),
            rows: last.iter_rows().map(|x| x.to_vec()).collect(),
        });
    }
    result.summary = super::Summary::Simulate(SimulateSummary { sizes: entries });
    Ok(result)
}

// ----------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeEntry {
    pub j: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_final_gap: f64,
    pub max_final_gap: f64,
    pub mean_final_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSummary {
    pub success_radius: f64,
    pub minimizer: Vec<f64>,
    pub sizes: Vec<OptimizeEntry>,
}

pub fn run_optimize(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law = config.initial_law()?;
    let minimizer = obj
        .minimizer()
        .map(|m| m.to_vec())
        .unwrap_or_else(|| vec![0.0; obj.dimension()]);
    let mut result = ExperimentResult::new(
        config,
        super::Summary::Optimize(OptimizeSummary {
            success_radius: config.success_radius,
            minimizer: minimizer.clone(),
            sizes: Vec::new(),
        }),
    );
    let mut entries = Vec::new();
    for &j in &config.j_ladder {
        let runs = par_replicates(config.replicates, |r| {
            let stream = replicate_stream(config, r);
            let init = law.sample(&stream.with_domain(StreamDomain::InitA), j)?;
            observed_run(&init, &params, &obj, &stream, config.stride, |_, m| {
                vec![obj.eval(m), squared_distance(m, &minimizer).sqrt()]
            })
        })?;
        let mut values = Vec::new();
        let mut gaps = Vec::new();
        for (r, (times, v, _)) in runs.iter().enumerate() {
            values.push(to_series(
                SeriesKind::Raw,
                None,
                r as u64,
                times,
                v[0].clone(),
            )?);
            gaps.push(to_series(
                SeriesKind::Raw,
                None,
                r as u64,
                times,
                v[1].clone(),
            )?);
        }
        let final_gaps: Vec<f64> = gaps.iter().map(|s| *s.values.last().unwrap()).collect();
        let final_values: Vec<f64> = values.iter().map(|s| *s.values.last().unwrap()).collect();
        let successes = final_gaps
            .iter()
            .filter(|g| **g <= config.success_radius)
            .count();
        entries.push(OptimizeEntry {
            j,
            runs: final_gaps.len(),
            successes,
            success_rate: successes as f64 / final_gaps.len() as f64,
            mean_final_gap: estimate(&final_gaps).mean,
            max_final_gap: final_gaps.iter().cloned().fold(0.0, f64::max),
            mean_final_value: estimate(&final_values).mean,
        });
        push_set(&mut result, format!("consensus_value_J{j}"), values)?;
        push_set(&mut result, format!("consensus_gap_J{j}"), gaps)?;
    }
    if let super::Summary::Optimize(s) = &mut result.summary {
        s.sizes = entries;
    }
    Ok(result)
}

// ----------------------------------------------------------------------------
// moments

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsEntry {
    pub j: usize,
    pub p: f64,
    pub rate: DecayFit,
    pub lambda_p: f64,
    /// `rate >= lambda_p - 2 stderr` (stderr taken as 0 when unavailable).
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsSummary {
    pub sigma_tilde: f64,
    pub fits: BTreeMap<String, FitResult>,
    pub entries: Vec<MomentsEntry>,
}

pub fn run_moments(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law = config.initial_law()?;
    let profile = ProblemProfile::new(&params, &obj, LawMoments::default())?;
    let orders = config.moment_orders.clone();
    let mut result = ExperimentResult::new(config, super::Summary::None);
    let mut fits = BTreeMap::new();
    let mut entries = Vec::new();
    for &j in &config.j_ladder {
        let runs = par_replicates(config.replicates, |r| {
            let stream = replicate_stream(config, r);
            let init = law.sample(&stream.with_domain(StreamDomain::InitA), j)?;
            observed_run(&init, &params, &obj, &stream, config.stride, |e, _| {
                orders.iter().map(|&p| centered_moment(e, p)).collect()
            })
        })?;
        for (k, &p) in orders.iter().enumerate() {
            let series: Vec<MomentSeries> = runs
                .iter()
                .enumerate()
                .map(|(r, (times, v, _))| {
                    to_series(SeriesKind::Centered, Some(p), r as u64, times, v[k].clone())
                })
                .collect::<Result<_>>()?;
            let name = format!("centered_p{}_J{j}", fmt_order(p));
            let agg = Aggregate::from_series(&name, &series)?;
            let rate = decay_fit(&series, &agg, config.fit_window)?;
            let lambda_p = profile.lambda_p(p.max(2.0));
            let bound_holds = rate.fit.estimate >= lambda_p - 2.0 * rate.rate_stderr.unwrap_or(0.0);
            fits.insert(name.clone(), rate.fit);
            entries.push(MomentsEntry {
                j,
                p,
                rate,
                lambda_p,
                bound_holds,
            });
            result.aggregates.push(agg);
            result.series.push(SeriesSet { name, runs: series });
        }
    }
    result.summary = super::Summary::Moments(MomentsSummary {
        sigma_tilde: profile.sigma_tilde(),
        fits,
        entries,
    });
    Ok(result)
}

// ----------------------------------------------------------------------------
// mfl

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MflEntry {
    pub j: usize,
    /// `sup_t` of the replicate-mean `E_t`.
    pub sup_mean_error: f64,
    pub sup_first_half: f64,
    pub sup_second_half: f64,
    /// Replicate mean of `sup_t E_t`.
    pub mean_replicate_sup: f64,
    pub mean_replicate_sup_stderr: f64,
    /// `sup_t` of the replicate-mean weighted-mean sampling error; absent when `M = J`.
    pub sup_wm_sampling_error: Option<f64>,
    pub c_mfl_over_j: Option<f64>,
    pub ln_c_mfl_over_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MflSummary {
    pub meanfield_size: usize,
    pub sigma_tilde: f64,
    pub fits: BTreeMap<String, FitResult>,
    pub uniform_in_time: bool,
    pub sizes: Vec<MflEntry>,
}

struct MflRun {
    times: Vec<f64>,
    errors: Vec<Vec<f64>>,
    wm: Vec<Vec<f64>>,
}

pub fn run_mfl(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law = config.initial_law()?;
    let profile = profile_for(config, false)?;
    guard_subcritical(config, &profile)?;
    let report = theorem_constants(&profile, config.q)?;
    let ladder = config.j_ladder.clone();
    let m = config.oversample * config.max_j();
    let d = config.dim();
    let steps = params.steps();
    let stride = config.stride;

    let runs = par_replicates(config.replicates, |r| {
        let stream = replicate_stream(config, r);
        let mut sys = MflLadderSystem::new(&law, &ladder, m, &params, &obj, &stream)?;
        let mut source = coupled_increments(&stream, m, d);
        let mut dw = Matrix::zeros(m, d);
        let mut run = MflRun {
            times: Vec::new(),
            errors: vec![Vec::new(); ladder.len()],
            wm: vec![Vec::new(); ladder.len()],
        };
        let record = |sys: &MflLadderSystem, step: u64, run: &mut MflRun| -> Result<()> {
            run.times.push(step as f64 * params.dt);
            for (i, &j) in ladder.iter().enumerate() {
                run.errors[i].push(sys.mfl_error(i));
                if j < m {
                    run.wm[i].push(sys.wm_sampling_error(i)?);
                }
            }
            Ok(())
        };
        record(&sys, 0, &mut run)?;
        for step in 0..steps {
            source.fill(step, params.dt, &mut dw);
            sys.step(&dw)
                .map_err(|e| e.with_context(format!("step {step}")))?;
            if is_observed(step + 1, stride, steps) {
                record(&sys, step + 1, &mut run)?;
            }
        }
        Ok(run)
    })?;

    let mut result = ExperimentResult::new(config, super::Summary::None);
    result.constants = Some(report.clone());
    let mut entries = Vec::new();
    for (i, &j) in ladder.iter().enumerate() {
        let series: Vec<MomentSeries> = runs
            .iter()
            .enumerate()
            .map(|(r, run)| {
                to_series(
                    SeriesKind::MflError,
                    None,
                    r as u64,
                    &run.times,
                    run.errors[i].clone(),
                )
            })
            .collect::<Result<_>>()?;
        let name = format!("mfl_error_J{j}");
        let agg = Aggregate::from_series(&name, &series)?;
        let h = halves(&agg);
        let sups: Vec<f64> = series
            .iter()
            .map(|s| s.values.iter().cloned().fold(0.0, f64::max))
            .collect();
        let sup_est = estimate(&sups);
        let mut sup_wm = None;
        if j < m {
            let wm_series: Vec<MomentSeries> = runs
                .iter()
                .enumerate()
                .map(|(r, run)| {
                    to_series(
                        SeriesKind::WmError,
                        None,
                        r as u64,
                        &run.times,
                        run.wm[i].clone(),
                    )
                })
                .collect::<Result<_>>()?;
            let wm_name = format!("wm_sampling_error_J{j}");
            let wm_agg = Aggregate::from_series(&wm_name, &wm_series)?;
            sup_wm = Some(wm_agg.mean.iter().cloned().fold(0.0, f64::max));
            result.aggregates.push(wm_agg);
            result.series.push(SeriesSet {
                name: wm_name,
                runs: wm_series,
            });
        }
        entries.push(MflEntry {
            j,
            sup_mean_error: agg.mean.iter().cloned().fold(0.0, f64::max),
            sup_first_half: h.first,
            sup_second_half: h.second,
            mean_replicate_sup: sup_est.mean,
            mean_replicate_sup_stderr: sup_est.stderr,
            sup_wm_sampling_error: sup_wm,
            c_mfl_over_j: report.c_mfl.map(|c| c / j as f64),
            ln_c_mfl_over_j: report.ln_c_mfl.map(|c| c - (j as f64).ln()),
        });
        result.aggregates.push(agg);
        result.series.push(SeriesSet { name, runs: series });
    }
    let mut fits = BTreeMap::new();
    if ladder.len() >= 3 {
        let sups: Vec<f64> = entries.iter().map(|e| e.sup_mean_error).collect();
        match fit_power_law(&ladder, &sups) {
            Ok(fit) => {
                fits.insert("sup_mean_error".to_string(), fit);
            }
            Err(e) => log::warn!("no J-slope for the mean error: {e}"),
        }
        let rep: Vec<f64> = entries.iter().map(|e| e.mean_replicate_sup).collect();
        if let Ok(fit) = fit_power_law(&ladder, &rep) {
            fits.insert("mean_replicate_sup".to_string(), fit);
        }
    }
    let uniform_in_time = entries
        .iter()
        .all(|e| e.sup_second_half <= 2.0 * e.sup_first_half);
    result.tables.push(Table {
        name: "mfl_ladder".into(),
        columns: [
            "J",
            "sup_mean_error",
            "sup_first_half",
            "sup_second_half",
            "mean_replicate_sup",
            "mean_replicate_sup_stderr",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: entries
            .iter()
            .map(|e| {
                vec![
                    e.j as f64,
                    e.sup_mean_error,
                    e.sup_first_half,
                    e.sup_second_half,
                    e.mean_replicate_sup,
                    e.mean_replicate_sup_stderr,
                ]
            })
            .collect(),
    });
    result.summary = super::Summary::Mfl(MflSummary {
        meanfield_size: m,
        sigma_tilde: profile.sigma_tilde(),
        fits,
        uniform_in_time,
        sizes: entries,
    });
    Ok(result)
}

// ----------------------------------------------------------------------------
// stability

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityEntry {
    pub j: usize,
    pub mean_gap_0: f64,
    pub sup_mean_gap: f64,
    /// `sup_t E G_t / E G_0`.
    pub ratio: f64,
    pub sup_first_half: f64,
    pub sup_second_half: f64,
    /// `E G_t` at the first grid point at or after `T/2`.
    pub gap_at_half: f64,
    /// `C_Stab,1 E G_0 + C_Stab,2 / J^q` when finite.
    pub bound: Option<f64>,
    /// `max(sup_t (E G_t - c E G_0), floor)` with the fitted `c`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub sigma_tilde: f64,
    /// Largest ratio across the ladder divided by the smallest.
    pub ratio_spread: f64,
    /// Smallest ratio across the ladder.
    pub fitted_c: f64,
    pub fits: BTreeMap<String, FitResult>,
    pub sizes: Vec<StabilityEntry>,
}

pub fn run_stability(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law_a = config.initial_law()?;
    let law_b = config.second_law()?;
    let profile = profile_for(config, true)?;
    guard_subcritical(config, &profile)?;
    let report = theorem_constants(&profile, config.q)?;
    let d = config.dim();
    let steps = params.steps();
    let stride = config.stride;
    let ladder = config.j_ladder.clone();

    let runs = par_replicates(config.replicates, |r| {
        let stream = replicate_stream(config, r);
        let init_a = stream.with_domain(StreamDomain::InitA);
        let init_b = if config.shared_init {
            init_a
        } else {
            stream.with_domain(StreamDomain::InitB)
        };
        let mut per_size = Vec::with_capacity(ladder.len());
        for &j in &ladder {
            let mut sys =
                init_stability_coupling(&law_a, &law_b, j, &params, &obj, &init_a, &init_b)?;
            let mut source = coupled_increments(&stream, j, d);
            let mut dw = Matrix::zeros(j, d);
            let mut times = vec![0.0];
            let mut gaps = vec![sys.stability_gap()];
            for step in 0..steps {
                source.fill(step, params.dt, &mut dw);
                sys.step(&dw).map_err(|e| {
                    e.with_context(format!("J={j}"))
                        .with_context(format!("step {step}"))
                })?;
                if is_observed(step + 1, stride, steps) {
                    times.push((step + 1) as f64 * params.dt);
                    gaps.push(sys.stability_gap());
                }
            }
            per_size.push((times, gaps));
        }
        Ok(per_size)
    })?;

    let mut result = ExperimentResult::new(config, super::Summary::None);
    result.constants = Some(report.clone());
    let mut entries = Vec::new();
    let mut floors = Vec::new();
    for (i, &j) in ladder.iter().enumerate() {
        let series: Vec<MomentSeries> = runs
            .iter()
            .enumerate()
            .map(|(r, sizes)| {
                to_series(
                    SeriesKind::StabilityGap,
                    None,
                    r as u64,
                    &sizes[i].0,
                    sizes[i].1.clone(),
                )
            })
            .collect::<Result<_>>()?;
        let name = format!("stability_gap_J{j}");
        let agg = Aggregate::from_series(&name, &series)?;
        let h = halves(&agg);
        let mean_gap_0 = agg.mean[0];
        let sup_mean_gap = agg.mean.iter().cloned().fold(0.0, f64::max);
        let bound = match (report.c_stab_1, report.c_stab_2) {
            (Some(c1), Some(c2)) => {
                Some(c1 * mean_gap_0 + c2 / (j as f64).powf(config.q)).filter(|b| b.is_finite())
            }
            _ => None,
        };
        floors.push(agg.stderr.iter().cloned().fold(f64::MIN_POSITIVE, f64::max));
        entries.push(StabilityEntry {
            j,
            mean_gap_0,
            sup_mean_gap,
            ratio: sup_mean_gap / mean_gap_0,
            sup_first_half: h.first,
            sup_second_half: h.second,
            gap_at_half: h.at_half,
            bound,
            residual: 0.0,
        });
        result.aggregates.push(agg);
        result.series.push(SeriesSet { name, runs: series });
    }
    let fitted_c = entries
        .iter()
        .map(|e| e.ratio)
        .fold(f64::INFINITY, f64::min);
    let ratio_max = entries.iter().map(|e| e.ratio).fold(0.0, f64::max);
    for (i, e) in entries.iter_mut().enumerate() {
        let agg = &result.aggregates[result.aggregates.len() - ladder.len() + i];
        let excess = agg
            .mean
            .iter()
            .map(|g| g - fitted_c * e.mean_gap_0)
            .fold(f64::NEG_INFINITY, f64::max);
        e.residual = excess.max(floors[i]);
    }
    let mut fits = BTreeMap::new();
    if ladder.len() >= 3 {
        let residuals: Vec<f64> = entries.iter().map(|e| e.residual).collect();
        if let Ok(fit) = fit_power_law(&ladder, &residuals) {
            fits.insert("residual".to_string(), fit);
        }
    }
    result.summary = super::Summary::Stability(StabilitySummary {
        sigma_tilde: profile.sigma_tilde(),
        ratio_spread: ratio_max / fitted_c,
        fitted_c,
        fits,
        sizes: entries,
    });
    Ok(result)
}

// ----------------------------------------------------------------------------
// concentration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationEntry {
    pub j: usize,
    pub runs: usize,
    pub hits: usize,
    pub probability: f64,
    /// Wilson 95% interval.
    pub band_lo: f64,
    pub band_hi: f64,
    pub baseline: f64,
    /// `C_bad A^{-q} J^{-q/2} M_{2q}` when finite.
    pub ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationSummary {
    pub q: f64,
    pub kappa: f64,
    pub threshold: f64,
    pub baseline: Baseline,
    pub kappa_limit: f64,
    pub c_bad: Option<f64>,
    pub sizes: Vec<ConcentrationEntry>,
}

/// Wilson score interval at 95% for `hits` out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054f64;
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn run_concentration(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.params();
    let obj = config.objective()?;
    let law = config.initial_law()?;
    let q = config.q;
    if q < 2.0 {
        return Err(CboError::Config(format!(
            "concentration needs q >= 2, got {q}"
        )));
    }
    let profile = profile_for(config, false)?;
    let kappa = config.kappa.unwrap_or(profile.lambda_p(8.0) / 8.0);
    let kappa_limit = profile.lambda_p(2.0).min(profile.lambda_p(2.0 * q) / q);
    if !(kappa < kappa_limit) {
        let msg = format!(
            "kappa = {kappa} must lie below min(lambda_2, lambda_{}/{q}) = {kappa_limit}",
            2.0 * q
        );
        if config.allow_supercritical {
            log::warn!("{msg}; continuing as requested");
        } else {
            return Err(CboError::Precondition(msg));
        }
    }
    let c_bad = profile
        .c_bad_particle(q, kappa)
        .ok()
        .filter(|c| c.is_finite());
    let m_2q = profile.moments.centered(2.0 * q)?;
    let population = profile.moments.centered(2.0)?;

    let mut result = ExperimentResult::new(config, super::Summary::None);
    let mut entries = Vec::new();
    for &j in &config.j_ladder {
        let runs = par_replicates(config.replicates, |r| {
            let stream = replicate_stream(config, r);
            let init = law.sample(&stream.with_domain(StreamDomain::InitA), j)?;
            observed_run(&init, &params, &obj, &stream, config.stride, |e, _| {
                vec![centered_moment(e, 2.0)]
            })
        })?;
        let series: Vec<MomentSeries> = runs
            .iter()
            .enumerate()
            .map(|(r, (times, v, _))| {
                to_series(
                    SeriesKind::Centered,
                    Some(2.0),
                    r as u64,
                    times,
                    v[0].clone(),
                )
            })
            .collect::<Result<_>>()?;
        let baseline = match config.baseline {
            Baseline::Population => population,
            Baseline::Empirical => {
                estimate(&series.iter().map(|s| s.values[0]).collect::<Vec<_>>()).mean
            }
        };
        let probability = excursion_probability(&series, kappa, config.threshold, baseline)?;
        let hits = (probability * series.len() as f64).round() as usize;
        let (band_lo, band_hi) = wilson_interval(hits, series.len());
        let ceiling = c_bad
            .map(|c| c * config.threshold.powf(-q) * (j as f64).powf(-q / 2.0) * m_2q)
            .filter(|c| c.is_finite());
        entries.push(ConcentrationEntry {
            j,
            runs: series.len(),
            hits,
            probability,
            band_lo,
            band_hi,
            baseline,
            ceiling,
        });
        push_set(&mut result, format!("centered_p2_J{j}"), series)?;
    }
    result.tables.push(Table {
        name: "excursions".into(),
        columns: ["J", "runs", "hits", "probability", "band_lo", "band_hi"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: entries
            .iter()
            .map(|e| {
                vec![
                    e.j as f64,
                    e.runs as f64,
                    e.hits as f64,
                    e.probability,
                    e.band_lo,
                    e.band_hi,
                ]
            })
            .collect(),
    });
    result.summary = super::Summary::Concentration(ConcentrationSummary {
        q,
        kappa,
        threshold: config.threshold,
        baseline: config.baseline,
        kappa_limit,
        c_bad,
        sizes: entries,
    });
    Ok(result)
}

// ----------------------------------------------------------------------------
// wm-mc

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WmMcEntry {
    pub j: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// `C_WM,2 M_2 / J`.
    pub ceiling: f64,
    /// `mean * J` and its standard error.
    pub scaled: f64,
    pub scaled_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WmMcSummary {
    pub reference_size: usize,
    pub reference_point: Vec<f64>,
    pub second_moment: f64,
    pub fits: BTreeMap<String, FitResult>,
    pub sizes: Vec<WmMcEntry>,
}

pub fn run_wm_mc(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let obj = config.objective()?;
    let law: InitialLaw = config.initial_law()?;
    let alpha = config.params.alpha;
    let reference_size = config.reference_size.unwrap_or(100 * config.max_j());
    if reference_size < 100 * config.max_j() {
        return Err(CboError::Config(format!(
            "reference_size = {reference_size} must be at least 100 * max(j_ladder) = {}",
            100 * config.max_j()
        )));
    }
    let profile = profile_for(config, false)?;
    let second_moment = profile.moments.centered(2.0)?;
    let master = RngStream::new(config.seed);
    let reference =
        crate::analysis::reference_consensus(&law, &obj, alpha, reference_size, &master)?;

    let mut result = ExperimentResult::new(config, super::Summary::None);
    let mut entries = Vec::new();
    for &j in &config.j_ladder {
        let values = par_replicates(config.replicates, |r| {
            let sample = law.sample(
                &master.with_domain(StreamDomain::InitA).with_replicate(r),
                j,
            )?;
            Ok(squared_distance(
                &crate::dynamics::consensus_point(&sample, alpha, &obj)?,
                &reference,
            ))
        })?;
        let e = estimate(&values);
        entries.push(WmMcEntry {
            j,
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
            ceiling: crate::analysis::wm_mc_ceiling(&profile, j)?,
            scaled: e.mean * j as f64,
            scaled_stderr: e.stderr * j as f64,
        });
    }
    let mut fits = BTreeMap::new();
    if config.j_ladder.len() >= 3 {
        let means: Vec<f64> = entries.iter().map(|e| e.mean).collect();
        fits.insert(
            "squared_error".to_string(),
            fit_power_law(&config.j_ladder, &means)?,
        );
    }
    result.tables.push(Table {
        name: "wm_error".into(),
        columns: [
            "J",
            "mean",
            "stderr",
            "n",
            "ceiling",
            "scaled",
            "scaled_stderr",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: entries
            .iter()
            .map(|e| {
                vec![
                    e.j as f64,
                    e.mean,
                    e.stderr,
                    e.n as f64,
                    e.ceiling,
                    e.scaled,
                    e.scaled_stderr,
                ]
            })
            .collect(),
    });
    result.summary = super::Summary::WmMc(WmMcSummary {
        reference_size,
        reference_point: reference,
        second_moment,
        fits,
        sizes: entries,
    });
    Ok(result)
}
