//! Moment functionals, exact small-instance Wasserstein-2, regression fits,
//! excursion probabilities and direct checks of the weighted-mean estimates.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::constants::ProblemProfile;
use crate::dynamics::{consensus_point, mean_point, Ensemble};
use crate::error::{CboError, Result};
use crate::laws::InitialLaw;
use crate::matrix::{squared_distance, Matrix};
use crate::objectives::Objective;
use crate::rng::{RngStream, StreamDomain};

/// Largest ensemble handled by [`exact_w2`].
pub const EXACT_W2_LIMIT: usize = 512;

fn power_of_squared(r2: f64, p: f64) -> f64 {
    if p == 2.0 {
        r2
    } else {
        r2.powf(p / 2.0)
    }
}

/// `(1/J) sum_j |x_j - mean|^p`.
pub fn centered_moment(ens: &Ensemble, p: f64) -> f64 {
    let m = mean_point(ens);
    let total: f64 = ens
        .iter_rows()
        .map(|x| power_of_squared(squared_distance(x, &m), p))
        .sum();
    total / ens.particles() as f64
}

/// `(1/J) sum_j |x_j|^p`.
pub fn raw_moment(ens: &Ensemble, p: f64) -> f64 {
    let total: f64 = ens
        .iter_rows()
        .map(|x| power_of_squared(x.iter().map(|v| v * v).sum(), p))
        .sum();
    total / ens.particles() as f64
}

/// `(1/J) sum |z_j|^2 - (1/J) sum |z_j - m|^2 - |m|^2`, zero up to round-off.
pub fn huygens_residual(points: &Ensemble) -> f64 {
    let m = mean_point(points);
    raw_moment(points, 2.0) - centered_moment(points, 2.0) - m.iter().map(|v| v * v).sum::<f64>()
}

/// `(1/J) sum_j |a_j - b_j|^2`, the cost of the identity pairing.
pub fn identity_pairing_cost(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| squared_distance(x, y))
        .sum();
    Ok(total / a.particles() as f64)
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.particles() != b.particles() || a.dim() != b.dim() {
        return Err(CboError::Input(format!(
            "ensembles have shapes {}x{} and {}x{}",
            a.particles(),
            a.dim(),
            b.particles(),
            b.dim()
        )));
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns `assignment[row] = column`.
pub fn assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "assignment needs a square cost matrix");
    // 1-based arrays; index 0 is the virtual root column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0usize;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[col0] = true;
            let i0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            let cost_row = cost.row(i0 - 1);
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost_row[col - 1] - u[i0] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[matched_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for col in 1..=n {
        out[matched_row[col] - 1] = col - 1;
    }
    out
}

/// Exact `W_2` between two equal-size empirical measures.
pub fn exact_w2(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.particles();
    if n > EXACT_W2_LIMIT {
        return Err(CboError::Scale(format!(
            "exact W2 is limited to {EXACT_W2_LIMIT} particles (got {n}); use the identity-pairing bound instead"
        )));
    }
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        let row = cost.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = squared_distance(a.row(i), b.row(j));
        }
    }
    let perm = assignment(&cost);
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.row(i)[j]).sum();
    Ok((total / n as f64).sqrt())
}

/// `W_2` estimate: exact up to [`EXACT_W2_LIMIT`] particles, the
/// identity-pairing upper bound beyond. The flag is `true` when exact.
pub fn w2_estimate(a: &Ensemble, b: &Ensemble) -> Result<(f64, bool)> {
    if a.particles() <= EXACT_W2_LIMIT {
        Ok((exact_w2(a, b)?, true))
    } else {
        Ok((identity_pairing_cost(a, b)?.sqrt(), false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesKind {
    Centered,
    Raw,
    MflError,
    StabilityGap,
    WmError,
}

/// A scalar observable on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub kind: SeriesKind,
    /// Moment order for `Centered` and `Raw`.
    pub p: Option<f64>,
    pub replicate: u64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MomentSeries {
    pub fn new(
        kind: SeriesKind,
        p: Option<f64>,
        replicate: u64,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if times.len() != values.len() {
            return Err(CboError::Input(format!(
                "series has {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CboError::Input(
                "series times must be strictly increasing".into(),
            ));
        }
        Ok(MomentSeries {
            kind,
            p,
            replicate,
            times,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Decay rate or slope.
    pub estimate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window_lo: usize,
    /// Exclusive end of the window.
    pub window_hi: usize,
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, r^2)`.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    // a constant response is fitted exactly
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, intercept, r_squared)
}

/// Least squares on `(t, ln value)` over `window`; the estimate is the
/// negated slope.
pub fn fit_exp_decay(series: &MomentSeries, window: Range<usize>) -> Result<FitResult> {
    if window.end > series.len() || window.len() < 2 {
        return Err(CboError::Fit(format!(
            "fit window {}..{} needs at least two points within a series of length {}",
            window.start,
            window.end,
            series.len()
        )));
    }
    let mut ys = Vec::with_capacity(window.len());
    for i in window.clone() {
        let v = series.values[i];
        if !(v > 0.0) {
            return Err(CboError::Fit(format!(
                "value {v} at index {i} (t = {}) is not positive; shrink the fit window",
                series.times[i]
            )));
        }
        ys.push(v.ln());
    }
    let (slope, intercept, r_squared) = least_squares(&series.times[window.clone()], &ys);
    Ok(FitResult {
        estimate: -slope,
        intercept,
        r_squared,
        window_lo: window.start,
        window_hi: window.end,
    })
}

/// Least squares on `(ln J, ln error)`; the estimate is the slope.
pub fn fit_power_law(sizes: &[usize], errors: &[f64]) -> Result<FitResult> {
    if sizes.len() != errors.len() {
        return Err(CboError::Input("sizes and errors differ in length".into()));
    }
    if sizes.len() < 3 {
        return Err(CboError::Fit(
            "a power-law fit needs at least three points".into(),
        ));
    }
    if let Some(i) = errors.iter().position(|e| !(*e > 0.0)) {
        return Err(CboError::Fit(format!(
            "error {} at J = {} is not positive",
            errors[i], sizes[i]
        )));
    }
    if sizes.contains(&0) {
        return Err(CboError::Fit("sizes must be positive".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|&j| (j as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(FitResult {
        estimate: slope,
        intercept,
        r_squared,
        window_lo: 0,
        window_hi: sizes.len(),
    })
}

/// Fraction of runs whose grid maximum of `e^{kappa t} M_2(t)` reaches
/// `baseline + threshold`.
pub fn excursion_probability(
    runs: &[MomentSeries],
    kappa: f64,
    threshold: f64,
    baseline: f64,
) -> Result<f64> {
    if runs.is_empty() {
        return Err(CboError::Input(
            "no runs to estimate an excursion probability from".into(),
        ));
    }
    let level = baseline + threshold;
    let hits = runs
        .iter()
        .filter(|run| {
            run.times
                .iter()
                .zip(&run.values)
                .any(|(t, v)| (kappa * t).exp() * v >= level)
        })
        .count();
    Ok(hits as f64 / runs.len() as f64)
}

/// Both sides of `|M_alpha(mu) - M(mu)|^q <= e^{alpha (f_upper - f_lower)} M_q(mu)`.
pub fn jensen_gap(ens: &Ensemble, alpha: f64, obj: &Objective, q: f64) -> Result<(f64, f64)> {
    let weighted = consensus_point(ens, alpha, obj)?;
    let mean = mean_point(ens);
    let lhs = power_of_squared(squared_distance(&weighted, &mean), q);
    let rhs = (alpha * obj.range()).exp() * centered_moment(ens, q);
    Ok((lhs, rhs))
}

/// Both sides of the weighted-mean stability estimate:
/// `lhs = |M_alpha(a) - M(a) - M_alpha(b) + M(b)|`,
/// `rhs = C_M (sqrt(M_2(a)) + sqrt(M_2(b))) W_2(a, b)`.
pub fn wm_stability_gap(
    a: &Ensemble,
    b: &Ensemble,
    alpha: f64,
    obj: &Objective,
) -> Result<(f64, f64)> {
    let w2 = exact_w2(a, b)?;
    let (wa, wb) = (
        consensus_point(a, alpha, obj)?,
        consensus_point(b, alpha, obj)?,
    );
    let (ma, mb) = (mean_point(a), mean_point(b));
    let lhs = (0..a.dim())
        .map(|k| {
            let v = wa[k] - ma[k] - wb[k] + mb[k];
            v * v
        })
        .sum::<f64>()
        .sqrt();
    let c_m = 2.0 * alpha * obj.lipschitz() * (2.0 * alpha * obj.range()).exp();
    let rhs = c_m * (centered_moment(a, 2.0).sqrt() + centered_moment(b, 2.0).sqrt()) * w2;
    Ok((lhs, rhs))
}

/// Mean of replicate values with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error (`sd / sqrt(n)`, zero for a single value).
pub fn estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate { mean, stderr, n }
}

/// Monte Carlo estimate of `E|M_alpha(mu_J) - M_alpha(rho)|^2`.
///
/// The law's consensus point is approximated once by a sample of size
/// `reference_size` from the reference streams of `stream`; replicate `r`
/// draws its `J` particles from the initial-position streams of replicate `r`.
pub fn wm_mc_error(
    law: &InitialLaw,
    obj: &Objective,
    alpha: f64,
    j: usize,
    reference_size: usize,
    replicates: usize,
    stream: &RngStream,
) -> Result<Estimate> {
    if j == 0 || replicates == 0 {
        return Err(CboError::Config(
            "J and the replicate count must be positive".into(),
        ));
    }
    if reference_size < 100 * j {
        return Err(CboError::Config(format!(
            "reference size N = {reference_size} must be at least 100 J = {}",
            100 * j
        )));
    }
    let reference = reference_consensus(law, obj, alpha, reference_size, stream)?;
    wm_mc_error_against(law, obj, alpha, j, &reference, replicates, stream)
}

/// Consensus point of a size-`n` sample from the reference streams.
pub fn reference_consensus(
    law: &InitialLaw,
    obj: &Objective,
    alpha: f64,
    n: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let sample = law.sample(
        &stream
            .with_domain(StreamDomain::Reference)
            .with_replicate(0),
        n,
    )?;
    consensus_point(&sample, alpha, obj)
}

/// [`wm_mc_error`] against a given reference point, without the size check.
pub fn wm_mc_error_against(
    law: &InitialLaw,
    obj: &Objective,
    alpha: f64,
    j: usize,
    reference: &[f64],
    replicates: usize,
    stream: &RngStream,
) -> Result<Estimate> {
    let mut values = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let sample = law.sample(
            &stream
                .with_domain(StreamDomain::InitA)
                .with_replicate(r as u64),
            j,
        )?;
        values.push(squared_distance(
            &consensus_point(&sample, alpha, obj)?,
            reference,
        ));
    }
    Ok(estimate(&values))
}

/// `C_WM,2 M_2(rho) / J`, the per-size ceiling of [`wm_mc_error`].
pub fn wm_mc_ceiling(profile: &ProblemProfile, j: usize) -> Result<f64> {
    Ok(profile.c_wm_p(2.0)? * profile.moments.centered(2.0)? / j as f64)
}
