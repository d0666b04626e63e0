//! CBO state, the consensus (weighted mean) operator, noise operators and
//! the explicit Euler–Maruyama step.
//!
//! The step freezes the consensus point at the start of the step:
//!
//! ```text
//! m   = M_alpha(ensemble)
//! x_j <- x_j - (x_j - m) dt + sigma S(x_j - m) dW_j
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::matrix::{norm, Matrix};
use crate::objectives::Objective;
use crate::rng::{IncrementSource, RngStream};

/// Particle positions (one row per particle) at a simulation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    positions: Matrix,
    time: f64,
}

impl Ensemble {
    pub fn new(positions: Matrix, time: f64) -> Result<Self> {
        if positions.rows() == 0 || positions.cols() == 0 {
            return Err(CboError::Input(
                "an ensemble needs at least one particle and one dimension".into(),
            ));
        }
        if let Some(i) = positions.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(CboError::Input(format!(
                "non-finite coordinate in particle {}",
                i / positions.cols()
            )));
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(CboError::Input(format!(
                "ensemble time must be finite and nonnegative, got {time}"
            )));
        }
        Ok(Ensemble { positions, time })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Ensemble::new(Matrix::from_rows(rows)?, 0.0)
    }

    pub fn positions(&self) -> &Matrix {
        &self.positions
    }

    pub fn particles(&self) -> usize {
        self.positions.rows()
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.positions.row(j)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.positions.iter_rows()
    }

    /// Sub-ensemble of the first `n` particles.
    pub fn head(&self, n: usize) -> Ensemble {
        Ensemble {
            positions: self.positions.head(n),
            time: self.time,
        }
    }

    /// Every particle shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Ensemble {
        let mut positions = self.positions.clone();
        for j in 0..positions.rows() {
            positions
                .row_mut(j)
                .iter_mut()
                .zip(offset)
                .for_each(|(x, c)| *x += c);
        }
        Ensemble {
            positions,
            time: self.time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `S(v) = |v| I`.
    Isotropic,
    /// `S(v) = diag(v)`.
    Anisotropic,
}

impl NoiseKind {
    /// The noise prefactor: `d` for isotropic noise, `1` for anisotropic noise.
    pub fn tau(self, dim: usize) -> f64 {
        match self {
            NoiseKind::Isotropic => dim as f64,
            NoiseKind::Anisotropic => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CboParams {
    pub alpha: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    pub dt: f64,
    pub horizon: f64,
}

impl CboParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CboError::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CboError::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CboError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(CboError::Config(format!(
                "horizon must be finite and >= 0, got {}",
                self.horizon
            )));
        }
        if self.horizon > 0.0 && self.dt > self.horizon {
            return Err(CboError::Config(format!(
                "dt = {} exceeds the horizon T = {}",
                self.dt, self.horizon
            )));
        }
        Ok(())
    }

    /// `ceil(T / dt)`, ignoring round-off of order 1e-9 steps.
    pub fn steps(&self) -> u64 {
        let ratio = self.horizon / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as u64
        } else {
            ratio.ceil() as u64
        }
    }
}

fn check_dimension(ens: &Ensemble, obj: &Objective) -> Result<()> {
    if ens.dim() != obj.dimension() {
        return Err(CboError::Input(format!(
            "ensemble dimension {} does not match objective dimension {}",
            ens.dim(),
            obj.dimension()
        )));
    }
    Ok(())
}

/// Fills `out` with the weighted mean `sum_j x_j w_j / sum_j w_j`,
/// `w_j = exp(-alpha (f(x_j) - min_k f(x_k)))`. Summation is in row order.
fn consensus_into(
    positions: &Matrix,
    alpha: f64,
    obj: &Objective,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) -> Result<()> {
    scratch.clear();
    let mut f_min = f64::INFINITY;
    for (j, x) in positions.iter_rows().enumerate() {
        let value = obj.eval(x);
        if !value.is_finite() {
            return Err(CboError::numeric(format!(
                "objective is not finite at particle {j}"
            )));
        }
        f_min = f_min.min(value);
        scratch.push(value);
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (x, value) in positions.iter_rows().zip(scratch.iter()) {
        let w = if alpha == 0.0 {
            1.0
        } else {
            (-alpha * (value - f_min)).exp()
        };
        total += w;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += w * xi);
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(())
}

/// Consensus point `M_alpha` of the empirical measure of `ens`.
///
/// Weights are shifted by the ensemble minimum of `f`, so the largest weight
/// is exactly one and the denominator is at least one for any `alpha`.
pub fn consensus_point(ens: &Ensemble, alpha: f64, obj: &Objective) -> Result<Vec<f64>> {
    check_dimension(ens, obj)?;
    let mut out = vec![0.0; ens.dim()];
    consensus_into(
        ens.positions(),
        alpha,
        obj,
        &mut Vec::with_capacity(ens.particles()),
        &mut out,
    )?;
    Ok(out)
}

/// Arithmetic mean of the particles, summed in the same order as
/// [`consensus_point`] so the two agree bitwise at `alpha = 0`.
pub fn mean_point(ens: &Ensemble) -> Vec<f64> {
    let mut out = vec![0.0; ens.dim()];
    let mut total = 0.0;
    for x in ens.iter_rows() {
        total += 1.0;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += xi);
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Applies the noise matrix `S(v)` to `w`.
pub fn noise_factor(kind: NoiseKind, v: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = w.to_vec();
    apply_noise(kind, v, &mut out);
    out
}

#[inline]
fn apply_noise(kind: NoiseKind, v: &[f64], w: &mut [f64]) {
    match kind {
        NoiseKind::Isotropic => {
            let scale = norm(v);
            w.iter_mut().for_each(|x| *x *= scale);
        }
        NoiseKind::Anisotropic => w.iter_mut().zip(v).for_each(|(x, vi)| *x *= vi),
    }
}

/// Reusable buffers for in-place stepping.
#[derive(Debug, Default, Clone)]
pub(crate) struct StepScratch {
    values: Vec<f64>,
    consensus: Vec<f64>,
    diff: Vec<f64>,
    noise: Vec<f64>,
}

/// One explicit Euler–Maruyama step in place, using the first
/// `ens.particles()` rows of `dw`. Returns the consensus point used.
pub(crate) fn step_in_place<'s>(
    ens: &mut Ensemble,
    params: &CboParams,
    obj: &Objective,
    dw: &Matrix,
    scratch: &'s mut StepScratch,
) -> Result<&'s [f64]> {
    let d = ens.dim();
    scratch.consensus.resize(d, 0.0);
    scratch.diff.resize(d, 0.0);
    scratch.noise.resize(d, 0.0);
    consensus_into(
        &ens.positions,
        params.alpha,
        obj,
        &mut scratch.values,
        &mut scratch.consensus,
    )?;
    let m = &scratch.consensus;
    for j in 0..ens.particles() {
        let x = ens.positions.row_mut(j);
        for k in 0..d {
            scratch.diff[k] = x[k] - m[k];
        }
        scratch.noise.copy_from_slice(dw.row(j));
        apply_noise(params.noise, &scratch.diff, &mut scratch.noise);
        for k in 0..d {
            x[k] = x[k] - scratch.diff[k] * params.dt + params.sigma * scratch.noise[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CboError::numeric(format!(
                "particle {j} has a non-finite coordinate"
            )));
        }
    }
    ens.time += params.dt;
    Ok(&scratch.consensus)
}

/// One Euler–Maruyama step; the input ensemble is left untouched.
pub fn em_step(
    ens: &Ensemble,
    params: &CboParams,
    obj: &Objective,
    dw: &Matrix,
) -> Result<Ensemble> {
    check_dimension(ens, obj)?;
    if dw.rows() != ens.particles() || dw.cols() != ens.dim() {
        return Err(CboError::Input(format!(
            "increment matrix is {}x{}, ensemble is {}x{}",
            dw.rows(),
            dw.cols(),
            ens.particles(),
            ens.dim()
        )));
    }
    let mut next = ens.clone();
    step_in_place(&mut next, params, obj, dw, &mut StepScratch::default())?;
    Ok(next)
}

/// Callback invoked on the state during [`simulate`].
pub trait Observer {
    /// `step` is the number of steps taken so far; `consensus` is the
    /// consensus point of `ens` (recomputed for the observed state).
    fn observe(&mut self, step: u64, ens: &Ensemble, consensus: &[f64]);
}

impl<F: FnMut(u64, &Ensemble, &[f64])> Observer for F {
    fn observe(&mut self, step: u64, ens: &Ensemble, consensus: &[f64]) {
        self(step, ens, consensus)
    }
}

/// Runs `ceil(T/dt)` steps from `init`, drawing increments from the
/// particle streams of `stream`. Observers see step 0, every `stride`-th
/// step and the final step.
pub fn simulate(
    init: &Ensemble,
    params: &CboParams,
    obj: &Objective,
    stream: &RngStream,
    observers: &mut [&mut dyn Observer],
    stride: u64,
) -> Result<Ensemble> {
    params.validate()?;
    check_dimension(init, obj)?;
    let stride = stride.max(1);
    let steps = params.steps();
    let mut ens = init.clone();
    let mut source = IncrementSource::new(stream, ens.particles(), ens.dim());
    let mut dw = Matrix::zeros(ens.particles(), ens.dim());
    let mut scratch = StepScratch::default();

    let mut notify = |step: u64, ens: &Ensemble| -> Result<()> {
        if observers.is_empty() {
            return Ok(());
        }
        let m = consensus_point(ens, params.alpha, obj)?;
        for obs in observers.iter_mut() {
            obs.observe(step, ens, &m);
        }
        Ok(())
    };

    notify(0, &ens)?;
    for step in 0..steps {
        source.fill(step, params.dt, &mut dw);
        step_in_place(&mut ens, params, obj, &dw, &mut scratch)
            .map_err(|e| e.with_context(format!("step {step}")))?;
        let taken = step + 1;
        if taken % stride == 0 || taken == steps {
            notify(taken, &ens)?;
        }
    }
    Ok(ens)
}
