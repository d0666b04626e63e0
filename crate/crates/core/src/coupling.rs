//! Synchronous couplings: interacting particles against i.i.d. mean-field
//! particles, and two interacting copies started from different laws.
//!
//! Coupled systems consume one increment matrix per step; row `j` drives
//! particle `j` of every ensemble in the system.

use crate::constants::critical_sigma;
use crate::dynamics::{consensus_point, step_in_place, CboParams, Ensemble, StepScratch};
use crate::error::{CboError, Result};
use crate::laws::InitialLaw;
use crate::matrix::{squared_distance, Matrix};
use crate::objectives::Objective;
use crate::rng::{IncrementSource, RngStream, StreamDomain};

fn mean_squared_gap(a: &Ensemble, b: &Ensemble, rows: usize) -> f64 {
    let total: f64 = (0..rows)
        .map(|j| squared_distance(a.row(j), b.row(j)))
        .sum();
    total / rows as f64
}

fn warn_if_supercritical(params: &CboParams, obj: &Objective, dim: usize) {
    let threshold = critical_sigma(params.alpha, obj.range(), params.noise.tau(dim));
    if params.sigma >= threshold {
        log::warn!(
            "sigma = {} is not below the critical noise level {threshold:.6}; uniform-in-time guarantees do not apply",
            params.sigma
        );
    }
}

fn check_law(law: &InitialLaw, obj: &Objective) -> Result<()> {
    if law.dim() != obj.dimension() {
        return Err(CboError::Config(format!(
            "initial law has dimension {}, objective has dimension {}",
            law.dim(),
            obj.dimension()
        )));
    }
    Ok(())
}

/// Interacting systems of several sizes coupled to one mean-field ensemble.
///
/// The mean-field ensemble has `M` rows and evolves around its own consensus
/// point, the proxy for the consensus of the mean-field law. The interacting
/// system of size `J` starts from, and is driven by the noise of, rows
/// `0..J` of the mean-field ensemble.
#[derive(Debug, Clone)]
pub struct MflLadderSystem {
    sizes: Vec<usize>,
    interacting: Vec<Ensemble>,
    meanfield: Ensemble,
    params: CboParams,
    obj: Objective,
    scratch: StepScratch,
}

impl MflLadderSystem {
    /// Draws `m` i.i.d. samples from `law` using the initial-position
    /// streams of `stream`; each interacting system copies the leading rows.
    pub fn new(
        law: &InitialLaw,
        sizes: &[usize],
        m: usize,
        params: &CboParams,
        obj: &Objective,
        stream: &RngStream,
    ) -> Result<Self> {
        params.validate()?;
        check_law(law, obj)?;
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(CboError::Config(
                "interacting system sizes must be positive".into(),
            ));
        }
        let largest = *sizes.iter().max().unwrap();
        if m < largest {
            return Err(CboError::Config(format!(
                "mean-field ensemble size M = {m} is smaller than J = {largest}"
            )));
        }
        warn_if_supercritical(params, obj, law.dim());
        let meanfield = law.sample(&stream.with_domain(StreamDomain::InitA), m)?;
        let interacting = sizes.iter().map(|&j| meanfield.head(j)).collect();
        Ok(MflLadderSystem {
            sizes: sizes.to_vec(),
            interacting,
            meanfield,
            params: *params,
            obj: obj.clone(),
            scratch: StepScratch::default(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn meanfield(&self) -> &Ensemble {
        &self.meanfield
    }

    pub fn interacting(&self, index: usize) -> &Ensemble {
        &self.interacting[index]
    }

    pub fn time(&self) -> f64 {
        self.meanfield.time()
    }

    /// Advances every ensemble by one step with the `M x d` increments `dw`.
    pub fn step(&mut self, dw: &Matrix) -> Result<()> {
        if dw.rows() != self.meanfield.particles() || dw.cols() != self.meanfield.dim() {
            return Err(CboError::Input(format!(
                "increment matrix is {}x{}, mean-field ensemble is {}x{}",
                dw.rows(),
                dw.cols(),
                self.meanfield.particles(),
                self.meanfield.dim()
            )));
        }
        for (ens, j) in self.interacting.iter_mut().zip(&self.sizes) {
            step_in_place(ens, &self.params, &self.obj, dw, &mut self.scratch)
                .map_err(|e| e.with_context(format!("interacting J={j}")))?;
        }
        step_in_place(
            &mut self.meanfield,
            &self.params,
            &self.obj,
            dw,
            &mut self.scratch,
        )
        .map_err(|e| e.with_context("mean-field"))?;
        Ok(())
    }

    /// `E_t = (1/J) sum_{j<J} |X^j - Xbar^j|^2` for the size at `index`.
    pub fn mfl_error(&self, index: usize) -> f64 {
        mean_squared_gap(&self.interacting[index], &self.meanfield, self.sizes[index])
    }

    /// `|M_alpha(all M rows) - M_alpha(first J rows)|^2` for the size at `index`.
    pub fn wm_sampling_error(&self, index: usize) -> Result<f64> {
        let j = self.sizes[index];
        if self.meanfield.particles() == j {
            return Err(CboError::Precondition(format!(
                "the weighted-mean proxy is degenerate when M = J = {j}"
            )));
        }
        let full = consensus_point(&self.meanfield, self.params.alpha, &self.obj)?;
        let sub = consensus_point(&self.meanfield.head(j), self.params.alpha, &self.obj)?;
        Ok(squared_distance(&full, &sub))
    }
}

/// One interacting system of size `J` coupled to `M >= J` mean-field particles.
#[derive(Debug, Clone)]
pub struct MflCoupledSystem {
    inner: MflLadderSystem,
}

pub fn init_mfl_coupling(
    law: &InitialLaw,
    j: usize,
    m: usize,
    params: &CboParams,
    obj: &Objective,
    stream: &RngStream,
) -> Result<MflCoupledSystem> {
    Ok(MflCoupledSystem {
        inner: MflLadderSystem::new(law, &[j], m, params, obj, stream)?,
    })
}

impl MflCoupledSystem {
    pub fn interacting(&self) -> &Ensemble {
        self.inner.interacting(0)
    }

    pub fn meanfield(&self) -> &Ensemble {
        self.inner.meanfield()
    }

    pub fn j(&self) -> usize {
        self.inner.sizes[0]
    }

    pub fn m(&self) -> usize {
        self.inner.meanfield.particles()
    }

    pub fn time(&self) -> f64 {
        self.inner.time()
    }

    /// One step; rows `0..J` of the `M x d` matrix `dw_mf` also drive the
    /// interacting system.
    pub fn step(&mut self, dw_mf: &Matrix) -> Result<()> {
        self.inner.step(dw_mf)
    }

    pub fn mfl_error(&self) -> f64 {
        self.inner.mfl_error(0)
    }

    pub fn wm_sampling_error(&self) -> Result<f64> {
        self.inner.wm_sampling_error(0)
    }
}

/// Functional form of [`MflCoupledSystem::step`].
pub fn mfl_coupled_step(sys: &MflCoupledSystem, dw_mf: &Matrix) -> Result<MflCoupledSystem> {
    let mut next = sys.clone();
    next.step(dw_mf)?;
    Ok(next)
}

/// Two interacting copies of size `J` driven by the same increments.
#[derive(Debug, Clone)]
pub struct StabilityCoupledSystem {
    copy_a: Ensemble,
    copy_b: Ensemble,
    params: CboParams,
    obj: Objective,
    scratch: StepScratch,
}

/// Draws `copy_a ~ law_a` from `init_a` and `copy_b ~ law_b` from `init_b`.
/// Passing the same stream for both with equal laws gives identical copies.
pub fn init_stability_coupling(
    law_a: &InitialLaw,
    law_b: &InitialLaw,
    j: usize,
    params: &CboParams,
    obj: &Objective,
    init_a: &RngStream,
    init_b: &RngStream,
) -> Result<StabilityCoupledSystem> {
    params.validate()?;
    if law_a.dim() != law_b.dim() {
        return Err(CboError::Config(format!(
            "initial laws have dimensions {} and {}",
            law_a.dim(),
            law_b.dim()
        )));
    }
    check_law(law_a, obj)?;
    if j == 0 {
        return Err(CboError::Config("J must be positive".into()));
    }
    warn_if_supercritical(params, obj, law_a.dim());
    StabilityCoupledSystem::from_ensembles(
        law_a.sample(init_a, j)?,
        law_b.sample(init_b, j)?,
        params,
        obj,
    )
}

impl StabilityCoupledSystem {
    pub fn from_ensembles(
        copy_a: Ensemble,
        copy_b: Ensemble,
        params: &CboParams,
        obj: &Objective,
    ) -> Result<Self> {
        if copy_a.particles() != copy_b.particles() || copy_a.dim() != copy_b.dim() {
            return Err(CboError::Input(
                "coupled copies must have the same shape".into(),
            ));
        }
        Ok(StabilityCoupledSystem {
            copy_a,
            copy_b,
            params: *params,
            obj: obj.clone(),
            scratch: StepScratch::default(),
        })
    }

    pub fn copy_a(&self) -> &Ensemble {
        &self.copy_a
    }

    pub fn copy_b(&self) -> &Ensemble {
        &self.copy_b
    }

    pub fn time(&self) -> f64 {
        self.copy_a.time()
    }

    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        std::mem::swap(&mut out.copy_a, &mut out.copy_b);
        out
    }

    pub fn step(&mut self, dw: &Matrix) -> Result<()> {
        if dw.rows() != self.copy_a.particles() || dw.cols() != self.copy_a.dim() {
            return Err(CboError::Input(format!(
                "increment matrix is {}x{}, copies are {}x{}",
                dw.rows(),
                dw.cols(),
                self.copy_a.particles(),
                self.copy_a.dim()
            )));
        }
        step_in_place(
            &mut self.copy_a,
            &self.params,
            &self.obj,
            dw,
            &mut self.scratch,
        )
        .map_err(|e| e.with_context("copy a"))?;
        step_in_place(
            &mut self.copy_b,
            &self.params,
            &self.obj,
            dw,
            &mut self.scratch,
        )
        .map_err(|e| e.with_context("copy b"))?;
        Ok(())
    }

    /// `G_t = (1/J) sum_j |a_j - b_j|^2`.
    pub fn stability_gap(&self) -> f64 {
        mean_squared_gap(&self.copy_a, &self.copy_b, self.copy_a.particles())
    }
}

/// Functional form of [`StabilityCoupledSystem::step`].
pub fn stability_coupled_step(
    sys: &StabilityCoupledSystem,
    dw: &Matrix,
) -> Result<StabilityCoupledSystem> {
    let mut next = sys.clone();
    next.step(dw)?;
    Ok(next)
}

/// Increments for coupled systems: one generator per row of the largest ensemble.
pub fn coupled_increments(stream: &RngStream, rows: usize, dim: usize) -> IncrementSource {
    IncrementSource::new(&stream.with_domain(StreamDomain::Increments), rows, dim)
}
