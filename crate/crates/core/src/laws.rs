//! Initial laws for the particle ensembles and their moments.
//!
//! Row `j` of a sample is drawn from particle stream `j`, so the first `J`
//! rows of an `M`-row sample coincide with a `J`-row sample.

use serde::{Deserialize, Serialize};

use crate::dynamics::Ensemble;
use crate::error::{CboError, Result};
use crate::matrix::Matrix;
use crate::rng::{fill_standard_normals, uniform, RngStream, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    /// `N(location, scale^2 I)`.
    Gaussian,
    /// Uniform on the box `location + [-scale, scale]^d`.
    UniformBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub kind: LawKind,
    pub location: Vec<f64>,
    pub scale: f64,
}

/// A moment value with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    /// Monte Carlo standard error; `None` for closed-form values.
    pub stderr: Option<f64>,
}

/// Sample size of the Monte Carlo fallback for non-even moment orders.
pub const MONTE_CARLO_MOMENT_SAMPLES: usize = 1_000_000;

fn as_even_order(p: f64) -> Option<usize> {
    if p >= 0.0 && p.fract() == 0.0 && (p as usize) % 2 == 0 && p <= 64.0 {
        Some(p as usize)
    } else {
        None
    }
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0f64; n + 1];
    for k in 1..n {
        row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    row
}

impl InitialLaw {
    pub fn new(kind: LawKind, location: Vec<f64>, scale: f64) -> Result<Self> {
        if location.is_empty() {
            return Err(CboError::Config(
                "initial law location must have at least one coordinate".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CboError::Config(format!(
                "initial law scale must be positive, got {scale}"
            )));
        }
        Ok(InitialLaw {
            kind,
            location,
            scale,
        })
    }

    pub fn gaussian(location: Vec<f64>, scale: f64) -> Result<Self> {
        InitialLaw::new(LawKind::Gaussian, location, scale)
    }

    pub fn uniform_box(location: Vec<f64>, scale: f64) -> Result<Self> {
        InitialLaw::new(LawKind::UniformBox, location, scale)
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// Draws `n` i.i.d. particles; row `j` comes from particle stream `j`.
    pub fn sample(&self, stream: &RngStream, n: usize) -> Result<Ensemble> {
        let d = self.dim();
        let mut positions = Matrix::zeros(n, d);
        for j in 0..n {
            let mut rng = stream.particle_rng(j as u64);
            let row = positions.row_mut(j);
            match self.kind {
                LawKind::Gaussian => fill_standard_normals(&mut rng, row),
                LawKind::UniformBox => row
                    .iter_mut()
                    .for_each(|v| *v = 2.0 * uniform(&mut rng) - 1.0),
            }
            for (v, c) in row.iter_mut().zip(&self.location) {
                *v = c + self.scale * *v;
            }
        }
        Ensemble::new(positions, 0.0)
    }

    /// `E[Y^k]` of the standardized one-dimensional coordinate.
    fn standardized_moment(&self, k: usize) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        match self.kind {
            // (k-1)!!
            LawKind::Gaussian => (1..k).step_by(2).map(|i| i as f64).product(),
            LawKind::UniformBox => 1.0 / (k + 1) as f64,
        }
    }

    /// `E[|X - shift|^{2n}]` by expanding `sum_i (c_i + s Y_i)^2` coordinate by
    /// coordinate, where `c = location - shift`.
    fn even_moment_about(&self, shift: &[f64], n: usize) -> f64 {
        // acc[m] = E[(partial sum of squares)^m]
        let mut acc = vec![0.0; n + 1];
        acc[0] = 1.0;
        for (loc, sh) in self.location.iter().zip(shift) {
            let c = loc - sh;
            // coord[m] = E[(c + sY)^{2m}]
            let coord: Vec<f64> = (0..=n)
                .map(|m| {
                    let binom = binomial_row(2 * m);
                    (0..=2 * m)
                        .map(|k| {
                            binom[k]
                                * c.powi((2 * m - k) as i32)
                                * self.scale.powi(k as i32)
                                * self.standardized_moment(k)
                        })
                        .sum()
                })
                .collect();
            let mut next = vec![0.0; n + 1];
            for (m, slot) in next.iter_mut().enumerate() {
                let binom = binomial_row(m);
                *slot = (0..=m).map(|l| binom[l] * acc[l] * coord[m - l]).sum();
            }
            acc = next;
        }
        acc[n]
    }

    fn monte_carlo_moment(&self, p: f64, shift: &[f64]) -> MomentValue {
        let stream = RngStream::new(0x5EED_u64).with_domain(StreamDomain::Auxiliary);
        let mut rng = stream.particle_rng(0);
        let d = self.dim();
        let mut y = vec![0.0; d];
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for _ in 0..MONTE_CARLO_MOMENT_SAMPLES {
            match self.kind {
                LawKind::Gaussian => fill_standard_normals(&mut rng, &mut y),
                LawKind::UniformBox => y
                    .iter_mut()
                    .for_each(|v| *v = 2.0 * uniform(&mut rng) - 1.0),
            }
            let r2: f64 = y
                .iter()
                .zip(&self.location)
                .zip(shift)
                .map(|((yi, c), s)| {
                    let v = c + self.scale * yi - s;
                    v * v
                })
                .sum();
            let v = r2.powf(p / 2.0);
            sum += v;
            sum_sq += v * v;
        }
        let n = MONTE_CARLO_MOMENT_SAMPLES as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        MomentValue {
            value: mean,
            stderr: Some((var / n).sqrt()),
        }
    }

    fn moment_about(&self, p: f64, shift: &[f64]) -> MomentValue {
        match as_even_order(p) {
            Some(order) => MomentValue {
                value: self.even_moment_about(shift, order / 2),
                stderr: None,
            },
            None => self.monte_carlo_moment(p, shift),
        }
    }

    /// Centered moment `E|X - E X|^p`. Closed form for even integer `p`,
    /// Monte Carlo otherwise.
    pub fn centered_moment(&self, p: f64) -> MomentValue {
        self.moment_about(p, &self.location)
    }

    /// Raw moment `E|X|^p`. Closed form for even integer `p`, Monte Carlo otherwise.
    pub fn raw_moment(&self, p: f64) -> MomentValue {
        self.moment_about(p, &vec![0.0; self.dim()])
    }
}
