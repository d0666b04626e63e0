//! Bounded, globally Lipschitz objective functions.
//!
//! Every objective carries certified bounds `lower <= f <= upper` and a
//! Lipschitz constant, since all closed-form constants consume them. The
//! built-ins have closed-form constants except `soft-rastrigin`, whose
//! Lipschitz constant is certified numerically.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::matrix::{norm, squared_distance};
use crate::rng::{uniform, RngStream, StreamDomain};

/// Default length scale `s` of `soft-rastrigin`.
pub const DEFAULT_RASTRIGIN_SCALE: f64 = 10.0;

/// How the Lipschitz constant of an objective was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LipschitzCertificate {
    Exact,
    Numeric,
    Claimed,
}

#[derive(Clone)]
enum Evaluator {
    SaturatingNorm,
    GaussWell,
    SoftRastrigin { scale: f64 },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct Objective {
    name: String,
    dimension: usize,
    evaluator: Evaluator,
    lower_bound: f64,
    upper_bound: f64,
    lipschitz: f64,
    certificate: LipschitzCertificate,
    minimizer: Option<Vec<f64>>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("lower_bound", &self.lower_bound)
            .field("upper_bound", &self.upper_bound)
            .field("lipschitz", &self.lipschitz)
            .field("certificate", &self.certificate)
            .field("minimizer", &self.minimizer)
            .finish()
    }
}

fn rastrigin_term(z: f64) -> f64 {
    z * z + 10.0 - 10.0 * (std::f64::consts::TAU * z).cos()
}

fn rastrigin_term_derivative(z: f64) -> f64 {
    2.0 * z + 20.0 * std::f64::consts::PI * (std::f64::consts::TAU * z).sin()
}

/// Supremum over one coordinate of `|g'(z)| exp(-g(z)/s) / s`, where `g` is
/// one Rastrigin term, by dense grid sampling.
///
/// Since `g >= z^2`, the envelope `(2|z| + 20 pi) exp(-z^2/s) / s` bounds the
/// integrand, and the grid is extended until the envelope is negligible.
fn rastrigin_radial_gradient_sup(scale: f64) -> f64 {
    let envelope =
        |z: f64| (2.0 * z.abs() + 20.0 * std::f64::consts::PI) * (-z * z / scale).exp() / scale;
    let h = 1e-4;
    let mut best = 0.0f64;
    let mut z = 0.0;
    loop {
        let value = rastrigin_term_derivative(z).abs() * (-rastrigin_term(z) / scale).exp() / scale;
        best = best.max(value);
        z += h;
        if z > 1.0 && envelope(z) < 1e-6 * best {
            break;
        }
    }
    // g' is odd and g is even, so the negative half-line is a mirror image.
    best
}

impl Objective {
    /// Builds one of the certified built-in objectives.
    ///
    /// `scale` only affects `soft-rastrigin` (default [`DEFAULT_RASTRIGIN_SCALE`]).
    pub fn builtin(
        name: &str,
        dimension: usize,
        minimizer: &[f64],
        scale: Option<f64>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(CboError::Config(
                "objective dimension must be positive".into(),
            ));
        }
        if minimizer.len() != dimension {
            return Err(CboError::Config(format!(
                "minimizer has {} coordinates, objective dimension is {dimension}",
                minimizer.len()
            )));
        }
        let (evaluator, lipschitz, certificate) = match name {
            "saturating-norm" => (Evaluator::SaturatingNorm, 1.0, LipschitzCertificate::Exact),
            "gauss-well" => (Evaluator::GaussWell, (-0.5f64).exp(), LipschitzCertificate::Exact),
            "soft-rastrigin" => {
                let scale = scale.unwrap_or(DEFAULT_RASTRIGIN_SCALE);
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(CboError::Config(format!("soft-rastrigin scale must be positive, got {scale}")));
                }
                let per_coordinate = rastrigin_radial_gradient_sup(scale);
                let lipschitz = 1.1 * (dimension as f64).sqrt() * per_coordinate;
                (Evaluator::SoftRastrigin { scale }, lipschitz, LipschitzCertificate::Numeric)
            }
            other => {
                return Err(CboError::Config(format!(
                    "unknown objective '{other}' (expected saturating-norm, gauss-well or soft-rastrigin)"
                )))
            }
        };
        Ok(Objective {
            name: name.to_string(),
            dimension,
            evaluator,
            lower_bound: 0.0,
            upper_bound: 1.0,
            lipschitz,
            certificate,
            minimizer: Some(minimizer.to_vec()),
        })
    }

    /// Wraps an arbitrary evaluator with claimed bounds and Lipschitz constant.
    /// The claims are not checked here; see [`certify_objective`].
    pub fn custom<F>(
        name: &str,
        dimension: usize,
        f: F,
        lower_bound: f64,
        upper_bound: f64,
        lipschitz: f64,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dimension == 0 {
            return Err(CboError::Config(
                "objective dimension must be positive".into(),
            ));
        }
        if upper_bound < lower_bound {
            return Err(CboError::Config(format!(
                "upper bound {upper_bound} is below lower bound {lower_bound}"
            )));
        }
        if !(lipschitz >= 0.0) {
            return Err(CboError::Config(format!(
                "Lipschitz constant must be nonnegative, got {lipschitz}"
            )));
        }
        Ok(Objective {
            name: name.to_string(),
            dimension,
            evaluator: Evaluator::Custom(Arc::new(f)),
            lower_bound,
            upper_bound,
            lipschitz,
            certificate: LipschitzCertificate::Claimed,
            minimizer: None,
        })
    }

    pub fn with_minimizer(mut self, minimizer: Vec<f64>) -> Self {
        self.minimizer = Some(minimizer);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// `upper_bound - lower_bound`.
    pub fn range(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn certificate(&self) -> LipschitzCertificate {
        self.certificate
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    /// Evaluates `f(x)`. The caller guarantees `x.len() == dimension`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        let centre = self.minimizer.as_deref();
        match &self.evaluator {
            Evaluator::SaturatingNorm => {
                let r = squared_distance(x, centre.expect("builtin has minimizer")).sqrt();
                r / (1.0 + r)
            }
            Evaluator::GaussWell => {
                let r2 = squared_distance(x, centre.expect("builtin has minimizer"));
                -(-0.5 * r2).exp_m1()
            }
            Evaluator::SoftRastrigin { scale } => {
                let centre = centre.expect("builtin has minimizer");
                let r: f64 = x
                    .iter()
                    .zip(centre)
                    .map(|(a, b)| rastrigin_term(a - b))
                    .sum();
                -(-r / scale).exp_m1()
            }
            Evaluator::Custom(f) => f(x),
        }
    }

    pub fn eval_batch<R: AsRef<[f64]>>(&self, points: &[R]) -> Result<Vec<f64>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let p = p.as_ref();
                if p.len() != self.dimension {
                    Err(CboError::Input(format!(
                        "point {i} has {} coordinates, objective dimension is {}",
                        p.len(),
                        self.dimension
                    )))
                } else {
                    Ok(self.eval(p))
                }
            })
            .collect()
    }
}

/// Builds a built-in objective by name. See [`Objective::builtin`].
pub fn make_builtin(name: &str, dimension: usize, minimizer: &[f64]) -> Result<Objective> {
    Objective::builtin(name, dimension, minimizer, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub objective: String,
    pub samples: usize,
    /// Largest amount by which a sampled value left `[lower, upper]` (0 if none).
    pub max_bound_violation: f64,
    /// Largest observed `|f(x) - f(y)| / |x - y|`.
    pub max_difference_quotient: f64,
    pub claimed_lipschitz: f64,
    pub certificate: LipschitzCertificate,
    /// A pair whose quotient exceeds the claimed constant, if one was found.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    pub passed: bool,
}

/// Tolerance applied to both bound and Lipschitz checks.
pub const CERTIFICATION_TOLERANCE: f64 = 1e-12;

/// Samples random pairs and checks the claimed bounds and Lipschitz constant.
///
/// Half the pairs are independent uniforms on the box `minimizer + [-10, 10]^d`
/// (or the origin-centred box); the other half are close pairs at random
/// separations in `[1e-3, 1]` to probe local slopes.
pub fn certify_objective(obj: &Objective, sample_count: usize, seed: u64) -> CertificationReport {
    let d = obj.dimension();
    let centre: Vec<f64> = obj
        .minimizer()
        .map(|m| m.to_vec())
        .unwrap_or_else(|| vec![0.0; d]);
    let mut rng = RngStream::new(seed)
        .with_domain(StreamDomain::Auxiliary)
        .particle_rng(0);
    let mut max_violation = 0.0f64;
    let mut max_quotient = 0.0f64;
    let mut witness = None;
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let pairs = sample_count.max(2) / 2;
    for k in 0..pairs {
        for (xi, ci) in x.iter_mut().zip(&centre) {
            *xi = ci + 20.0 * uniform(&mut rng) - 10.0;
        }
        if k % 2 == 0 {
            for (yi, ci) in y.iter_mut().zip(&centre) {
                *yi = ci + 20.0 * uniform(&mut rng) - 10.0;
            }
        } else {
            let separation = 10f64.powf(-3.0 * uniform(&mut rng));
            let mut dir: Vec<f64> = (0..d).map(|_| 2.0 * uniform(&mut rng) - 1.0).collect();
            let len = norm(&dir).max(f64::MIN_POSITIVE);
            dir.iter_mut().for_each(|v| *v *= separation / len);
            for ((yi, xi), di) in y.iter_mut().zip(&x).zip(&dir) {
                *yi = xi + di;
            }
        }
        let fx = obj.eval(&x);
        let fy = obj.eval(&y);
        for v in [fx, fy] {
            let violation = (obj.lower_bound() - v).max(v - obj.upper_bound()).max(0.0);
            if !violation.is_finite() || violation > max_violation {
                max_violation = if violation.is_finite() {
                    violation
                } else {
                    f64::INFINITY
                };
            }
        }
        let dist = squared_distance(&x, &y).sqrt();
        if dist > 0.0 {
            let quotient = (fx - fy).abs() / dist;
            if quotient > max_quotient {
                max_quotient = quotient;
                if quotient > obj.lipschitz() + CERTIFICATION_TOLERANCE {
                    witness = Some((x.clone(), y.clone()));
                }
            }
        }
    }
    let passed = max_violation <= CERTIFICATION_TOLERANCE
        && max_quotient <= obj.lipschitz() + CERTIFICATION_TOLERANCE;
    CertificationReport {
        objective: obj.name().to_string(),
        samples: 2 * pairs,
        max_bound_violation: max_violation,
        max_difference_quotient: max_quotient,
        claimed_lipschitz: obj.lipschitz(),
        certificate: obj.certificate(),
        witness,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_point_values() {
        let sat = make_builtin("saturating-norm", 1, &[0.0]).unwrap();
        assert_eq!(sat.eval_batch(&[[0.0]]).unwrap(), vec![0.0]);
        assert_eq!(sat.eval_batch(&[[1.0]]).unwrap(), vec![0.5]);
        let gauss = make_builtin("gauss-well", 2, &[0.0, 0.0]).unwrap();
        assert_eq!(gauss.eval(&[0.0, 0.0]), 0.0);
        assert_eq!(gauss.upper_bound(), 1.0);
    }

    #[test]
    fn closed_form_lipschitz_constants() {
        let sat = make_builtin("saturating-norm", 3, &[0.0; 3]).unwrap();
        assert_eq!(sat.lipschitz(), 1.0);
        let gauss = make_builtin("gauss-well", 3, &[0.0; 3]).unwrap();
        assert!((gauss.lipschitz() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(gauss.certificate(), LipschitzCertificate::Exact);
    }

    #[test]
    fn gauss_well_slope_peaks_at_unit_radius() {
        // independent check of sup_r r exp(-r^2/2) by grid search
        let best = (1..=400_000)
            .map(|k| k as f64 * 1e-5)
            .map(|r| r * (-r * r / 2.0).exp())
            .fold(0.0f64, f64::max);
        let gauss = make_builtin("gauss-well", 1, &[0.0]).unwrap();
        assert!((best - gauss.lipschitz()).abs() < 1e-9);
    }

    #[test]
    fn unknown_name_and_bad_shapes_are_rejected() {
        assert!(matches!(
            make_builtin("rosenbrock", 2, &[0.0, 0.0]),
            Err(CboError::Config(_))
        ));
        assert!(make_builtin("gauss-well", 2, &[0.0]).is_err());
        let gauss = make_builtin("gauss-well", 2, &[0.0, 0.0]).unwrap();
        assert!(matches!(
            gauss.eval_batch(&[vec![1.0]]),
            Err(CboError::Input(_))
        ));
    }

    #[test]
    fn builtins_pass_certification() {
        for name in ["saturating-norm", "gauss-well", "soft-rastrigin"] {
            for d in [1, 3] {
                let obj = make_builtin(name, d, &vec![0.5; d]).unwrap();
                let report = certify_objective(&obj, 10_000, 11);
                assert!(report.passed, "{name} d={d}: {report:?}");
                assert!(report.witness.is_none());
            }
        }
    }

    #[test]
    fn understated_lipschitz_constant_fails_with_witness() {
        let sat = make_builtin("saturating-norm", 2, &[0.0, 0.0]).unwrap();
        let liar = Objective::custom("liar", 2, move |x| sat.eval(x), 0.0, 1.0, 0.1).unwrap();
        let report = certify_objective(&liar, 10_000, 3);
        assert!(!report.passed);
        let (x, y) = report.witness.expect("witness pair");
        let quotient = (liar.eval(&x) - liar.eval(&y)).abs() / squared_distance(&x, &y).sqrt();
        assert!(quotient > 0.1);
    }

    #[test]
    fn soft_rastrigin_constant_is_marked_numeric_and_dominates_samples() {
        let obj = make_builtin("soft-rastrigin", 2, &[0.0, 0.0]).unwrap();
        assert_eq!(obj.certificate(), LipschitzCertificate::Numeric);
        // finite differences along many random directions near the minimizer
        let mut rng = RngStream::new(8).particle_rng(0);
        let h = 1e-6;
        for _ in 0..20_000 {
            let x = [4.0 * uniform(&mut rng) - 2.0, 4.0 * uniform(&mut rng) - 2.0];
            let y = [x[0] + h, x[1]];
            let slope = (obj.eval(&x) - obj.eval(&y)).abs() / h;
            assert!(
                slope <= obj.lipschitz(),
                "slope {slope} > {}",
                obj.lipschitz()
            );
        }
    }
}
