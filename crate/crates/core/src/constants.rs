//! Closed-form constants of the uniform-in-time estimates.
//!
//! Every function evaluates its defining display literally. Constants that
//! routinely overflow `f64` (the exponentials in `C_MFL` and `C_Stab`) are
//! also reported through their natural logarithms.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CboParams, NoiseKind};
use crate::error::{CboError, Result};
use crate::laws::InitialLaw;
use crate::objectives::Objective;

/// `sigma_tilde` as a function of `alpha`, `f_upper - f_lower` and `tau`.
pub fn critical_sigma(alpha: f64, range: f64, tau: f64) -> f64 {
    let growth = 1.0 + (0.5 * alpha * range).exp();
    (2.0 / ((6.0 + 3.0 * tau) * growth * growth)).sqrt()
}

/// Lower and upper Burkholder–Davis–Gundy constants `(c_p, C_p)`.
pub fn bdg_constants(p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(CboError::Input(format!(
            "BDG exponent must be positive, got {p}"
        )));
    }
    Ok(if p < 2.0 {
        ((p / 2.0).powf(p), (32.0 / p).powf(p / 2.0))
    } else if p == 2.0 {
        (1.0, 4.0)
    } else {
        (
            (2.0 * p).powf(-p / 2.0),
            (p.powf(p + 1.0) / (2.0 * (p - 1.0).powf(p - 1.0))).powf(p / 2.0),
        )
    })
}

/// Conventional Marcinkiewicz–Zygmund constant used when none is supplied:
/// `1` for `p = 2` and `(18 p^{3/2} / sqrt(p - 1))^p` for `p > 2`.
pub fn default_c_mz(p: f64) -> Result<f64> {
    if p == 2.0 {
        Ok(1.0)
    } else if p > 2.0 && p.is_finite() {
        Ok((18.0 * p.powf(1.5) / (p - 1.0).sqrt()).powf(p))
    } else {
        Err(CboError::Input(format!(
            "no conventional Marcinkiewicz–Zygmund constant for p = {p}"
        )))
    }
}

/// `x^y` with `0^0 = 1`.
fn pow_zero_one(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        1.0
    } else {
        x.powf(y)
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Moments of an initial law, as `[order, value]` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LawMoments {
    pub centered: Vec<[f64; 2]>,
    pub raw: Vec<[f64; 2]>,
}

impl LawMoments {
    pub fn from_law(law: &InitialLaw, centered_orders: &[f64], raw_orders: &[f64]) -> Self {
        LawMoments {
            centered: centered_orders
                .iter()
                .map(|&p| [p, law.centered_moment(p).value])
                .collect(),
            raw: raw_orders
                .iter()
                .map(|&p| [p, law.raw_moment(p).value])
                .collect(),
        }
    }

    fn lookup(table: &[[f64; 2]], p: f64, what: &str) -> Result<f64> {
        table
            .iter()
            .find(|e| e[0] == p)
            .map(|e| e[1])
            .ok_or_else(|| {
                CboError::Config(format!(
                    "{what} moment of order {p} of the initial law is missing"
                ))
            })
    }

    /// `M_p`.
    pub fn centered(&self, p: f64) -> Result<f64> {
        LawMoments::lookup(&self.centered, p, "centered")
    }

    /// `m_p`.
    pub fn raw(&self, p: f64) -> Result<f64> {
        LawMoments::lookup(&self.raw, p, "raw")
    }
}

/// Inputs of every constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemProfile {
    pub alpha: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    pub dim: usize,
    pub f_lower: f64,
    pub f_upper: f64,
    pub lipschitz: f64,
    /// Moments of the (first) initial law.
    pub moments: LawMoments,
    /// Moments of the second initial law of the stability coupling.
    pub moments_b: Option<LawMoments>,
    /// Supplied Marcinkiewicz–Zygmund constants as `[p, value]` pairs.
    pub c_mz: Vec<[f64; 2]>,
    /// Fall back to [`default_c_mz`] for orders missing from `c_mz`.
    pub c_mz_defaults: bool,
}

impl ProblemProfile {
    pub fn new(params: &CboParams, obj: &Objective, moments: LawMoments) -> Result<Self> {
        let profile = ProblemProfile {
            alpha: params.alpha,
            sigma: params.sigma,
            noise: params.noise,
            dim: obj.dimension(),
            f_lower: obj.lower_bound(),
            f_upper: obj.upper_bound(),
            lipschitz: obj.lipschitz(),
            moments,
            moments_b: None,
            c_mz: Vec::new(),
            c_mz_defaults: true,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.sigma >= 0.0) {
            return Err(CboError::Config(
                "alpha and sigma must be nonnegative".into(),
            ));
        }
        if !(self.f_upper >= self.f_lower) || !self.f_upper.is_finite() || !self.f_lower.is_finite()
        {
            return Err(CboError::Config(format!(
                "objective bounds must be finite with f_upper >= f_lower, got [{}, {}]",
                self.f_lower, self.f_upper
            )));
        }
        let all_moments = self.moments.centered.iter().chain(&self.moments.raw).chain(
            self.moments_b
                .iter()
                .flat_map(|m| m.centered.iter().chain(&m.raw)),
        );
        for entry in all_moments {
            if !(entry[1] >= 0.0) {
                return Err(CboError::Config(format!(
                    "moment of order {} must be nonnegative",
                    entry[0]
                )));
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.noise.tau(self.dim)
    }

    /// `alpha (f_upper - f_lower)`.
    pub fn spread(&self) -> f64 {
        self.alpha * (self.f_upper - self.f_lower)
    }

    /// `lambda_p = p [1 - (p - 2 + tau) sigma^2 (1 + e^{spread/p})^2 / 2]`.
    pub fn lambda_p(&self, p: f64) -> f64 {
        let growth = 1.0 + (self.spread() / p).exp();
        p * (1.0 - 0.5 * (p - 2.0 + self.tau()) * self.sigma * self.sigma * growth * growth)
    }

    pub fn sigma_tilde(&self) -> f64 {
        critical_sigma(self.alpha, self.f_upper - self.f_lower, self.tau())
    }

    /// `C_M = 2 alpha L_f e^{2 spread}`.
    pub fn c_m(&self) -> f64 {
        2.0 * self.alpha * self.lipschitz * (2.0 * self.spread()).exp()
    }

    /// `(value, conventional default used)`; the default at `p = 2` is exact.
    pub fn c_mz(&self, p: f64) -> Result<(f64, bool)> {
        if let Some(e) = self.c_mz.iter().find(|e| e[0] == p) {
            return Ok((e[1], false));
        }
        if self.c_mz_defaults {
            return Ok((default_c_mz(p)?, p != 2.0));
        }
        Err(CboError::Config(format!(
            "Marcinkiewicz–Zygmund constant c_MZ,{p} is not supplied"
        )))
    }

    /// `C_WM,p = c_MZ,p e^{p spread} (1 + e^{spread/p})^p`.
    pub fn c_wm_p(&self, p: f64) -> Result<f64> {
        let (c_mz, _) = self.c_mz(p)?;
        let s = self.spread();
        Ok(c_mz * (p * s).exp() * (1.0 + (s / p).exp()).powf(p))
    }

    fn require_positive_lambda(&self, p: f64) -> Result<f64> {
        let lambda = self.lambda_p(p);
        if lambda <= 0.0 {
            return Err(CboError::Precondition(format!(
                "lambda_{p} = {lambda} is not positive"
            )));
        }
        Ok(lambda)
    }

    /// `c_raw,p = 1 + (p / lambda_p)(1 + sigma sqrt(tau) C_BDG,p^{1/p})(1 + e^{spread/p})`.
    pub fn c_raw_p(&self, p: f64) -> Result<f64> {
        let lambda = self.require_positive_lambda(p)?;
        let (_, upper) = bdg_constants(p)?;
        Ok(1.0
            + (p / lambda)
                * (1.0 + self.sigma * self.tau().sqrt() * upper.powf(1.0 / p))
                * (1.0 + (self.spread() / p).exp()))
    }

    fn check_kappa(&self, q: f64, kappa: f64) -> Result<f64> {
        if q < 2.0 {
            return Err(CboError::Input(format!(
                "excursion exponent q must be >= 2, got {q}"
            )));
        }
        let lambda_2q = self.lambda_p(2.0 * q);
        let limit = self.lambda_p(2.0).min(lambda_2q / q);
        if !(kappa < limit) {
            return Err(CboError::Precondition(format!(
                "kappa = {kappa} must be below min(lambda_2, lambda_{}/{q}) = {limit}",
                2.0 * q
            )));
        }
        Ok(lambda_2q)
    }

    /// Excursion constant of the interacting particle system.
    pub fn c_bad_particle(&self, q: f64, kappa: f64) -> Result<f64> {
        let lambda_2q = self.check_kappa(q, kappa)?;
        let (c_mz, _) = self.c_mz(2.0 * q)?;
        let (_, c_bdg) = bdg_constants(q)?;
        let gap = lambda_2q - q * kappa;
        Ok(2f64.powf(3.0 * q - 1.0) * c_mz
            + 2f64.powf(4.0 * q + 1.0)
                * c_bdg
                * self.sigma.powf(q)
                * pow_zero_one((q - 2.0) / gap, q / 2.0 - 1.0)
                * (1.0 + self.spread().exp()).sqrt()
                / gap)
    }

    /// Excursion constant of the synchronously coupled mean-field system.
    pub fn c_bad_meanfield(&self, q: f64, kappa: f64) -> Result<f64> {
        let particle = self.c_bad_particle(q, kappa)?;
        let lambda_2q = self.lambda_p(2.0 * q);
        let lambda_2 = self.lambda_p(2.0);
        let tau = self.tau();
        let s2 = self.sigma * self.sigma;
        let growth = 1.0 + (0.5 * self.spread()).exp();
        let inner = 1.0 + 2.0 * s2 * tau / (lambda_2 - kappa) * growth * growth;
        Ok(1.5f64.powf(q) * particle
            + 3f64.powf(q)
                * self.c_wm_p(2.0 * q)?
                * 2f64.powf(q + 1.0)
                * s2.powf(q)
                * tau.powf(q)
                * pow_zero_one(2.0 * (q - 1.0) / (lambda_2q - q * kappa), q - 1.0)
                * inner.powf(q)
                / (lambda_2q - kappa))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderValue {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdgPair {
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityFlags {
    pub sigma_below_critical: bool,
    pub lambda8_positive: bool,
    pub lambda8_below_8_lambda2: bool,
    /// `4 kappa < lambda_8` and `kappa < lambda_2` (mean-field chain, `q = 4`).
    pub mfl_kappa_admissible: bool,
    /// `q_tilde kappa < lambda_{2 q_tilde}` and `kappa < lambda_2` (stability chain).
    pub stability_kappa_admissible: bool,
}

/// Every constant of both main estimates with its intermediates.
///
/// Fields are `None` when a precondition fails or the value is not a finite
/// `f64`; `ln_*` fields carry logarithms of the exponentially large ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub profile: ProblemProfile,
    /// Exponent `q` of the `J^{-q}` term of the stability estimate.
    pub q: f64,
    /// `4 q`, the excursion exponent used by the stability chain.
    pub q_tilde: f64,
    pub tau: f64,
    pub sigma_tilde: f64,
    pub lambda: Vec<OrderValue>,
    pub kappa: f64,
    pub bdg: Vec<BdgPair>,
    pub c_mz: Vec<OrderValue>,
    /// Orders whose `c_MZ,p` is the conventional default rather than supplied.
    pub c_mz_conventional: Vec<f64>,
    pub c_m: f64,
    pub c_wm: Vec<OrderValue>,
    pub c_raw_8: Option<f64>,
    pub c_bad_particle_4: Option<f64>,
    pub c_bad_meanfield_4: Option<f64>,
    pub c_bad_stability: Option<f64>,
    /// `2^11 C_bad^{1/2} c_raw,8^2 (m_8 + 1)`.
    pub c_q: Option<f64>,
    /// `2^10 C_bad^{1/2} c_raw,8^2 m_8 + 2 (M_2 + 1)`, which `c_q` bounds.
    pub c_q_sharp: Option<f64>,
    pub c_q_tilde: Option<f64>,
    pub c_1: Option<f64>,
    pub c_2: Option<f64>,
    pub c_mfl: Option<f64>,
    pub ln_c_mfl: Option<f64>,
    pub c_1_tilde: Option<f64>,
    pub c_2_tilde: Option<f64>,
    pub c_stab_1: Option<f64>,
    pub c_stab_2: Option<f64>,
    pub ln_c_stab_1: Option<f64>,
    pub ln_c_stab_2: Option<f64>,
    pub flags: ValidityFlags,
    pub notes: Vec<String>,
}

const NOTE_C_RAW: &str = "c_raw,p uses the factor p/lambda_p, not (p/lambda_p)^(1/p)";
const NOTE_C_STAB: &str = "C_Stab,1 and C_Stab,2 are built from c~_1 and c~_2, not c_1";
const NOTE_C_Q: &str =
    "C_Q is the 2^11 (m_8 + 1) upper form; the sharper form is reported as c_q_sharp";
const NOTE_STAB_MOMENTS: &str =
    "E M_p of the initial empirical measures is bounded by 2^p M_p of the law for p > 2 and by M_2 for p = 2";
const NOTE_C_BAD_MF: &str = "the mean-field excursion constant keeps its closed form with the splitting parameter fixed, without re-optimisation";

/// Upper bound on `E M_p(empirical measure of J i.i.d. samples)`.
fn empirical_centered_bound(moments: &LawMoments, p: f64) -> Result<f64> {
    let law = moments.centered(p)?;
    Ok(if p == 2.0 { law } else { 2f64.powf(p) * law })
}

/// Evaluates the full dependency chain for stability exponent `q >= 1/2`.
pub fn theorem_constants(profile: &ProblemProfile, q: f64) -> Result<ConstantsReport> {
    profile.validate()?;
    if !(q >= 0.5 && q.is_finite()) {
        return Err(CboError::Input(format!(
            "stability exponent q must be >= 1/2, got {q}"
        )));
    }
    let q_tilde = 4.0 * q;
    let tau = profile.tau();
    let sigma_tilde = profile.sigma_tilde();
    let lambda_2 = profile.lambda_p(2.0);
    let lambda_8 = profile.lambda_p(8.0);
    let lambda_2qt = profile.lambda_p(2.0 * q_tilde);
    let kappa = lambda_8 / 8.0;

    let mut orders = vec![2.0, 4.0, 8.0, 2.0 * q_tilde];
    orders.dedup();
    let lambda = orders
        .iter()
        .map(|&p| OrderValue {
            p,
            value: profile.lambda_p(p),
        })
        .collect();
    let mut bdg_orders = vec![2.0, 4.0, 8.0, q_tilde];
    bdg_orders.sort_by(f64::total_cmp);
    bdg_orders.dedup();
    let bdg = bdg_orders
        .iter()
        .map(|&p| bdg_constants(p).map(|(lower, upper)| BdgPair { p, lower, upper }))
        .collect::<Result<Vec<_>>>()?;
    let mut mz_orders = vec![2.0, 8.0, 2.0 * q_tilde];
    mz_orders.sort_by(f64::total_cmp);
    mz_orders.dedup();
    let mut c_mz = Vec::new();
    let mut c_mz_conventional = Vec::new();
    let mut c_wm = Vec::new();
    for &p in &mz_orders {
        let (value, conventional) = profile.c_mz(p)?;
        c_mz.push(OrderValue { p, value });
        if conventional {
            c_mz_conventional.push(p);
        }
        c_wm.push(OrderValue {
            p,
            value: profile.c_wm_p(p)?,
        });
    }

    let flags = ValidityFlags {
        sigma_below_critical: profile.sigma < sigma_tilde,
        lambda8_positive: lambda_8 > 0.0,
        lambda8_below_8_lambda2: lambda_8 < 8.0 * lambda_2,
        mfl_kappa_admissible: 4.0 * kappa < lambda_8 && kappa < lambda_2,
        stability_kappa_admissible: q_tilde * kappa < lambda_2qt && kappa < lambda_2,
    };
    let c_m = profile.c_m();
    let mut report = ConstantsReport {
        profile: profile.clone(),
        q,
        q_tilde,
        tau,
        sigma_tilde,
        lambda,
        kappa,
        bdg,
        c_mz,
        c_mz_conventional,
        c_m,
        c_wm,
        c_raw_8: None,
        c_bad_particle_4: None,
        c_bad_meanfield_4: None,
        c_bad_stability: None,
        c_q: None,
        c_q_sharp: None,
        c_q_tilde: None,
        c_1: None,
        c_2: None,
        c_mfl: None,
        ln_c_mfl: None,
        c_1_tilde: None,
        c_2_tilde: None,
        c_stab_1: None,
        c_stab_2: None,
        ln_c_stab_1: None,
        ln_c_stab_2: None,
        flags,
        notes: vec![
            NOTE_C_RAW.into(),
            NOTE_C_STAB.into(),
            NOTE_C_Q.into(),
            NOTE_STAB_MOMENTS.into(),
            NOTE_C_BAD_MF.into(),
        ],
    };
    if !flags.sigma_below_critical || !flags.lambda8_positive {
        report.notes.push(format!(
            "sigma = {} is not below sigma~ = {sigma_tilde}; downstream constants omitted",
            profile.sigma
        ));
        return Ok(report);
    }

    let c_raw_8 = profile.c_raw_p(8.0)?;
    report.c_raw_8 = Some(c_raw_8);
    let two_tau_s2 = 1.0 + 2.0 * tau * profile.sigma * profile.sigma;

    if flags.mfl_kappa_admissible {
        let m = &profile.moments;
        let raw_8 = m.raw(8.0)?;
        let centered_2 = m.centered(2.0)?;
        let particle = profile.c_bad_particle(4.0, kappa)?;
        let meanfield = profile.c_bad_meanfield(4.0, kappa)?;
        report.c_bad_particle_4 = finite(particle);
        report.c_bad_meanfield_4 = finite(meanfield);
        let c_q = 2f64.powi(11) * meanfield.sqrt() * c_raw_8 * c_raw_8 * (raw_8 + 1.0);
        report.c_q = finite(c_q);
        report.c_q_sharp = finite(
            2f64.powi(10) * meanfield.sqrt() * c_raw_8 * c_raw_8 * raw_8 + 2.0 * (centered_2 + 1.0),
        );
        let c_wm_2 = profile.c_wm_p(2.0)?;
        let c_1 = (2.0 * c_m * c_m * c_q * two_tau_s2 + 2.0) / kappa;
        let c_2 = (2.0 * c_m * c_m * c_q + c_wm_2 * centered_2) * two_tau_s2 / kappa;
        report.c_1 = finite(c_1);
        report.c_2 = finite(c_2);
        report.c_mfl = finite((2.0 * c_1).exp() * (2.0 * c_2));
        report.ln_c_mfl = finite(2.0 * c_1 + (2.0 * c_2).ln());
    } else {
        report
            .notes
            .push("kappa is not admissible for the mean-field chain".into());
    }

    match (&profile.moments_b, flags.stability_kappa_admissible) {
        (Some(mb), true) => {
            let ma = &profile.moments;
            let c_bad = profile.c_bad_meanfield(q_tilde, kappa)?;
            report.c_bad_stability = finite(c_bad);
            let high = empirical_centered_bound(ma, 2.0 * q_tilde)?
                + empirical_centered_bound(mb, 2.0 * q_tilde)?;
            let raw = ma.raw(8.0)? + mb.raw(8.0)?;
            let low = empirical_centered_bound(ma, 2.0)? + empirical_centered_bound(mb, 2.0)?;
            let c_q_tilde =
                2f64.powf(4.5) * c_bad.sqrt() * c_raw_8.powi(4) * high.sqrt() * raw.sqrt()
                    + low
                    + 2.0;
            report.c_q_tilde = finite(c_q_tilde);
            let one_tau_s2 = 1.0 + tau * profile.sigma * profile.sigma;
            let c_1_tilde = 1.0 + 2.0 * c_m * c_m * c_q_tilde * one_tau_s2;
            let c_2_tilde = 2.0 * c_m * c_m * c_q_tilde * one_tau_s2;
            report.c_1_tilde = finite(c_1_tilde);
            report.c_2_tilde = finite(c_2_tilde);
            let ln_1 = 16.0 * c_1_tilde / lambda_8;
            report.ln_c_stab_1 = finite(ln_1);
            report.c_stab_1 = finite(ln_1.exp());
            let prefactor = 16.0 * c_2_tilde / lambda_8;
            report.c_stab_2 = finite(prefactor * ln_1.exp());
            report.ln_c_stab_2 = finite(prefactor.ln() + ln_1);
        }
        (None, _) => report
            .notes
            .push("no second initial law; stability constants omitted".into()),
        (_, false) => report
            .notes
            .push("kappa is not admissible for the stability chain".into()),
    }
    Ok(report)
}
