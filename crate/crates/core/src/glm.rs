//! GLM families, link functions, and the information weight ν(η).
//!
//! The design criteria depend on the response model only through the scalar
//! weight ν(η) = (dμ/dη)²/Var(Y) evaluated at the linear predictor
//! η = βᵀq(x), and through its derivative ν′(η). Closed forms are used for
//! the common family/link pairs; any other compatible pair falls back to a
//! generic composition of the inverse-link derivatives and the family
//! variance function. Every closed form is validated against central finite
//! differences in the test suite, which is the authority on correctness.

use std::fmt;
use std::sync::Arc;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// User-supplied scalar function for custom families or links.
pub type ScalarHook = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Response distribution. Constants follow the mean parameterization.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Bernoulli,
    /// Number of trials scales the Bernoulli information linearly.
    Binomial { trials: u32 },
    Poisson,
    /// Shape k; Var(Y) = μ²/k.
    Gamma { shape: f64 },
    /// Dispersion λ; Var(Y) = μ³/λ.
    InverseGaussian { lambda: f64 },
    /// Known variance σ².
    Normal { variance: f64 },
    Custom,
}

impl Family {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Family::Binomial { trials } => *trials > 0,
            Family::Gamma { shape } => *shape > 0.0 && shape.is_finite(),
            Family::InverseGaussian { lambda } => *lambda > 0.0 && lambda.is_finite(),
            Family::Normal { variance } => *variance > 0.0 && variance.is_finite(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "family constant must be strictly positive: {self:?}"
            )))
        }
    }

    /// Variance of Y as a function of the mean (times family constants).
    pub(crate) fn variance(&self, mu: f64) -> Result<f64> {
        match self {
            Family::Bernoulli => in_open_unit(mu).map(|_| mu * (1.0 - mu)),
            Family::Binomial { trials } => {
                in_open_unit(mu).map(|_| f64::from(*trials) * mu * (1.0 - mu))
            }
            Family::Poisson => positive_mean(mu).map(|_| mu),
            Family::Gamma { shape } => positive_mean(mu).map(|_| mu * mu / shape),
            Family::InverseGaussian { lambda } => positive_mean(mu).map(|_| mu.powi(3) / lambda),
            Family::Normal { variance } => Ok(*variance),
            Family::Custom => Err(Error::MissingHook),
        }
    }

    /// dVar/dμ, used by the generic ν′ composition.
    fn variance_deriv(&self, mu: f64) -> Result<f64> {
        match self {
            Family::Bernoulli => Ok(1.0 - 2.0 * mu),
            Family::Binomial { trials } => Ok(f64::from(*trials) * (1.0 - 2.0 * mu)),
            Family::Poisson => Ok(1.0),
            Family::Gamma { shape } => Ok(2.0 * mu / shape),
            Family::InverseGaussian { lambda } => Ok(3.0 * mu * mu / lambda),
            Family::Normal { .. } => Ok(0.0),
            Family::Custom => Err(Error::MissingHook),
        }
    }
}

fn in_open_unit(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("mean {mu} outside (0, 1)")))
    }
}

fn positive_mean(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("mean {mu} not strictly positive")))
    }
}

/// Link function g with η = g(μ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logit,
    Probit,
    CLogLog,
    Log,
    Identity,
    /// g(μ) = 1/μ; requires η ≠ 0, and η > 0 for Gamma models.
    Inverse,
    /// g(μ) = 1/μ²; canonical for the inverse Gaussian family, requires η > 0.
    InverseSquared,
    Custom,
}

impl Link {
    /// Checks that η lies in the admissible domain of the link for `family`.
    pub fn check_domain(&self, family: &Family, eta: f64) -> Result<()> {
        if !eta.is_finite() {
            return Err(Error::Domain(format!("eta {eta} is not finite")));
        }
        match self {
            Link::Inverse => {
                if eta == 0.0 {
                    Err(Error::Domain("inverse link undefined at eta = 0".into()))
                } else if matches!(family, Family::Gamma { .. }) && eta <= 0.0 {
                    Err(Error::Domain(format!(
                        "gamma model with inverse link requires eta > 0, got {eta}"
                    )))
                } else {
                    Ok(())
                }
            }
            Link::InverseSquared => {
                if eta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "inverse-squared link requires eta > 0, got {eta}"
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    /// μ = g⁻¹(η).
    pub fn inverse(&self, eta: f64) -> Result<f64> {
        match self {
            Link::Logit => Ok(sigmoid(eta)),
            Link::Probit => Ok(norm_cdf(eta)),
            Link::CLogLog => Ok(-f64::exp_m1(-eta.exp())),
            Link::Log => Ok(eta.exp()),
            Link::Identity => Ok(eta),
            Link::Inverse => Ok(1.0 / eta),
            Link::InverseSquared => Ok(1.0 / eta.sqrt()),
            Link::Custom => Err(Error::MissingHook),
        }
    }

    /// dμ/dη.
    pub fn inverse_deriv(&self, eta: f64) -> Result<f64> {
        match self {
            Link::Logit => {
                let mu = sigmoid(eta);
                Ok(mu * (1.0 - mu))
            }
            Link::Probit => Ok(norm_pdf(eta)),
            Link::CLogLog => {
                let t = eta.exp();
                Ok(t * (-t).exp())
            }
            Link::Log => Ok(eta.exp()),
            Link::Identity => Ok(1.0),
            Link::Inverse => Ok(-1.0 / (eta * eta)),
            Link::InverseSquared => Ok(-0.5 * eta.powf(-1.5)),
            Link::Custom => Err(Error::MissingHook),
        }
    }

    /// d²μ/dη².
    fn inverse_deriv2(&self, eta: f64) -> Result<f64> {
        match self {
            Link::Logit => {
                let mu = sigmoid(eta);
                Ok(mu * (1.0 - mu) * (1.0 - 2.0 * mu))
            }
            Link::Probit => Ok(-eta * norm_pdf(eta)),
            Link::CLogLog => {
                let t = eta.exp();
                Ok(t * (-t).exp() * (1.0 - t))
            }
            Link::Log => Ok(eta.exp()),
            Link::Identity => Ok(0.0),
            Link::Inverse => Ok(2.0 / eta.powi(3)),
            Link::InverseSquared => Ok(0.75 * eta.powf(-2.5)),
            Link::Custom => Err(Error::MissingHook),
        }
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log Φ(x), stable deep into the lower tail.
fn ln_norm_cdf(x: f64) -> f64 {
    if x > -8.0 {
        norm_cdf(x).ln()
    } else {
        // Asymptotic expansion Φ(x) = φ(x)/(-x) (1 - 1/x² + 3/x⁴ - 15/x⁶ + 105/x⁸).
        let inv2 = 1.0 / (x * x);
        let series = 1.0 - inv2 * (1.0 - inv2 * (3.0 - inv2 * (15.0 - 105.0 * inv2)));
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// One term of the predictor basis q(x). Factor indices are zero-based.
#[derive(Clone)]
pub enum BasisTerm {
    Intercept,
    Linear(usize),
    Power(usize, f64),
    Interaction(Vec<usize>),
    /// 1 when the factor equals the given level, 0 otherwise.
    Indicator(usize, f64),
    Custom(CustomTerm),
}

/// Evaluator of one opaque basis term.
pub type TermEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// (x, factor) ↦ ∂q/∂x_factor for an opaque basis term.
pub type TermGradient = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// Opaque basis term with an optional partial-derivative evaluator.
#[derive(Clone)]
pub struct CustomTerm {
    pub eval: TermEval,
    /// Terms without a gradient evaluator are treated as non-smooth.
    pub gradient: Option<TermGradient>,
}

impl fmt::Debug for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTerm::Intercept => write!(f, "Intercept"),
            BasisTerm::Linear(j) => write!(f, "Linear({j})"),
            BasisTerm::Power(j, e) => write!(f, "Power({j}, {e})"),
            BasisTerm::Interaction(js) => write!(f, "Interaction({js:?})"),
            BasisTerm::Indicator(j, v) => write!(f, "Indicator({j}, {v})"),
            BasisTerm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Ordered list of basis functions q₁, …, q_p.
#[derive(Debug, Clone)]
pub struct PredictorBasis {
    terms: Vec<BasisTerm>,
}

impl PredictorBasis {
    pub fn new(terms: Vec<BasisTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Invalid("predictor basis must be nonempty".into()));
        }
        for term in &terms {
            if let BasisTerm::Interaction(js) = term {
                let mut sorted = js.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != js.len() || js.len() < 2 {
                    return Err(Error::Invalid(
                        "interaction must name at least two distinct factors".into(),
                    ));
                }
            }
        }
        Ok(Self { terms })
    }

    /// Intercept plus one linear term per factor.
    pub fn main_effects(d: usize) -> Self {
        let mut terms = vec![BasisTerm::Intercept];
        terms.extend((0..d).map(BasisTerm::Linear));
        Self { terms }
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest point dimension the basis can be evaluated on.
    pub fn min_dimension(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                BasisTerm::Intercept | BasisTerm::Custom(_) => 0,
                BasisTerm::Linear(j) | BasisTerm::Power(j, _) | BasisTerm::Indicator(j, _) => j + 1,
                BasisTerm::Interaction(js) => js.iter().map(|j| j + 1).max().unwrap_or(0),
            })
            .max()
            .unwrap_or(0)
    }

    /// Evaluates q(x).
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.min_dimension() {
            return Err(Error::Invalid(format!(
                "point has {} coordinates, basis needs at least {}",
                x.len(),
                self.min_dimension()
            )));
        }
        self.terms
            .iter()
            .map(|term| {
                Ok(match term {
                    BasisTerm::Intercept => 1.0,
                    BasisTerm::Linear(j) => x[*j],
                    BasisTerm::Power(j, e) => powf_checked(x[*j], *e)?,
                    BasisTerm::Interaction(js) => js.iter().map(|j| x[*j]).product(),
                    BasisTerm::Indicator(j, level) => {
                        if x[*j] == *level {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    BasisTerm::Custom(c) => (c.eval)(x),
                })
            })
            .collect()
    }

    /// True when every term is differentiable with respect to `factor`.
    pub fn differentiable_in(&self, factor: usize) -> bool {
        self.terms.iter().all(|term| match term {
            BasisTerm::Indicator(j, _) => *j != factor,
            BasisTerm::Custom(c) => c.gradient.is_some(),
            _ => true,
        })
    }

    /// ∂q/∂x_factor at x. Callers must have checked `differentiable_in`.
    pub fn eval_deriv(&self, x: &[f64], factor: usize) -> Result<Vec<f64>> {
        self.terms
            .iter()
            .map(|term| {
                Ok(match term {
                    BasisTerm::Intercept => 0.0,
                    BasisTerm::Linear(j) => {
                        if *j == factor {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    BasisTerm::Power(j, e) => {
                        if *j == factor {
                            *e * powf_checked(x[*j], *e - 1.0)?
                        } else {
                            0.0
                        }
                    }
                    BasisTerm::Interaction(js) => {
                        if js.contains(&factor) {
                            js.iter().filter(|j| **j != factor).map(|j| x[*j]).product()
                        } else {
                            0.0
                        }
                    }
                    BasisTerm::Indicator(j, _) => {
                        if *j == factor {
                            return Err(Error::NonDifferentiable(factor));
                        }
                        0.0
                    }
                    BasisTerm::Custom(c) => match &c.gradient {
                        Some(g) => g(x, factor),
                        None => return Err(Error::NonDifferentiable(factor)),
                    },
                })
            })
            .collect()
    }
}

fn powf_checked(base: f64, exp: f64) -> Result<f64> {
    if exp == 0.0 {
        return Ok(1.0);
    }
    let v = if exp.fract() == 0.0 && exp.abs() < i32::MAX as f64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    };
    if v.is_nan() {
        Err(Error::Domain(format!("{base}^{exp} undefined")))
    } else {
        Ok(v)
    }
}

/// Generalized linear model: family, link, coefficients, and predictor basis.
#[derive(Clone)]
pub struct GlmModel {
    family: Family,
    link: Link,
    beta: Vec<f64>,
    predictor: PredictorBasis,
    nu_hook: Option<ScalarHook>,
    nu_prime_hook: Option<ScalarHook>,
}

impl fmt::Debug for GlmModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GlmModel")
            .field("family", &self.family)
            .field("link", &self.link)
            .field("beta", &self.beta)
            .field("predictor", &self.predictor)
            .finish()
    }
}

impl GlmModel {
    pub fn new(
        family: Family,
        link: Link,
        beta: Vec<f64>,
        predictor: PredictorBasis,
    ) -> Result<Self> {
        if family == Family::Custom || link == Link::Custom {
            return Err(Error::MissingHook);
        }
        Self::build(family, link, beta, predictor, None, None)
    }

    /// Custom family or link with user-supplied ν and ν′.
    pub fn with_hooks(
        family: Family,
        link: Link,
        beta: Vec<f64>,
        predictor: PredictorBasis,
        nu_hook: ScalarHook,
        nu_prime_hook: ScalarHook,
    ) -> Result<Self> {
        if family != Family::Custom && link != Link::Custom {
            return Err(Error::Invalid(
                "hooks are only accepted for custom families or links".into(),
            ));
        }
        Self::build(
            family,
            link,
            beta,
            predictor,
            Some(nu_hook),
            Some(nu_prime_hook),
        )
    }

    fn build(
        family: Family,
        link: Link,
        beta: Vec<f64>,
        predictor: PredictorBasis,
        nu_hook: Option<ScalarHook>,
        nu_prime_hook: Option<ScalarHook>,
    ) -> Result<Self> {
        family.validate()?;
        if beta.is_empty() || beta.len() != predictor.len() {
            return Err(Error::Invalid(format!(
                "beta has {} entries but the predictor basis has {}",
                beta.len(),
                predictor.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid("beta must be finite".into()));
        }
        Ok(Self {
            family,
            link,
            beta,
            predictor,
            nu_hook,
            nu_prime_hook,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn predictor(&self) -> &PredictorBasis {
        &self.predictor
    }

    /// Number of regression parameters p.
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// η = βᵀq(x).
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        let q = self.predictor.eval(x)?;
        Ok(q.iter().zip(&self.beta).map(|(qi, bi)| qi * bi).sum())
    }

    /// GLM weight ν(η) = (dμ/dη)²/Var(Y); see `nu_at` for the composition with q.
    pub fn nu(&self, eta: f64) -> Result<f64> {
        if let Some(hook) = &self.nu_hook {
            return Ok(hook(eta));
        }
        self.link.check_domain(&self.family, eta)?;
        match (&self.family, self.link) {
            // Stable closed forms for the common pairs.
            (Family::Bernoulli, Link::Logit) => Ok(sigmoid(eta) * sigmoid(-eta)),
            (Family::Binomial { trials }, Link::Logit) => {
                Ok(f64::from(*trials) * sigmoid(eta) * sigmoid(-eta))
            }
            (Family::Bernoulli, Link::Probit) => Ok(nu_probit(eta)),
            (Family::Binomial { trials }, Link::Probit) => {
                Ok(f64::from(*trials) * nu_probit(eta))
            }
            (Family::Bernoulli, Link::CLogLog) => Ok(nu_cloglog(eta)),
            (Family::Binomial { trials }, Link::CLogLog) => {
                Ok(f64::from(*trials) * nu_cloglog(eta))
            }
            (Family::Poisson, Link::Log) => Ok(eta.exp()),
            (Family::Gamma { shape }, Link::Inverse) => Ok(shape / (eta * eta)),
            (Family::Normal { variance }, Link::Identity) => Ok(1.0 / variance),
            (Family::InverseGaussian { lambda }, Link::InverseSquared) => {
                Ok(0.25 * lambda * eta.powf(-1.5))
            }
            _ => self.nu_generic(eta),
        }
    }

    fn nu_generic(&self, eta: f64) -> Result<f64> {
        let mu = self.link.inverse(eta)?;
        let dmu = self.link.inverse_deriv(eta)?;
        let var = self.family.variance(mu)?;
        Ok(dmu * dmu / var)
    }

    /// dν/dη.
    pub fn nu_prime(&self, eta: f64) -> Result<f64> {
        if let Some(hook) = &self.nu_prime_hook {
            return Ok(hook(eta));
        }
        self.link.check_domain(&self.family, eta)?;
        match (&self.family, self.link) {
            (Family::Bernoulli, Link::Logit) => {
                let (mu, nu) = (sigmoid(eta), sigmoid(eta) * sigmoid(-eta));
                Ok(nu * (1.0 - 2.0 * mu))
            }
            (Family::Binomial { trials }, Link::Logit) => {
                let (mu, nu) = (sigmoid(eta), sigmoid(eta) * sigmoid(-eta));
                Ok(f64::from(*trials) * nu * (1.0 - 2.0 * mu))
            }
            (Family::Bernoulli, Link::Probit) => Ok(nu_probit_prime(eta)),
            (Family::Binomial { trials }, Link::Probit) => {
                Ok(f64::from(*trials) * nu_probit_prime(eta))
            }
            (Family::Bernoulli, Link::CLogLog) => Ok(nu_cloglog_prime(eta)),
            (Family::Binomial { trials }, Link::CLogLog) => {
                Ok(f64::from(*trials) * nu_cloglog_prime(eta))
            }
            (Family::Poisson, Link::Log) => Ok(eta.exp()),
            (Family::Gamma { shape }, Link::Inverse) => Ok(-2.0 * shape / eta.powi(3)),
            (Family::Normal { .. }, Link::Identity) => Ok(0.0),
            (Family::InverseGaussian { lambda }, Link::InverseSquared) => {
                Ok(-0.375 * lambda * eta.powf(-2.5))
            }
            _ => self.nu_prime_generic(eta),
        }
    }

    fn nu_prime_generic(&self, eta: f64) -> Result<f64> {
        let mu = self.link.inverse(eta)?;
        let d1 = self.link.inverse_deriv(eta)?;
        let d2 = self.link.inverse_deriv2(eta)?;
        let var = self.family.variance(mu)?;
        let dvar = self.family.variance_deriv(mu)?;
        Ok((2.0 * d1 * d2 * var - d1.powi(3) * dvar) / (var * var))
    }

    /// ν evaluated at the linear predictor of x.
    pub fn nu_at(&self, x: &[f64]) -> Result<f64> {
        self.nu(self.linear_predictor(x)?)
    }

    /// μ = g⁻¹(η), for likelihood work.
    pub fn mean(&self, eta: f64) -> Result<f64> {
        self.link.inverse(eta)
    }
}

/// ν for the probit link, evaluated in log space so the tails stay finite.
fn nu_probit(eta: f64) -> f64 {
    let ln_nu = -eta * eta - 2.0 * LN_SQRT_2PI - ln_norm_cdf(eta) - ln_norm_cdf(-eta);
    ln_nu.exp()
}

fn nu_probit_prime(eta: f64) -> f64 {
    // ν′ = ν (−2η + φ/Φ(−η) − φ/Φ(η)), with the Mills ratios in log space.
    let ln_phi = -0.5 * eta * eta - LN_SQRT_2PI;
    let mills_upper = (ln_phi - ln_norm_cdf(-eta)).exp();
    let mills_lower = (ln_phi - ln_norm_cdf(eta)).exp();
    nu_probit(eta) * (-2.0 * eta + mills_upper - mills_lower)
}

/// ν for the complementary log-log link: t²e^{−t}/(1−e^{−t}) with t = e^η.
fn nu_cloglog(eta: f64) -> f64 {
    let t = eta.exp();
    let denom = -f64::exp_m1(-t);
    if denom == 0.0 {
        // t underflowed; the limit as t → 0 is t itself.
        return t;
    }
    t * t * (-t).exp() / denom
}

fn nu_cloglog_prime(eta: f64) -> f64 {
    // d ln ν / dη = 2 − t − t/(eᵗ−1).
    let t = eta.exp();
    let ratio = if t < 1e-8 { 1.0 - 0.5 * t } else { t / f64::exp_m1(t) };
    nu_cloglog(eta) * (2.0 - t - ratio)
}
