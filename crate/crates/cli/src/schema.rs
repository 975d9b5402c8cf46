//! JSON schemas for problem specs, emitted designs, and study files.
//!
//! Unknown keys are rejected everywhere so a misspelled field fails loudly
//! instead of silently corrupting an experiment. Factor indices are 1-based
//! in the JSON and converted at the boundary.

use serde::{Deserialize, Serialize};

use aopt_core::{BasisTerm, DesignSpace, Factor, Family, GlmModel, Link, PredictorBasis};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub model: ModelSpec,
    pub predictor: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
    /// Finite-candidate mode: explicit design points for the lift-one solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    pub link: String,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    Intercept,
    /// `factor` is 1-based.
    Linear { factor: usize },
    Power { factor: usize, exponent: f64 },
    Interaction { factors: Vec<usize> },
    Indicator { factor: usize, level: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub factors: Vec<FactorSpec>,
    /// Optional explicit list of allowed discrete-coordinate combinations,
    /// rows over the discrete factors in declaration order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorSpec {
    Continuous { lower: f64, upper: f64 },
    Discrete { levels: Vec<f64> },
}

/// Design emitted by `liftone`/`forlion`; also the input of `round` and
/// `verify`, so it carries the model that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDocument {
    pub model: ModelSpec,
    pub predictor: Vec<TermSpec>,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub h: f64,
    pub certified: bool,
    pub iterations: usize,
    pub seed: u64,
    pub method: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactDocument {
    pub model: ModelSpec,
    pub predictor: Vec<TermSpec>,
    pub points: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
    pub n: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyDocument {
    pub max_phi: f64,
    pub argmax: Vec<f64>,
    pub trace_inverse: f64,
    pub slack: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub model: ModelSpec,
    pub predictor: Vec<TermSpec>,
    pub population: PopulationSpec,
    pub n: u64,
    pub samplers: Vec<SamplerJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub points: Vec<Vec<f64>>,
    pub sizes: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerJson {
    Srswor {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Proportional {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Stratified {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        counts: Vec<u64>,
    },
    /// Allocation computed on the fly: lift-one weights rounded to n units.
    AOptimal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl ModelSpec {
    pub fn family(&self) -> Result<Family, CliError> {
        let constants = self.constants.clone().unwrap_or_default();
        let need = |value: Option<f64>, field: &str| {
            value.ok_or_else(|| {
                CliError::Schema(format!(
                    "family '{}' requires constants.{field}",
                    self.family
                ))
            })
        };
        match self.family.as_str() {
            "bernoulli" => Ok(Family::Bernoulli),
            "binomial" => Ok(Family::Binomial {
                trials: constants.trials.ok_or_else(|| {
                    CliError::Schema("family 'binomial' requires constants.trials".into())
                })?,
            }),
            "poisson" => Ok(Family::Poisson),
            "gamma" => Ok(Family::Gamma {
                shape: need(constants.shape, "shape")?,
            }),
            "inverse_gaussian" => Ok(Family::InverseGaussian {
                lambda: need(constants.lambda, "lambda")?,
            }),
            "normal" => Ok(Family::Normal {
                variance: need(constants.variance, "variance")?,
            }),
            other => Err(CliError::Schema(format!(
                "model.family '{other}' is not one of bernoulli, binomial, poisson, gamma, inverse_gaussian, normal"
            ))),
        }
    }

    pub fn link(&self) -> Result<Link, CliError> {
        match self.link.as_str() {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            "cloglog" => Ok(Link::CLogLog),
            "log" => Ok(Link::Log),
            "identity" => Ok(Link::Identity),
            "inverse" => Ok(Link::Inverse),
            "inverse_squared" => Ok(Link::InverseSquared),
            other => Err(CliError::Schema(format!(
                "model.link '{other}' is not one of logit, probit, cloglog, log, identity, inverse, inverse_squared"
            ))),
        }
    }
}

pub fn build_basis(terms: &[TermSpec]) -> Result<PredictorBasis, CliError> {
    let converted: Vec<BasisTerm> = terms
        .iter()
        .map(|term| {
            let check = |factor: usize| {
                if factor == 0 {
                    Err(CliError::Schema(
                        "predictor factor indices are 1-based; got 0".into(),
                    ))
                } else {
                    Ok(factor - 1)
                }
            };
            Ok(match term {
                TermSpec::Intercept => BasisTerm::Intercept,
                TermSpec::Linear { factor } => BasisTerm::Linear(check(*factor)?),
                TermSpec::Power { factor, exponent } => BasisTerm::Power(check(*factor)?, *exponent),
                TermSpec::Interaction { factors } => BasisTerm::Interaction(
                    factors
                        .iter()
                        .map(|f| check(*f))
                        .collect::<Result<Vec<_>, CliError>>()?,
                ),
                TermSpec::Indicator { factor, level } => {
                    BasisTerm::Indicator(check(*factor)?, *level)
                }
            })
        })
        .collect::<Result<_, CliError>>()?;
    PredictorBasis::new(converted).map_err(CliError::from)
}

pub fn build_model(model: &ModelSpec, predictor: &[TermSpec]) -> Result<GlmModel, CliError> {
    GlmModel::new(
        model.family()?,
        model.link()?,
        model.beta.clone(),
        build_basis(predictor)?,
    )
    .map_err(CliError::from)
}

pub fn build_space(space: &SpaceSpec) -> Result<DesignSpace, CliError> {
    let factors = space
        .factors
        .iter()
        .map(|factor| match factor {
            FactorSpec::Continuous { lower, upper } => Factor::Continuous {
                lower: *lower,
                upper: *upper,
            },
            FactorSpec::Discrete { levels } => Factor::Discrete {
                levels: levels.clone(),
            },
        })
        .collect();
    DesignSpace::new(factors, space.grid.clone()).map_err(CliError::from)
}
