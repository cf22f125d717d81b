//! Serializable result documents.

use flcr_core::fpca::{CovarianceMethod, CovarianceModel};
use flcr_core::score_test::TestResult;
use serde::{Deserialize, Serialize};

use crate::parallel::StageTiming;

pub const TOOL_VERSION: &str = concat!("flcr ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaSummary {
    pub k: usize,
    pub pve: f64,
    pub noise_var: f64,
    pub eigenvalues: Vec<f64>,
    /// `sample-covariance`, `local-linear` or `white-noise`.
    pub method: String,
    pub bandwidth: Option<f64>,
}

impl FpcaSummary {
    pub fn new(model: &CovarianceModel) -> Self {
        let (method, bandwidth) = match model.method {
            CovarianceMethod::SampleCovariance => ("sample-covariance", None),
            CovarianceMethod::LocalLinear { bandwidth } => ("local-linear", Some(bandwidth)),
            CovarianceMethod::WhiteNoise => ("white-noise", None),
        };
        Self {
            k: model.num_components(),
            pve: model.pve,
            noise_var: model.noise_var,
            eigenvalues: model.eigenvalues.clone(),
            method: method.into(),
            bandwidth,
        }
    }
}

/// Output of `flcr test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub test_covariate: String,
    pub statistic: f64,
    pub p_value: f64,
    pub score: f64,
    pub score_negative: bool,
    pub lambda_schur: f64,
    pub lambda_n: f64,
    pub mc_draws: usize,
    pub seed: u64,
    /// Fraction of null draws with a positive score; absent when no
    /// simulation ran.
    pub alpha_hat: Option<f64>,
    /// Variance components under the null, intercept first.
    pub null_tau: Vec<f64>,
    pub null_log_likelihood: f64,
    pub null_fit_cycles: usize,
    pub null_eigenvalues: Vec<f64>,
    pub fpca: FpcaSummary,
    pub floored_covariates: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub version: String,
}

impl ResultDocument {
    pub fn new(result: &TestResult, timings: Vec<StageTiming>) -> Self {
        Self {
            test_covariate: result.test_covariate.clone(),
            statistic: result.statistic,
            p_value: result.p_value,
            score: result.components.score,
            score_negative: result.score_negative,
            lambda_schur: result.components.lambda_schur,
            lambda_n: result.components.lambda_n,
            mc_draws: result.mc_draws,
            seed: result.seed,
            alpha_hat: result.alpha_hat,
            null_tau: result.null_params.tau.clone(),
            null_log_likelihood: result.null_log_likelihood,
            null_fit_cycles: result.null_fit_cycles,
            null_eigenvalues: result.components.null_eigs.clone(),
            fpca: FpcaSummary::new(&result.covariance),
            floored_covariates: result.floored_covariates.clone(),
            timings,
            version: TOOL_VERSION.into(),
        }
    }
}

/// Output of `flcr fpca`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaDocument {
    pub variable: String,
    pub subjects: usize,
    pub domain: [f64; 2],
    #[serde(flatten)]
    pub summary: FpcaSummary,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub version: String,
}

impl FpcaDocument {
    pub fn new(variable: &str, subjects: usize, model: &CovarianceModel) -> Self {
        Self {
            variable: variable.into(),
            subjects,
            domain: [model.domain.lo, model.domain.hi],
            summary: FpcaSummary::new(model),
            grid: model.grid.clone(),
            mean: model.mean.clone(),
            eigenfunctions: model.eigenfunctions.clone(),
            version: TOOL_VERSION.into(),
        }
    }
}
