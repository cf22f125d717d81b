//! One-sided score test for a zero variance component and the end-to-end
//! testing pipeline.
//!
//! At the null fit `θ̃` the score for the tested component `Z` is
//! `S = −½(tr ZᵀV⁻¹Z − ‖ZᵀV⁻¹y‖²)` and the statistic is `T = S²/Λ` for
//! `S > 0`, else 0, where `Λ` is the efficient information left after
//! projecting out every other component. The null law of `T` is simulated
//! from `¼(Σλx² − Σλ)²/Λ_n · 1{Σλx² ≥ Σλ}` with `λ` the eigenvalues of
//! `ZᵀV⁻¹Z/n` and `Λ_n = Λ/n²`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
#[allow(unused_imports)]
use num_traits::Float;

use crate::basis::{BasisSpec, Interval, DEFAULT_DEGREE, DEFAULT_NUM_BASIS};
use crate::design::{
    build_design, uniform_bases, Curve, FunctionalDataset, ObservedDataset, StackedDesign, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::fpca::{estimate_covariance, reconstruct_covariate, CovarianceModel, FpcaConfig};
use crate::likelihood::{fit_full_white_noise, fit_mle, MleOptions, VarianceParams, WhitenedSystem};
use crate::rng::stream_rng;

/// Score, information partition and null-law inputs at a parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComponents {
    pub score: f64,
    /// Information among the non-tested components.
    pub info_nuisance: DMatrix<f64>,
    /// Information between the non-tested components and the tested one.
    pub info_cross: DVector<f64>,
    pub info_test: f64,
    /// `I₂₂ − I₂₁ᵀ I₁₁⁻¹ I₁₂`.
    pub lambda_schur: f64,
    /// Eigenvalues of `ZᵀV⁻¹Z/n`, descending, clipped at 0.
    pub null_eigs: Vec<f64>,
    /// `Λ/n²`.
    pub lambda_n: f64,
}

fn check_test_index(system: &WhitenedSystem, params: &VarianceParams, test_index: usize) -> Result<()> {
    let nc = system.num_components();
    if test_index == 0 || test_index >= nc {
        return Err(Error::IndexOutOfRange {
            index: test_index,
            len: nc,
        });
    }
    if params.tau.get(test_index).copied().unwrap_or(0.0) != 0.0 {
        return Err(Error::InvalidInput(format!(
            "tested component {test_index} must be 0 at the null fit"
        )));
    }
    Ok(())
}

/// Every score-test quantity from one Woodbury operator.
pub fn score_components(
    system: &WhitenedSystem,
    params: &VarianceParams,
    test_index: usize,
) -> Result<ScoreComponents> {
    check_test_index(system, params, test_index)?;
    let op = system.operator(params)?;
    let m = op.cross_gram();
    let w = op.cross_response();
    let nc = system.num_components();
    let n = system.num_subjects() as f64;

    let ct = system.columns(test_index);
    let m_tt = m.view((ct.start, ct.start), (ct.len(), ct.len())).into_owned();
    let w_t = w.rows(ct.start, ct.len());
    let score = -0.5 * (m_tt.trace() - w_t.norm_squared());

    let info = |j: usize, k: usize| {
        let (cj, ck) = (system.columns(j), system.columns(k));
        0.5 * m.view((cj.start, ck.start), (cj.len(), ck.len())).norm_squared()
    };
    let nuisance: Vec<usize> = (0..nc).filter(|&k| k != test_index).collect();
    let q = nuisance.len();
    let info_nuisance = DMatrix::from_fn(q, q, |a, b| info(nuisance[a], nuisance[b]));
    let info_cross = DVector::from_fn(q, |a, _| info(nuisance[a], test_index));
    let info_test = info(test_index, test_index);
    let chol = Cholesky::new(info_nuisance.clone()).ok_or(Error::SingularInformation)?;
    let lambda_schur = info_test - info_cross.dot(&chol.solve(&info_cross));

    let eig = SymmetricEigen::try_new(m_tt / n, 1e-14, 10_000)
        .ok_or_else(|| Error::EigenFailure("tested-component Gram matrix".into()))?;
    let mut null_eigs: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    null_eigs.sort_by(|a, b| b.total_cmp(a));

    Ok(ScoreComponents {
        score,
        info_nuisance,
        info_cross,
        info_test,
        lambda_schur,
        null_eigs,
        lambda_n: lambda_schur / (n * n),
    })
}

/// Score for component `test_index` at `params` (tested component 0).
pub fn score_at(
    design: &StackedDesign,
    cov: &CovarianceModel,
    params: &VarianceParams,
    test_index: usize,
) -> Result<f64> {
    let system = WhitenedSystem::new(design, cov)?;
    check_test_index(&system, params, test_index)?;
    let op = system.operator(params)?;
    let m = op.cross_gram();
    let w = op.cross_response();
    let ct = system.columns(test_index);
    let tr: f64 = ct.clone().map(|c| m[(c, c)]).sum();
    let wn: f64 = ct.map(|c| w[c] * w[c]).sum();
    Ok(-0.5 * (tr - wn))
}

pub fn information_blocks(
    design: &StackedDesign,
    cov: &CovarianceModel,
    params: &VarianceParams,
    test_index: usize,
) -> Result<ScoreComponents> {
    score_components(&WhitenedSystem::new(design, cov)?, params, test_index)
}

pub fn null_eigenvalues(
    design: &StackedDesign,
    cov: &CovarianceModel,
    params: &VarianceParams,
    test_index: usize,
) -> Result<Vec<f64>> {
    information_blocks(design, cov, params, test_index).map(|c| c.null_eigs)
}

/// `T = S²/Λ` for `S > 0`, else 0. A positive score with `Λ ≤ 0` is an
/// error.
pub fn one_sided_statistic(score: f64, lambda_schur: f64) -> Result<f64> {
    if !(score > 0.0) {
        return Ok(0.0);
    }
    if !(lambda_schur > 0.0) {
        return Err(Error::NonPositiveSchur(lambda_schur));
    }
    Ok(score * score / lambda_schur)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullDistConfig {
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for NullDistConfig {
    fn default() -> Self {
        Self {
            mc_draws: 10_000,
            seed: 0,
        }
    }
}

impl NullDistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws < 100 {
            return Err(Error::InvalidInput(format!(
                "{} null draws requested; at least 100 are required",
                self.mc_draws
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullSample {
    pub draws: Vec<f64>,
    /// Fraction of draws on the positive branch, `Σλx² ≥ Σλ`.
    pub alpha_hat: f64,
}

/// Draw number `index`: its own random stream, so any partition of the
/// draws across workers yields the same sample.
pub fn null_draw(eigs: &[f64], lambda_n: f64, seed: u64, index: u64) -> (f64, bool) {
    let mut rng = stream_rng(seed, index);
    let (mut weighted, mut total) = (0.0, 0.0);
    for &l in eigs {
        let x: f64 = rng.sample(StandardNormal);
        weighted += l * x * x;
        total += l;
    }
    if weighted >= total {
        let d = weighted - total;
        (0.25 * d * d / lambda_n, true)
    } else {
        (0.0, false)
    }
}

fn check_null_inputs(eigs: &[f64], lambda_n: f64, config: &NullDistConfig) -> Result<()> {
    config.validate()?;
    if !(lambda_n > 0.0) {
        return Err(Error::NonPositiveSchur(lambda_n));
    }
    if eigs.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput("null eigenvalues must be finite and nonnegative".into()));
    }
    if eigs.iter().all(|&l| l == 0.0) {
        return Err(Error::DegenerateInput("all null eigenvalues are zero".into()));
    }
    Ok(())
}

/// Assemble a sample from draws `0..M` produced by `draw`.
pub fn collect_null(
    eigs: &[f64],
    lambda_n: f64,
    config: &NullDistConfig,
    draws: impl FnOnce(&(dyn Fn(u64) -> (f64, bool) + Sync)) -> Vec<(f64, bool)>,
) -> Result<NullSample> {
    check_null_inputs(eigs, lambda_n, config)?;
    let one = |j: u64| null_draw(eigs, lambda_n, config.seed, j);
    let out = draws(&one);
    if out.len() != config.mc_draws {
        return Err(Error::DimensionMismatch(format!(
            "{} null draws produced, {} requested",
            out.len(),
            config.mc_draws
        )));
    }
    let positive = out.iter().filter(|d| d.1).count();
    Ok(NullSample {
        draws: out.into_iter().map(|d| d.0).collect(),
        alpha_hat: positive as f64 / config.mc_draws as f64,
    })
}

/// Sequential simulation of the plug-in null law.
pub fn simulate_null(eigs: &[f64], lambda_n: f64, config: &NullDistConfig) -> Result<NullSample> {
    collect_null(eigs, lambda_n, config, |draw| {
        (0..config.mc_draws as u64).map(draw).collect()
    })
}

/// `1` at `t = 0`, else `(1 + #{draws ≥ t}) / (1 + M)`.
pub fn p_value(t_obs: f64, null_draws: &[f64]) -> f64 {
    if t_obs <= 0.0 {
        return 1.0;
    }
    let exceed = null_draws.iter().filter(|&&d| d >= t_obs).count();
    (1 + exceed) as f64 / (1 + null_draws.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Validate,
    Reconstruct,
    Design,
    FullFit,
    Covariance,
    NullFit,
    Score,
    NullDistribution,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Validate,
        Stage::Reconstruct,
        Stage::Design,
        Stage::FullFit,
        Stage::Covariance,
        Stage::NullFit,
        Stage::Score,
        Stage::NullDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Reconstruct => "reconstruct",
            Stage::Design => "design",
            Stage::FullFit => "full_fit",
            Stage::Covariance => "covariance",
            Stage::NullFit => "null_fit",
            Stage::Score => "score",
            Stage::NullDistribution => "null_distribution",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An error with the pipeline stage that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Error,
}

/// Callbacks around pipeline stages and the null sampler.
pub trait PipelineHooks {
    fn enter(&mut self, _stage: Stage) {}

    fn exit(&mut self, _stage: Stage) {}

    fn sample_null(&mut self, eigs: &[f64], lambda_n: f64, config: &NullDistConfig) -> Result<NullSample> {
        simulate_null(eigs, lambda_n, config)
    }
}

/// Sequential sampling, no instrumentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl PipelineHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOptions {
    pub num_basis: usize,
    pub degree: usize,
    /// Domain of the coefficient functions; the observed time range if
    /// `None`.
    pub domain: Option<Interval>,
    pub fpca: FpcaConfig,
    pub null: NullDistConfig,
    /// Treat covariates as noisy and replace them by their FPCA
    /// reconstructions at the response times.
    pub measurement_error: bool,
    pub mle: MleOptions,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            num_basis: DEFAULT_NUM_BASIS,
            degree: DEFAULT_DEGREE,
            domain: None,
            fpca: FpcaConfig::default(),
            null: NullDistConfig::default(),
            measurement_error: false,
            mle: MleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub components: ScoreComponents,
    pub null_params: VarianceParams,
    pub null_log_likelihood: f64,
    pub null_fit_cycles: usize,
    /// `None` when the score is not positive and no simulation ran.
    pub alpha_hat: Option<f64>,
    pub mc_draws: usize,
    pub seed: u64,
    pub score_negative: bool,
    pub test_covariate: String,
    /// Error covariance estimated from the full-model residuals.
    pub covariance: CovarianceModel,
    /// Covariates whose reconstruction floored the measurement-error
    /// variance.
    pub floored_covariates: Vec<String>,
}

fn staged<T>(hooks: &mut dyn PipelineHooks, stage: Stage, f: impl FnOnce(&mut dyn PipelineHooks) -> Result<T>) -> core::result::Result<T, PipelineError> {
    hooks.enter(stage);
    let out = f(hooks).map_err(|source| PipelineError { stage, source });
    hooks.exit(stage);
    out
}

/// `options.domain` checked against the data, or the observed time range.
fn resolve_domain(data: &ObservedDataset, options: &TestOptions) -> Result<Interval> {
    let range = data.time_range()?;
    match options.domain {
        Some(d) => {
            d.check(range.lo)?;
            d.check(range.hi)?;
            Ok(d)
        }
        None => Ok(range),
    }
}

fn stacked_design(aligned: &FunctionalDataset, domain: Interval, options: &TestOptions) -> Result<StackedDesign> {
    let spec = BasisSpec::new(options.num_basis, options.degree, domain)?;
    let (b, z) = uniform_bases(&spec, aligned.num_covariates())?;
    build_design(aligned, &b, &z)
}

fn residual_curves(design: &StackedDesign, residuals: &DVector<f64>) -> Result<Vec<Curve>> {
    design
        .block_offsets
        .iter()
        .zip(&design.times_per_subject)
        .map(|(rows, times)| Curve::new(times.clone(), residuals.rows(rows.start, rows.len()).iter().copied().collect()))
        .collect()
}

/// Per-subject residuals of the full-model white-noise fit, in subject
/// order. These are the curves whose covariance [`run_test`] estimates.
pub fn full_model_residuals(data: &ObservedDataset, options: &TestOptions) -> Result<Vec<Curve>> {
    data.validate()?;
    let domain = resolve_domain(data, options)?;
    let (aligned, _) = covariates_at_response_times(data, domain, options)?;
    let design = stacked_design(&aligned, domain, options)?;
    let fit = fit_full_white_noise(&design, &options.mle)?;
    residual_curves(&design, &(&design.y - &fit.fitted))
}

/// Covariates at the response times, reconstructed when noisy.
fn covariates_at_response_times(
    data: &ObservedDataset,
    domain: Interval,
    options: &TestOptions,
) -> Result<(FunctionalDataset, Vec<String>)> {
    if !options.measurement_error {
        return Ok((data.align()?, Vec::new()));
    }
    let p = data.covariate_names.len();
    let mut values: Vec<DMatrix<f64>> = data
        .subjects
        .iter()
        .map(|s| DMatrix::zeros(s.response.len(), p))
        .collect();
    let mut floored = Vec::new();
    for k in 0..p {
        let curves: Vec<Curve> = data.subjects.iter().map(|s| s.covariates[k].clone()).collect();
        let rec = reconstruct_covariate(&curves, domain, &options.fpca)?;
        if rec.noise_floored {
            floored.push(data.covariate_names[k].clone());
        }
        for (i, s) in data.subjects.iter().enumerate() {
            for (j, &t) in s.response.times.iter().enumerate() {
                values[i][(j, k)] = rec.evaluate(i, t)?;
            }
        }
    }
    let subjects = data
        .subjects
        .iter()
        .zip(values)
        .map(|(s, covariates)| SubjectRecord {
            id: s.id.clone(),
            times: s.response.times.clone(),
            response: s.response.values.clone(),
            covariates,
        })
        .collect();
    Ok((FunctionalDataset::new(subjects, data.covariate_names.clone())?, floored))
}

/// Test `H₀: β_k ≡ 0` for the covariate named `test_covariate`.
///
/// Stages: optional covariate reconstruction, stacked design, full-model
/// fit under white noise, FPCA of the residuals, null fit, score and
/// information, simulated null law, p-value.
pub fn run_test(
    data: &ObservedDataset,
    test_covariate: &str,
    options: &TestOptions,
    hooks: &mut dyn PipelineHooks,
) -> core::result::Result<TestResult, PipelineError> {
    let (test_index, domain) = staged(hooks, Stage::Validate, |_| {
        data.validate()?;
        options.fpca.validate()?;
        options.null.validate()?;
        let k = data.covariate_index(test_covariate).ok_or_else(|| {
            Error::InvalidInput(format!("unknown test covariate {test_covariate:?}"))
        })?;
        Ok((k + 1, resolve_domain(data, options)?))
    })?;

    let (aligned, floored_covariates) = staged(hooks, Stage::Reconstruct, |_| {
        covariates_at_response_times(data, domain, options)
    })?;

    let design = staged(hooks, Stage::Design, |_| stacked_design(&aligned, domain, options))?;

    let residuals = staged(hooks, Stage::FullFit, |_| {
        let fit = fit_full_white_noise(&design, &options.mle)?;
        Ok(&design.y - &fit.fitted)
    })?;

    let covariance = staged(hooks, Stage::Covariance, |_| {
        estimate_covariance(&residual_curves(&design, &residuals)?, domain, &options.fpca)
    })?;

    let (system, null_fit) = staged(hooks, Stage::NullFit, |_| {
        let system = WhitenedSystem::new(&design, &covariance)?;
        let fit = fit_mle(&system, &[test_index], &options.mle)?;
        Ok((system, fit))
    })?;

    let (components, statistic) = staged(hooks, Stage::Score, |_| {
        let c = score_components(&system, &null_fit.params, test_index)?;
        let t = one_sided_statistic(c.score, c.lambda_schur)?;
        Ok((c, t))
    })?;

    let (p, alpha_hat) = staged(hooks, Stage::NullDistribution, |h| {
        if statistic == 0.0 {
            return Ok((1.0, None));
        }
        let sample = h.sample_null(&components.null_eigs, components.lambda_n, &options.null)?;
        Ok((p_value(statistic, &sample.draws), Some(sample.alpha_hat)))
    })?;

    Ok(TestResult {
        statistic,
        p_value: p,
        score_negative: !(components.score > 0.0),
        components,
        null_params: null_fit.params,
        null_log_likelihood: null_fit.log_likelihood,
        null_fit_cycles: null_fit.cycles,
        alpha_hat,
        mc_draws: options.null.mc_draws,
        seed: options.null.seed,
        test_covariate: test_covariate.into(),
        covariance,
        floored_covariates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::tests::{dense, draw_response, random_design, toy_cov};
    use crate::simulate::{generate, Design, Scenario, ScenarioConfig};
    use alloc::vec;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn components_match_dense_traces() {
        let mut rng = stream_rng(31, 0);
        for inst in 0..20 {
            let p = 1 + inst % 2;
            let n = rng.random_range(2..=5);
            let design = random_design(&mut rng, n, 6, 4, p);
            let cov = toy_cov(0.5 + rng.random::<f64>());
            let t = p;
            let mut tau: Vec<f64> = (0..=p).map(|_| rng.random_range(0.05..2.0)).collect();
            tau[t] = 0.0;
            let params = VarianceParams::new(tau.clone()).unwrap();
            let c = information_blocks(&design, &cov, &params, t).unwrap();

            let d = dense(&design, &cov, &tau);
            let vinv = d.v.clone().try_inverse().unwrap();
            let comp = |k: usize| design.component(k).clone();
            let z = comp(t);
            let score = -0.5 * ((z.transpose() * &vinv * &z).trace() - (z.transpose() * &vinv * &design.y).norm_squared());
            assert!((c.score - score).abs() < 1e-8 * score.abs().max(1.0));
            let info = |a: usize, b: usize| 0.5 * (comp(a).transpose() * &vinv * comp(b)).norm_squared();
            assert!((c.info_test - info(t, t)).abs() < 1e-8 * info(t, t).max(1.0));
            let others: Vec<usize> = (0..=p).filter(|&k| k != t).collect();
            for (a, &ka) in others.iter().enumerate() {
                assert!((c.info_cross[a] - info(ka, t)).abs() < 1e-8 * info(ka, t).max(1.0));
                for (b, &kb) in others.iter().enumerate() {
                    assert!((c.info_nuisance[(a, b)] - info(ka, kb)).abs() < 1e-8 * info(ka, kb).max(1.0));
                }
            }
            assert!(c.lambda_schur <= c.info_test + 1e-12);

            // Nonzero eigenvalues of V^{-1/2} Z Zᵀ V^{-1/2} / n.
            let nn = design.num_subjects() as f64;
            let half = {
                let e = SymmetricEigen::new(vinv.clone());
                &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.sqrt())) * e.eigenvectors.transpose()
            };
            let big = &half * &z * z.transpose() * &half / nn;
            let mut ev: Vec<f64> = SymmetricEigen::new(big).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in c.null_eigs.iter().zip(&ev) {
                assert!((a - b).abs() < 1e-8 * ev[0].max(1.0));
            }
            let sum: f64 = c.null_eigs.iter().sum();
            assert!((sum - (z.transpose() * &vinv * &z).trace() / nn).abs() < 1e-8 * sum.max(1.0));
        }
    }

    #[test]
    fn score_matches_likelihood_derivative() {
        let mut rng = stream_rng(32, 0);
        for inst in 0..20 {
            let p = 1 + inst % 2;
            let design = random_design(&mut rng, 5, 6, 4, p);
            let cov = toy_cov(0.6);
            let mut tau: Vec<f64> = (0..=p).map(|_| rng.random_range(0.05..2.0)).collect();
            tau[p] = 0.0;
            let params = VarianceParams::new(tau.clone()).unwrap();
            let s = score_at(&design, &cov, &params, p).unwrap();
            // V stays positive definite for small negative τ, so a central
            // difference through the boundary is well defined.
            let ll = |x: f64| {
                let mut t = tau.clone();
                t[p] = x;
                let ch = Cholesky::new(dense(&design, &cov, &t).v).unwrap();
                let logdet = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                -0.5 * (logdet + design.y.dot(&ch.solve(&design.y)))
            };
            let h = 1e-5;
            let fd = (ll(h) - ll(-h)) / (2.0 * h);
            assert!((s - fd).abs() < 1e-4 * s.abs().max(1e-3), "score {s} vs fd {fd}");
        }
    }

    #[test]
    fn trivial_scores() {
        let mut rng = stream_rng(33, 0);
        let mut design = random_design(&mut rng, 4, 6, 4, 1);
        let cov = toy_cov(0.5);
        let params = VarianceParams::new(vec![0.5, 0.0]).unwrap();
        design.y.fill(0.0);
        let c = information_blocks(&design, &cov, &params, 1).unwrap();
        assert!(c.score < 0.0);
        assert!((c.score + 0.5 * c.null_eigs.iter().sum::<f64>() * 4.0).abs() < 1e-10);
        design.z_mats[0].fill(0.0);
        let c = information_blocks(&design, &cov, &params, 1).unwrap();
        assert_eq!(c.score, 0.0);
        assert!(c.null_eigs.iter().all(|&l| l == 0.0));
        assert_eq!(one_sided_statistic(c.score, c.lambda_schur).unwrap(), 0.0);
        assert!(matches!(
            information_blocks(&design, &cov, &VarianceParams::new(vec![0.5, 0.1]).unwrap(), 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_cross_information_leaves_full_variance() {
        // Intercept and covariate supported on disjoint subjects are
        // orthogonal under a block-diagonal V⁻¹.
        let mut rng = stream_rng(34, 0);
        let mut design = random_design(&mut rng, 4, 6, 4, 1);
        let r0 = design.block_offsets[0].clone();
        let r1 = design.block_offsets[1].clone();
        for r in 0..design.num_obs() {
            if !r0.contains(&r) {
                design.b_mat.row_mut(r).fill(0.0);
            }
            if !r1.contains(&r) {
                design.z_mats[0].row_mut(r).fill(0.0);
            }
        }
        let c = information_blocks(&design, &toy_cov(0.5), &VarianceParams::new(vec![0.5, 0.0]).unwrap(), 1).unwrap();
        assert!(c.info_cross.amax() < 1e-14);
        assert_eq!(c.lambda_schur, c.info_test);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = stream_rng(35, 0);
        let design = random_design(&mut rng, 5, 6, 4, 1);
        let cov = toy_cov(0.5);
        let params = VarianceParams::new(vec![0.8, 0.0]).unwrap();
        let a = information_blocks(&design, &cov, &params, 1).unwrap();
        let mut scaled = design.clone();
        scaled.z_mats[0] *= 3.0;
        let b = information_blocks(&scaled, &cov, &params, 1).unwrap();
        for (x, y) in a.null_eigs.iter().zip(&b.null_eigs) {
            assert!((9.0 * x - y).abs() < 1e-9 * y.max(1.0));
        }
        assert!((9.0 * a.score - b.score).abs() < 1e-9 * b.score.abs().max(1.0));
        let ta = one_sided_statistic(a.score.abs(), a.lambda_schur).unwrap();
        let tb = one_sided_statistic(b.score.abs(), b.lambda_schur).unwrap();
        assert!((ta - tb).abs() < 1e-9 * ta.max(1.0));
    }

    #[test]
    fn statistic_rules() {
        assert_eq!(one_sided_statistic(-1.0, 2.0).unwrap(), 0.0);
        assert_eq!(one_sided_statistic(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(one_sided_statistic(-1.0, -2.0).unwrap(), 0.0);
        assert_eq!(one_sided_statistic(3.0, 2.0).unwrap(), 4.5);
        assert!(matches!(one_sided_statistic(3.0, 0.0), Err(Error::NonPositiveSchur(_))));
    }

    fn mc_se(p: f64, m: usize) -> f64 {
        (p * (1.0 - p) / m as f64).sqrt()
    }

    #[test]
    fn single_eigenvalue_null_law() {
        let cfg = NullDistConfig { mc_draws: 20_000, seed: 5 };
        let s = simulate_null(&[1.0], 1.0, &cfg).unwrap();
        let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(1.0);
        assert!((s.alpha_hat - p).abs() < 3.0 * mc_se(p, 20_000));
        assert!(s.draws.iter().all(|&d| d >= 0.0));
        // Draws are ¼(x² − 1)² on the positive branch.
        for j in 0..50u64 {
            let x: f64 = stream_rng(5, j).sample(StandardNormal);
            let expected = if x * x >= 1.0 { 0.25 * (x * x - 1.0).powi(2) } else { 0.0 };
            assert_eq!(s.draws[j as usize], expected);
            assert_eq!(null_draw(&[1.0], 1.0, 5, j), (expected, x * x >= 1.0));
        }
    }

    #[test]
    fn many_equal_eigenvalues_null_law() {
        let cfg = NullDistConfig { mc_draws: 20_000, seed: 6 };
        let s = simulate_null(&[1.0; 50], 2.0, &cfg).unwrap();
        let p = 1.0 - ChiSquared::new(50.0).unwrap().cdf(50.0);
        assert!((p - 0.4734).abs() < 1e-3);
        assert!((s.alpha_hat - p).abs() < 3.0 * mc_se(p, 20_000));
    }

    #[test]
    fn null_simulation_contract() {
        let cfg = NullDistConfig { mc_draws: 500, seed: 1 };
        assert!(simulate_null(&[0.0, 0.0], 1.0, &cfg).is_err());
        assert!(simulate_null(&[1.0], 0.0, &cfg).is_err());
        assert!(simulate_null(&[1.0], 1.0, &NullDistConfig { mc_draws: 50, seed: 1 }).is_err());
        let a = simulate_null(&[2.0, 0.5], 0.3, &cfg).unwrap();
        let rev = collect_null(&[2.0, 0.5], 0.3, &cfg, |draw| {
            let mut v: Vec<_> = (0..500u64).rev().map(draw).collect();
            v.reverse();
            v
        })
        .unwrap();
        assert_eq!(a, rev);
    }

    #[test]
    fn p_value_rules() {
        let draws: Vec<f64> = (0..9999).map(|i| i as f64).collect();
        assert_eq!(p_value(0.0, &draws), 1.0);
        assert_eq!(p_value(1e9, &draws), 1.0 / 10000.0);
        assert!((p_value(4999.0, &draws) - 0.5).abs() < 1.0 / 9999.0);
    }

    fn quick_options() -> TestOptions {
        TestOptions {
            domain: Some(Interval::UNIT),
            measurement_error: true,
            null: NullDistConfig { mc_draws: 1000, seed: 3 },
            ..TestOptions::default()
        }
    }

    #[test]
    fn zero_response_is_degenerate() {
        let mut data = generate(&ScenarioConfig::new(Scenario::A, Design::Dense, 30, 0.0, 1)).unwrap();
        for s in &mut data.subjects {
            s.response.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let err = run_test(&data, "x1", &quick_options(), &mut NoHooks).unwrap_err();
        // Zero residuals have no covariance to estimate.
        assert_eq!(err.stage, Stage::Covariance);
    }

    #[test]
    fn zero_covariate_gives_unit_p_value() {
        let mut data = generate(&ScenarioConfig::new(Scenario::B, Design::Dense, 40, 0.0, 2)).unwrap();
        for s in &mut data.subjects {
            s.covariates[1].values.iter_mut().for_each(|v| *v = 0.0);
        }
        let opts = TestOptions {
            measurement_error: false,
            ..quick_options()
        };
        let r = run_test(&data, "x2", &opts, &mut NoHooks).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.score_negative);
        assert_eq!(r.alpha_hat, None);
    }

    #[test]
    fn strong_effect_is_detected() {
        for (design, seed) in [(Design::Dense, 4), (Design::Sparse, 5)] {
            let data = generate(&ScenarioConfig::new(Scenario::A, design, 100, 6.0, seed)).unwrap();
            let r = run_test(&data, "x1", &quick_options(), &mut NoHooks).unwrap();
            assert!(r.p_value < 0.01, "{design:?}: p = {}", r.p_value);
            assert!(r.statistic > 0.0);
            assert_eq!(r.null_params.tau[1], 0.0);
            let alpha = r.alpha_hat.unwrap();
            assert!(alpha > 0.2 && alpha < 0.6);
        }
    }

    #[test]
    fn pipeline_errors_carry_stage() {
        let data = generate(&ScenarioConfig::new(Scenario::A, Design::Sparse, 20, 0.0, 6)).unwrap();
        let err = run_test(&data, "x9", &quick_options(), &mut NoHooks).unwrap_err();
        assert_eq!(err.stage, Stage::Validate);
        let opts = TestOptions {
            measurement_error: false,
            ..quick_options()
        };
        let err = run_test(&data, "x1", &opts, &mut NoHooks).unwrap_err();
        assert_eq!(err.stage, Stage::Reconstruct);
        assert!(matches!(err.source, Error::DimensionMismatch(_)));
    }

    #[test]
    fn hooks_see_every_stage_in_order() {
        struct Record(Vec<(Stage, bool)>);
        impl PipelineHooks for Record {
            fn enter(&mut self, s: Stage) {
                self.0.push((s, true));
            }
            fn exit(&mut self, s: Stage) {
                self.0.push((s, false));
            }
        }
        let data = generate(&ScenarioConfig::new(Scenario::A, Design::Dense, 40, 2.0, 7)).unwrap();
        let mut rec = Record(Vec::new());
        let a = run_test(&data, "x1", &quick_options(), &mut rec).unwrap();
        let expected: Vec<(Stage, bool)> = Stage::ALL.iter().flat_map(|&s| [(s, true), (s, false)]).collect();
        assert_eq!(rec.0, expected);
        let b = run_test(&data, "x1", &quick_options(), &mut NoHooks).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn known_parameter_statistic_is_consistent() {
        // Under a known null the statistic computed by the pipeline pieces is
        // the same whether V is rebuilt or the response is swapped in.
        let mut rng = stream_rng(36, 0);
        let design = random_design(&mut rng, 10, 6, 5, 1);
        let cov = toy_cov(0.5);
        let sys = WhitenedSystem::new(&design, &cov).unwrap();
        let params = VarianceParams::new(vec![0.7, 0.0]).unwrap();
        let y = draw_response(&mut rng, &design, &cov, &params.tau);
        let a = score_components(&sys.with_response(&y).unwrap(), &params, 1).unwrap();
        let mut other = design.clone();
        other.y = y;
        let b = information_blocks(&other, &cov, &params, 1).unwrap();
        assert!((a.score - b.score).abs() < 1e-10 * a.score.abs().max(1.0));
        assert_eq!(a.null_eigs.len(), 5);
    }
}
