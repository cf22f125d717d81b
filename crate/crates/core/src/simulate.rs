//! Synthetic functional regression data for the two simulation scenarios.
//!
//! Covariates `X_k(t) = a_k + b_k √2 sin(πt) + c_k √2 cos(πt)` with
//! `(a, b, c)` standard deviations `(1, 0.85, 0.70) · 2^{−(k−1)/2}` are
//! observed with additive noise. The error process is
//! `ξ₁ √2 cos(πt) + ξ₂ √2 sin(πt) + N(0, 0.9²)` with `Var ξ₁ = 2`,
//! `Var ξ₂ = 0.75²`. Each subject draws from its own random stream, and the
//! effect size only scales the signal, so datasets for different effect
//! sizes under one seed share every random draw.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::f64::consts::{PI, SQRT_2};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[allow(unused_imports)]
use num_traits::Float;

use crate::basis::Interval;
use crate::design::{Curve, ObservedDataset, ObservedSubject};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const RESPONSE_NAME: &str = "y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// One covariate; the effect `β₁(t) = d·t/8` is tested.
    A,
    /// Two covariates with `β₁(t) = t/8`; the effect `β₂(t) = d·sin(πt)` is
    /// tested.
    B,
}

impl Scenario {
    pub fn num_covariates(self) -> usize {
        match self {
            Scenario::A => 1,
            Scenario::B => 2,
        }
    }

    pub fn covariate_names(self) -> Vec<String> {
        (1..=self.num_covariates()).map(|k| format!("x{k}")).collect()
    }

    /// Name of the covariate whose effect is scaled by `d`.
    pub fn tested_covariate(self) -> &'static str {
        match self {
            Scenario::A => "x1",
            Scenario::B => "x2",
        }
    }

    fn intercept(t: f64) -> f64 {
        1.0 + 2.0 * t + t * t
    }

    fn coefficient(self, k: usize, d: f64, t: f64) -> f64 {
        match (self, k) {
            (Scenario::A, 0) => d * t / 8.0,
            (Scenario::B, 0) => t / 8.0,
            (Scenario::B, 1) => d * (PI * t).sin(),
            _ => unreachable!("covariate index out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Design {
    /// Every curve on the same equispaced grid.
    Dense,
    /// Per-curve random subsets of the equispaced grid.
    Sparse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub design: Design,
    pub n: usize,
    pub effect_size: f64,
    pub seed: u64,
    pub dense_m: usize,
    /// Inclusive range of per-curve point counts in the sparse design.
    pub sparse_m_range: (usize, usize),
    pub measurement_error_sd: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, design: Design, n: usize, effect_size: f64, seed: u64) -> Self {
        Self {
            scenario,
            design,
            n,
            effect_size,
            seed,
            dense_m: 81,
            sparse_m_range: (20, 31),
            measurement_error_sd: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n = {} is below 2", self.n)));
        }
        if !(self.effect_size.is_finite() && self.effect_size >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "effect size {} must be finite and nonnegative",
                self.effect_size
            )));
        }
        if self.dense_m < 2 {
            return Err(Error::InvalidInput(format!("dense grid size {} is below 2", self.dense_m)));
        }
        let (lo, hi) = self.sparse_m_range;
        if self.design == Design::Sparse && (lo == 0 || lo > hi || hi > self.dense_m) {
            return Err(Error::InvalidInput(format!(
                "sparse point range {lo}..={hi} must be nonempty, positive and at most {}",
                self.dense_m
            )));
        }
        if !(self.measurement_error_sd.is_finite() && self.measurement_error_sd >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "measurement error sd {} must be nonnegative",
                self.measurement_error_sd
            )));
        }
        Ok(())
    }
}

/// A generated dataset with the latent quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub data: ObservedDataset,
    /// Error process `ε_i` at the response times.
    pub errors: Vec<Curve>,
    /// Noise-free covariates `X_ik` at the covariate observation times,
    /// indexed `[subject][covariate]`.
    pub covariates: Vec<Vec<Curve>>,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

struct Latent {
    /// `(a, b, c)` per covariate.
    covariate_scores: Vec<[f64; 3]>,
    xi: [f64; 2],
}

impl Latent {
    fn covariate(&self, k: usize, t: f64) -> f64 {
        let [a, b, c] = self.covariate_scores[k];
        a + b * SQRT_2 * (PI * t).sin() + c * SQRT_2 * (PI * t).cos()
    }

    fn smooth_error(&self, t: f64) -> f64 {
        self.xi[0] * SQRT_2 * (PI * t).cos() + self.xi[1] * SQRT_2 * (PI * t).sin()
    }
}

fn draw_grid(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, grid: &[f64]) -> Vec<f64> {
    match cfg.design {
        Design::Dense => grid.to_vec(),
        Design::Sparse => {
            let (lo, hi) = cfg.sparse_m_range;
            let m = rng.random_range(lo..=hi);
            let mut idx = index::sample(rng, grid.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| grid[j]).collect()
        }
    }
}

/// Generate a dataset together with its latent error process and
/// noise-free covariates.
pub fn generate_with_truth(cfg: &ScenarioConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let p = cfg.scenario.num_covariates();
    let grid = Interval::UNIT.grid(cfg.dense_m);
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut errors = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let rng = &mut stream_rng(cfg.seed, i as u64);
        let covariate_scores = (0..p)
            .map(|k| {
                let s = 2f64.powf(-0.5 * k as f64);
                [normal(rng, s), normal(rng, 0.85 * s), normal(rng, 0.70 * s)]
            })
            .collect();
        let xi = [normal(rng, SQRT_2), normal(rng, 0.75)];
        let latent = Latent { covariate_scores, xi };

        let y_times = draw_grid(rng, cfg, &grid);
        let x_times: Vec<Vec<f64>> = (0..p).map(|_| draw_grid(rng, cfg, &grid)).collect();

        let eps: Vec<f64> = y_times
            .iter()
            .map(|&t| latent.smooth_error(t) + normal(rng, 0.9))
            .collect();
        let y: Vec<f64> = y_times
            .iter()
            .zip(&eps)
            .map(|(&t, e)| {
                Scenario::intercept(t)
                    + (0..p)
                        .map(|k| cfg.scenario.coefficient(k, cfg.effect_size, t) * latent.covariate(k, t))
                        .sum::<f64>()
                    + e
            })
            .collect();

        let mut observed = Vec::with_capacity(p);
        let mut clean = Vec::with_capacity(p);
        for (k, times) in x_times.into_iter().enumerate() {
            let x: Vec<f64> = times.iter().map(|&t| latent.covariate(k, t)).collect();
            let u: Vec<f64> = x.iter().map(|v| v + normal(rng, cfg.measurement_error_sd)).collect();
            observed.push(Curve::new(times.clone(), u)?);
            clean.push(Curve::new(times, x)?);
        }

        subjects.push(ObservedSubject {
            id: format!("s{i:04}"),
            response: Curve::new(y_times.clone(), y)?,
            covariates: observed,
        });
        errors.push(Curve::new(y_times, eps)?);
        truth.push(clean);
    }
    Ok(GeneratedData {
        data: ObservedDataset {
            response_name: RESPONSE_NAME.to_string(),
            covariate_names: cfg.scenario.covariate_names(),
            subjects,
        },
        errors,
        covariates: truth,
    })
}

pub fn generate(cfg: &ScenarioConfig) -> Result<ObservedDataset> {
    generate_with_truth(cfg).map(|g| g.data)
}

/// Binomial rejection-rate summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionRate {
    pub rejections: usize,
    pub reps: usize,
}

impl RejectionRate {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.reps as f64
    }

    /// `√(r(1−r)/reps)`.
    pub fn standard_error(&self) -> f64 {
        let r = self.rate();
        (r * (1.0 - r) / self.reps as f64).sqrt()
    }
}

/// Counts of `true` over replicate outcomes, failing when more than 1% of
/// replicates errored.
pub fn summarize<E>(outcomes: &[core::result::Result<bool, E>]) -> Result<(RejectionRate, usize)> {
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures > 0 && failures * 100 >= outcomes.len() {
        return Err(Error::DegenerateInput(format!(
            "{failures} of {} replicates failed",
            outcomes.len()
        )));
    }
    let reps = outcomes.len() - failures;
    let rejections = outcomes.iter().filter(|o| matches!(o, Ok(true))).count();
    Ok((RejectionRate { rejections, reps }, failures))
}
