//! Size and power experiments: repeated generate → test cycles over a list
//! of scenario configurations.
//!
//! Replicate `r` of a configuration with seed `s` uses the dataset seed
//! `derive_seed(s, r)`, so configurations that differ only in effect size
//! see the same latent draws. Replicates run in parallel and are reduced in
//! index order.

use std::io::Write;

use flcr_core::rng::derive_seed;
use flcr_core::score_test::{run_test, NoHooks, PipelineError, Stage, TestOptions, TestResult};
use flcr_core::simulate::{generate, summarize, Design, Scenario, ScenarioConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_REPS: usize = 100;

/// Stream index for the null-simulation seed of a replicate.
const NULL_STREAM: u64 = 1;

pub const CSV_HEADER: [&str; 8] = ["scenario", "design", "n", "d", "reps", "level", "rate", "se"];

pub fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::A => "A",
        Scenario::B => "B",
    }
}

pub fn design_name(d: Design) -> &'static str {
    match d {
        Design::Dense => "dense",
        Design::Sparse => "sparse",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub design: String,
    pub n: usize,
    pub d: f64,
    pub seed: u64,
    /// Replicates that completed.
    pub reps: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial standard error `√(r(1−r)/reps)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub level: f64,
    pub reps: usize,
    pub mc_draws: usize,
    pub rows: Vec<ExperimentRow>,
    pub version: String,
}

impl ExperimentReport {
    /// Plot-ready CSV with header `scenario,design,n,d,reps,level,rate,se`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.scenario.clone(),
                r.design.clone(),
                r.n.to_string(),
                r.d.to_string(),
                r.reps.to_string(),
                self.level.to_string(),
                r.rate.to_string(),
                r.se.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Dataset configuration of replicate `rep`.
pub fn replicate_config(cfg: &ScenarioConfig, rep: usize) -> ScenarioConfig {
    ScenarioConfig { seed: derive_seed(cfg.seed, rep as u64), ..cfg.clone() }
}

/// One generate → test cycle. Null draws are sequential; parallelism is
/// across replicates.
pub fn run_replicate(cfg: &ScenarioConfig, rep: usize, options: &TestOptions) -> Result<TestResult, PipelineError> {
    let data_cfg = replicate_config(cfg, rep);
    let data = generate(&data_cfg).map_err(|source| PipelineError { stage: Stage::Validate, source })?;
    let mut options = options.clone();
    options.null.seed = derive_seed(data_cfg.seed, NULL_STREAM);
    run_test(&data, cfg.scenario.tested_covariate(), &options, &mut NoHooks)
}

pub fn validate(configs: &[ScenarioConfig], reps: usize, level: f64) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::Data(format!("reps must be at least {MIN_REPS}, got {reps}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Data(format!("level must lie in (0, 1), got {level}")));
    }
    if configs.is_empty() {
        return Err(Error::Data("no configurations to run".into()));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    Ok(())
}

/// Rejection rates at `level` (reject when `p ≤ level`) for each
/// configuration. Fails if 1% or more of a configuration's replicates
/// error.
pub fn run_experiment(
    configs: &[ScenarioConfig],
    reps: usize,
    level: f64,
    options: &TestOptions,
) -> Result<ExperimentReport> {
    validate(configs, reps, level)?;
    let rows = configs
        .iter()
        .map(|cfg| {
            let outcomes: Vec<_> = (0..reps)
                .into_par_iter()
                .map(|r| run_replicate(cfg, r, options).map(|res| res.p_value <= level))
                .collect();
            let (rate, failures) = summarize(&outcomes)?;
            Ok(ExperimentRow {
                scenario: scenario_name(cfg.scenario).into(),
                design: design_name(cfg.design).into(),
                n: cfg.n,
                d: cfg.effect_size,
                seed: cfg.seed,
                reps: rate.reps,
                failures,
                rejections: rate.rejections,
                rate: rate.rate(),
                se: rate.standard_error(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        level,
        reps,
        mc_draws: options.null.mc_draws,
        rows,
        version: crate::report::TOOL_VERSION.into(),
    })
}
