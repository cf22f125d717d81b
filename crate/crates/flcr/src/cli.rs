//! `flcr` subcommands. Each command writes its JSON document to the given
//! writer; errors map to exit codes through [`Error::exit_code`].

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flcr_core::basis::Interval;
use flcr_core::fpca::{estimate_covariance, FpcaConfig};
use flcr_core::score_test::{full_model_residuals, run_test, TestOptions};
use flcr_core::simulate::{generate, Design, Scenario, ScenarioConfig};

use crate::data::{
    assemble, curve_records, dataset_records, read_records_from_path, variable_curves, write_records,
    write_records_to_path,
};
use crate::error::{Error, Result};
use crate::experiment::{replicate_config, run_experiment};
use crate::parallel::ParallelHooks;
use crate::report::{FpcaDocument, ResultDocument};

/// Variable name of residual curves written by `simulate --dump-residuals`.
pub const RESIDUAL_VARIABLE: &str = "residual";

#[derive(Debug, Parser)]
#[command(
    name = "flcr",
    version,
    about = "One-sided score test for a zero coefficient function in functional concurrent regression",
    after_help = "Set FLCR_THREADS to cap the number of worker threads. Exit codes: 0 success, 2 data or \
                  validation error, 3 numerical failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test H0: beta_k = 0 for one covariate of a long-format CSV dataset
    Test(TestArgs),
    /// Run a size/power experiment on synthetic scenarios
    Simulate(SimulateArgs),
    /// Estimate the covariance of one variable by functional PCA
    Fpca(FpcaArgs),
    /// Write one synthetic dataset as long-format CSV
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::A => Scenario::A,
            ScenarioArg::B => Scenario::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Dense,
    Sparse,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Dense => Design::Dense,
            DesignArg::Sparse => Design::Sparse,
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Long-format CSV with columns subject_id,time,variable,value
    #[arg(long)]
    pub data: PathBuf,
    /// Response variable name
    #[arg(long)]
    pub response: String,
    /// Comma-separated covariate names
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    /// Covariate whose coefficient function is tested
    #[arg(long)]
    pub test: String,
    /// B-spline basis size per coefficient function
    #[arg(long, default_value_t = 7)]
    pub basis: usize,
    /// Proportion of variance explained by the residual FPCA
    #[arg(long, default_value_t = 0.99)]
    pub pve: f64,
    /// Monte Carlo draws from the null law
    #[arg(long, default_value_t = 10_000)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Covariates carry measurement error; reconstruct them by FPCA
    #[arg(long)]
    pub noisy_covariates: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long, value_enum)]
    pub design: DesignArg,
    #[arg(long)]
    pub n: usize,
    /// Comma-separated effect sizes
    #[arg(long, value_delimiter = ',', required = true)]
    pub d_grid: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long)]
    pub seed: u64,
    /// Write the report to PREFIX.json and PREFIX.csv
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
    /// Monte Carlo draws from the null law per replicate
    #[arg(long, default_value_t = 2_000)]
    pub mc: usize,
    #[arg(long, default_value_t = 7)]
    pub basis: usize,
    #[arg(long, default_value_t = 0.99)]
    pub pve: f64,
    /// Write the full-model residual curves of the first replicate as
    /// long-format CSV
    #[arg(long, value_name = "PATH")]
    pub dump_residuals: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FpcaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub variable: String,
    #[arg(long, default_value_t = 0.99)]
    pub pve: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long, value_enum)]
    pub design: DesignArg,
    #[arg(long)]
    pub n: usize,
    /// Effect size
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    #[arg(long)]
    pub seed: u64,
    /// Output path; standard output if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Test(a) => cmd_test(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Fpca(a) => cmd_fpca(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    }
}

fn fpca_config(pve: f64) -> Result<FpcaConfig> {
    let config = FpcaConfig { pve_target: pve, ..FpcaConfig::default() };
    config.validate()?;
    Ok(config)
}

fn test_options(basis: usize, pve: f64, mc: usize, seed: u64, noisy: bool) -> Result<TestOptions> {
    let mut options = TestOptions { num_basis: basis, fpca: fpca_config(pve)?, measurement_error: noisy, ..TestOptions::default() };
    options.null.mc_draws = mc;
    options.null.seed = seed;
    Ok(options)
}

fn write_json<T: serde::Serialize>(out: &mut dyn Write, doc: &T) -> Result<()> {
    crate::json::to_writer(out, doc)
}

pub fn cmd_test(a: &TestArgs, out: &mut dyn Write) -> Result<()> {
    if !a.covariates.contains(&a.test) {
        return Err(Error::Data(format!("--test {:?} is not among --covariates", a.test)));
    }
    let options = test_options(a.basis, a.pve, a.mc, a.seed, a.noisy_covariates)?;
    let records = read_records_from_path(&a.data)?;
    let data = assemble(&records, &a.response, &a.covariates)?;
    let mut hooks = ParallelHooks::default();
    let result = run_test(&data, &a.test, &options, &mut hooks)?;
    write_json(out, &ResultDocument::new(&result, hooks.timings))
}

fn scenario_configs(a: &SimulateArgs) -> Vec<ScenarioConfig> {
    a.d_grid
        .iter()
        .map(|&d| ScenarioConfig::new(a.scenario.into(), a.design.into(), a.n, d, a.seed))
        .collect()
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let configs = scenario_configs(a);
    crate::experiment::validate(&configs, a.reps, a.level)?;
    let options = test_options(a.basis, a.pve, a.mc, 0, true)?;
    if let Some(path) = &a.dump_residuals {
        let data = generate(&replicate_config(&configs[0], 0))?;
        let curves = full_model_residuals(&data, &options)?;
        let records: Vec<_> = data
            .subjects
            .iter()
            .zip(&curves)
            .flat_map(|(s, c)| curve_records(&s.id, RESIDUAL_VARIABLE, c).collect::<Vec<_>>())
            .collect();
        write_records_to_path(path, &records)?;
    }
    let report = run_experiment(&configs, a.reps, a.level, &options)?;
    if let Some(prefix) = &a.out {
        let json_path = prefix.with_extension("json");
        let file = std::fs::File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
        crate::json::to_writer(file, &report)?;
        let csv_path = prefix.with_extension("csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        report.write_csv(file)?;
    }
    write_json(out, &report)
}

pub fn cmd_fpca(a: &FpcaArgs, out: &mut dyn Write) -> Result<()> {
    let config = fpca_config(a.pve)?;
    let records = read_records_from_path(&a.data)?;
    let (_, curves) = variable_curves(&records, &a.variable)?;
    let (lo, hi) = curves
        .iter()
        .flat_map(|c| c.times.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let domain = Interval::new(lo, hi)?;
    let model = estimate_covariance(&curves, domain, &config)?;
    write_json(out, &FpcaDocument::new(&a.variable, curves.len(), &model))
}

pub fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ScenarioConfig::new(a.scenario.into(), a.design.into(), a.n, a.d, a.seed);
    let records = dataset_records(&generate(&cfg)?);
    match &a.out {
        Some(path) => write_records_to_path(path, &records),
        None => write_records(out, &records),
    }
}
