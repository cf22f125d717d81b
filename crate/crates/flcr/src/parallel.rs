//! Worker pool sizing and pipeline hooks that fan the null simulation out
//! over rayon.
//!
//! Null draw `j` depends only on `(seed, j)` and results are collected in
//! index order, so output is identical for every pool size.

use std::time::Instant;

use flcr_core::score_test::{collect_null, NullDistConfig, NullSample, PipelineHooks, Stage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "FLCR_THREADS";

/// Parses a worker count; `None` for an unset or empty value.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Data(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn threads_from_env() -> Result<Option<usize>> {
    parse_threads(std::env::var(THREADS_ENV).ok().as_deref())
}

/// A pool with `threads` workers, or rayon's default size for `None`.
pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::ThreadPool(e.to_string()))
}

/// Null draws computed in parallel on the current pool.
pub fn sample_null_parallel(eigs: &[f64], lambda_n: f64, config: &NullDistConfig) -> flcr_core::Result<NullSample> {
    collect_null(eigs, lambda_n, config, |draw| {
        (0..config.mc_draws as u64).into_par_iter().map(draw).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Parallel null sampling plus wall-clock time per pipeline stage.
#[derive(Debug, Default)]
pub struct ParallelHooks {
    started: Option<Instant>,
    pub timings: Vec<StageTiming>,
}

impl PipelineHooks for ParallelHooks {
    fn enter(&mut self, _stage: Stage) {
        self.started = Some(Instant::now());
    }

    fn exit(&mut self, stage: Stage) {
        if let Some(t0) = self.started.take() {
            self.timings.push(StageTiming { stage: stage.name().into(), seconds: t0.elapsed().as_secs_f64() });
        }
    }

    fn sample_null(&mut self, eigs: &[f64], lambda_n: f64, config: &NullDistConfig) -> flcr_core::Result<NullSample> {
        sample_null_parallel(eigs, lambda_n, config)
    }
}
