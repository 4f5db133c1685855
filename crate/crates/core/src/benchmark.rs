//! Multi-seed comparison of the separation pipelines.
//!
//! For every SNR one synthetic problem is generated (sources and mixing are
//! shared across SNRs, the noise is drawn per SNR) and every mode is run
//! from the same `n_inits` random initialisations. Runs are independent and
//! execute on a bounded worker pool; records come back in canonical
//! `(snr, mode, init)` order whatever the scheduling.

use crate::datagen::{gen_problem, SeparationProblem, SyntheticSpec};
use crate::error::{Result, SbssError};
use crate::hybrid::{run_mode, Mode};
use crate::io::{parse_toml, to_toml, with_path, write_file, write_json, SolverFile};
use crate::metrics::align;
use crate::rng::{derive_seed, streams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub modes: Vec<Mode>,
    pub snr_list: Vec<f64>,
    pub n_inits: usize,
    pub base_seed: u64,
    /// `snr_db`, `rng_seed` and `noise_seed` are set per run.
    pub problem: SyntheticSpec,
    pub solver: SolverFile,
    pub output: Option<PathBuf>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            snr_list: vec![10.0, 15.0, 20.0],
            n_inits: 10,
            base_seed: 0,
            problem: SyntheticSpec::default(),
            solver: SolverFile::default(),
            output: None,
        }
    }
}

impl BenchmarkSpec {
    pub fn read(path: &Path) -> Result<Self> {
        let spec: Self = parse_toml(&crate::io::read_text(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inits == 0 {
            return Err(SbssError::invalid("n_inits", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(SbssError::invalid("modes", "must not be empty"));
        }
        if self.snr_list.is_empty() {
            return Err(SbssError::invalid("snr_list", "must not be empty"));
        }
        if self.snr_list.iter().any(|s| s.is_nan()) {
            return Err(SbssError::invalid("snr_list", "NaN SNR"));
        }
        self.problem.validate()?;
        self.solver.two_step_config(None)?;
        Ok(())
    }

    /// Problem definition for one SNR.
    pub fn problem_at(&self, snr_db: f64) -> SyntheticSpec {
        SyntheticSpec {
            snr_db,
            rng_seed: self.base_seed,
            noise_seed: Some(derive_seed(self.base_seed, &[streams::NOISE, snr_db.to_bits()])),
            ..self.problem.clone()
        }
    }

    /// Initialisation seed of run `init` at one SNR, shared by all modes.
    pub fn init_seed(&self, snr_db: f64, init: usize) -> u64 {
        derive_seed(self.base_seed, &[streams::INIT, snr_db.to_bits(), init as u64])
    }
}

/// One solve. Contains nothing that depends on timing or scheduling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub snr_db: f64,
    pub mode: Mode,
    pub init: usize,
    pub problem_seed: u64,
    pub noise_seed: u64,
    pub init_seed: u64,
    pub c_a_db: Option<f64>,
    pub capped: Option<bool>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub snr_db: f64,
    pub mode: Mode,
    pub init: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub mode: Mode,
    pub mean_c_a_db: Option<f64>,
    /// Sample standard deviation over successful runs.
    pub std_c_a_db: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub records: Vec<RunRecord>,
    pub timings: Vec<RunTiming>,
    pub summary: Vec<SummaryRow>,
}

impl BenchmarkOutcome {
    pub fn row(&self, mode: Mode, snr_db: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.mode == mode && r.snr_db == snr_db)
    }
}

fn order(snr_a: f64, mode_a: Mode, init_a: usize, snr_b: f64, mode_b: Mode, init_b: usize) -> std::cmp::Ordering {
    snr_a
        .total_cmp(&snr_b)
        .then(mode_a.cmp(&mode_b))
        .then(init_a.cmp(&init_b))
}

fn solve_one(spec: &BenchmarkSpec, problem: &SeparationProblem, snr_db: f64, mode: Mode, init: usize) -> (RunRecord, RunTiming) {
    let pspec = spec.problem_at(snr_db);
    let init_seed = spec.init_seed(snr_db, init);
    let mut record = RunRecord {
        snr_db,
        mode,
        init,
        problem_seed: pspec.rng_seed,
        noise_seed: pspec.noise_seed.unwrap_or(pspec.rng_seed),
        init_seed,
        c_a_db: None,
        capped: None,
        iterations: None,
        error: None,
    };
    let start = Instant::now();
    let outcome = spec.solver.two_step_config(Some(init_seed)).and_then(|cfg| {
        let result = run_mode(&problem.x, problem.geometry, mode, &cfg)?;
        let truth = problem.truth.as_ref().ok_or(SbssError::EmptyInput)?;
        Ok((result.iterations, align(&result.a, &truth.a)?))
    });
    match outcome {
        Ok((iterations, report)) => {
            record.c_a_db = Some(report.c_a_db);
            record.capped = Some(report.capped);
            record.iterations = Some(iterations);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    let timing = RunTiming {
        snr_db,
        mode,
        init,
        seconds: start.elapsed().as_secs_f64(),
    };
    (record, timing)
}

fn summarise(spec: &BenchmarkSpec, records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut snrs = spec.snr_list.clone();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut modes = spec.modes.clone();
    modes.sort();
    modes.dedup();
    let mut rows = Vec::new();
    for &snr_db in &snrs {
        for &mode in &modes {
            let runs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.mode == mode && r.snr_db == snr_db)
                .collect();
            let values: Vec<f64> = runs.iter().filter_map(|r| r.c_a_db).collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            let std = mean.filter(|_| values.len() > 1).map(|m| {
                (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
            });
            rows.push(SummaryRow {
                snr_db,
                mode,
                mean_c_a_db: mean,
                std_c_a_db: std,
                succeeded: values.len(),
                failed: runs.len() - values.len(),
            });
        }
    }
    rows
}

/// Runs the sweep on `workers` threads.
pub fn run_benchmark(spec: &BenchmarkSpec, workers: usize) -> Result<BenchmarkOutcome> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SbssError::invalid("workers", e.to_string()))?;

    let mut snrs = spec.snr_list.clone();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let mut modes = spec.modes.clone();
    modes.sort();
    modes.dedup();

    let problems: Vec<SeparationProblem> = pool.install(|| {
        snrs.par_iter()
            .map(|&snr| gen_problem(&spec.problem_at(snr)))
            .collect::<Result<_>>()
    })?;
    let jobs: Vec<(usize, Mode, usize)> = (0..snrs.len())
        .flat_map(|k| modes.iter().flat_map(move |&m| (0..spec.n_inits).map(move |i| (k, m, i))))
        .collect();
    let results: Vec<(RunRecord, RunTiming)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, mode, init)| solve_one(spec, &problems[k], snrs[k], mode, init))
            .collect()
    });

    let (mut records, mut timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    records.sort_by(|a, b| order(a.snr_db, a.mode, a.init, b.snr_db, b.mode, b.init));
    timings.sort_by(|a, b| order(a.snr_db, a.mode, a.init, b.snr_db, b.mode, b.init));
    let summary = summarise(spec, &records);
    Ok(BenchmarkOutcome {
        records,
        timings,
        summary,
    })
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| SbssError::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Raw records, one JSON object per line.
pub fn records_jsonl(records: &[RunRecord]) -> Result<String> {
    json_lines(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Human-readable `mean ± std` table, one row per SNR, one column per mode.
pub fn format_table(summary: &[SummaryRow]) -> String {
    let mut snrs: Vec<f64> = summary.iter().map(|r| r.snr_db).collect();
    snrs.dedup();
    let mut modes: Vec<Mode> = summary.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:>8}", "SNR (dB)");
    for m in &modes {
        let _ = write!(out, " {:>22}", format!("{m} C_A (dB)"));
    }
    out.push('\n');
    for snr in snrs {
        let _ = write!(out, "{snr:>8}");
        for &m in &modes {
            let cell = match summary.iter().find(|r| r.mode == m && r.snr_db == snr) {
                Some(r) => {
                    let mut c = format!("{} ± {}", fmt_opt(r.mean_c_a_db), fmt_opt(r.std_c_a_db));
                    if r.failed > 0 {
                        let _ = write!(c, " ({} failed)", r.failed);
                    }
                    c
                }
                None => "-".to_string(),
            };
            let _ = write!(out, " {cell:>22}");
        }
        out.push('\n');
    }
    out
}

/// Writes `records.jsonl`, `timings.jsonl`, `summary.json` and `table.txt`.
pub fn write_outcome(outcome: &BenchmarkOutcome, spec: &BenchmarkSpec, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(with_path(dir))?;
    write_file(&dir.join("records.jsonl"), records_jsonl(&outcome.records)?)?;
    write_file(&dir.join("timings.jsonl"), json_lines(&outcome.timings)?)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    write_file(&dir.join("table.txt"), format_table(&outcome.summary))?;
    write_file(&dir.join("benchmark.toml"), to_toml(spec)?)?;
    Ok(())
}
