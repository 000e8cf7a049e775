//! Runs every seed x sweep point x algorithm of a scenario on a work pool
//! and aggregates the outcomes.

use std::time::Instant;

use hygec::oracle::{nmse_linear, to_db};
use hygec::{em_hygec_run, generate_instance, hygec_run, EmConfig, HygecConfig, ProblemInstance, Termination};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::scenario::{Algorithm, Scenario, SweepPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    MaxIterations,
    NumericalFailure,
    /// The trial could not run at all (bad instance or engine input).
    Error,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::MaxIterations => "max-iterations",
            Outcome::NumericalFailure => "numerical-failure",
            Outcome::Error => "error",
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::NumericalFailure | Outcome::Error)
    }
}

impl From<Termination> for Outcome {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Converged => Outcome::Converged,
            Termination::MaxIterations => Outcome::MaxIterations,
            Termination::NumericalFailure => Outcome::NumericalFailure,
        }
    }
}

/// State after one inner sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based sweep count, cumulative across EM outer iterations.
    pub iteration: usize,
    /// `None` when the NMSE is undefined (an all-zero true signal).
    pub nmse_db: Option<f64>,
    /// Rate estimate held after this sweep.
    pub rho_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub algorithm: Algorithm,
    pub iterations: Vec<IterationRecord>,
    /// Linear NMSE of the returned estimate; `None` when undefined.
    pub final_nmse: Option<f64>,
    pub rho_final: f64,
    pub outer_iterations: usize,
    pub outcome: Outcome,
    pub message: Option<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub scenario: String,
    pub trials: Vec<Trial>,
}

impl ResultTable {
    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.outcome.is_failure()).count()
    }
}

fn defined(nmse: f64) -> Option<f64> {
    nmse.is_finite().then_some(nmse)
}

/// Where a trial sits in its scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialKey {
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub algorithm: Algorithm,
}

fn failed_trial(key: TrialKey, rho: f64, err: hygec::Error, start: Instant) -> Trial {
    Trial {
        seed: key.seed,
        sweep_value: key.sweep_value,
        algorithm: key.algorithm,
        iterations: Vec::new(),
        final_nmse: None,
        rho_final: rho,
        outer_iterations: 0,
        outcome: Outcome::Error,
        message: Some(err.to_string()),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Runs one algorithm on an existing instance. `rho` is the rate given to
/// the known-rate engine; EM starts from `rho_init` instead. Errors are
/// recorded in the trial instead of being returned.
pub fn run_on_instance(
    inst: &ProblemInstance,
    key: TrialKey,
    rho: f64,
    rho_init: f64,
    cfg: &HygecConfig,
    em_cfg: &EmConfig,
) -> Trial {
    run_timed(inst, key, rho, rho_init, cfg, em_cfg, Instant::now())
}

fn run_timed(
    inst: &ProblemInstance,
    key: TrialKey,
    rho: f64,
    rho_init: f64,
    cfg: &HygecConfig,
    em_cfg: &EmConfig,
    start: Instant,
) -> Trial {
    let nmse = |x: &nalgebra::DVector<f64>| inst.x_true.as_ref().and_then(|t| nmse_linear(x, t).ok());
    let db = |nmse: f64| defined(nmse).map(to_db);
    let finish = |iterations, final_nmse, rho_final, outer_iterations, termination: Termination| Trial {
        seed: key.seed,
        sweep_value: key.sweep_value,
        algorithm: key.algorithm,
        iterations,
        final_nmse,
        rho_final,
        outer_iterations,
        outcome: termination.into(),
        message: None,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    match key.algorithm {
        Algorithm::HygecKnownRho => {
            let out = match hygec_run(inst, rho, cfg) {
                Ok(out) => out,
                Err(e) => return failed_trial(key, rho, e, start),
            };
            let iterations = out
                .report
                .nmse_trace
                .iter()
                .enumerate()
                .map(|(i, &nmse)| IterationRecord { iteration: i + 1, nmse_db: db(nmse), rho_est: rho })
                .collect();
            finish(iterations, nmse(&out.state.x_pos), rho, 0, out.report.termination)
        }
        Algorithm::EmHygec => {
            let out = match em_hygec_run(inst, rho_init, cfg, em_cfg) {
                Ok(out) => out,
                Err(e) => return failed_trial(key, rho_init, e, start),
            };
            // within an E-step the estimate is the rate it was given; its
            // last sweep reports the M-step result that follows it
            let mut iterations = Vec::new();
            for (t, step) in out.e_steps.iter().enumerate() {
                let next = out.report.rho_trace.get(t).copied().unwrap_or(step.rho);
                for (i, &nmse) in step.nmse_trace.iter().enumerate() {
                    let rho_est = if i + 1 == step.nmse_trace.len() { next } else { step.rho };
                    iterations.push(IterationRecord { iteration: iterations.len() + 1, nmse_db: db(nmse), rho_est });
                }
            }
            finish(iterations, nmse(&out.x_pos), out.rho_final, out.report.outer_iterations, out.report.termination)
        }
    }
}

/// Generates the instance for `(point, seed)` and runs one algorithm on it.
pub fn run_trial(
    point: &SweepPoint,
    seed: u64,
    algorithm: Algorithm,
    cfg: &HygecConfig,
    em_cfg: &EmConfig,
    rho_init: f64,
) -> Trial {
    let start = Instant::now();
    let key = TrialKey { seed, sweep_value: point.value, algorithm };
    match generate_instance(&point.spec, seed) {
        Ok(inst) => run_timed(&inst, key, point.spec.rho, rho_init, cfg, em_cfg, start),
        Err(e) => failed_trial(key, point.spec.rho, e, start),
    }
}

/// Runs all trials of `scenario` on a pool of `threads` workers (0 picks
/// the machine's parallelism). Trials come back in a fixed order: sweep
/// point, then seed, then algorithm, as listed in the scenario.
pub fn run_scenario(scenario: &Scenario, threads: usize) -> Result<ResultTable> {
    scenario.validate()?;
    let cfg = scenario.hygec_config();
    let em_cfg = scenario.em_config();
    let points = scenario.points();
    let seeds = scenario.seeds.to_vec();
    let jobs: Vec<(SweepPoint, u64, Algorithm)> = points
        .iter()
        .flat_map(|p| seeds.iter().flat_map(move |&s| scenario.algorithms.iter().map(move |&a| (*p, s, a))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::InvalidScenario(format!("cannot start {threads} worker threads: {e}")))?;
    let trials = pool.install(|| {
        jobs.par_iter()
            .map(|(point, seed, algorithm)| run_trial(point, *seed, *algorithm, &cfg, &em_cfg, scenario.em.rho_init))
            .collect()
    });
    Ok(ResultTable { scenario: scenario.name.clone(), trials })
}

/// Aggregate of one (sweep point, algorithm) cell over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sweep_value: Option<f64>,
    pub algorithm: Algorithm,
    pub trials: usize,
    /// Trials with a defined final NMSE; the statistics below use only these.
    pub scored: usize,
    pub failures: usize,
    pub median_nmse_db: Option<f64>,
    /// Mean of the linear NMSE, converted to dB.
    pub mean_nmse_db: Option<f64>,
    pub median_rho: Option<f64>,
}

/// Median of the finite values; even counts average the two middle ones.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

pub fn summarize(table: &ResultTable) -> Vec<Summary> {
    let mut keys: Vec<(Option<f64>, Algorithm)> = Vec::new();
    for t in &table.trials {
        let key = (t.sweep_value, t.algorithm);
        if !keys.iter().any(|k| k.0.map(f64::to_bits) == key.0.map(f64::to_bits) && k.1 == key.1) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(value, algorithm)| {
            let cell: Vec<&Trial> = table
                .trials
                .iter()
                .filter(|t| t.algorithm == algorithm && t.sweep_value.map(f64::to_bits) == value.map(f64::to_bits))
                .collect();
            let nmse: Vec<f64> = cell.iter().filter_map(|t| t.final_nmse).collect();
            let rho: Vec<f64> = cell.iter().filter(|t| t.outcome != Outcome::Error).map(|t| t.rho_final).collect();
            Summary {
                sweep_value: value,
                algorithm,
                trials: cell.len(),
                scored: nmse.len(),
                failures: cell.iter().filter(|t| t.outcome.is_failure()).count(),
                median_nmse_db: median(&nmse).map(to_db),
                mean_nmse_db: (!nmse.is_empty()).then(|| to_db(nmse.iter().sum::<f64>() / nmse.len() as f64)),
                median_rho: median(&rho),
            }
        })
        .collect()
}
