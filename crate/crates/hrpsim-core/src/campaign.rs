//! Monte Carlo campaign harness.
//!
//! A campaign runs a baseline phase with the attack off to measure the
//! benign negative deviation, then `n_trials` exchanges under the scenario.
//! A trial counts as a successful reduction when its measured distance is
//! below the true distance by more than twice the baseline deviation.
//! Trials run in parallel; all aggregation is ordered by trial index, so
//! results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::ranging::{run_exchange, ExchangeStatus, SessionContext};
use crate::seed::derive_seed;
use crate::trace::TraceRecord;

/// Sliding-window width for the rolling success rate.
pub const ROLLING_WINDOW: usize = 300;

/// Histogram bin width for reductions, meters (about twice the benign
/// error envelope).
pub const HISTOGRAM_BIN_M: f64 = 0.25;

const BASELINE_SALT: u64 = 0xba5e;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOutcome {
    /// Largest benign negative deviation (true minus measured, clamped at
    /// zero) across the baseline trials.
    pub max_neg_dev_m: f64,
    /// Baseline exchanges that failed detection; any nonzero value means
    /// the scenario noise is misconfigured.
    pub failed_trials: u64,
}

/// One campaign trial as it lands in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub seed: u64,
    pub status: ExchangeStatus,
    pub distance_m: Option<f64>,
    /// True distance minus measured distance (signed), when measured.
    pub reduction_m: Option<f64>,
    pub is_reduction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width_m: f64,
    /// counts[i] covers [i*bin, (i+1)*bin).
    pub counts: Vec<u64>,
}

impl Histogram {
    fn from_reductions(reductions: &[f64]) -> Self {
        let mut counts = Vec::new();
        for &r in reductions {
            let bin = (r / HISTOGRAM_BIN_M).floor().max(0.0) as usize;
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        Histogram { bin_width_m: HISTOGRAM_BIN_M, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub trials: Vec<TrialOutcome>,
    pub baseline: BaselineOutcome,
    /// Successful reductions over all trials.
    pub success_rate: f64,
    /// Exchanges that completed (status ok) over all trials.
    pub completion_rate: f64,
    /// Exchanges lost to jamming or missed detection.
    pub loss_rate: f64,
    pub reduction_histogram: Histogram,
    /// Success rate over each window of 300 consecutive trials.
    pub rolling_rate: Vec<f64>,
    pub max_reduction_m: f64,
    /// Label of the attacked packets, e.g. "packet2+packet3".
    pub targets_label: String,
    pub trace: Vec<TraceRecord>,
}

/// The paper-style success criterion: a measurement only counts as a
/// reduction when it undercuts the true distance by more than twice the
/// largest benign negative deviation.
pub fn is_reduction(measured_m: f64, true_distance_m: f64, baseline_max_neg_dev_m: f64) -> bool {
    measured_m < true_distance_m - 2.0 * baseline_max_neg_dev_m
}

/// Runs the attack-off baseline phase and returns the benign deviation.
pub fn run_baseline(scenario: &ScenarioConfig) -> Result<BaselineOutcome> {
    let ctx = SessionContext::new(scenario.exchange_params()?)?;
    run_baseline_with_ctx(&ctx, scenario)
}

fn run_baseline_with_ctx(ctx: &SessionContext, scenario: &ScenarioConfig) -> Result<BaselineOutcome> {
    let true_d = ctx.params.true_distance_m();
    let base_seed = derive_seed(scenario.master_seed, BASELINE_SALT);
    let outcomes: Vec<(f64, bool)> = (0..scenario.baseline_trials)
        .into_par_iter()
        .map(|i| -> Result<(f64, bool)> {
            let out = run_exchange(ctx, None, derive_seed(base_seed, i), false)?;
            match (out.exchange.status, out.exchange.distance_full_m) {
                (ExchangeStatus::Ok, Some(d)) => Ok(((true_d - d).max(0.0), false)),
                _ => Ok((0.0, true)),
            }
        })
        .collect::<Result<_>>()?;
    let max_neg_dev_m = outcomes.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let failed_trials = outcomes.iter().filter(|(_, failed)| *failed).count() as u64;
    Ok(BaselineOutcome { max_neg_dev_m, failed_trials })
}

/// Runs the full campaign with the global thread pool and no trace.
pub fn run_campaign(scenario: &ScenarioConfig) -> Result<CampaignResult> {
    run_campaign_opts(scenario, None, false)
}

/// Runs the full campaign; `threads` pins the pool size (useful to prove
/// thread-count independence), `collect_trace` records every exchange.
pub fn run_campaign_opts(
    scenario: &ScenarioConfig,
    threads: Option<usize>,
    collect_trace: bool,
) -> Result<CampaignResult> {
    scenario.validate()?;
    match threads {
        None => run_campaign_inner(scenario, collect_trace),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(e.to_string()))?;
            pool.install(|| run_campaign_inner(scenario, collect_trace))
        }
    }
}

fn run_campaign_inner(scenario: &ScenarioConfig, collect_trace: bool) -> Result<CampaignResult> {
    let ctx = SessionContext::new(scenario.exchange_params()?)?;
    let attack = scenario.attack_config()?;

    let interval_ps = scenario.exchange_interval_ms * 1e9;
    if collect_trace && interval_ps <= ctx.exchange_span_ps() {
        return Err(Error::config(format!(
            "exchange_interval_ms {} too short for an exchange spanning {:.3} ms",
            scenario.exchange_interval_ms,
            ctx.exchange_span_ps() / 1e9
        )));
    }
    let tick_fs = (ctx.params.sniffer_tick_ps * 1000.0).round() as u64;
    let interval_fs =
        ((interval_ps * 1000.0 / tick_fs as f64).round() as u64).max(1) * tick_fs;

    let baseline = run_baseline_with_ctx(&ctx, scenario)?;
    let true_d = ctx.params.true_distance_m();

    let per_trial: Vec<(TrialOutcome, Vec<TraceRecord>)> = (0..scenario.n_trials)
        .into_par_iter()
        .map(|trial| -> Result<(TrialOutcome, Vec<TraceRecord>)> {
            let seed = derive_seed(scenario.master_seed, trial);
            let out = run_exchange(&ctx, attack.as_ref(), seed, collect_trace)?;
            let distance_m = match out.exchange.status {
                ExchangeStatus::Ok => out.exchange.distance_full_m,
                _ => None,
            };
            let reduction_m = distance_m.map(|d| true_d - d);
            let reduced = distance_m
                .map(|d| is_reduction(d, true_d, baseline.max_neg_dev_m))
                .unwrap_or(false);
            let trace = if collect_trace {
                let offset = trial * interval_fs;
                out.trace
                    .into_iter()
                    .map(|r| match r.offset_by(offset) {
                        TraceRecord::ExchangeSummary(mut s) => {
                            s.exchange_index = trial as u32;
                            TraceRecord::ExchangeSummary(s)
                        }
                        other => other,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok((
                TrialOutcome {
                    trial,
                    seed,
                    status: out.exchange.status,
                    distance_m,
                    reduction_m,
                    is_reduction: reduced,
                },
                trace,
            ))
        })
        .collect::<Result<_>>()?;

    let mut trials = Vec::with_capacity(per_trial.len());
    let mut trace = Vec::new();
    for (t, mut tr) in per_trial {
        trials.push(t);
        trace.append(&mut tr);
    }

    let n = trials.len() as f64;
    let successes: Vec<f64> = trials
        .iter()
        .filter(|t| t.is_reduction)
        .filter_map(|t| t.reduction_m)
        .collect();
    let success_rate = successes.len() as f64 / n;
    let completed = trials.iter().filter(|t| t.status == ExchangeStatus::Ok).count() as f64;
    let rolling_rate = rolling_rates(&trials);
    let max_reduction_m = successes.iter().copied().fold(0.0, f64::max);

    let targets_label = attack.as_ref().map_or(String::new(), |a| {
        let mut parts = Vec::new();
        if a.target_mask() & 1 != 0 {
            parts.push("packet2");
        }
        if a.target_mask() & 2 != 0 {
            parts.push("packet3");
        }
        parts.join("+")
    });

    Ok(CampaignResult {
        baseline,
        success_rate,
        completion_rate: completed / n,
        loss_rate: 1.0 - completed / n,
        reduction_histogram: Histogram::from_reductions(&successes),
        rolling_rate,
        max_reduction_m,
        targets_label,
        trace,
        trials,
    })
}

fn rolling_rates(trials: &[TrialOutcome]) -> Vec<f64> {
    if trials.len() < ROLLING_WINDOW {
        return Vec::new();
    }
    let flags: Vec<u64> = trials.iter().map(|t| t.is_reduction as u64).collect();
    let mut sum: u64 = flags[..ROLLING_WINDOW].iter().sum();
    let mut out = Vec::with_capacity(trials.len() - ROLLING_WINDOW + 1);
    out.push(sum as f64 / ROLLING_WINDOW as f64);
    for i in ROLLING_WINDOW..flags.len() {
        sum += flags[i];
        sum -= flags[i - ROLLING_WINDOW];
        out.push(sum as f64 / ROLLING_WINDOW as f64);
    }
    out
}

impl CampaignResult {
    /// CSV export: one header row, one row per trial, decimal points, no
    /// locale. Missing measurements leave their fields empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,status,distance_m,reduction_m,is_reduction,targets,seed\n");
        for t in &self.trials {
            let dist = t.distance_m.map_or(String::new(), |d| format!("{d:.6}"));
            let red = t.reduction_m.map_or(String::new(), |r| format!("{r:.6}"));
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.trial,
                t.status.as_str(),
                dist,
                red,
                t.is_reduction,
                self.targets_label,
                t.seed
            ));
        }
        out
    }
}
