//! Scratch tool for calibrating scenario defaults. Not part of the build
//! contract; run with `cargo run --release -p hrpsim-core --example tune`.

use std::time::Instant;

use hrpsim_core::campaign::{run_baseline, run_campaign};
use hrpsim_core::config::{ScenarioConfig, TargetName};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("noise");

    match mode {
        "noise" => noise_sweep(),
        "gain" => gain_sweep(),
        "timing" => timing(),
        "jitter" => jitter_sweep(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn noise_sweep() {
    for sigma in [2000.0, 5000.0, 8000.0, 11000.0, 15000.0, 20000.0, 30000.0] {
        let mut cfg = ScenarioConfig::default();
        cfg.baseline_trials = 300;
        cfg.channel.noise_sigma = sigma;
        let b = run_baseline(&cfg).unwrap();
        // Also estimate error distribution
        cfg.n_trials = 300;
        cfg.attack.enabled = false;
        let r = run_campaign(&cfg).unwrap();
        let mut errs: Vec<f64> = r
            .trials
            .iter()
            .filter_map(|t| t.distance_m.map(|d| (d - cfg.true_distance_m).abs()))
            .collect();
        errs.sort_by(f64::total_cmp);
        let p99 = errs[(errs.len() as f64 * 0.99) as usize - 1];
        let pmax = errs.last().copied().unwrap_or(0.0);
        println!(
            "sigma {sigma:>8.0}: baseline_dev {:.3} m (failed {}), |err| p99 {:.3} max {:.3}",
            b.max_neg_dev_m, b.failed_trials, p99, pmax
        );
    }
}

fn gain_sweep() {
    for gain in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 9.0, 14.0] {
        let mut cfg = ScenarioConfig::default();
        cfg.n_trials = 1500;
        cfg.baseline_trials = 100;
        cfg.attack.enabled = true;
        cfg.attack.targets = vec![TargetName::Packet2];
        cfg.attack.sts_gain = gain;
        let r = run_campaign(&cfg).unwrap();
        println!(
            "sts_gain {gain:>5.2}: success {:.2}% loss {:.2}% max_red {:.2} m (bins {:?})",
            100.0 * r.success_rate,
            100.0 * r.loss_rate,
            r.max_reduction_m,
            r.reduction_histogram.counts
        );
    }
}

fn jitter_sweep() {
    for jitter_us in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let mut cfg = ScenarioConfig::default();
        cfg.n_trials = 1500;
        cfg.attack.enabled = true;
        cfg.attack.targets = vec![TargetName::Packet2];
        cfg.attack.timing_jitter_sigma_us = jitter_us;
        let r = run_campaign(&cfg).unwrap();
        println!(
            "jitter {jitter_us:>5.1} us: success {:.2}% loss {:.2}%",
            100.0 * r.success_rate,
            100.0 * r.loss_rate
        );
    }
}

fn timing() {
    let mut cfg = ScenarioConfig::default();
    cfg.n_trials = 200;
    cfg.baseline_trials = 10;
    cfg.attack.enabled = true;
    let start = Instant::now();
    let r = run_campaign(&cfg).unwrap();
    let per = start.elapsed().as_secs_f64() / (cfg.n_trials + cfg.baseline_trials) as f64;
    println!(
        "{:.3} ms per exchange (wall, all threads); success {:.2}%",
        per * 1e3,
        100.0 * r.success_rate
    );
}
