//! Dump CIR details around the peak for one attacked reception.

use hrpsim_core::attack::craft_attack_packet;
use hrpsim_core::channel::{mix, MediumEvent, TimeWindow};
use hrpsim_core::config::ScenarioConfig;
use hrpsim_core::phy::{local_template, modulate_packet, PacketField};
use hrpsim_core::receiver::{compute_cir, estimate_noise_floor};

fn main() {
    let mut cfg = ScenarioConfig::default();
    cfg.attack.enabled = true;
    cfg.attack.sts_gain = 2.0;
    let params = cfg.exchange_params().unwrap();
    let fs = params.sample_rate;
    let spec = &params.packet;
    let pulse = &params.pulse;

    let legit_wave = modulate_packet(spec, pulse, fs).unwrap();
    let attack = cfg.attack_config().unwrap().unwrap();
    let profile = hrpsim_core::attack::PublicPacketProfile::of(spec);
    let attack_spec = craft_attack_packet(&attack, &profile, 1).unwrap();
    let attack_wave = modulate_packet(&attack_spec, pulse, fs).unwrap();

    println!("legit len {} attack len {}", legit_wave.len(), attack_wave.len());

    // Legit packet at t=0 through a clean LoS channel with noise; attacker
    // at +0.4 us through a clean channel.
    let events = vec![
        MediumEvent {
            signal: legit_wave.clone(),
            channel: hrpsim_core::channel::ChannelModel::line_of_sight(
                0.0,
                1.0,
                cfg.channel.noise_sigma,
                3,
            ),
            emit_time_ps: 2_000_000.0,
            source_id: 0,
        },
        MediumEvent {
            signal: attack_wave,
            channel: hrpsim_core::channel::ChannelModel::line_of_sight(1000.0, 1.0, 0.0, 4),
            emit_time_ps: 2_400_000.0,
            source_id: 100,
        },
    ];
    let window = TimeWindow {
        start_ps: 0.0,
        samples: legit_wave.len() + ((4e6 * fs) as usize / 1_000_000_000_000),
    };
    let window = TimeWindow { samples: window.samples + 4096, ..window };
    let rx = mix(&events, window, fs).unwrap();

    let tpl = local_template(spec, PacketField::Sts, pulse, fs).unwrap();
    let cir = compute_cir(&rx, &tpl).unwrap();
    let rcfg = params.receiver;
    let nf = estimate_noise_floor(&cir, &rcfg).unwrap();

    let (peak, peak_mag) = cir
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();

    println!("template energy {:.3e}", tpl.energy());
    println!("peak at {peak}, mag {peak_mag:.3e}");
    println!("noise floor {nf:.3e}");
    println!(
        "detect cutoff {:.3e}, le abs cutoff {:.3e}, le rel cutoff {:.3e}",
        nf * 10f64.powf(rcfg.detect_threshold_db / 20.0),
        nf * 10f64.powf(rcfg.leading_edge_threshold_db / 20.0),
        peak_mag * 10f64.powf(-rcfg.leading_edge_rel_max_db / 20.0)
    );
    for lag in peak.saturating_sub(20)..=(peak + 2).min(cir.len() - 1) {
        println!("  lag {:>6} mag {:.3e}{}", lag, cir.magnitude(lag), if lag == peak { "  <= peak" } else { "" });
    }

    // How much does the attacker actually contribute to the same window?
    let rx_attack_only = mix(&events[1..], window, fs).unwrap();
    let cir_a = compute_cir(&rx_attack_only, &tpl).unwrap();
    let mut mags: Vec<f64> = cir_a.values.iter().map(|v| v.norm()).collect();
    mags.sort_by(f64::total_cmp);
    println!(
        "attacker-only CIR: median {:.3e} p99 {:.3e} max {:.3e}",
        mags[mags.len() / 2],
        mags[(mags.len() as f64 * 0.99) as usize],
        mags.last().unwrap()
    );
    let near_peak: Vec<String> = (peak.saturating_sub(16)..peak)
        .map(|l| format!("{:.2e}", cir_a.magnitude(l)))
        .collect();
    println!("attacker-only mags in back-search window: {near_peak:?}");
}
