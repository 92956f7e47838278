//! Quick component timing probe.

use std::time::Instant;

use hrpsim_core::channel::{apply_channel, mix, ChannelModel, MediumEvent, TimeWindow};
use hrpsim_core::config::ScenarioConfig;
use hrpsim_core::phy::{modulate_packet, PacketField};
use hrpsim_core::ranging::{run_exchange, SessionContext};
use hrpsim_core::receiver::CirEngine;
use hrpsim_core::signal::BasebandSignal;

fn main() {
    let cfg = ScenarioConfig::default();
    let params = cfg.exchange_params().unwrap();
    let pulse = params.pulse;
    let fs = params.sample_rate;
    let spec = params.packet.clone();

    let t = Instant::now();
    let wave = modulate_packet(&spec, &pulse, fs).unwrap();
    println!("modulate: {:?} ({} samples)", t.elapsed(), wave.len());

    let ch = ChannelModel::line_of_sight(50_000.0, 1.0, cfg.channel.noise_sigma, 7);
    let t = Instant::now();
    let mut out = None;
    for i in 0..10 {
        out = Some(apply_channel(&wave, &ch.with_seed(i)).unwrap());
    }
    println!("apply_channel x10: {:?} ({} samples)", t.elapsed(), out.unwrap().len());

    let tpl = hrpsim_core::phy::local_template(&spec, PacketField::Sts, &pulse, fs).unwrap();
    let window = 20544;
    let t = Instant::now();
    let engine = CirEngine::new(&tpl, window).unwrap();
    println!("engine build: {:?} (tpl {} samples)", t.elapsed(), tpl.len());

    let rx = BasebandSignal::zeros(window, fs, 0.0).unwrap();
    let t = Instant::now();
    for _ in 0..10 {
        let _ = engine.cir(&rx).unwrap();
    }
    println!("cir x10: {:?}", t.elapsed());

    // One full reception, step by step.
    let zero = std::time::Duration::default();
    let (mut t_mix, mut t_cir, mut t_det, mut t_q) = (zero, zero, zero, zero);
    for i in 0..10 {
        let event = MediumEvent {
            signal: wave.clone(),
            channel: ch.with_seed(i),
            emit_time_ps: 2_000_000.0,
            source_id: 0,
        };
        let w = TimeWindow { start_ps: 0.0, samples: window };
        let t: Instant = Instant::now();
        let rx2 = mix(&[event], w, fs).unwrap();
        t_mix += t.elapsed();
        let t = Instant::now();
        let cir = engine.cir(&rx2).unwrap();
        t_cir += t.elapsed();
        let t = Instant::now();
        let toa = hrpsim_core::receiver::detect_toa(&cir, &cfg.receiver).unwrap();
        t_det += t.elapsed();
        let t = Instant::now();
        if let Some(est) = &toa {
            let q = hrpsim_core::receiver::sts_quality(&rx2, engine.template(), est, &cfg.receiver);
            std::hint::black_box(&q);
        }
        t_q += t.elapsed();
        std::hint::black_box(&toa);
    }
    println!("mix x10 {t_mix:?} | cir x10 {t_cir:?} | detect x10 {t_det:?} | quality x10 {t_q:?}");

    let ctx = SessionContext::new(params).unwrap();
    let attack = cfg.attack_config().unwrap();
    let t = Instant::now();
    for i in 0..10 {
        let _ = run_exchange(&ctx, attack.as_ref(), i, false).unwrap();
    }
    println!("exchange (no attack cfg defaults off) x10: {:?}", t.elapsed());

    let mut acfg = cfg.clone();
    acfg.attack.enabled = true;
    let attack = acfg.attack_config().unwrap();
    let t = Instant::now();
    for i in 0..10 {
        let _ = run_exchange(&ctx, attack.as_ref(), i, false).unwrap();
    }
    println!("exchange attacked x10: {:?}", t.elapsed());

    let mut lean = cfg.clone();
    lean.phy.data_packet = false;
    lean.phy.preamble_repetitions = 2;
    lean.phy.sts_length_bits = 256;
    let ctx2 = SessionContext::new(lean.exchange_params().unwrap()).unwrap();
    lean.attack.enabled = true;
    let attack2 = lean.attack_config().unwrap();
    let t = Instant::now();
    for i in 0..20 {
        let _ = run_exchange(&ctx2, attack2.as_ref(), i, false).unwrap();
    }
    println!("lean attacked exchange x20: {:?}", t.elapsed());
}
