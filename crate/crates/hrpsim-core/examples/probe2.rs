use std::time::Instant;
use hrpsim_core::channel::{mix, MediumEvent, TimeWindow};
use hrpsim_core::config::ScenarioConfig;
use hrpsim_core::ranging::SessionContext;

fn main() {
    let cfg = ScenarioConfig::default();
    let params = cfg.exchange_params().unwrap();
    let fs = params.sample_rate;
    let ctx = SessionContext::new(cfg.exchange_params().unwrap()).unwrap();
    let _ = ctx;
    // Reception p1 as run_exchange does it: responder clock window anchor.
    let wave = hrpsim_core::phy::modulate_packet(&params.packet, &params.pulse, fs).unwrap();
    let ch = params.forward_channel.clone();
    let t = Instant::now();
    for i in 0..10u64 {
        let ev = MediumEvent { signal: wave.clone(), channel: { let mut c = ch.clone(); c.seed = i; c }, emit_time_ps: 2_031_000.0, source_id: 0 };
        let w = TimeWindow { start_ps: 31_000.0, samples: 20544 };
        let rx = mix(&[ev], w, fs).unwrap();
        std::hint::black_box(&rx);
    }
    println!("p1-style mix x10: {:?}", t.elapsed());
}
