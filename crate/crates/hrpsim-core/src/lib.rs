//! Baseband-level simulator of IEEE 802.15.4z HRP UWB two-way ranging and
//! of selective-overshadowing distance-reduction attacks against it.
//!
//! The crate is organized along the signal path:
//!
//! - [`phy`] synthesizes HRP packets (preamble, SFD, STS, data) as pulse
//!   trains, including STS generation from a 128-bit key in counter mode;
//! - [`channel`] applies tapped-delay-line multipath and noise and mixes
//!   concurrent transmissions onto one receive timeline;
//! - [`receiver`] estimates the CIR by cross-correlation and runs
//!   back-search leading-edge detection with configurable thresholds;
//! - [`ranging`] drives SS-TWR/DS-TWR exchanges between devices with
//!   independent clocks and computes both distance estimates;
//! - [`attack`] implements a reactive injector that overshadows selected
//!   packets with a weak preamble and a strong random STS;
//! - [`campaign`] runs Monte Carlo campaigns, applies the
//!   reduction-success criterion, and exports CSV;
//! - [`trace`] records every on-air event in a binary trace with a
//!   human-readable dissector;
//! - [`config`] parses scenario files covering every knob above.

pub mod attack;
pub mod campaign;
pub mod channel;
pub mod config;
pub mod error;
pub mod phy;
pub mod ranging;
pub mod receiver;
pub mod seed;
pub mod signal;
pub mod stats;
pub mod time;
pub mod trace;

pub use attack::AttackConfig;
pub use campaign::{is_reduction, run_baseline, run_campaign, CampaignResult};
pub use channel::{apply_channel, mix, ChannelModel, ChannelTap, MediumEvent, TimeWindow};
pub use config::{parse_config, ScenarioConfig};
pub use error::{Error, Result};
pub use phy::{
    generate_sts_bits, local_template, modulate_packet, HrpPacketSpec, PulseKind, PulseShape,
    StsConfig,
};
pub use ranging::{
    ds_twr_distance_full, ds_twr_distance_simple, predicted_reduction, run_exchange,
    ss_twr_distance, DeviceClock, ExchangeStatus, RangingExchange,
};
pub use receiver::{
    compute_cir, detect_toa, estimate_noise_floor, sts_quality, Cir, ReceiverConfig, ToaEstimate,
};
pub use signal::BasebandSignal;
pub use time::SPEED_OF_LIGHT;
pub use trace::{dissect, read_trace, write_trace, TraceRecord};
