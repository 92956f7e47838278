//! Scenario configuration: a TOML key/value file covering every knob of
//! the simulator, with documented defaults and fail-closed parsing
//! (unknown keys are errors).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackerDevice, TargetPacket};
use crate::channel::{ChannelModel, ChannelTap};
use crate::error::{Error, Result};
use crate::phy::{ternary_code, HrpPacketSpec, PulseKind, PulseShape, StsConfig, StsSource, DEFAULT_SFD, PRF_HZ};
use crate::ranging::{DeviceClock, ExchangeParams};
use crate::receiver::ReceiverConfig;
use crate::seed::derive_seed;
use crate::time::meters_to_ps;

/// Full description of one simulation scenario.
///
/// The defaults form the tuned reference scenario: compact packets sized so
/// large Monte Carlo campaigns stay tractable, with noise and injection
/// gains calibrated against the benign-error envelope (see README).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub true_distance_m: f64,
    pub n_trials: u64,
    pub baseline_trials: u64,
    pub master_seed: u64,
    /// Spacing between consecutive exchanges on the trace timeline.
    pub exchange_interval_ms: f64,
    pub phy: PhySection,
    pub sts: StsSection,
    pub clocks: ClockSection,
    pub protocol: ProtocolSection,
    pub channel: ChannelSection,
    pub receiver: ReceiverConfig,
    pub attack: AttackSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            true_distance_m: 15.0,
            n_trials: 1000,
            baseline_trials: 100,
            master_seed: 1,
            exchange_interval_ms: 10.0,
            phy: PhySection::default(),
            sts: StsSection::default(),
            clocks: ClockSection::default(),
            protocol: ProtocolSection::default(),
            channel: ChannelSection::default(),
            receiver: ReceiverConfig::default(),
            attack: AttackSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhySection {
    pub sample_rate_hz: f64,
    pub pulse_kind: PulseKind,
    pub pulse_duration_ns: f64,
    pub samples_per_pulse: usize,
    pub preamble_seed: u64,
    pub preamble_length: usize,
    pub preamble_repetitions: usize,
    pub sts_length_bits: usize,
    /// Append the auxiliary data packet after the three ranging packets.
    pub data_packet: bool,
    pub data_bits: usize,
}

impl Default for PhySection {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1.024e9,
            pulse_kind: PulseKind::RootRaisedCosine,
            pulse_duration_ns: 2.0,
            samples_per_pulse: 2,
            preamble_seed: 0x1915_4a5a,
            preamble_length: 127,
            preamble_repetitions: 4,
            sts_length_bits: 512,
            data_packet: true,
            data_bits: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StsSection {
    /// 128-bit session key, 32 hex digits.
    pub key_hex: String,
    /// Fixed upper 96 bits of the counter block, 24 hex digits.
    pub upper96_hex: String,
    pub counter: u32,
}

impl Default for StsSection {
    fn default() -> Self {
        Self {
            key_hex: "000102030405060708090a0b0c0d0e0f".into(),
            upper96_hex: "000000000000000000000001".into(),
            counter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    pub initiator_offset_ns: f64,
    pub initiator_ppm: f64,
    pub responder_offset_ns: f64,
    pub responder_ppm: f64,
    /// Timestamp quantum shared by both devices and the trace collector.
    pub tick_ps: f64,
}

impl Default for ClockSection {
    fn default() -> Self {
        Self {
            initiator_offset_ns: 0.0,
            initiator_ppm: 2.0,
            responder_offset_ns: 137.0,
            responder_ppm: -5.0,
            tick_ps: 15.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub reply1_us: f64,
    pub reply2_us: f64,
    pub rx_margin_pre_us: f64,
    pub rx_margin_post_us: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self { reply1_us: 1000.0, reply2_us: 1000.0, rx_margin_pre_us: 2.0, rx_margin_post_us: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub los_gain: f64,
    /// Per-sample complex noise standard deviation, waveform units.
    pub noise_sigma: f64,
    /// Extra reflected paths behind the line of sight.
    pub nlos_taps: Vec<NlosTap>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { los_gain: 1.0, noise_sigma: 11_000.0, nlos_taps: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlosTap {
    /// Delay behind the line-of-sight path.
    pub excess_delay_ns: f64,
    pub gain: f64,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetName {
    Packet2,
    Packet3,
}

impl From<TargetName> for TargetPacket {
    fn from(t: TargetName) -> TargetPacket {
        match t {
            TargetName::Packet2 => TargetPacket::Packet2,
            TargetName::Packet3 => TargetPacket::Packet3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub enabled: bool,
    pub targets: Vec<TargetName>,
    /// Explicit trigger-to-emission delays; unset derives them from the
    /// nominal reply times.
    pub delay_packet2_us: Option<f64>,
    pub delay_packet3_us: Option<f64>,
    pub timing_jitter_sigma_us: f64,
    pub preamble_gain: f64,
    pub sfd_gain: f64,
    pub sts_gain: f64,
    pub sts_seed: u64,
    /// Distance between each injecting device and the receiver it attacks.
    pub attacker_distance_m: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            enabled: false,
            targets: vec![TargetName::Packet2],
            delay_packet2_us: None,
            delay_packet3_us: None,
            timing_jitter_sigma_us: 1.0,
            preamble_gain: 0.25,
            sfd_gain: 0.25,
            sts_gain: 2.0,
            sts_seed: 0xa77a_cc01,
            attacker_distance_m: 0.3,
        }
    }
}

fn parse_hex<const N: usize>(s: &str, what: &str) -> Result<[u8; N]> {
    let s = s.trim();
    if s.len() != 2 * N {
        return Err(Error::config(format!("{what} must be {} hex digits, got {}", 2 * N, s.len())));
    }
    let mut out = [0u8; N];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16);
        let lo = (chunk[1] as char).to_digit(16);
        match (hi, lo) {
            (Some(h), Some(l)) => out[i] = (h * 16 + l) as u8,
            _ => return Err(Error::config(format!("{what} contains non-hex characters"))),
        }
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::config("n_trials must be >= 1"));
        }
        if self.baseline_trials < 10 {
            return Err(Error::config("baseline_trials must be >= 10"));
        }
        if !(self.true_distance_m > 0.0) {
            return Err(Error::config("true_distance_m must be positive"));
        }
        if !(self.exchange_interval_ms > 0.0) {
            return Err(Error::config("exchange_interval_ms must be positive"));
        }
        if self.attack.enabled && self.attack.targets.is_empty() {
            return Err(Error::config("attack enabled but no targets listed"));
        }
        // Exercise the builders so every derived invariant is checked.
        self.exchange_params()?.validate()?;
        if let Some(a) = self.attack_config()? {
            a.validate()?;
        }
        Ok(())
    }

    pub fn pulse_shape(&self) -> PulseShape {
        PulseShape {
            kind: self.phy.pulse_kind,
            duration_s: self.phy.pulse_duration_ns * 1e-9,
            samples_per_pulse: self.phy.samples_per_pulse,
        }
    }

    /// The legitimate ranging packet (unit gains, base STS counter).
    pub fn packet_spec(&self) -> Result<HrpPacketSpec> {
        let key = parse_hex::<16>(&self.sts.key_hex, "sts.key_hex")?;
        let upper96 = parse_hex::<12>(&self.sts.upper96_hex, "sts.upper96_hex")?;
        Ok(HrpPacketSpec {
            preamble_code: ternary_code(self.phy.preamble_seed, self.phy.preamble_length),
            preamble_repetitions: self.phy.preamble_repetitions,
            sfd: DEFAULT_SFD.to_vec(),
            sts: Some(StsSource::Keyed(StsConfig {
                key,
                upper96,
                counter: self.sts.counter,
                length_bits: self.phy.sts_length_bits,
            })),
            data_bits: None,
            prf_hz: PRF_HZ,
            gains: Default::default(),
        })
    }

    fn victim_channel(&self) -> ChannelModel {
        let los_delay = meters_to_ps(self.true_distance_m);
        let mut taps = vec![ChannelTap::real(los_delay, self.channel.los_gain)];
        for tap in &self.channel.nlos_taps {
            let phase = tap.phase_deg.to_radians();
            taps.push(ChannelTap {
                delay_ps: los_delay + tap.excess_delay_ns * 1000.0,
                gain: num_complex::Complex64::from_polar(tap.gain, phase),
            });
        }
        ChannelModel { taps, noise_sigma: self.channel.noise_sigma, seed: 0 }
    }

    pub fn exchange_params(&self) -> Result<ExchangeParams> {
        let channel = self.victim_channel();
        let data_bits = {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.phy.preamble_seed, 0xda7a));
            (0..self.phy.data_bits).map(|_| rng.gen_range(0..=1u8)).collect()
        };
        Ok(ExchangeParams {
            initiator_clock: DeviceClock {
                offset_ps: self.clocks.initiator_offset_ns * 1000.0,
                ppm: self.clocks.initiator_ppm,
                tick_ps: self.clocks.tick_ps,
            },
            responder_clock: DeviceClock {
                offset_ps: self.clocks.responder_offset_ns * 1000.0,
                ppm: self.clocks.responder_ppm,
                tick_ps: self.clocks.tick_ps,
            },
            receiver: self.receiver,
            packet: self.packet_spec()?,
            pulse: self.pulse_shape(),
            sample_rate: self.phy.sample_rate_hz,
            forward_channel: channel.clone(),
            reverse_channel: channel,
            reply1_ps: self.protocol.reply1_us * 1e6,
            reply2_ps: self.protocol.reply2_us * 1e6,
            data_packet: self.phy.data_packet,
            data_bits,
            rx_margin_pre_ps: self.protocol.rx_margin_pre_us * 1e6,
            rx_margin_post_ps: self.protocol.rx_margin_post_us * 1e6,
            sniffer_tick_ps: self.clocks.tick_ps,
        })
    }

    /// Builds the attacker from the scenario geometry: one injecting device
    /// per target, each placed `attacker_distance_m` from its victim.
    pub fn attack_config(&self) -> Result<Option<AttackConfig>> {
        if !self.attack.enabled {
            return Ok(None);
        }
        let near = meters_to_ps(self.attack.attacker_distance_m);
        let far = meters_to_ps(self.true_distance_m + self.attack.attacker_distance_m);
        let noise = self.channel.noise_sigma;
        let mut devices = Vec::new();
        for &target in &self.attack.targets {
            let target: TargetPacket = target.into();
            let (delay, trigger_delay) = match target {
                // Near the initiator; it hears packet 1 from across the room.
                TargetPacket::Packet2 => (self.attack.delay_packet2_us, near),
                // Near the responder; packet 1 reaches it over the full path.
                TargetPacket::Packet3 => (self.attack.delay_packet3_us, far),
            };
            devices.push(AttackerDevice {
                target,
                delay_after_rx_ps: delay.map(|d| d * 1e6),
                channel_to_victim: ChannelModel::line_of_sight(near, 1.0, 0.0, 0),
                trigger_channel: ChannelModel::line_of_sight(trigger_delay, 1.0, noise, 0),
            });
        }
        Ok(Some(AttackConfig {
            enabled: true,
            devices,
            timing_jitter_sigma_ps: self.attack.timing_jitter_sigma_us * 1e6,
            preamble_gain: self.attack.preamble_gain,
            sfd_gain: self.attack.sfd_gain,
            sts_gain: self.attack.sts_gain,
            sts_seed: self.attack.sts_seed,
        }))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads and validates a scenario file. Empty files yield all defaults;
/// unknown keys and malformed values are errors.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    ScenarioConfig::from_toml_str(&text)
}
