//! Reactive selective-overshadowing injector.
//!
//! The injector behaves like a packet analyzer until it detects the first
//! packet of an exchange, then transmits a crafted packet at a configured
//! delay so it lands on top of packet 2, packet 3, or both (one injecting
//! device per target). The crafted packet copies the public preamble and
//! SFD at low power and carries an equally long *random* STS at high power:
//! low enough not to look like a separate packet, high enough that its
//! correlation noise gets misclassified as an early signal copy.
//!
//! The injector never sees the session STS key. Its only inputs are the
//! public packet profile (preamble, SFD, field lengths) and on-air timing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::phy::{FieldGains, HrpPacketSpec, StsSource};
use crate::seed::derive_seed;

/// Which DS-TWR packet an injecting device overshadows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetPacket {
    /// Responder's reply, received by the initiator. Reduces both round
    /// times, so it is worth twice packet 3.
    Packet2,
    /// Initiator's final ranging packet, received by the responder.
    Packet3,
}

impl TargetPacket {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetPacket::Packet2 => "packet2",
            TargetPacket::Packet3 => "packet3",
        }
    }
}

/// The parts of the victim packet an outside observer knows: everything
/// except key material.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicPacketProfile {
    pub preamble_code: Vec<i8>,
    pub preamble_repetitions: usize,
    pub sfd: Vec<i8>,
    pub sts_length_bits: usize,
    pub prf_hz: f64,
}

impl PublicPacketProfile {
    /// Extracts the public profile of a packet. The STS itself is reduced
    /// to its length; the key and counter never cross this boundary.
    pub fn of(spec: &HrpPacketSpec) -> Self {
        Self {
            preamble_code: spec.preamble_code.clone(),
            preamble_repetitions: spec.preamble_repetitions,
            sfd: spec.sfd.clone(),
            sts_length_bits: spec.sts.as_ref().map_or(0, |s| s.len_bits()),
            prf_hz: spec.prf_hz,
        }
    }
}

/// One injecting device, placed near one victim receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerDevice {
    pub target: TargetPacket,
    /// Delay from trigger reception to transmission; `None` derives it from
    /// the session's nominal reply times.
    pub delay_after_rx_ps: Option<f64>,
    /// Channel from this device to the receiver it attacks.
    pub channel_to_victim: ChannelModel,
    /// Channel from the exchange initiator to this device's own receiver,
    /// used to detect the first packet.
    pub trigger_channel: ChannelModel,
}

/// Reactive injection parameters shared by all devices of one attacker.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub enabled: bool,
    pub devices: Vec<AttackerDevice>,
    /// Standard deviation of the Gaussian timing error on each emission.
    pub timing_jitter_sigma_ps: f64,
    pub preamble_gain: f64,
    pub sfd_gain: f64,
    pub sts_gain: f64,
    /// Seed for the injected random STS; a fresh sequence is drawn per
    /// emission by salting this with the trial seed.
    pub sts_seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if self.devices.is_empty() {
            return Err(Error::config("attack enabled but no injecting device configured"));
        }
        let mut seen_p2 = false;
        let mut seen_p3 = false;
        for dev in &self.devices {
            dev.channel_to_victim.validate()?;
            dev.trigger_channel.validate()?;
            let seen = match dev.target {
                TargetPacket::Packet2 => &mut seen_p2,
                TargetPacket::Packet3 => &mut seen_p3,
            };
            if *seen {
                return Err(Error::config("two injecting devices share one target packet"));
            }
            *seen = true;
        }
        for g in [self.preamble_gain, self.sfd_gain, self.sts_gain] {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::config("injection gains must be finite and >= 0"));
            }
        }
        if !(self.timing_jitter_sigma_ps >= 0.0) {
            return Err(Error::config("timing jitter sigma must be >= 0"));
        }
        Ok(())
    }

    /// Bitmask of targeted packets (bit 0 = packet 2, bit 1 = packet 3).
    pub fn target_mask(&self) -> u8 {
        let mut mask = 0;
        if self.enabled {
            for dev in &self.devices {
                mask |= match dev.target {
                    TargetPacket::Packet2 => 1,
                    TargetPacket::Packet3 => 2,
                };
            }
        }
        mask
    }
}

/// Builds the injected packet: the victim's public preamble and SFD at low
/// gain, a random STS of the victim's STS length at high gain, and no data
/// field. `emission_salt` decorrelates the random STS across emissions.
pub fn craft_attack_packet(
    cfg: &AttackConfig,
    profile: &PublicPacketProfile,
    emission_salt: u64,
) -> Result<HrpPacketSpec> {
    if profile.sts_length_bits == 0 {
        return Err(Error::config("victim packet carries no STS to overshadow"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.sts_seed, emission_salt));
    let bits: Vec<u8> = (0..profile.sts_length_bits).map(|_| rng.gen_range(0..=1u8)).collect();
    Ok(HrpPacketSpec {
        preamble_code: profile.preamble_code.clone(),
        preamble_repetitions: profile.preamble_repetitions,
        sfd: profile.sfd.clone(),
        sts: Some(StsSource::Raw(bits)),
        data_bits: None,
        prf_hz: profile.prf_hz,
        gains: FieldGains {
            preamble: cfg.preamble_gain,
            sfd: cfg.sfd_gain,
            sts: cfg.sts_gain,
            data: 0.0,
        },
    })
}

/// One planned emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledInjection {
    pub device_index: usize,
    pub target: TargetPacket,
    pub emit_time_ps: f64,
}

/// Turns per-device trigger receptions into emission times.
///
/// `triggers[i]` is the packet-1 arrival time device `i` measured, or
/// `None` if its receiver missed the trigger (that device stays silent this
/// exchange). Each emission gets an independent Gaussian timing error.
pub fn reactive_schedule(
    triggers: &[Option<f64>],
    cfg: &AttackConfig,
    reply1_ps: f64,
    reply2_ps: f64,
    trial_seed: u64,
) -> Result<Vec<ScheduledInjection>> {
    cfg.validate()?;
    if triggers.len() != cfg.devices.len() {
        return Err(Error::config("one trigger slot per injecting device required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 0xa77a));
    let jitter = Normal::new(0.0, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::new();
    for (index, (dev, trigger)) in cfg.devices.iter().zip(triggers).enumerate() {
        // Draw even when the trigger was missed so the remaining devices'
        // jitter does not depend on another device's detection outcome.
        let draw: f64 = jitter.sample(&mut rng);
        let Some(trigger_toa) = trigger else { continue };
        let delay = dev.delay_after_rx_ps.unwrap_or(match dev.target {
            TargetPacket::Packet2 => reply1_ps,
            TargetPacket::Packet3 => reply1_ps + reply2_ps,
        });
        out.push(ScheduledInjection {
            device_index: index,
            target: dev.target,
            emit_time_ps: trigger_toa + delay + draw * cfg.timing_jitter_sigma_ps,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{generate_sts_bits, StsConfig};

    fn test_cfg(targets: &[TargetPacket]) -> AttackConfig {
        AttackConfig {
            enabled: true,
            devices: targets
                .iter()
                .map(|&t| AttackerDevice {
                    target: t,
                    delay_after_rx_ps: None,
                    channel_to_victim: ChannelModel::line_of_sight(1000.0, 1.0, 0.0, 0),
                    trigger_channel: ChannelModel::line_of_sight(1000.0, 1.0, 0.0, 0),
                })
                .collect(),
            timing_jitter_sigma_ps: 1e6,
            preamble_gain: 0.25,
            sfd_gain: 0.25,
            sts_gain: 0.33,
            sts_seed: 99,
        }
    }

    fn profile() -> PublicPacketProfile {
        PublicPacketProfile::of(&HrpPacketSpec {
            sts: Some(StsSource::Keyed(StsConfig {
                key: [0xab; 16],
                length_bits: 4096,
                ..Default::default()
            })),
            ..Default::default()
        })
    }

    #[test]
    fn crafted_packet_uses_configured_gains_and_no_data() {
        let cfg = test_cfg(&[TargetPacket::Packet2]);
        let pkt = craft_attack_packet(&cfg, &profile(), 0).unwrap();
        assert_eq!(pkt.gains.preamble, 0.25);
        assert_eq!(pkt.gains.sfd, 0.25);
        assert_eq!(pkt.gains.sts, 0.33);
        assert_eq!(pkt.gains.data, 0.0);
        assert!(pkt.data_bits.is_none());
        assert_eq!(pkt.sts.as_ref().unwrap().len_bits(), 4096);
    }

    #[test]
    fn injected_sts_agrees_with_legitimate_on_about_half_the_bits() {
        let cfg = test_cfg(&[TargetPacket::Packet2]);
        let pkt = craft_attack_packet(&cfg, &profile(), 1).unwrap();
        let StsSource::Raw(injected) = pkt.sts.as_ref().unwrap() else {
            panic!("injected STS must be raw bits");
        };
        let legit = generate_sts_bits(&StsConfig {
            key: [0xab; 16],
            length_bits: 4096,
            ..Default::default()
        })
        .unwrap();
        let agree = injected.iter().zip(&legit).filter(|(a, b)| a == b).count();
        // Binomial(4096, 1/2): mean 2048, sigma 32. Allow three sigma.
        assert!((agree as f64 - 2048.0).abs() < 3.0 * 32.0, "agreement {agree}");
    }

    #[test]
    fn fresh_sts_per_emission_same_sts_per_seed() {
        let cfg = test_cfg(&[TargetPacket::Packet2]);
        let a = craft_attack_packet(&cfg, &profile(), 1).unwrap();
        let b = craft_attack_packet(&cfg, &profile(), 2).unwrap();
        let a2 = craft_attack_packet(&cfg, &profile(), 1).unwrap();
        assert_ne!(a.sts, b.sts);
        assert_eq!(a.sts, a2.sts);
    }

    #[test]
    fn default_delays_land_on_reply_multiples() {
        let cfg = AttackConfig {
            timing_jitter_sigma_ps: 0.0,
            ..test_cfg(&[TargetPacket::Packet2, TargetPacket::Packet3])
        };
        let out =
            reactive_schedule(&[Some(1000.0), Some(1000.0)], &cfg, 1e9, 2e9, 7).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].emit_time_ps, 1000.0 + 1e9);
        assert_eq!(out[1].emit_time_ps, 1000.0 + 1e9 + 2e9);
    }

    #[test]
    fn missed_trigger_means_no_emission() {
        let cfg = test_cfg(&[TargetPacket::Packet2, TargetPacket::Packet3]);
        let out = reactive_schedule(&[None, Some(0.0)], &cfg, 1e9, 1e9, 7).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].target, TargetPacket::Packet3);
    }

    #[test]
    fn jitter_draws_are_independent_per_device_and_deterministic() {
        let cfg = test_cfg(&[TargetPacket::Packet2, TargetPacket::Packet3]);
        let a = reactive_schedule(&[Some(0.0), Some(0.0)], &cfg, 1e9, 1e9, 42).unwrap();
        let b = reactive_schedule(&[Some(0.0), Some(0.0)], &cfg, 1e9, 1e9, 42).unwrap();
        assert_eq!(a, b);
        let c = reactive_schedule(&[Some(0.0), Some(0.0)], &cfg, 1e9, 1e9, 43).unwrap();
        assert_ne!(a, c);
        // Device 2's draw does not shift when device 1 misses its trigger.
        let d = reactive_schedule(&[None, Some(0.0)], &cfg, 1e9, 1e9, 42).unwrap();
        assert_eq!(d[0].emit_time_ps, a[1].emit_time_ps);
    }

    #[test]
    fn duplicate_targets_are_rejected() {
        let cfg = test_cfg(&[TargetPacket::Packet2, TargetPacket::Packet2]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn target_mask_reflects_devices() {
        assert_eq!(test_cfg(&[TargetPacket::Packet2]).target_mask(), 1);
        assert_eq!(test_cfg(&[TargetPacket::Packet3]).target_mask(), 2);
        assert_eq!(
            test_cfg(&[TargetPacket::Packet2, TargetPacket::Packet3]).target_mask(),
            3
        );
    }
}
