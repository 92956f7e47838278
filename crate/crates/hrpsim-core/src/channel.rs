//! Multipath propagation and the shared medium.
//!
//! A channel is a tapped delay line plus additive complex Gaussian noise.
//! Concurrent transmissions (legitimate and injected) are composed onto a
//! common receive timeline by `mix`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal::BasebandSignal;

/// One propagation path: delay and complex gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTap {
    pub delay_ps: f64,
    pub gain: Complex64,
}

impl ChannelTap {
    pub fn real(delay_ps: f64, gain: f64) -> Self {
        Self { delay_ps, gain: Complex64::new(gain, 0.0) }
    }
}

/// Tapped-delay-line channel with per-sample complex noise of standard
/// deviation `noise_sigma` (total power across I and Q).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// Sorted by delay ascending; the first tap is the line-of-sight path.
    pub taps: Vec<ChannelTap>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ChannelModel {
    /// Noiseless single-tap channel that returns the input unchanged.
    pub fn identity() -> Self {
        Self { taps: vec![ChannelTap::real(0.0, 1.0)], noise_sigma: 0.0, seed: 0 }
    }

    /// Line-of-sight channel with the given propagation delay and gain.
    pub fn line_of_sight(delay_ps: f64, gain: f64, noise_sigma: f64, seed: u64) -> Self {
        Self { taps: vec![ChannelTap::real(delay_ps, gain)], noise_sigma, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::config("channel needs at least one tap"));
        }
        let mut prev = -1.0;
        for tap in &self.taps {
            if tap.delay_ps < 0.0 {
                return Err(Error::config("tap delays must be >= 0"));
            }
            if tap.delay_ps < prev {
                return Err(Error::config("taps must be sorted by delay ascending"));
            }
            prev = tap.delay_ps;
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        Ok(())
    }

    /// Delay of the line-of-sight path, ps.
    pub fn los_delay_ps(&self) -> f64 {
        self.taps.first().map_or(0.0, |t| t.delay_ps)
    }

    /// Copy with a different noise seed; used to decorrelate packets.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// One transmission placed on the medium.
#[derive(Debug, Clone)]
pub struct MediumEvent {
    pub signal: BasebandSignal,
    pub channel: ChannelModel,
    pub emit_time_ps: f64,
    pub source_id: u16,
}

/// Receive window on the common timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start_ps: f64,
    pub samples: usize,
}

/// Applies the tapped delay line and noise to a signal.
///
/// Tap delays are rounded to the nearest sample. The output keeps the
/// input's `t0_ps`; its length covers the longest tap.
pub fn apply_channel(sig: &BasebandSignal, ch: &ChannelModel) -> Result<BasebandSignal> {
    ch.validate()?;
    let period = sig.sample_period_ps();
    let max_delay = (ch.taps.last().unwrap().delay_ps / period).round() as usize;
    let mut out = vec![Complex64::new(0.0, 0.0); sig.len() + max_delay];
    for tap in &ch.taps {
        let shift = (tap.delay_ps / period).round() as usize;
        let dst = &mut out[shift..shift + sig.len()];
        if tap.gain == Complex64::new(1.0, 0.0) {
            for (d, s) in dst.iter_mut().zip(&sig.samples) {
                *d += s;
            }
        } else {
            for (d, s) in dst.iter_mut().zip(&sig.samples) {
                *d += tap.gain * s;
            }
        }
    }
    if ch.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ch.seed);
        let per_component = Normal::new(0.0, ch.noise_sigma / std::f64::consts::SQRT_2)
            .map_err(|e| Error::config(e.to_string()))?;
        for v in &mut out {
            let re: f64 = per_component.sample(&mut rng);
            let im: f64 = per_component.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    BasebandSignal::new(out, sig.sample_rate, sig.t0_ps)
}

/// Sums all channel-applied transmissions onto the window's sample grid.
///
/// Each event is placed at its emit time rounded to the nearest window
/// sample, so alignment error is at most half a sample period.
pub fn mix(events: &[MediumEvent], window: TimeWindow, sample_rate: f64) -> Result<BasebandSignal> {
    let mut out = BasebandSignal::zeros(window.samples, sample_rate, window.start_ps)?;
    let period = out.sample_period_ps();
    for event in events {
        if event.signal.sample_rate != sample_rate {
            return Err(Error::signal(format!(
                "event from device {} has sample rate {}, medium runs at {sample_rate}",
                event.source_id, event.signal.sample_rate
            )));
        }
        let propagated = apply_channel(&event.signal, &event.channel)?;
        let start_offset =
            ((event.emit_time_ps + propagated.t0_ps - window.start_ps) / period).round() as i64;
        // Clip the placed signal to the window.
        let src_begin = (-start_offset).max(0) as usize;
        let dst_begin = start_offset.max(0) as usize;
        if src_begin >= propagated.samples.len() || dst_begin >= out.samples.len() {
            continue;
        }
        let count =
            (propagated.samples.len() - src_begin).min(out.samples.len() - dst_begin);
        let dst = &mut out.samples[dst_begin..dst_begin + count];
        let src = &propagated.samples[src_begin..src_begin + count];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1.024e9;

    fn unit_pulse(len: usize, at: usize) -> BasebandSignal {
        let mut s = BasebandSignal::zeros(len, FS, 0.0).unwrap();
        s.samples[at] = Complex64::new(1.0, 0.0);
        s
    }

    #[test]
    fn identity_channel_returns_input() {
        let sig = unit_pulse(64, 10);
        let out = apply_channel(&sig, &ChannelModel::identity()).unwrap();
        assert_eq!(out, sig);
    }

    #[test]
    fn two_taps_split_a_pulse() {
        let sig = unit_pulse(32, 0);
        let ch = ChannelModel {
            taps: vec![ChannelTap::real(0.0, 1.0), ChannelTap::real(16_000.0, 0.5)],
            noise_sigma: 0.0,
            seed: 0,
        };
        let out = apply_channel(&sig, &ch).unwrap();
        let shift = (16_000.0 / sig.sample_period_ps()).round() as usize;
        assert!((out.samples[0].re - 1.0).abs() < 1e-12);
        assert!((out.samples[shift].re - 0.5).abs() < 1e-12);
        let energy_elsewhere: f64 = out
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 0 && *i != shift)
            .map(|(_, s)| s.norm_sqr())
            .sum();
        assert_eq!(energy_elsewhere, 0.0);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let sig = unit_pulse(256, 5);
        let ch = ChannelModel::line_of_sight(0.0, 1.0, 0.3, 42);
        let a = apply_channel(&sig, &ch).unwrap();
        let b = apply_channel(&sig, &ch).unwrap();
        assert_eq!(a, b);
        let c = apply_channel(&sig, &ch.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn opposite_signals_cancel_in_the_mix() {
        let sig = unit_pulse(32, 4);
        let events = vec![
            MediumEvent {
                signal: sig.clone(),
                channel: ChannelModel::identity(),
                emit_time_ps: 1000.0,
                source_id: 0,
            },
            MediumEvent {
                signal: sig.scaled(-1.0),
                channel: ChannelModel::identity(),
                emit_time_ps: 1000.0,
                source_id: 1,
            },
        ];
        let window = TimeWindow { start_ps: 0.0, samples: 128 };
        let out = mix(&events, window, FS).unwrap();
        assert!(out.samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn single_event_lands_at_emit_time() {
        let sig = unit_pulse(8, 0);
        let events = vec![MediumEvent {
            signal: sig,
            channel: ChannelModel::identity(),
            emit_time_ps: 10_000.0,
            source_id: 0,
        }];
        let window = TimeWindow { start_ps: 0.0, samples: 64 };
        let out = mix(&events, window, FS).unwrap();
        let expected = (10_000.0 / out.sample_period_ps()).round() as usize;
        assert!((out.samples[expected].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mix_is_linear_without_noise() {
        let a = vec![MediumEvent {
            signal: unit_pulse(16, 2),
            channel: ChannelModel::identity(),
            emit_time_ps: 0.0,
            source_id: 0,
        }];
        let b = vec![MediumEvent {
            signal: unit_pulse(16, 7),
            channel: ChannelModel::line_of_sight(3000.0, 0.5, 0.0, 0),
            emit_time_ps: 5000.0,
            source_id: 1,
        }];
        let both: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
        let window = TimeWindow { start_ps: 0.0, samples: 64 };
        let sum_a = mix(&a, window, FS).unwrap();
        let sum_b = mix(&b, window, FS).unwrap();
        let sum_ab = mix(&both, window, FS).unwrap();
        for i in 0..window.samples {
            let expect = sum_a.samples[i] + sum_b.samples[i];
            assert!((sum_ab.samples[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn causality_no_energy_before_emission() {
        let events = vec![MediumEvent {
            signal: unit_pulse(16, 0),
            channel: ChannelModel::line_of_sight(2000.0, 1.0, 0.0, 0),
            emit_time_ps: 20_000.0,
            source_id: 0,
        }];
        let window = TimeWindow { start_ps: 0.0, samples: 128 };
        let out = mix(&events, window, FS).unwrap();
        // Tap delay and emit time are each rounded to the grid separately.
        let period = out.sample_period_ps();
        let first =
            ((20_000.0 / period).round() + (2000.0 / period).round()) as usize;
        for (i, s) in out.samples.iter().enumerate() {
            if i < first {
                assert_eq!(s.norm(), 0.0, "energy at {i} before arrival {first}");
            }
        }
        assert!((out.samples[first].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_rates_are_rejected() {
        let sig = BasebandSignal::zeros(8, 2.048e9, 0.0).unwrap();
        let events = vec![MediumEvent {
            signal: sig,
            channel: ChannelModel::identity(),
            emit_time_ps: 0.0,
            source_id: 0,
        }];
        assert!(mix(&events, TimeWindow { start_ps: 0.0, samples: 16 }, FS).is_err());
    }

    #[test]
    fn unsorted_taps_are_rejected() {
        let ch = ChannelModel {
            taps: vec![ChannelTap::real(5000.0, 1.0), ChannelTap::real(0.0, 0.5)],
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(ch.validate().is_err());
    }
}
