//! Packet detection and time-of-arrival estimation.
//!
//! The receiver estimates the CIR by cross-correlating the received window
//! with a local template, estimates the noise floor away from the strongest
//! peak, and then runs leading-edge detection: the earliest sufficiently
//! significant correlation peak inside a bounded back-search window before
//! the strongest peak becomes the time of arrival. Every threshold is a
//! configuration knob; the trade-off they control is exactly what an
//! injection attack exploits.

mod correlate;

pub use correlate::{compute_cir, Cir, CirEngine};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::PRF_HZ;
use crate::signal::BasebandSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseEstimator {
    /// Median of CIR magnitudes.
    MedianAbs,
    /// Mean of CIR magnitudes after trimming 10% at both ends.
    TrimmedMean,
}

/// Detection thresholds and back-search size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Lags inspected before the strongest peak.
    pub backsearch_window: usize,
    /// dB over the noise floor the strongest peak needs to declare a packet.
    pub detect_threshold_db: f64,
    /// dB over the noise floor an early peak needs to be accepted.
    pub leading_edge_threshold_db: f64,
    /// Maximum dB below the strongest peak an accepted early peak may sit.
    pub leading_edge_rel_max_db: f64,
    pub noise_estimator: NoiseEstimator,
    /// When set, demodulate the STS at the accepted alignment and fail the
    /// packet if more than this many bits disagree. Off by default.
    pub sts_bit_check: Option<u32>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            backsearch_window: 16,
            detect_threshold_db: 20.0,
            leading_edge_threshold_db: 12.0,
            leading_edge_rel_max_db: 20.0,
            noise_estimator: NoiseEstimator::MedianAbs,
            sts_bit_check: None,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        for v in [
            self.detect_threshold_db,
            self.leading_edge_threshold_db,
            self.leading_edge_rel_max_db,
        ] {
            if !v.is_finite() {
                return Err(Error::config("receiver thresholds must be finite"));
            }
        }
        Ok(())
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Result of a successful detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaEstimate {
    /// Estimated arrival time of the template on the exchange timeline, ps.
    pub toa_ps: f64,
    /// Lag of the strongest correlation peak.
    pub peak_index: usize,
    /// Lag the ToA was taken from (equals `peak_index` unless an early peak
    /// was accepted).
    pub accepted_index: usize,
    pub peak_magnitude: f64,
    pub noise_floor: f64,
    pub leading_edge_used: bool,
    /// Normalized STS correlation quality, filled in by `sts_quality`.
    pub sts_quality: Option<f64>,
}

/// Robust noise estimate over CIR lags away from the strongest peak.
///
/// A guard region of two back-search windows on both sides of the peak is
/// excluded so signal energy does not inflate the estimate.
pub fn estimate_noise_floor(cir: &Cir, cfg: &ReceiverConfig) -> Result<f64> {
    if cir.len() < 64 {
        return Err(Error::signal(format!("CIR of {} lags is too short", cir.len())));
    }
    let peak = argmax(cir);
    let guard = 2 * cfg.backsearch_window;
    let lo = peak.saturating_sub(guard);
    let hi = (peak + guard).min(cir.len() - 1);
    // Squared magnitudes are cheaper and order-equivalent; take square
    // roots only where the estimate needs real magnitudes.
    let mut sq: Vec<f64> = cir
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < lo || *i > hi)
        .map(|(_, v)| v.norm_sqr())
        .collect();
    if sq.len() < 16 {
        return Err(Error::signal("guard region leaves too few lags for a noise estimate"));
    }
    let n = sq.len();
    Ok(match cfg.noise_estimator {
        NoiseEstimator::MedianAbs => {
            let (_, hi_med, _) = sq.select_nth_unstable_by(n / 2, f64::total_cmp);
            let hi_med = *hi_med;
            if n % 2 == 1 {
                hi_med.sqrt()
            } else {
                let lo_med = sq[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lo_med.sqrt() + hi_med.sqrt())
            }
        }
        NoiseEstimator::TrimmedMean => {
            let trim = n / 10;
            sq.sort_unstable_by(f64::total_cmp);
            let kept = &sq[trim..n - trim];
            kept.iter().map(|v| v.sqrt()).sum::<f64>() / kept.len() as f64
        }
    })
}

fn argmax(cir: &Cir) -> usize {
    let mut best = 0;
    let mut best_sq = -1.0;
    for (i, v) in cir.values.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_sq {
            best_sq = m;
            best = i;
        }
    }
    best
}

/// Leading-edge time-of-arrival detection.
///
/// Finds the strongest peak, requires it to clear the detection threshold,
/// then scans the back-search window before it (earliest lag first) for a
/// local maximum that clears both the absolute-over-noise and the
/// relative-to-peak thresholds. Returns `None` when no packet is present.
pub fn detect_toa(cir: &Cir, cfg: &ReceiverConfig) -> Result<Option<ToaEstimate>> {
    cfg.validate()?;
    let noise_floor = estimate_noise_floor(cir, cfg)?;
    let peak = argmax(cir);
    let peak_magnitude = cir.magnitude(peak);
    if peak_magnitude == 0.0 || peak_magnitude < noise_floor * db_to_linear(cfg.detect_threshold_db)
    {
        return Ok(None);
    }

    let abs_cut = noise_floor * db_to_linear(cfg.leading_edge_threshold_db);
    let rel_cut = peak_magnitude * db_to_linear(-cfg.leading_edge_rel_max_db);
    let start = peak.saturating_sub(cfg.backsearch_window);
    let mut accepted = peak;
    let mut leading_edge_used = false;
    for q in start..peak {
        let m = cir.magnitude(q);
        let before = if q == 0 { 0.0 } else { cir.magnitude(q - 1) };
        let after = cir.magnitude(q + 1);
        let local_max = m >= before && m >= after;
        if local_max && m > abs_cut && m > rel_cut {
            accepted = q;
            leading_edge_used = true;
            break;
        }
    }

    Ok(Some(ToaEstimate {
        toa_ps: cir.lag_time_ps(accepted),
        peak_index: peak,
        accepted_index: accepted,
        peak_magnitude,
        noise_floor,
        leading_edge_used,
        sts_quality: None,
    }))
}

/// Normalized STS correlation quality at the accepted alignment, in [0, 1].
///
/// With the bit check enabled, each PRF slot of the template is demodulated
/// against the received window; more than `max_bit_errors` sign mismatches
/// zero the quality outright.
pub fn sts_quality(
    received: &BasebandSignal,
    template: &BasebandSignal,
    toa: &ToaEstimate,
    cfg: &ReceiverConfig,
) -> Result<f64> {
    let q = toa.accepted_index;
    if q + template.len() > received.len() {
        return Err(Error::signal("accepted lag leaves no room for the template"));
    }
    if let Some(max_bit_errors) = cfg.sts_bit_check {
        let errors = slot_sign_errors(received, template, q);
        if errors > max_bit_errors {
            return Ok(0.0);
        }
    }
    let corr: num_complex::Complex64 = template
        .samples
        .iter()
        .zip(&received.samples[q..q + template.len()])
        .map(|(g, s)| g.conj() * s)
        .sum();
    let energy = template.energy();
    if energy == 0.0 {
        return Ok(0.0);
    }
    Ok((corr.norm() / energy).clamp(0.0, 1.0))
}

/// Counts PRF slots whose per-slot correlation has negative real part,
/// i.e. slots where the demodulated polarity disagrees with the expected
/// one.
fn slot_sign_errors(received: &BasebandSignal, template: &BasebandSignal, lag: usize) -> u32 {
    let samples_per_slot = received.sample_rate / PRF_HZ;
    let slots = (template.len() as f64 / samples_per_slot).round() as usize;
    let mut errors = 0;
    for slot in 0..slots {
        let start = (slot as f64 * samples_per_slot).round() as usize;
        let end = (((slot + 1) as f64) * samples_per_slot).round() as usize;
        let end = end.min(template.len());
        let z: num_complex::Complex64 = template.samples[start..end]
            .iter()
            .zip(&received.samples[lag + start..lag + end])
            .map(|(g, s)| g.conj() * s)
            .sum();
        if z.re <= 0.0 {
            errors += 1;
        }
    }
    errors
}
