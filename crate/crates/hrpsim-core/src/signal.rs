//! Complex baseband sample sequences.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Minimum sample rate that captures a 499.2 MHz-wide UWB channel.
pub const MIN_SAMPLE_RATE: f64 = 2.0 * 499.2e6;

/// A complex baseband signal at a fixed sample rate.
///
/// `t0_ps` is the absolute time of the first sample on the exchange
/// timeline, in picoseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub t0_ps: f64,
}

impl BasebandSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, t0_ps: f64) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::signal(format!(
                "sample rate {sample_rate} Hz below Nyquist minimum {MIN_SAMPLE_RATE} Hz"
            )));
        }
        Ok(Self { samples, sample_rate, t0_ps })
    }

    /// All-zero signal of `len` samples.
    pub fn zeros(len: usize, sample_rate: f64, t0_ps: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate, t0_ps)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample period in picoseconds.
    pub fn sample_period_ps(&self) -> f64 {
        1e12 / self.sample_rate
    }

    /// Time of sample `index` on the exchange timeline, picoseconds.
    pub fn sample_time_ps(&self, index: usize) -> f64 {
        self.t0_ps + index as f64 * self.sample_period_ps()
    }

    /// Sum of squared magnitudes (plain sample sum, no period weighting).
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Scales every sample by a real gain.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
            t0_ps: self.t0_ps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_sub_nyquist_rate() {
        assert!(BasebandSignal::zeros(8, 500e6, 0.0).is_err());
        assert!(BasebandSignal::zeros(8, MIN_SAMPLE_RATE, 0.0).is_ok());
    }

    #[test]
    fn sample_times_follow_rate() {
        let s = BasebandSignal::zeros(4, 1.0e9, 100.0).unwrap();
        assert!((s.sample_period_ps() - 1000.0).abs() < 1e-9);
        assert!((s.sample_time_ps(3) - 3100.0).abs() < 1e-9);
    }

    #[test]
    fn energy_scales_with_gain_squared() {
        let mut s = BasebandSignal::zeros(3, 1.0e9, 0.0).unwrap();
        s.samples[1] = Complex64::new(2.0, 1.0);
        let e = s.energy();
        let e2 = s.scaled(3.0).energy();
        assert!((e2 - 9.0 * e).abs() < 1e-9 * e);
    }
}
