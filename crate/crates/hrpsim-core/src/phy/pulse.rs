//! UWB pulse shapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseKind {
    /// Root-raised-cosine hump; the realistic default.
    RootRaisedCosine,
    /// First derivative of a Gaussian.
    GaussianMonopulse,
    /// Flat pulse, kept for analytically exact tests.
    Rectangular,
}

/// Shape of the individual pulse placed in each PRF slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    /// Nominal pulse duration in seconds (default 2 ns for a 499.2 MHz channel).
    pub duration_s: f64,
    /// Number of samples the rendered pulse spans.
    pub samples_per_pulse: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            kind: PulseKind::RootRaisedCosine,
            duration_s: 2e-9,
            samples_per_pulse: 4,
        }
    }
}

impl PulseShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::config("pulse duration must be positive"));
        }
        if self.samples_per_pulse < 2 {
            return Err(Error::config("samples_per_pulse must be at least 2"));
        }
        Ok(())
    }

    /// Renders the pulse, energy-normalized so that
    /// `sum(x^2) * sample_period == 1` with the pulse's own sample period
    /// `duration_s / samples_per_pulse`.
    pub fn waveform(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.samples_per_pulse;
        let period = self.duration_s / n as f64;
        let center = (n as f64 - 1.0) / 2.0;
        let mut shape = vec![0.0; n];
        match self.kind {
            PulseKind::Rectangular => {
                shape.fill(1.0);
            }
            PulseKind::GaussianMonopulse => {
                let sigma = n as f64 / 6.0;
                for (i, v) in shape.iter_mut().enumerate() {
                    let t = (i as f64 - center) / sigma;
                    *v = -t * (-t * t / 2.0).exp();
                }
            }
            PulseKind::RootRaisedCosine => {
                // Symbol period = half the nominal duration, beta = 0.5.
                let beta = 0.5;
                let symbol = self.duration_s / 2.0;
                for (i, v) in shape.iter_mut().enumerate() {
                    let t = (i as f64 - center) * period / symbol;
                    *v = rrc_value(t, beta);
                }
            }
        }
        let energy: f64 = shape.iter().map(|x| x * x).sum::<f64>() * period;
        if energy <= 0.0 {
            return Err(Error::config("degenerate pulse shape"));
        }
        let norm = energy.sqrt();
        for v in &mut shape {
            *v /= norm;
        }
        Ok(shape)
    }
}

/// Root-raised-cosine impulse response at normalized time `t` (units of the
/// symbol period), with the removable singularities patched.
fn rrc_value(t: f64, beta: f64) -> f64 {
    use std::f64::consts::PI;
    if t.abs() < 1e-9 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let singular = 1.0 / (4.0 * beta);
    if (t.abs() - singular).abs() < 1e-9 {
        let a = (1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin();
        let b = (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos();
        return beta / 2f64.sqrt() * (a + b);
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_shapes_are_energy_normalized() {
        for kind in [
            PulseKind::RootRaisedCosine,
            PulseKind::GaussianMonopulse,
            PulseKind::Rectangular,
        ] {
            let shape = PulseShape { kind, duration_s: 2e-9, samples_per_pulse: 8 };
            let w = shape.waveform().unwrap();
            let period = shape.duration_s / w.len() as f64;
            let energy: f64 = w.iter().map(|x| x * x).sum::<f64>() * period;
            assert!((energy - 1.0).abs() < 1e-12, "{kind:?} energy {energy}");
        }
    }

    #[test]
    fn rectangular_amplitude_is_exact() {
        let shape = PulseShape {
            kind: PulseKind::Rectangular,
            duration_s: 2e-9,
            samples_per_pulse: 4,
        };
        let w = shape.waveform().unwrap();
        let expected = 1.0 / (2e-9f64).sqrt();
        for v in w {
            assert!((v - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(PulseShape { samples_per_pulse: 1, ..Default::default() }.waveform().is_err());
        assert!(PulseShape { duration_s: 0.0, ..Default::default() }.waveform().is_err());
    }
}
