//! HRP packet synthesis.
//!
//! A ranging packet is a train of short pulses at a 64 MHz repetition
//! frequency: a ternary preamble, a ternary start-of-frame delimiter, a
//! BPSK-modulated scrambled timestamp sequence, and an optional BPSK data
//! segment. Each field carries its own linear amplitude so injected packets
//! can weight fields independently.

mod codes;
mod pulse;
mod sts;

pub use codes::{ternary_code, DEFAULT_PREAMBLE_LEN, DEFAULT_SFD};
pub use pulse::{PulseKind, PulseShape};
pub use sts::{generate_sts_bits, StsConfig, STS_BLOCK_BITS};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{BasebandSignal, MIN_SAMPLE_RATE};

/// Pulse repetition frequency of the HRP mode, Hz. Fixed by the PHY.
pub const PRF_HZ: f64 = 64e6;

/// Where a packet's STS bits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum StsSource {
    /// Derived from the session key and packet counter.
    Keyed(StsConfig),
    /// Explicit bit sequence (one byte per bit). This is what an injector
    /// without the session key transmits.
    Raw(Vec<u8>),
}

impl StsSource {
    pub fn bits(&self) -> Result<Vec<u8>> {
        match self {
            StsSource::Keyed(cfg) => generate_sts_bits(cfg),
            StsSource::Raw(bits) => {
                if bits.iter().any(|&b| b > 1) {
                    return Err(Error::config("raw STS bits must be 0 or 1"));
                }
                Ok(bits.clone())
            }
        }
    }

    pub fn len_bits(&self) -> usize {
        match self {
            StsSource::Keyed(cfg) => cfg.length_bits,
            StsSource::Raw(bits) => bits.len(),
        }
    }
}

/// Linear per-field amplitudes. A gain of zero silences the field but keeps
/// its air time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGains {
    pub preamble: f64,
    pub sfd: f64,
    pub sts: f64,
    pub data: f64,
}

impl Default for FieldGains {
    fn default() -> Self {
        Self { preamble: 1.0, sfd: 1.0, sts: 1.0, data: 1.0 }
    }
}

impl FieldGains {
    pub fn uniform(gain: f64) -> Self {
        Self { preamble: gain, sfd: gain, sts: gain, data: gain }
    }

    fn get(&self, field: PacketField) -> f64 {
        match field {
            PacketField::Preamble => self.preamble,
            PacketField::Sfd => self.sfd,
            PacketField::Sts => self.sts,
            PacketField::Data => self.data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketField {
    Preamble,
    Sfd,
    Sts,
    Data,
}

/// Field-by-field description of one HRP packet.
///
/// On-air order is preamble, SFD, STS, data.
#[derive(Debug, Clone, PartialEq)]
pub struct HrpPacketSpec {
    pub preamble_code: Vec<i8>,
    pub preamble_repetitions: usize,
    pub sfd: Vec<i8>,
    pub sts: Option<StsSource>,
    pub data_bits: Option<Vec<u8>>,
    pub prf_hz: f64,
    pub gains: FieldGains,
}

impl Default for HrpPacketSpec {
    fn default() -> Self {
        Self {
            preamble_code: ternary_code(0x1915_4a5a, DEFAULT_PREAMBLE_LEN),
            preamble_repetitions: 64,
            sfd: DEFAULT_SFD.to_vec(),
            sts: Some(StsSource::Keyed(StsConfig::default())),
            data_bits: None,
            prf_hz: PRF_HZ,
            gains: FieldGains::default(),
        }
    }
}

impl HrpPacketSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prf_hz != PRF_HZ {
            return Err(Error::config(format!(
                "prf must be exactly {PRF_HZ} Hz, got {}",
                self.prf_hz
            )));
        }
        if self.preamble_code.is_empty() || self.preamble_repetitions == 0 {
            return Err(Error::config("preamble code must be non-empty with >= 1 repetition"));
        }
        for &s in self.preamble_code.iter().chain(self.sfd.iter()) {
            if !(-1..=1).contains(&s) {
                return Err(Error::config("preamble/SFD symbols must be in {-1, 0, +1}"));
            }
        }
        if let Some(StsSource::Keyed(cfg)) = &self.sts {
            cfg.validate()?;
        }
        let g = &self.gains;
        for v in [g.preamble, g.sfd, g.sts, g.data] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config("field gains must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Number of PRF slots the field occupies.
    pub fn field_slots(&self, field: PacketField) -> usize {
        match field {
            PacketField::Preamble => self.preamble_code.len() * self.preamble_repetitions,
            PacketField::Sfd => self.sfd.len(),
            PacketField::Sts => self.sts.as_ref().map_or(0, |s| s.len_bits()),
            PacketField::Data => self.data_bits.as_ref().map_or(0, |d| d.len()),
        }
    }

    /// Slot index at which the field starts.
    pub fn field_slot_offset(&self, field: PacketField) -> usize {
        let mut offset = 0;
        for f in [PacketField::Preamble, PacketField::Sfd, PacketField::Sts, PacketField::Data] {
            if f == field {
                break;
            }
            offset += self.field_slots(f);
        }
        offset
    }

    pub fn total_slots(&self) -> usize {
        [PacketField::Preamble, PacketField::Sfd, PacketField::Sts, PacketField::Data]
            .iter()
            .map(|&f| self.field_slots(f))
            .sum()
    }

    /// On-air duration, picoseconds.
    pub fn duration_ps(&self) -> f64 {
        self.total_slots() as f64 * 1e12 / self.prf_hz
    }

    /// Time offset of a field's first slot relative to packet start, ps.
    pub fn field_offset_ps(&self, field: PacketField) -> f64 {
        self.field_slot_offset(field) as f64 * 1e12 / self.prf_hz
    }

    /// Per-slot symbol amplitudes of one field, unit gain.
    fn field_symbols(&self, field: PacketField) -> Result<Vec<f64>> {
        let bipolar = |bits: &[u8]| -> Result<Vec<f64>> {
            bits.iter()
                .map(|&b| match b {
                    0 => Ok(1.0),
                    1 => Ok(-1.0),
                    _ => Err(Error::config("bits must be 0 or 1")),
                })
                .collect()
        };
        match field {
            PacketField::Preamble => {
                let mut out = Vec::with_capacity(self.field_slots(field));
                for _ in 0..self.preamble_repetitions {
                    out.extend(self.preamble_code.iter().map(|&s| s as f64));
                }
                Ok(out)
            }
            PacketField::Sfd => Ok(self.sfd.iter().map(|&s| s as f64).collect()),
            PacketField::Sts => match &self.sts {
                Some(src) => bipolar(&src.bits()?),
                None => Ok(Vec::new()),
            },
            PacketField::Data => match &self.data_bits {
                Some(bits) => bipolar(bits),
                None => Ok(Vec::new()),
            },
        }
    }
}

fn check_rate(shape: &PulseShape, sample_rate: f64) -> Result<()> {
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(Error::signal(format!(
            "sample rate {sample_rate} Hz below minimum {MIN_SAMPLE_RATE} Hz"
        )));
    }
    let samples_per_slot = sample_rate / PRF_HZ;
    if (shape.samples_per_pulse as f64) > samples_per_slot {
        return Err(Error::signal(format!(
            "pulse of {} samples does not fit a {samples_per_slot:.2}-sample PRF slot",
            shape.samples_per_pulse
        )));
    }
    Ok(())
}

/// Places per-slot amplitudes on the sample grid as shaped pulses.
fn render_slots(
    symbols: &[f64],
    shape: &PulseShape,
    sample_rate: f64,
) -> Result<BasebandSignal> {
    let pulse = shape.waveform()?;
    let samples_per_slot = sample_rate / PRF_HZ;
    let total = (symbols.len() as f64 * samples_per_slot).round() as usize;
    let mut out = vec![Complex64::new(0.0, 0.0); total];
    for (slot, &amp) in symbols.iter().enumerate() {
        if amp == 0.0 {
            continue;
        }
        let start = (slot as f64 * samples_per_slot).round() as usize;
        for (k, &p) in pulse.iter().enumerate() {
            if start + k < total {
                out[start + k] += Complex64::new(amp * p, 0.0);
            }
        }
    }
    BasebandSignal::new(out, sample_rate, 0.0)
}

/// Synthesizes the full packet waveform with per-field gains applied.
///
/// Preamble and SFD map {-1, 0, +1} to negative pulse, silence, positive
/// pulse; STS and data bits map 0 to a positive and 1 to a negative pulse.
pub fn modulate_packet(
    spec: &HrpPacketSpec,
    shape: &PulseShape,
    sample_rate: f64,
) -> Result<BasebandSignal> {
    spec.validate()?;
    check_rate(shape, sample_rate)?;
    let mut symbols = Vec::with_capacity(spec.total_slots());
    for field in [PacketField::Preamble, PacketField::Sfd, PacketField::Sts, PacketField::Data] {
        let gain = spec.gains.get(field);
        symbols.extend(spec.field_symbols(field)?.into_iter().map(|s| s * gain));
    }
    render_slots(&symbols, shape, sample_rate)
}

/// Unit-gain waveform of a single field, usable as a correlation template.
///
/// Only the preamble and the STS are meaningful templates.
pub fn local_template(
    spec: &HrpPacketSpec,
    field: PacketField,
    shape: &PulseShape,
    sample_rate: f64,
) -> Result<BasebandSignal> {
    spec.validate()?;
    check_rate(shape, sample_rate)?;
    match field {
        PacketField::Preamble => {}
        PacketField::Sts => {
            if spec.sts.is_none() {
                return Err(Error::config("packet has no STS to build a template for"));
            }
        }
        _ => return Err(Error::config("templates exist only for preamble and STS")),
    }
    let symbols = spec.field_symbols(field)?;
    render_slots(&symbols, shape, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1.024e9; // 16 samples per PRF slot

    fn tiny_spec(sts_bits: Vec<u8>) -> HrpPacketSpec {
        HrpPacketSpec {
            preamble_code: vec![1, 0, -1, 1],
            preamble_repetitions: 2,
            sfd: vec![1, -1],
            sts: Some(StsSource::Raw(sts_bits)),
            data_bits: None,
            prf_hz: PRF_HZ,
            gains: FieldGains::default(),
        }
    }

    fn rect_shape() -> PulseShape {
        PulseShape { kind: PulseKind::Rectangular, duration_s: 2e-9, samples_per_pulse: 4 }
    }

    #[test]
    fn sts_only_two_bits_gives_opposite_pulses_one_slot_apart() {
        let spec = HrpPacketSpec {
            preamble_code: vec![1],
            preamble_repetitions: 1,
            sfd: vec![],
            sts: Some(StsSource::Raw(vec![0, 1])),
            data_bits: None,
            prf_hz: PRF_HZ,
            gains: FieldGains { preamble: 0.0, sfd: 0.0, sts: 1.0, data: 0.0 },
        };
        let sig = modulate_packet(&spec, &rect_shape(), FS).unwrap();
        let spp = (FS / PRF_HZ) as usize;
        // Preamble slot is silent; STS occupies slots 1 and 2.
        let amp = rect_shape().waveform().unwrap()[0];
        assert!((sig.samples[spp].re - amp).abs() < 1e-9);
        assert!((sig.samples[2 * spp].re + amp).abs() < 1e-9);
        assert_eq!(sig.len(), 3 * spp);
    }

    #[test]
    fn zero_gains_give_silent_signal_of_full_length() {
        let mut spec = tiny_spec(vec![0, 1, 1, 0]);
        spec.gains = FieldGains::uniform(0.0);
        let sig = modulate_packet(&spec, &rect_shape(), FS).unwrap();
        let expected = (spec.total_slots() as f64 * FS / PRF_HZ).round() as usize;
        assert_eq!(sig.len(), expected);
        assert!(sig.samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn modulation_is_linear_in_field_gain() {
        let mut spec = tiny_spec(vec![0, 1, 0, 1]);
        let base = modulate_packet(&spec, &rect_shape(), FS).unwrap();
        spec.gains.sts = 2.0;
        let boosted = modulate_packet(&spec, &rect_shape(), FS).unwrap();
        let sts_start =
            (spec.field_slot_offset(PacketField::Sts) as f64 * FS / PRF_HZ).round() as usize;
        for i in 0..base.len() {
            let factor = if i >= sts_start { 2.0 } else { 1.0 };
            assert!((boosted.samples[i].re - factor * base.samples[i].re).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_scales_with_gain_squared() {
        let mut spec = tiny_spec(vec![1, 0, 1, 1]);
        spec.gains = FieldGains { preamble: 0.0, sfd: 0.0, sts: 1.0, data: 0.0 };
        let e1 = modulate_packet(&spec, &rect_shape(), FS).unwrap().energy();
        spec.gains.sts = 3.0;
        let e9 = modulate_packet(&spec, &rect_shape(), FS).unwrap().energy();
        assert!((e9 / e1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn pulses_land_only_in_slot_heads() {
        let spec = tiny_spec(vec![0, 1, 1, 0]);
        let sig = modulate_packet(&spec, &rect_shape(), FS).unwrap();
        let spp = (FS / PRF_HZ) as usize;
        let pulse_len = rect_shape().samples_per_pulse;
        for (i, s) in sig.samples.iter().enumerate() {
            if s.norm() > 0.0 {
                assert!(i % spp < pulse_len, "energy at sample {i} outside a pulse window");
            }
        }
    }

    #[test]
    fn preamble_template_autocorrelation_peaks_at_zero_lag() {
        let spec = tiny_spec(vec![0, 0]);
        let t = local_template(&spec, PacketField::Preamble, &rect_shape(), FS).unwrap();
        let corr = |lag: usize| -> f64 {
            t.samples
                .iter()
                .zip(t.samples.iter().skip(lag))
                .map(|(a, b)| (a.conj() * b).re)
                .sum()
        };
        let peak = corr(0);
        for lag in 1..t.len().min(64) {
            assert!(corr(lag).abs() < peak);
        }
    }

    #[test]
    fn template_ignores_field_gains() {
        let mut spec = tiny_spec(vec![0, 1]);
        let a = local_template(&spec, PacketField::Sts, &rect_shape(), FS).unwrap();
        spec.gains.sts = 7.0;
        let b = local_template(&spec, PacketField::Sts, &rect_shape(), FS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sts_template_differs_across_counters() {
        let keyed = |counter| HrpPacketSpec {
            sts: Some(StsSource::Keyed(StsConfig { counter, length_bits: 128, ..Default::default() })),
            ..tiny_spec(vec![])
        };
        let a = local_template(&keyed(0), PacketField::Sts, &rect_shape(), FS).unwrap();
        let b = local_template(&keyed(1), PacketField::Sts, &rect_shape(), FS).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn sts_template_without_sts_is_an_error() {
        let spec = HrpPacketSpec { sts: None, ..tiny_spec(vec![]) };
        assert!(local_template(&spec, PacketField::Sts, &rect_shape(), FS).is_err());
        assert!(local_template(&spec, PacketField::Sfd, &rect_shape(), FS).is_err());
    }

    #[test]
    fn rejects_wrong_prf() {
        let spec = HrpPacketSpec { prf_hz: 32e6, ..tiny_spec(vec![0]) };
        assert!(modulate_packet(&spec, &rect_shape(), FS).is_err());
    }
}
