//! Cross-correlation and the channel impulse response.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::BasebandSignal;

/// Correlation output over lag.
///
/// `values[t] = sum_m conj(template[m]) * received[m + t]` for every lag
/// where the template fits entirely inside the received window.
#[derive(Debug, Clone)]
pub struct Cir {
    pub values: Vec<Complex64>,
    /// Absolute time of lag 0, i.e. of the received window's first sample.
    pub lag0_time_ps: f64,
    pub sample_rate: f64,
}

impl Cir {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time of a given lag on the exchange timeline, ps.
    pub fn lag_time_ps(&self, lag: usize) -> f64 {
        self.lag0_time_ps + lag as f64 * 1e12 / self.sample_rate
    }

    pub fn magnitude(&self, lag: usize) -> f64 {
        self.values[lag].norm_sqr().sqrt()
    }
}

const DIRECT_THRESHOLD: usize = 4096;

/// Estimates the CIR by sliding the template over the received signal.
///
/// Small inputs are correlated directly; larger ones go through the FFT.
pub fn compute_cir(received: &BasebandSignal, template: &BasebandSignal) -> Result<Cir> {
    if template.len() > received.len() {
        return Err(Error::signal(format!(
            "template ({} samples) longer than received window ({} samples)",
            template.len(),
            received.len()
        )));
    }
    if template.is_empty() {
        return Err(Error::signal("empty template"));
    }
    if template.sample_rate != received.sample_rate {
        return Err(Error::signal("template and received sample rates differ"));
    }
    let values = if received.len() <= DIRECT_THRESHOLD {
        direct_correlate(&received.samples, &template.samples)
    } else {
        fft_correlate(&received.samples, &template.samples)
    };
    Ok(Cir { values, lag0_time_ps: received.t0_ps, sample_rate: received.sample_rate })
}

fn direct_correlate(received: &[Complex64], template: &[Complex64]) -> Vec<Complex64> {
    let lags = received.len() - template.len() + 1;
    (0..lags)
        .map(|t| {
            template
                .iter()
                .zip(&received[t..t + template.len()])
                .map(|(g, s)| g.conj() * s)
                .sum()
        })
        .collect()
}

fn fft_correlate(received: &[Complex64], template: &[Complex64]) -> Vec<Complex64> {
    let n = next_fast_len(received.len());
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut rx = Vec::with_capacity(n);
    rx.extend_from_slice(received);
    rx.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut rx);

    let mut tpl = Vec::with_capacity(n);
    tpl.extend_from_slice(template);
    tpl.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut tpl);

    finish_correlation(&inv, rx, &tpl, n, received.len() - template.len() + 1)
}

fn finish_correlation(
    inv: &Arc<dyn Fft<f64>>,
    mut rx_spectrum: Vec<Complex64>,
    template_spectrum: &[Complex64],
    n: usize,
    lags: usize,
) -> Vec<Complex64> {
    for (r, t) in rx_spectrum.iter_mut().zip(template_spectrum) {
        *r *= t.conj();
    }
    inv.process(&mut rx_spectrum);
    let scale = 1.0 / n as f64;
    rx_spectrum.truncate(lags);
    for v in &mut rx_spectrum {
        *v *= scale;
    }
    rx_spectrum
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<Complex64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a per-thread scratch buffer of at least `len` samples.
fn with_scratch(len: usize, f: impl FnOnce(&mut [Complex64])) {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, Complex64::new(0.0, 0.0));
        }
        f(&mut buf[..len]);
    });
}

/// Smallest 5-smooth number >= n; those sizes keep the mixed-radix FFT fast.
fn next_fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            if m < best {
                best = m;
            }
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Reusable correlator for one template against many received windows of
/// bounded length. Caches the FFT plans and the template spectrum.
pub struct CirEngine {
    fft_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    template_spectrum: Vec<Complex64>,
    template: BasebandSignal,
    template_energy: f64,
}

impl CirEngine {
    pub fn new(template: &BasebandSignal, max_received_len: usize) -> Result<Self> {
        if template.is_empty() {
            return Err(Error::signal("empty template"));
        }
        if max_received_len < template.len() {
            return Err(Error::signal("window shorter than template"));
        }
        let fft_len = next_fast_len(max_received_len);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);
        let mut tpl = Vec::with_capacity(fft_len);
        tpl.extend_from_slice(&template.samples);
        tpl.resize(fft_len, Complex64::new(0.0, 0.0));
        fwd.process(&mut tpl);
        Ok(Self {
            fft_len,
            fwd,
            inv,
            template_spectrum: tpl,
            template: template.clone(),
            template_energy: template.energy(),
        })
    }

    pub fn template(&self) -> &BasebandSignal {
        &self.template
    }

    pub fn template_energy(&self) -> f64 {
        self.template_energy
    }

    pub fn cir(&self, received: &BasebandSignal) -> Result<Cir> {
        if received.sample_rate != self.template.sample_rate {
            return Err(Error::signal("received sample rate differs from template"));
        }
        if received.len() < self.template.len() || received.len() > self.fft_len {
            return Err(Error::signal(format!(
                "received window of {} samples outside engine bounds [{}, {}]",
                received.len(),
                self.template.len(),
                self.fft_len
            )));
        }
        let mut rx = Vec::with_capacity(self.fft_len);
        rx.extend_from_slice(&received.samples);
        rx.resize(self.fft_len, Complex64::new(0.0, 0.0));
        let scratch_len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        with_scratch(scratch_len, |scratch| {
            self.fwd.process_with_scratch(&mut rx, scratch);
            for (r, t) in rx.iter_mut().zip(&self.template_spectrum) {
                *r *= t.conj();
            }
            self.inv.process_with_scratch(&mut rx, scratch);
        });
        let lags = received.len() - self.template.len() + 1;
        rx.truncate(lags);
        let scale = 1.0 / self.fft_len as f64;
        for v in &mut rx {
            *v *= scale;
        }
        Ok(Cir { values: rx, lag0_time_ps: received.t0_ps, sample_rate: received.sample_rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1.024e9;

    fn sig(values: &[f64]) -> BasebandSignal {
        BasebandSignal::new(
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            FS,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_cir() {
        let cir = compute_cir(&sig(&[0.0, 0.0, 1.0, -1.0, 0.0]), &sig(&[1.0, -1.0])).unwrap();
        let got: Vec<f64> = cir.values.iter().map(|v| v.re).collect();
        assert_eq!(got, vec![0.0, -1.0, 2.0, -1.0]);
        let (peak, _) = cir
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        assert_eq!(peak, 2);
    }

    #[test]
    fn self_correlation_peaks_at_template_energy() {
        let t = sig(&[1.0, -1.0, 1.0, 1.0, -1.0]);
        let cir = compute_cir(&t, &t).unwrap();
        assert_eq!(cir.len(), 1);
        assert!((cir.values[0].re - t.energy()).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_linear() {
        let g = sig(&[1.0, -1.0, 1.0]);
        let a = sig(&[0.0, 1.0, -1.0, 1.0, 0.0, 0.0]);
        let b = sig(&[0.5, 0.0, 0.25, -0.5, 1.0, 0.0]);
        let sum = BasebandSignal::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
            FS,
            0.0,
        )
        .unwrap();
        let ca = compute_cir(&a, &g).unwrap();
        let cb = compute_cir(&b, &g).unwrap();
        let cs = compute_cir(&sum, &g).unwrap();
        for i in 0..cs.len() {
            assert!((cs.values[i] - (ca.values[i] + cb.values[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn template_longer_than_signal_is_an_error() {
        assert!(compute_cir(&sig(&[1.0]), &sig(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn fft_path_matches_direct_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rx: Vec<Complex64> = (0..9000)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let tpl: Vec<Complex64> = (0..700)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let direct = direct_correlate(&rx, &tpl);
        let fft = fft_correlate(&rx, &tpl);
        assert_eq!(direct.len(), fft.len());
        let scale: f64 = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..direct.len() {
            assert!((direct[i] - fft[i]).norm() < 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn engine_matches_one_shot_computation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let tpl = BasebandSignal::new(
            (0..300).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect(),
            FS,
            0.0,
        )
        .unwrap();
        let rx = BasebandSignal::new(
            (0..6000).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect(),
            FS,
            40.0,
        )
        .unwrap();
        let engine = CirEngine::new(&tpl, 6000).unwrap();
        let a = engine.cir(&rx).unwrap();
        let b = compute_cir(&rx, &tpl).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(a.lag0_time_ps, 40.0);
        let scale: f64 = b.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..a.len() {
            assert!((a.values[i] - b.values[i]).norm() < 1e-9 * scale);
        }
    }

    #[test]
    fn fast_lengths_are_5_smooth_and_minimal_enough() {
        for n in [1, 2, 100, 1000, 16385, 30000] {
            let m = next_fast_len(n);
            assert!(m >= n);
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            assert_eq!(r, 1, "{m} is not 5-smooth");
            assert!(m <= n.next_power_of_two());
        }
    }
}
