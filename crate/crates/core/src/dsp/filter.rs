//! Causal Butterworth bandpass as a cascade of second-order sections.
//!
//! `order` is the order of the bandpass itself, so it must be even: a
//! Butterworth lowpass prototype of order `N = order / 2` is shifted to the
//! band around prewarped edges, then bilinear transformed. The `2N` digital
//! poles form `N` conjugate pairs; each pair gets one zero at `z = 1` and one
//! at `z = -1`, and every section is scaled to unit gain at the band center.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl BandpassSpec {
    pub const DEFAULT_ORDER: usize = 4;

    pub const fn new(low_hz: f64, high_hz: f64) -> Self {
        BandpassSpec { low_hz, high_hz, order: Self::DEFAULT_ORDER }
    }

    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        let nyquist = rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(Error::InvalidBand(format!(
                "need 0 < {} < {} < {nyquist}",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) || self.order > 16 {
            return Err(Error::InvalidBand(format!("order {} must be even, 2..=16", self.order)));
        }
        Ok(())
    }

    /// Label used in feature names, e.g. `2.5-5`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.low_hz, self.high_hz)
    }
}

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }
}

/// Coefficients of a designed bandpass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SosDesign {
    sections: Vec<Section>,
    center_hz: f64,
    rate_hz: f64,
}

impl SosDesign {
    pub fn bandpass(spec: &BandpassSpec, rate_hz: f64) -> Result<Self> {
        spec.validate(rate_hz)?;
        let fs2 = 2.0 * rate_hz;
        let wl = fs2 * (PI * spec.low_hz / rate_hz).tan();
        let wh = fs2 * (PI * spec.high_hz / rate_hz).tan();
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();
        let order = spec.order / 2;

        let mut digital = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                digital.push((fs2 + s) / (fs2 - s));
            }
        }
        let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
        if upper.len() != order {
            return Err(Error::InvalidBand(format!(
                "pole pairing failed for {:?} at {rate_hz} Hz",
                spec
            )));
        }
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));

        let center_omega = 2.0 * (w0 / fs2).atan();
        let z_inv = Complex64::from_polar(1.0, -center_omega);
        let sections = upper
            .iter()
            .map(|p| {
                let mut sec = Section { b: [1.0, 0.0, -1.0], a: [-2.0 * p.re, p.norm_sqr()] };
                let g = 1.0 / sec.response(z_inv).norm();
                sec.b = [g, 0.0, -g];
                sec
            })
            .collect();
        Ok(SosDesign { sections, center_hz: center_omega * rate_hz / (2.0 * PI), rate_hz })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Digital center frequency where the gain is exactly one.
    pub fn center_hz(&self) -> f64 {
        self.center_hz
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.rate_hz);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    pub fn filter(&self) -> SosFilter {
        SosFilter { sections: self.sections.clone(), state: vec![[0.0; 2]; self.sections.len()] }
    }
}

/// Stateful transposed direct-form II cascade; feed samples in order.
#[derive(Debug, Clone)]
pub struct SosFilter {
    sections: Vec<Section>,
    state: Vec<[f64; 2]>,
}

impl SosFilter {
    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b[0] * v + st[0];
            st[0] = s.b[1] * v - s.a[0] * y + st[1];
            st[1] = s.b[2] * v - s.a[1] * y;
            v = y;
        }
        v
    }

    pub fn process(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.step(v)).collect()
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }
}

/// Causal bandpass of a whole sequence starting from rest.
pub fn bandpass(x: &[f64], rate_hz: f64, spec: &BandpassSpec) -> Result<Vec<f64>> {
    Ok(SosDesign::bandpass(spec, rate_hz)?.filter().process(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / 100.0).sin()).collect()
    }

    /// Amplitude of the `freq` component over the last `len` samples, by a
    /// direct DFT at that single frequency (the window holds whole cycles).
    fn dft_amplitude(y: &[f64], freq: f64, len: usize) -> f64 {
        let tail = &y[y.len() - len..];
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in tail.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / 100.0;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / len as f64
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&[0.0; 500], 100.0, &BandpassSpec::new(5.0, 10.0)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn passes_in_band_tone() {
        let y = bandpass(&sine(7.0, 4000), 100.0, &BandpassSpec::new(5.0, 10.0)).unwrap();
        let amp = dft_amplitude(&y, 7.0, 1000);
        assert!(amp >= 0.7, "7 Hz amplitude {amp}");
    }

    #[test]
    fn rejects_out_of_band_tone() {
        let y = bandpass(&sine(30.0, 4000), 100.0, &BandpassSpec::new(5.0, 10.0)).unwrap();
        let amp = dft_amplitude(&y, 30.0, 1000);
        assert!(amp <= 0.1, "30 Hz amplitude {amp}");
        let inband = dft_amplitude(&bandpass(&sine(7.0, 4000), 100.0, &BandpassSpec::new(5.0, 10.0)).unwrap(), 7.0, 1000);
        assert!(20.0 * (inband / amp).log10() >= 20.0);
    }

    #[test]
    fn unit_gain_at_center_and_half_power_at_edges() {
        for (lo, hi) in [(2.5, 5.0), (0.5, 0.833), (29.768, 49.615), (10.0, 20.0)] {
            let d = SosDesign::bandpass(&BandpassSpec::new(lo, hi), 100.0).unwrap();
            assert!((d.gain_at(d.center_hz()) - 1.0).abs() < 1e-9);
            for edge in [lo, hi] {
                let g = d.gain_at(edge);
                assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{lo}-{hi} edge {edge}: {g}");
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(bandpass(&[1.0], 100.0, &BandpassSpec::new(10.0, 5.0)).is_err());
        assert!(bandpass(&[1.0], 100.0, &BandpassSpec::new(0.0, 5.0)).is_err());
        assert!(bandpass(&[1.0], 100.0, &BandpassSpec::new(10.0, 50.0)).is_err());
    }

    #[test]
    fn streaming_equals_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = SosDesign::bandpass(&BandpassSpec::new(2.5, 5.0), 100.0).unwrap();
        let batch = d.filter().process(&x);
        let mut f = d.filter();
        let mut streamed = Vec::new();
        for chunk in x.chunks(37) {
            streamed.extend(f.process(chunk));
        }
        assert_eq!(batch, streamed);
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = BandpassSpec::new(5.0, 10.0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..600).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..600).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let fm = bandpass(&mix, 100.0, &spec).unwrap();
            let fx = bandpass(&x, 100.0, &spec).unwrap();
            let fy = bandpass(&y, 100.0, &spec).unwrap();
            let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..600 {
                let expect = a * fx[i] + b * fy[i];
                assert!((fm[i] - expect).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
